//! Optimization and preprocessing: He initialization, Adam, global contrast
//! normalization, crop/flip augmentation, the epoch loop and evaluation.

mod eval;
mod init;
mod optim;
mod preprocess;

pub use eval::{argmax_rows, evaluate, mean_std, predict_classes, Evaluation, EVAL_BATCH};
pub use init::he_init;
pub use optim::{adam_step, OptimizerState};
pub use preprocess::{
    augment, center_crop, crop, flip_horizontal, gcn, prepare_eval, to_source_size, AugmentDraw,
    GCN_MIN_STD,
};

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Images are scaled to this side length before cropping.
    pub crop_source_size: usize,
    /// Side length of the network input.
    pub crop_target_size: usize,
    pub flip_enabled: bool,
    /// Stop once test accuracy reaches this fraction.
    pub target_accuracy: Option<f64>,
    /// Fill the `seconds` column with wall time instead of `NA`.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            crop_source_size: 72,
            crop_target_size: 64,
            flip_enabled: true,
            target_accuracy: None,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f32| v > 0.0 && v < 1.0;
        if !open_unit(self.adam_beta1) || !open_unit(self.adam_beta2) {
            return Err(Error::arg("adam betas must lie in (0, 1)"));
        }
        let positive = |v: f32| v.is_finite() && v > 0.0;
        if !positive(self.adam_eps) || !positive(self.learning_rate) {
            return Err(Error::arg("learning rate and adam eps must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::arg("batch size must be at least 2 for batchnorm"));
        }
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be positive"));
        }
        if self.crop_target_size == 0 || self.crop_target_size > self.crop_source_size {
            return Err(Error::arg(format!(
                "crop target {} must lie in 1..={}",
                self.crop_target_size, self.crop_source_size
            )));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::arg("target accuracy must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,seconds";

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in metrics {
        let _ = write!(
            out,
            "{},{:.6},{:.6},{:.6},",
            m.epoch, m.train_loss, m.train_acc, m.test_acc
        );
        match m.seconds {
            Some(s) => {
                let _ = writeln!(out, "{s:.3}");
            }
            None => out.push_str("NA\n"),
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Network as it was after the epoch with the highest test accuracy
    /// (earliest on ties).
    pub best: Network,
    pub best_epoch: usize,
    pub best_test_acc: f64,
    pub metrics: Vec<EpochMetrics>,
    /// Training and test images that normalized to zero because they were
    /// constant.
    pub degenerate_samples: usize,
}

/// Splits a permutation into batches of `size`; a trailing batch of one is
/// merged into its predecessor.
pub fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn check_shapes(net: &Network, dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    let expected = [
        dataset.channels(),
        config.crop_target_size,
        config.crop_target_size,
    ];
    if net.spec().input_shape != expected {
        return Err(Error::SpecMismatch(format!(
            "network expects {:?} inputs, pipeline produces {expected:?}",
            net.spec().input_shape
        )));
    }
    if net.spec().num_classes != dataset.num_classes() {
        return Err(Error::SpecMismatch(format!(
            "network has {} classes, dataset has {}",
            net.spec().num_classes,
            dataset.num_classes()
        )));
    }
    Ok(())
}

pub fn train(
    net: Network,
    dataset: &Dataset,
    split: &SplitPlan,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(net, dataset, split, config, |_| {})
}

/// Trains with Adam on shuffled, augmented mini-batches, calling
/// `on_epoch` after each epoch. The network should already be initialized.
pub fn train_with(
    mut net: Network,
    dataset: &Dataset,
    split: &SplitPlan,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    split.validate(dataset)?;
    if split.train.len() < 2 || split.test.is_empty() {
        return Err(Error::arg(format!(
            "split {} needs at least two training items and one test item",
            split.index
        )));
    }
    check_shapes(&net, dataset, config)?;

    let sources = split
        .train
        .iter()
        .map(|&i| to_source_size(&dataset.items[i].image, config))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = split
        .train
        .iter()
        .map(|&i| dataset.items[i].label)
        .collect();
    let mut degenerate = 0;
    let mut test_inputs = Vec::with_capacity(split.test.len());
    for &i in &split.test {
        let (t, flat) = prepare_eval(&dataset.items[i].image, config)?;
        degenerate += usize::from(flat);
        test_inputs.push(t);
    }
    let test_labels: Vec<usize> = split.test.iter().map(|&i| dataset.items[i].label).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut opt = OptimizerState::new(net.params());
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut best: Option<(Network, usize, f64)> = None;
    let mut flagged = vec![false; sources.len()];

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..sources.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, batch) in batches(&order, config.batch_size).iter().enumerate() {
            let draws = batch
                .iter()
                .map(|_| AugmentDraw::sample(config, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let prepared = batch
                .par_iter()
                .zip(&draws)
                .map(|(&i, d)| {
                    d.apply(&sources[i], config.crop_target_size)
                        .map(|t| gcn(&t))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut inputs = Vec::with_capacity(batch.len());
            for (&i, (t, flat)) in batch.iter().zip(prepared) {
                flagged[i] |= flat;
                inputs.push(t);
            }
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, logits) = net.loss_and_grads(&Tensor::stack(&inputs)?, &y)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss is {loss} at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            adam_step(&mut opt, net.params_mut(), config).map_err(|e| match e {
                Error::Numerical(d) => {
                    Error::Numerical(format!("epoch {epoch}, batch {}: {d}", b + 1))
                }
                other => other,
            })?;
            loss_sum += loss as f64 * batch.len() as f64;
            correct += argmax_rows(&logits)
                .iter()
                .zip(&y)
                .filter(|(p, t)| p == t)
                .count();
        }
        let predictions = predict_classes(&net, &test_inputs)?;
        let test_acc =
            Evaluation::from_predictions(&test_labels, &predictions, dataset.num_classes())?
                .accuracy;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / sources.len() as f64,
            train_acc: correct as f64 / sources.len() as f64,
            test_acc,
            seconds: config
                .log_wall_time
                .then(|| started.elapsed().as_secs_f64()),
        };
        on_epoch(&m);
        metrics.push(m);
        if best.as_ref().is_none_or(|b| test_acc > b.2) {
            best = Some((net.clone(), epoch, test_acc));
        }
        if config.target_accuracy.is_some_and(|t| test_acc >= t) {
            break;
        }
    }

    let (best, best_epoch, best_test_acc) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_test_acc,
        metrics,
        degenerate_samples: degenerate + flagged.iter().filter(|&&f| f).count(),
    })
}
