use std::fs;
use std::path::{Path, PathBuf};

use wcnn::data::{
    fixed_list_split, gen_synthetic, holdout_split, ingest_directory, kth_style_splits, save_pgm,
    Dataset, PixelMapping, SplitPlan, SyntheticSpec,
};
use wcnn::network::{self, Network, NetworkSpec, ParamReport};
use wcnn::train::{evaluate, he_init, mean_std, metrics_csv, train_with, Evaluation};
use wcnn::wavelet::{decompose, reconstruct};
use wcnn::{Error, Result, Tensor, WaveletFilterPair};

use crate::config::{DataSource, RunConfig, SplitSpec};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CONFIG_FILE: &str = "config.resolved";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecomposeReport {
    pub files: Vec<PathBuf>,
    pub max_reconstruction_error: f32,
}

fn channel_mean(t: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *t.shape() else {
        return Err(Error::Shape {
            op: "channel_mean",
            detail: format!("expected [C, H, W], got {:?}", t.shape()),
        });
    };
    let plane = h * w;
    let data = (0..plane)
        .map(|p| (0..c).map(|ch| t.data()[ch * plane + p]).sum::<f32>() / c as f32)
        .collect();
    Tensor::new(&[1, h, w], data)
}

/// Writes `level<l>_<band>.pgm` for every band of an `levels`-deep Haar
/// analysis of the image at `input`. Colour bands are averaged over
/// channels; LL is stretched to the full range, detail bands map zero to
/// mid-gray.
pub fn cmd_decompose(input: &Path, levels: usize, out: &Path) -> Result<DecomposeReport> {
    let image = wcnn::data::load_netpbm(input)?;
    let haar = WaveletFilterPair::haar();
    let d = decompose(&image, &haar, levels)?;
    let error = reconstruct(&d, &haar)?.max_abs_diff(&image)?;
    create_dir(out)?;
    let mut files = Vec::with_capacity(4 * levels);
    for (i, s) in d.levels.iter().enumerate() {
        for (name, band) in s.bands() {
            let mapping = if name == "LL" {
                PixelMapping::MinMax
            } else {
                PixelMapping::Symmetric
            };
            let path = out.join(format!("level{}_{}.pgm", i + 1, name.to_lowercase()));
            save_pgm(&channel_mean(band)?, &path, mapping)?;
            files.push(path);
        }
    }
    println!("wrote {} subband images to {}", files.len(), out.display());
    println!("max reconstruction error: {error:e}");
    Ok(DecomposeReport {
        files,
        max_reconstruction_error: error,
    })
}

pub fn cmd_params(config: &RunConfig, classes: usize) -> Result<ParamReport> {
    let spec = config.network_spec(3, classes);
    spec.validate()?;
    let report = Network::build(&spec)?.count_params();
    println!("{report}");
    Ok(report)
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let size = config.train.crop_source_size;
    match &config.data {
        DataSource::Directory(root) => ingest_directory(root, size),
        DataSource::Synthetic(name) => gen_synthetic(&SyntheticSpec::preset(
            name,
            size,
            config.synthetic_train,
            config.synthetic_test,
            config.data_seed,
        )?),
    }
}

pub fn resolve_splits(config: &RunConfig, dataset: &Dataset) -> Result<Vec<SplitPlan>> {
    let plans = match (&config.split, &config.data) {
        (SplitSpec::Auto, DataSource::Synthetic(_)) => vec![holdout_split(dataset, 0)?],
        (SplitSpec::Auto | SplitSpec::Groups, _) => kth_style_splits(dataset)?,
        (SplitSpec::Holdout(g), _) => vec![holdout_split(dataset, *g)?],
        (SplitSpec::Lists { train, test }, _) => vec![fixed_list_split(dataset, train, test, 0)?],
    };
    for p in &plans {
        p.validate(dataset)?;
    }
    Ok(plans)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub index: usize,
    pub best_epoch: usize,
    pub test_acc: f64,
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub splits: Vec<SplitResult>,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub params: usize,
}

/// Trains one network per resolved split. A single split writes its
/// outputs directly under `out`; several write to `out/split<i>`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    dataset.validate()?;
    let plans = resolve_splits(config, &dataset)?;
    let spec = config.network_spec(dataset.channels(), dataset.num_classes());
    spec.validate()?;
    create_dir(&config.out)?;
    write_file(&config.out.join(CONFIG_FILE), config.to_text())?;

    let mut splits = Vec::with_capacity(plans.len());
    let mut params = 0;
    for plan in &plans {
        let dir = if plans.len() == 1 {
            config.out.clone()
        } else {
            config.out.join(format!("split{}", plan.index))
        };
        create_dir(&dir)?;
        let mut net = Network::build(&spec)?;
        he_init(&mut net, config.train.seed)?;
        params = net.count_params().total;
        let outcome = train_with(net, &dataset, plan, &config.train, |m| {
            println!(
                "split {} epoch {} loss={:.6} train_acc={:.4} test_acc={:.4}",
                plan.index, m.epoch, m.train_loss, m.train_acc, m.test_acc
            );
        })?;
        if outcome.degenerate_samples > 0 {
            eprintln!(
                "warning: {} constant images normalized to zero",
                outcome.degenerate_samples
            );
        }
        network::save(&outcome.best, dir.join(CHECKPOINT_FILE))?;
        write_file(&dir.join(METRICS_FILE), metrics_csv(&outcome.metrics))?;
        let eval = evaluate(&outcome.best, &dataset, &plan.test, &config.train)?;
        write_file(&dir.join(CONFUSION_FILE), eval.to_csv(&dataset.classes))?;
        println!(
            "split {} best_epoch={} test_acc={:.6}",
            plan.index, outcome.best_epoch, outcome.best_test_acc
        );
        splits.push(SplitResult {
            index: plan.index,
            best_epoch: outcome.best_epoch,
            test_acc: outcome.best_test_acc,
            dir,
        });
    }
    let accs: Vec<f64> = splits.iter().map(|s| s.test_acc).collect();
    let (mean, std) = mean_std(&accs);
    if splits.len() > 1 {
        println!(
            "test_acc mean={mean:.6} std={std:.6} over {} splits",
            splits.len()
        );
    }
    println!("final_test_acc={mean:.6} params={params}");
    Ok(TrainSummary {
        splits,
        mean_test_acc: mean,
        std_test_acc: std,
        params,
    })
}

/// Scores a checkpoint on the test side of a single split and writes the
/// confusion matrix to `out`. The crop size follows the checkpoint.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path) -> Result<Evaluation> {
    let net = network::load(checkpoint)?;
    let mut config = config.clone();
    config.train.crop_target_size = net.spec().input_shape[1];
    config.train.validate()?;
    let dataset = load_dataset(&config)?;
    dataset.validate()?;
    check_compatible(net.spec(), &dataset, &config)?;
    let plans = resolve_splits(&config, &dataset)?;
    let [plan] = plans.as_slice() else {
        return Err(Error::Argument(format!(
            "evaluation needs a single split, {} resolves to {}",
            config.split,
            plans.len()
        )));
    };
    let eval = evaluate(&net, &dataset, &plan.test, &config.train)?;
    create_dir(&config.out)?;
    write_file(
        &config.out.join(CONFUSION_FILE),
        eval.to_csv(&dataset.classes),
    )?;
    println!(
        "accuracy={:.6} ({} of {})",
        eval.accuracy,
        eval.correct(),
        eval.total()
    );
    Ok(eval)
}

fn check_compatible(spec: &NetworkSpec, dataset: &Dataset, config: &RunConfig) -> Result<()> {
    let side = config.train.crop_target_size;
    if spec.input_shape != [dataset.channels(), side, side]
        || spec.num_classes != dataset.num_classes()
    {
        return Err(Error::SpecMismatch(format!(
            "checkpoint takes {:?} inputs with {} classes, data gives [{}, {side}, {side}] with {}",
            spec.input_shape,
            spec.num_classes,
            dataset.channels(),
            dataset.num_classes()
        )));
    }
    Ok(())
}
