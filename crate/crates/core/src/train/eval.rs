use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

use super::preprocess::prepare_eval;
use super::TrainConfig;

/// Images per inference batch.
pub const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        classes: usize,
    ) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::arg(format!(
                "{} labels for {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= classes || p >= classes {
                return Err(Error::arg(format!("class index out of range 0..{classes}")));
            }
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|k| confusion[k][k]).sum();
        let accuracy = if labels.is_empty() {
            0.0
        } else {
            correct as f64 / labels.len() as f64
        };
        Ok(Evaluation {
            accuracy,
            confusion,
        })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.confusion.len())
            .map(|k| self.confusion[k][k])
            .sum()
    }

    /// Header row of predicted class names, one row per true class.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for name in class_names {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (name, row) in class_names.iter().zip(&self.confusion) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Index of the first maximum of every row of `[N, K]` logits.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(k.max(1))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

/// Predicted classes of already preprocessed `[C, H, W]` inputs.
pub fn predict_classes(net: &Network, inputs: &[Tensor]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        out.extend(argmax_rows(&net.predict(&Tensor::stack(chunk)?)?));
    }
    Ok(out)
}

/// Accuracy and confusion matrix of `net` on `indices`, using the
/// test-time pipeline (scale, center crop, normalize).
pub fn evaluate(
    net: &Network,
    dataset: &Dataset,
    indices: &[usize],
    config: &TrainConfig,
) -> Result<Evaluation> {
    let inputs = indices
        .iter()
        .map(|&i| prepare_eval(&dataset.items[i].image, config).map(|(t, _)| t))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.items[i].label).collect();
    let predictions = predict_classes(net, &inputs)?;
    Evaluation::from_predictions(&labels, &predictions, dataset.num_classes())
}

/// Mean and sample standard deviation (n − 1); the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
