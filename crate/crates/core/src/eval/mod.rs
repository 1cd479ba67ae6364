//! Metrics, significance testing, γ sweeps and gain reports.

mod report;
mod stats;
mod sweep;

pub use report::{gain_report, GainReport};
pub use stats::{ln_gamma, mean_stderr, paired_t_test, regularized_incomplete_beta, MeanStderr, TTest};
pub use sweep::{gamma_sweep, Experiment, SweepRow, SweepTable};

use crate::layers::softmax_cross_entropy;
use crate::{Error, Network, Result, Tensor};
use crate::data::Dataset;

/// Rows evaluated per forward pass by [`evaluate`] and [`gain_report`].
pub const EVAL_CHUNK: usize = 1024;

/// Smallest probability fed to the logarithm in [`log_loss`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Index of the largest entry per row; the first wins ties.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptySample("no predictions to score".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean negative log-probability of the true class; each row of
/// `probabilities` must be a distribution (sum within 1e-6 of one).
pub fn log_loss(probabilities: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, c) = probabilities.dims2()?;
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} rows for {} labels", labels.len())));
    }
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = probabilities.row(i);
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&q| q < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidValue(format!("row {i} is not a distribution (sum {sum})")));
        }
        if l >= c {
            return Err(Error::Index(format!("label {l} with {c} classes")));
        }
        total += -row[l].max(PROB_FLOOR).ln();
    }
    Ok(total / n as f64)
}

/// Eval-mode mean cross-entropy and accuracy over a dataset.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk)?;
        let logits = net.predict(&x)?;
        let (l, _) = softmax_cross_entropy(&logits, &y)?;
        loss += l * chunk.len() as f64;
        hits += argmax_rows(&logits).iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    let n = data.len() as f64;
    Ok((loss / n, hits as f64 / n))
}
