use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{train_step, MaxGainConfig, Optimizer, OptimizerState, Schedule};
use crate::data::{Augment, Dataset};
use crate::gain::{gain_stats, GainStats};
use crate::{Error, Network, Result, Rng};

pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    #[serde(default)]
    pub maxgain: Option<MaxGainConfig>,
    #[serde(default)]
    pub augment: Augment,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

impl FitConfig {
    pub fn new(epochs: usize, optimizer: Optimizer, schedule: Schedule, seed: u64) -> Self {
        FitConfig {
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            optimizer,
            schedule,
            maxgain: None,
            augment: Augment::default(),
            seed,
        }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.optimizer.validate()?;
        self.schedule.validate()?;
        if let Some(m) = &self.maxgain {
            m.validate(net.learned_count())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

/// Per learned layer over one epoch of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSummary {
    /// Five-number summary of the per-step `γ̂`.
    pub gamma_hat: GainStats,
    /// Smallest scale factor applied in the epoch (1 if never projected).
    pub min_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub lr: f64,
    /// Train rows: batch-size weighted mean over the epoch's train-mode steps.
    /// Validation rows: eval-mode loss after the epoch.
    pub loss: f64,
    pub accuracy: f64,
    /// Empty for validation rows.
    pub layers: Vec<LayerSummary>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ledger {
    pub layer_count: usize,
    pub records: Vec<EpochRecord>,
}

impl Ledger {
    pub fn last(&self, split: Split) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }

    /// Comma-separated text, one record per line, floats in shortest
    /// round-trip form. Validation rows leave the per-layer columns empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,lr,loss,accuracy");
        for j in 0..self.layer_count {
            let _ = write!(out, ",gamma_hat_median_{j},gamma_hat_max_{j},min_scale_{j}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{},{},{},{}", r.epoch, r.split, r.lr, r.loss, r.accuracy);
            for j in 0..self.layer_count {
                match r.layers.get(j) {
                    Some(l) => {
                        let _ = write!(out, ",{},{},{}", l.gamma_hat.median, l.gamma_hat.max, l.min_scale);
                    }
                    None => out.push_str(",,,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// A failed [`fit`], keeping the records of the epochs that completed.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct FitAborted {
    pub ledger: Ledger,
    #[source]
    pub error: Error,
}

/// Trains for `config.epochs` epochs.
///
/// A single RNG seeded from `config.seed` drives, in order, each epoch's
/// shuffle and then, per batch, augmentation and dropout masks.
pub fn fit(
    net: &mut Network,
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &FitConfig,
) -> Result<Ledger, FitAborted> {
    let mut ledger = Ledger {
        layer_count: net.learned_count(),
        records: Vec::new(),
    };
    match run(net, train, validation, config, &mut ledger) {
        Ok(()) => Ok(ledger),
        Err(error) => Err(FitAborted { ledger, error }),
    }
}

fn run(
    net: &mut Network,
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &FitConfig,
    ledger: &mut Ledger,
) -> Result<()> {
    config.validate(net)?;
    for d in std::iter::once(train).chain(validation) {
        if d.feature_shape() != net.input_shape() {
            return Err(Error::Shape(format!(
                "dataset instances {:?}, network input {:?}",
                d.feature_shape(),
                net.input_shape()
            )));
        }
    }
    if config.epochs == 0 {
        return Ok(());
    }
    let mut state = OptimizerState::new(config.optimizer, net)?;
    let mut rng = Rng::seeded(config.seed);
    let layers = net.learned_count();
    for epoch in 0..config.epochs {
        let lr = config.schedule.lr_at(epoch);
        let mut loss = 0.0;
        let mut correct = 0.0;
        let mut gains = vec![Vec::new(); layers];
        let mut min_scale = vec![1.0f64; layers];
        for batch in train.minibatches(config.batch_size, &mut rng)? {
            let (x, y) = train.batch(&batch)?;
            let x = config.augment.apply(&x, &mut rng)?;
            let report = train_step(net, &x, &y, &mut state, config.maxgain.as_ref(), lr, &mut rng)?;
            loss += report.loss * y.len() as f64;
            correct += report.accuracy * y.len() as f64;
            for j in 0..layers {
                gains[j].push(report.gamma_hat[j]);
                min_scale[j] = min_scale[j].min(report.scales[j]);
            }
        }
        let n = train.len() as f64;
        let summaries = gains
            .iter()
            .zip(min_scale)
            .map(|(g, s)| Ok(LayerSummary { gamma_hat: gain_stats(g)?, min_scale: s }))
            .collect::<Result<Vec<_>>>()?;
        ledger.records.push(EpochRecord {
            epoch,
            split: Split::Train,
            lr,
            loss: loss / n,
            accuracy: correct / n,
            layers: summaries,
        });
        if let Some(v) = validation {
            let (loss, accuracy) = crate::eval::evaluate(net, v)?;
            ledger.records.push(EpochRecord {
                epoch,
                split: Split::Validation,
                lr,
                loss,
                accuracy,
                layers: Vec::new(),
            });
        }
    }
    Ok(())
}
