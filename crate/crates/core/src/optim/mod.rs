//! Optimizers, schedules, the MaxGain projection and the training loop.
//!
//! A step follows the stale-activation scheme: the forward pass records each
//! learned layer's inputs `X` and linear outputs `Z`, the optimizer updates
//! the weights, and then `γ̂ = max_i ‖z_i‖/‖x_i‖` from those records (taken
//! under the pre-update weights) decides how far the post-update weights are
//! scaled down. The batch is never re-propagated. Algorithm listings often
//! write the cached products with the post-update weights; the records here
//! are what the forward pass actually saw.

mod fit;
mod optimizer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use fit::{fit, EpochRecord, FitAborted, FitConfig, LayerSummary, Ledger, Split, DEFAULT_BATCH_SIZE};
pub use optimizer::{
    adam_update, sgd_nesterov_update, Drop, Optimizer, OptimizerState, Schedule, DEFAULT_ADAM_EPS,
    DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_MOMENTUM,
};

use crate::gain::cache_max_gain;
use crate::layers::{softmax_cross_entropy, ForwardOptions};
use crate::{Error, Mode, Network, NormOrder, Result, Rng, Tensor};

/// Per-layer gain limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxGainConfig {
    /// Limit for every learned layer without an override; may be `inf`.
    pub gamma: f64,
    #[serde(default)]
    pub p: NormOrder,
    /// Learned-layer index to limit.
    #[serde(default)]
    pub overrides: BTreeMap<usize, f64>,
    /// Measure batch-norm gain with minibatch instead of running statistics.
    #[serde(default)]
    pub batchnorm_minibatch_gain: bool,
}

impl MaxGainConfig {
    pub fn new(gamma: f64, p: NormOrder) -> Self {
        MaxGainConfig {
            gamma,
            p,
            overrides: BTreeMap::new(),
            batchnorm_minibatch_gain: false,
        }
    }

    pub fn gamma_for(&self, layer: usize) -> f64 {
        self.overrides.get(&layer).copied().unwrap_or(self.gamma)
    }

    pub fn validate(&self, learned_layers: usize) -> Result<()> {
        check_gamma(self.gamma)?;
        for (&j, &g) in &self.overrides {
            check_gamma(g)?;
            if j >= learned_layers {
                return Err(Error::Config(format!(
                    "gamma override for learned layer {j}, network has {learned_layers}"
                )));
            }
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must be positive, got {gamma}")))
    }
}

/// The divisor `max(1, γ̂/γ)`.
pub fn projection_divisor(gamma_hat: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(gamma_hat >= 0.0) || gamma_hat.is_infinite() {
        return Err(Error::InvalidValue(format!("measured gain {gamma_hat}")));
    }
    Ok((gamma_hat / gamma).max(1.0))
}

/// `W / max(1, γ̂/γ)`.
pub fn project(w: &Tensor, gamma_hat: f64, gamma: f64) -> Result<Tensor> {
    let d = projection_divisor(gamma_hat, gamma)?;
    if d == 1.0 {
        return Ok(w.clone());
    }
    Ok(w.map(|v| v / d))
}

/// Outcome of one [`train_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Fraction of the batch classified correctly by the train-mode forward.
    pub accuracy: f64,
    /// Per learned layer, max gain over the batch under the pre-update weights.
    pub gamma_hat: Vec<f64>,
    /// Per learned layer, the factor the weights were multiplied by (1 if untouched).
    pub scales: Vec<f64>,
}

/// One forward/backward/update step, followed by the projection when
/// `maxgain` is set.
///
/// `γ̂` is reported either way, measured in `maxgain.p` (or `p = 2`).
pub fn train_step(
    net: &mut Network,
    x: &Tensor,
    labels: &[usize],
    state: &mut OptimizerState,
    maxgain: Option<&MaxGainConfig>,
    lr: f64,
    rng: &mut Rng,
) -> Result<StepReport> {
    let step = state.steps() + 1;
    if let Some(cfg) = maxgain {
        cfg.validate(net.learned_count())?;
    }
    let diverged = |what: String| Error::Divergence { step, what };
    let numerical = |e: Error| if e.is_numerical() { diverged(e.to_string()) } else { e };
    let options = ForwardOptions {
        batchnorm_minibatch_gain: maxgain.is_some_and(|m| m.batchnorm_minibatch_gain),
    };
    let (logits, caches) = net.forward_with(x, Mode::Train, rng, options).map_err(numerical)?;
    let (loss, grad) = softmax_cross_entropy(&logits, labels).map_err(numerical)?;
    if !loss.is_finite() {
        return Err(diverged(format!("loss {loss}")));
    }
    let grads = net.backward(&caches, &grad).map_err(numerical)?;
    if !grads.is_finite() {
        return Err(diverged("non-finite gradient".into()));
    }
    let correct = crate::eval::argmax_rows(&logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    state.apply(net, &grads, lr)?;

    let p = maxgain.map_or(NormOrder::L2, |m| m.p);
    let gamma_hat = caches
        .layers
        .iter()
        .map(|c| cache_max_gain(c, p))
        .collect::<Result<Vec<_>>>()
        .map_err(numerical)?;
    let mut scales = vec![1.0; gamma_hat.len()];
    if let Some(cfg) = maxgain {
        let divisors = gamma_hat
            .iter()
            .enumerate()
            .map(|(j, &g)| projection_divisor(g, cfg.gamma_for(j)))
            .collect::<Result<Vec<_>>>()
            .map_err(numerical)?;
        if divisors.iter().any(|&d| d > 1.0) {
            for (j, mut layer) in net.learned_layers_mut().into_iter().enumerate() {
                let d = divisors[j];
                if d > 1.0 {
                    for v in layer.weight_mut().data_mut() {
                        *v /= d;
                    }
                    scales[j] = 1.0 / d;
                }
            }
        }
    }
    if net.learned_layers().iter().any(|l| !l.weight().is_finite() || !l.bias().is_finite()) {
        return Err(diverged("non-finite parameters after update".into()));
    }
    Ok(StepReport {
        loss,
        accuracy: correct as f64 / labels.len() as f64,
        gamma_hat,
        scales,
    })
}
