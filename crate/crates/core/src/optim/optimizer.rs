use serde::{Deserialize, Serialize};

use crate::layers::Gradients;
use crate::{Error, Network, Result, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

/// Update rule and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    /// `v ← μ v + g`, `θ ← θ − lr (g + μ v)`.
    SgdNesterov {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    /// Bias-corrected Adam.
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}
fn default_beta1() -> f64 {
    DEFAULT_BETA1
}
fn default_beta2() -> f64 {
    DEFAULT_BETA2
}
fn default_eps() -> f64 {
    DEFAULT_ADAM_EPS
}

impl Optimizer {
    pub fn sgd_nesterov() -> Self {
        Optimizer::SgdNesterov { momentum: DEFAULT_MOMENTUM }
    }

    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_ADAM_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Optimizer::SgdNesterov { momentum } => (0.0..1.0).contains(&momentum),
            Optimizer::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 && eps.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer hyperparameters {self:?}")))
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::sgd_nesterov()
    }
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: parameter {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// One Nesterov momentum step on a single parameter tensor.
pub fn sgd_nesterov_update(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    momentum: f64,
    lr: f64,
) -> Result<()> {
    check_same(param, grad, "gradient")?;
    check_same(param, velocity, "velocity")?;
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v + g;
        *p -= lr * (g + momentum * *v);
    }
    Ok(())
}

/// One Adam step; `t` is the 1-based index of this step.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut Tensor,
    grad: &Tensor,
    first: &mut Tensor,
    second: &mut Tensor,
    t: u64,
    (beta1, beta2, eps): (f64, f64, f64),
    lr: f64,
) -> Result<()> {
    check_same(param, grad, "gradient")?;
    check_same(param, first, "first moment")?;
    check_same(param, second, "second moment")?;
    if t == 0 {
        return Err(Error::Config("adam step index starts at 1".into()));
    }
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = 1.0 - beta1.powi(exp);
    let c2 = 1.0 - beta2.powi(exp);
    let moments = first.data_mut().iter_mut().zip(second.data_mut());
    for ((p, &g), (m, v)) in param.data_mut().iter_mut().zip(grad.data()).zip(moments) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct Buffers {
    first: Tensor,
    second: Option<Tensor>,
}

/// Moment buffers for every learned parameter, in learned-layer order with
/// the weight before the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    optimizer: Optimizer,
    buffers: Vec<Buffers>,
    t: u64,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, net: &Network) -> Result<Self> {
        optimizer.validate()?;
        let mut buffers = Vec::new();
        for layer in net.learned_layers() {
            for t in [layer.weight(), layer.bias()] {
                let zero = Tensor::zeros(t.shape());
                buffers.push(Buffers {
                    second: matches!(optimizer, Optimizer::Adam { .. }).then(|| zero.clone()),
                    first: zero,
                });
            }
        }
        Ok(OptimizerState { optimizer, buffers, t: 0 })
    }

    pub fn optimizer(&self) -> Optimizer {
        self.optimizer
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every learned parameter of `net`.
    pub fn apply(&mut self, net: &mut Network, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() * 2 != self.buffers.len() {
            return Err(Error::Shape(format!(
                "{} layer gradients for {} optimizer slots",
                grads.layers.len(),
                self.buffers.len()
            )));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr}")));
        }
        let t = self.t + 1;
        let mut layers = net.learned_layers_mut();
        if layers.len() != grads.layers.len() {
            return Err(Error::Shape("optimizer state belongs to another network".into()));
        }
        for (j, (layer, g)) in layers.iter_mut().zip(&grads.layers).enumerate() {
            let (w, b) = layer.params_mut();
            for (k, (param, grad)) in [(w, &g.weight), (b, &g.bias)].into_iter().enumerate() {
                let buf = &mut self.buffers[2 * j + k];
                match self.optimizer {
                    Optimizer::SgdNesterov { momentum } => {
                        sgd_nesterov_update(param, grad, &mut buf.first, momentum, lr)?
                    }
                    Optimizer::Adam { beta1, beta2, eps } => {
                        let second = buf.second.as_mut().expect("adam keeps second moments");
                        adam_update(param, grad, &mut buf.first, second, t, (beta1, beta2, eps), lr)?
                    }
                }
            }
        }
        self.t = t;
        Ok(())
    }
}

/// A learning-rate drop: from `epoch` on, multiply by `factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drop {
    pub epoch: usize,
    pub factor: f64,
}

/// Piecewise-constant learning rate over 0-based epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub base_lr: f64,
    #[serde(default)]
    pub drops: Vec<Drop>,
}

impl Schedule {
    pub fn constant(lr: f64) -> Self {
        Schedule { base_lr: lr, drops: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.base_lr)));
        }
        for (i, d) in self.drops.iter().enumerate() {
            if !(d.factor > 0.0 && d.factor <= 1.0) {
                return Err(Error::Config(format!("drop factor {} outside (0, 1]", d.factor)));
            }
            if i > 0 && d.epoch <= self.drops[i - 1].epoch {
                return Err(Error::Config("drop epochs must be strictly increasing".into()));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.drops
            .iter()
            .filter(|d| d.epoch <= epoch)
            .fold(self.base_lr, |lr, d| lr * d.factor)
    }
}
