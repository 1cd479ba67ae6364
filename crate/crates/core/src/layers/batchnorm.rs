use crate::{Error, Result, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Batch normalisation over the channel axis (axis 1 of a batch).
///
/// Instances are `(channels)` or `(channels, spatial...)`; statistics pool
/// the batch and all spatial positions. Running averages follow
/// `r ← momentum·r + (1−momentum)·batch`, with the unbiased batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub alpha: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

/// Per-channel statistics of one minibatch.
#[derive(Debug, Clone)]
pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            alpha: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for (name, t) in [
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::Shape(format!(
                    "batch norm {name} {:?} does not match {c} channels",
                    t.shape()
                )));
            }
        }
        if self.running_var.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidValue("negative running variance".into()));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!("momentum {} outside (0, 1)", self.momentum)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps {} must be positive", self.eps)));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.alpha.len()
    }

    pub(crate) fn check_input(&self, input: &[usize]) -> Result<usize> {
        match input.first() {
            Some(&c) if c == self.channels() => Ok(input[1..].iter().product()),
            _ => Err(Error::Shape(format!(
                "batch norm over {} channels got instance shape {input:?}",
                self.channels()
            ))),
        }
    }

    /// Diagonal of the running-statistics linear term, `α/√(running_var+ε)`.
    pub fn running_scale(&self) -> Vec<f64> {
        self.scale_for(self.running_var.data())
    }

    pub(crate) fn scale_for(&self, var: &[f64]) -> Vec<f64> {
        self.alpha
            .data()
            .iter()
            .zip(var)
            .map(|(a, v)| a / (v + self.eps).sqrt())
            .collect()
    }

    pub(crate) fn batch_stats(&self, x: &Tensor, spatial: usize) -> BatchStats {
        let c = self.channels();
        let n = x.rows();
        let count = n * spatial;
        let mut mean = vec![0.0; c];
        for inst in x.data().chunks(c * spatial) {
            for (ch, plane) in inst.chunks(spatial).enumerate() {
                mean[ch] += plane.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; c];
        for inst in x.data().chunks(c * spatial) {
            for (ch, plane) in inst.chunks(spatial).enumerate() {
                var[ch] += plane.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        BatchStats { mean, var, count }
    }

    /// Running averages after absorbing `stats`.
    pub(crate) fn updated_running(&self, stats: &BatchStats) -> (Vec<f64>, Vec<f64>) {
        let m = self.momentum;
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        let mean = self
            .running_mean
            .data()
            .iter()
            .zip(&stats.mean)
            .map(|(r, b)| m * r + (1.0 - m) * b)
            .collect();
        let var = self
            .running_var
            .data()
            .iter()
            .zip(&stats.var)
            .map(|(r, b)| m * r + (1.0 - m) * b * unbias)
            .collect();
        (mean, var)
    }

    /// Multiplies each channel by `diag[ch]`.
    pub(crate) fn scale_channels(&self, x: &[f64], spatial: usize, diag: &[f64]) -> Vec<f64> {
        let c = self.channels();
        let mut out = x.to_vec();
        for inst in out.chunks_mut(c * spatial) {
            for (ch, plane) in inst.chunks_mut(spatial).enumerate() {
                plane.iter_mut().for_each(|v| *v *= diag[ch]);
            }
        }
        out
    }

    /// Train-mode output and normalised activations `x̂`.
    pub(crate) fn normalize(&self, x: &Tensor, spatial: usize, stats: &BatchStats) -> (Tensor, Tensor, Vec<f64>) {
        let c = self.channels();
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.data().to_vec();
        let mut y = x.data().to_vec();
        for (hat_inst, y_inst) in xhat.chunks_mut(c * spatial).zip(y.chunks_mut(c * spatial)) {
            for ch in 0..c {
                let r = ch * spatial..(ch + 1) * spatial;
                let (a, b) = (self.alpha.data()[ch], self.beta.data()[ch]);
                for (h, o) in hat_inst[r.clone()].iter_mut().zip(&mut y_inst[r]) {
                    *h = (*h - stats.mean[ch]) * inv_std[ch];
                    *o = a * *h + b;
                }
            }
        }
        (
            Tensor::from_parts(x.shape().to_vec(), y),
            Tensor::from_parts(x.shape().to_vec(), xhat),
            inv_std,
        )
    }

    /// Eval-mode output using running statistics.
    pub(crate) fn infer(&self, x: &Tensor, spatial: usize) -> Tensor {
        let c = self.channels();
        let scale = self.running_scale();
        let mut y = x.data().to_vec();
        for inst in y.chunks_mut(c * spatial) {
            for (ch, plane) in inst.chunks_mut(spatial).enumerate() {
                let mu = self.running_mean.data()[ch];
                let b = self.beta.data()[ch];
                plane.iter_mut().for_each(|v| *v = scale[ch] * (*v - mu) + b);
            }
        }
        Tensor::from_parts(x.shape().to_vec(), y)
    }

    /// Returns `(dα, dβ, dX)` through minibatch statistics.
    pub(crate) fn backward(&self, xhat: &Tensor, inv_std: &[f64], dy: &Tensor, spatial: usize) -> (Tensor, Tensor, Tensor) {
        let c = self.channels();
        let count = (xhat.rows() * spatial) as f64;
        let mut dalpha = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (h_inst, g_inst) in xhat.data().chunks(c * spatial).zip(dy.data().chunks(c * spatial)) {
            for ch in 0..c {
                let r = ch * spatial..(ch + 1) * spatial;
                for (h, g) in h_inst[r.clone()].iter().zip(&g_inst[r]) {
                    dbeta[ch] += g;
                    dalpha[ch] += g * h;
                }
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for ((d_inst, h_inst), g_inst) in dx
            .chunks_mut(c * spatial)
            .zip(xhat.data().chunks(c * spatial))
            .zip(dy.data().chunks(c * spatial))
        {
            for ch in 0..c {
                let a = self.alpha.data()[ch];
                let r = ch * spatial..(ch + 1) * spatial;
                // dx = α·inv/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
                for ((d, h), g) in d_inst[r.clone()].iter_mut().zip(&h_inst[r.clone()]).zip(&g_inst[r]) {
                    *d = a * inv_std[ch] / count * (count * g - dbeta[ch] - h * dalpha[ch]);
                }
            }
        }
        (
            Tensor::from_parts(vec![c], dalpha),
            Tensor::from_parts(vec![c], dbeta),
            Tensor::from_parts(dy.shape().to_vec(), dx),
        )
    }
}
