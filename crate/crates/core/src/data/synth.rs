use std::f64::consts::TAU;

use super::Dataset;
use crate::{Error, Result, Rng, Tensor};

pub const DEFAULT_SPIRAL_TURNS: f64 = 1.0;

/// Interleaved 2-d spiral arms, one per class, with Gaussian jitter.
///
/// Instance `i` belongs to class `i % classes`. Its position along the arm is
/// `t ~ U[0, 1)`, radius `t`, angle `2π (turns·t + class/classes)`.
pub fn synth_spirals(n: usize, noise_sd: f64, classes: usize, rng: &mut Rng) -> Result<Dataset> {
    synth_spirals_with_turns(n, noise_sd, classes, DEFAULT_SPIRAL_TURNS, rng)
}

pub fn synth_spirals_with_turns(
    n: usize,
    noise_sd: f64,
    classes: usize,
    turns: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    check_counts(n, classes)?;
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) || !turns.is_finite() {
        return Err(Error::Config(format!("bad spiral parameters: noise {noise_sd}, turns {turns}")));
    }
    let mut data = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let t = rng.uniform();
        let angle = TAU * (turns * t + c as f64 / classes as f64);
        data.push(t * angle.cos() + noise_sd * rng.standard_normal());
        data.push(t * angle.sin() + noise_sd * rng.standard_normal());
        y.push(c);
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, y, classes)
}

/// Isotropic Gaussian blobs; instance `i` is drawn around `centers[i % k]`.
pub fn synth_blobs(n: usize, centers: &[Vec<f64>], sd: f64, rng: &mut Rng) -> Result<Dataset> {
    check_counts(n, centers.len())?;
    let dim = centers[0].len();
    if dim == 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(Error::Config("blob centers must share a positive dimension".into()));
    }
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(Error::Config(format!("bad blob spread {sd}")));
    }
    let mut data = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % centers.len();
        data.extend(centers[c].iter().map(|&m| m + sd * rng.standard_normal()));
        y.push(c);
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, y, centers.len())
}

fn check_counts(n: usize, classes: usize) -> Result<()> {
    if classes == 0 || n < classes {
        return Err(Error::Config(format!("need n >= classes >= 1, got n={n}, classes={classes}")));
    }
    Ok(())
}
