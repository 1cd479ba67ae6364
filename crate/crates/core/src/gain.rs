//! Empirical gain, operator norms and Lipschitz upper bounds.
//!
//! `gain(W, x) = ‖W x‖_p / ‖x‖_p`, defined as zero when `‖x‖_p = 0`. Its
//! supremum over all nonzero `x` is the operator norm `‖W‖_p`; over a finite
//! sample it is a lower estimate of that norm restricted to where the data
//! lives.

use serde::{Deserialize, Serialize};

use crate::layers::{LayerCache, LearnedLayer, Network, Stage};
use crate::tensor::{dot, norm_unchecked, vector_p_norm, Rng};
use crate::{Error, Result, Tensor};

pub use crate::tensor::NormOrder;

/// Largest input dimension [`materialize_linear`] accepts.
pub const MATERIALIZE_LIMIT: usize = 4096;

fn ratio(z: &[f64], x: &[f64], p: NormOrder) -> f64 {
    let nx = norm_unchecked(x, p);
    if nx == 0.0 {
        0.0
    } else {
        norm_unchecked(z, p) / nx
    }
}

/// Gain of a learned layer's linear term on one instance.
pub fn gain(layer: LearnedLayer<'_>, x: &Tensor, p: NormOrder) -> Result<f64> {
    let z = layer.apply_linear(x)?;
    Ok(ratio(z.data(), x.data(), p))
}

/// Per-instance gains from cached `(X, Z)` rows.
pub fn instance_gains(inputs: &Tensor, outputs: &Tensor, p: NormOrder) -> Result<Vec<f64>> {
    if inputs.rows() != outputs.rows() || inputs.ndim() == 0 || outputs.ndim() == 0 {
        return Err(Error::CacheMismatch(format!(
            "{} cached inputs but {} cached outputs",
            inputs.rows(),
            outputs.rows()
        )));
    }
    Ok((0..inputs.rows())
        .map(|i| ratio(outputs.row(i), inputs.row(i), p))
        .collect())
}

/// `γ̂ = max_j ‖z_j‖_p / ‖x_j‖_p` over cached pairs; `W x` is not recomputed.
pub fn batch_max_gain(inputs: &Tensor, outputs: &Tensor, p: NormOrder) -> Result<f64> {
    let gains = instance_gains(inputs, outputs, p)?;
    if gains.is_empty() {
        return Err(Error::CacheMismatch("empty cache".into()));
    }
    Ok(gains.into_iter().fold(0.0, f64::max))
}

pub fn cache_max_gain(cache: &LayerCache, p: NormOrder) -> Result<f64> {
    batch_max_gain(&cache.inputs, &cache.outputs, p)
}

/// `‖W‖_1` (max absolute column sum) or `‖W‖_∞` (max absolute row sum).
pub fn operator_norm_exact(w: &Tensor, p: NormOrder) -> Result<f64> {
    let (r, c) = w.dims2().map_err(|_| {
        Error::DegenerateShape(format!("operator norm needs a matrix, got {:?}", w.shape()))
    })?;
    if r == 0 || c == 0 {
        return Err(Error::DegenerateShape("empty matrix".into()));
    }
    let d = w.data();
    match p {
        NormOrder::L1 => Ok((0..c)
            .map(|j| (0..r).fold(0.0, |acc, i| acc + d[i * c + j].abs()))
            .fold(0.0, f64::max)),
        NormOrder::Inf => Ok(d.chunks(c).map(|row| norm_unchecked(row, NormOrder::L1)).fold(0.0, f64::max)),
        NormOrder::L2 => Err(Error::Config(
            "no closed form for the l2 operator norm; use power iteration".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIteration {
    pub max_iters: usize,
    /// Stop once the relative change of the estimate drops below this.
    pub tol: f64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        PowerIteration {
            max_iters: 100,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub sigma: f64,
    pub iterations: usize,
}

const ADJOINT_PROBES: usize = 3;
const ADJOINT_TOL: f64 = 1e-8;

/// Largest singular value of an implicit map by power iteration on `AᵀA`.
///
/// `adjoint` must be the true adjoint of `map`; this is checked on a few
/// random probes before iterating.
pub fn spectral_norm_power_iteration<F, G>(
    map: F,
    adjoint: G,
    input_dim: usize,
    settings: PowerIteration,
    rng: &mut Rng,
) -> Result<SpectralEstimate>
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if input_dim == 0 {
        return Err(Error::DegenerateShape("zero input dimension".into()));
    }
    for _ in 0..ADJOINT_PROBES {
        let x = rng.normal_tensor(&[input_dim]).into_data();
        let ax = map(&x);
        let y = rng.normal_tensor(&[ax.len().max(1)]).into_data();
        let aty = adjoint(&y);
        if aty.len() != input_dim || ax.len() != y.len() {
            return Err(Error::AdjointMismatch { lhs: f64::NAN, rhs: f64::NAN });
        }
        let lhs = dot(&ax, &y);
        let rhs = dot(&x, &aty);
        let scale = (norm_unchecked(&ax, NormOrder::L2) * norm_unchecked(&y, NormOrder::L2))
            .max(norm_unchecked(&x, NormOrder::L2) * norm_unchecked(&aty, NormOrder::L2))
            .max(1.0);
        if !((lhs - rhs).abs() <= ADJOINT_TOL * scale) {
            return Err(Error::AdjointMismatch { lhs, rhs });
        }
    }

    let mut v = rng.normal_tensor(&[input_dim]).into_data();
    normalize(&mut v);
    let mut sigma = 0.0;
    let mut iterations = 0;
    while iterations < settings.max_iters.max(1) {
        iterations += 1;
        let u = map(&v);
        let next = norm_unchecked(&u, NormOrder::L2);
        if !next.is_finite() {
            return Err(Error::InvalidValue("power iteration overflowed".into()));
        }
        let converged = (next - sigma).abs() <= settings.tol * next;
        sigma = next;
        if sigma == 0.0 || converged {
            break;
        }
        let mut w = adjoint(&u);
        if normalize(&mut w) == 0.0 {
            break;
        }
        v = w;
    }
    Ok(SpectralEstimate { sigma, iterations })
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm_unchecked(v, NormOrder::L2);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Explicit matrix of a learned layer's linear term, built column by column
/// from basis-vector probes, so that `M · vec(x) = vec(apply_linear(x))`.
pub fn materialize_linear(layer: LearnedLayer<'_>, input_shape: &[usize]) -> Result<Tensor> {
    let dim: usize = input_shape.iter().product();
    if dim > MATERIALIZE_LIMIT {
        return Err(Error::Size(format!(
            "input dimension {dim} exceeds the materialization limit {MATERIALIZE_LIMIT}"
        )));
    }
    let out_dim: usize = layer.output_shape(input_shape)?.iter().product();
    let mut m = vec![0.0; out_dim * dim];
    let mut e = Tensor::zeros(input_shape);
    for j in 0..dim {
        e.data_mut()[j] = 1.0;
        let col = layer.apply_linear(&e)?;
        for (i, v) in col.data().iter().enumerate() {
            m[i * dim + j] = *v;
        }
        e.data_mut()[j] = 0.0;
    }
    Tensor::new(vec![out_dim, dim], m)
}

/// `‖W‖_p` of a learned layer's linear term for instances of `input_shape`.
///
/// Exact for `p ∈ {1, ∞}` (basis probes through the map or its adjoint),
/// power iteration for `p = 2`.
pub fn layer_operator_norm(
    layer: LearnedLayer<'_>,
    input_shape: &[usize],
    p: NormOrder,
    rng: &mut Rng,
) -> Result<f64> {
    if let LearnedLayer::BatchNorm(bn) = layer {
        bn.check_input(input_shape)?;
        return Ok(bn.running_scale().iter().fold(0.0, |m: f64, d| m.max(d.abs())));
    }
    if let LearnedLayer::Dense(d) = layer {
        if p != NormOrder::L2 {
            return operator_norm_exact(&d.weight, p);
        }
    }
    let in_dim: usize = input_shape.iter().product();
    let out_shape = layer.output_shape(input_shape)?;
    let forward = |x: &[f64]| {
        let t = Tensor::from_parts(input_shape.to_vec(), x.to_vec());
        layer.apply_linear(&t).expect("shape checked").into_data()
    };
    let adjoint = |y: &[f64]| {
        let t = Tensor::from_parts(out_shape.clone(), y.to_vec());
        layer.apply_adjoint(&t, input_shape).expect("shape checked").into_data()
    };
    match p {
        NormOrder::L1 => Ok(basis_max(in_dim, &forward)),
        NormOrder::Inf => Ok(basis_max(out_shape.iter().product(), &adjoint)),
        NormOrder::L2 => {
            let settings = PowerIteration {
                max_iters: 10_000,
                tol: 1e-14,
            };
            Ok(spectral_norm_power_iteration(forward, adjoint, in_dim, settings, rng)?.sigma)
        }
    }
}

/// `max_j ‖f(e_j)‖_1` over standard basis vectors.
fn basis_max(dim: usize, f: &dyn Fn(&[f64]) -> Vec<f64>) -> f64 {
    let mut e = vec![0.0; dim];
    let mut best = 0.0f64;
    for j in 0..dim {
        e[j] = 1.0;
        best = best.max(norm_unchecked(&f(&e), NormOrder::L1));
        e[j] = 0.0;
    }
    best
}

/// Product of per-stage Lipschitz constants: an upper bound on the
/// network's Lipschitz constant over all of input space (eval semantics).
pub fn lipschitz_upper_bound(net: &Network, p: NormOrder) -> Result<f64> {
    let mut rng = Rng::seeded(0x6c69_7073);
    sequence_bound(net.stages(), net.input_shape(), p, &mut rng).map(|(b, _)| b)
}

fn sequence_bound(stages: &[Stage], input: &[usize], p: NormOrder, rng: &mut Rng) -> Result<(f64, Vec<usize>)> {
    let mut shape = input.to_vec();
    let mut bound = 1.0;
    for s in stages {
        bound *= stage_bound(s, &shape, p, rng)?;
        shape = s.output_shape(&shape)?;
    }
    Ok((bound, shape))
}

fn stage_bound(stage: &Stage, input: &[usize], p: NormOrder, rng: &mut Rng) -> Result<f64> {
    Ok(match stage {
        Stage::Dense(d) => layer_operator_norm(LearnedLayer::Dense(d), input, p, rng)?,
        Stage::Conv2d(c) => layer_operator_norm(LearnedLayer::Conv2d(c), input, p, rng)?,
        Stage::BatchNorm(b) => layer_operator_norm(LearnedLayer::BatchNorm(b), input, p, rng)?,
        Stage::Dropout(d) => 1.0 - d.rate,
        Stage::Relu | Stage::Flatten => 1.0,
        Stage::MaxPool(pool) => {
            // Each input feeds at most `m` windows; the map is 1-Lipschitz
            // when windows do not overlap.
            let per_axis = pool.size.div_ceil(pool.stride) as f64;
            let m = per_axis * per_axis;
            match p {
                NormOrder::L1 => m,
                NormOrder::L2 => m.sqrt(),
                NormOrder::Inf => 1.0,
            }
        }
        Stage::Residual(r) => {
            let main = sequence_bound(&r.main, input, p, rng)?.0;
            let short = match &r.shortcut {
                Some(s) => sequence_bound(s, input, p, rng)?.0,
                None => 1.0,
            };
            main + short
        }
    })
}

/// Five-number summary. Quartiles use linear interpolation between order
/// statistics (Hyndman-Fan type 7: position `(n-1)·q`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainStats {
    pub min: f64,
    pub lower_quartile: f64,
    pub median: f64,
    pub upper_quartile: f64,
    pub max: f64,
    pub n: usize,
}

impl GainStats {
    pub fn fields(&self) -> [f64; 5] {
        [self.min, self.lower_quartile, self.median, self.upper_quartile, self.max]
    }
}

pub fn gain_stats(gains: &[f64]) -> Result<GainStats> {
    if gains.is_empty() {
        return Err(Error::EmptySample("no gains to summarise".into()));
    }
    vector_p_norm(gains, NormOrder::Inf)?;
    let mut sorted = gains.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(GainStats {
        min: sorted[0],
        lower_quartile: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        upper_quartile: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        n: sorted.len(),
    })
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
