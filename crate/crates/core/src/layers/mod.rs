//! Network stages, forward and backward passes.
//!
//! Every learned stage (dense, conv, batch norm) is affine, `W x + b`, and
//! exposes its bias-free linear term `W x` as an implicit map through
//! [`LearnedLayer::apply_linear`]. The forward pass records, for each learned
//! stage in depth-first order, its input batch `X` and linear output `Z`.
//!
//! Dropout is the standard (non-inverted) form: training multiplies by a
//! Bernoulli keep mask and evaluation multiplies by `1 - rate`. The inverted
//! form (scale by `1/(1-rate)` in training) is equivalent up to that constant.

mod batchnorm;
pub mod checkpoint;
mod conv;
mod dense;
pub mod loss;
mod pool;
mod spec;

pub use batchnorm::{BatchNorm, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use conv::Conv2d;
pub use dense::Dense;
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::MaxPool;
pub use spec::{NetworkSpec, StageSpec};

use crate::tensor::Rng;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate })
    }
}

/// Sum of a main path and a shortcut (identity when `shortcut` is `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub main: Vec<Stage>,
    pub shortcut: Option<Vec<Stage>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Dense(Dense),
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Dropout(Dropout),
    Relu,
    MaxPool(MaxPool),
    Flatten,
    Residual(Residual),
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Dense(_) => "dense",
            Stage::Conv2d(_) => "conv2d",
            Stage::BatchNorm(_) => "batch_norm",
            Stage::Dropout(_) => "dropout",
            Stage::Relu => "relu",
            Stage::MaxPool(_) => "max_pool",
            Stage::Flatten => "flatten",
            Stage::Residual(_) => "residual",
        }
    }

    /// Per-instance output shape for a per-instance input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Stage::Dense(d) => {
                if input != [d.inputs()] {
                    return Err(Error::Shape(format!(
                        "dense layer takes {} features, got instance shape {input:?}",
                        d.inputs()
                    )));
                }
                Ok(vec![d.outputs()])
            }
            Stage::Conv2d(c) => c.output_shape(input),
            Stage::BatchNorm(bn) => bn.check_input(input).map(|_| input.to_vec()),
            Stage::Dropout(_) | Stage::Relu => Ok(input.to_vec()),
            Stage::MaxPool(p) => p.output_shape(input),
            Stage::Flatten => Ok(vec![input.iter().product()]),
            Stage::Residual(r) => {
                let main = sequence_shape(&r.main, input)?;
                let short = match &r.shortcut {
                    Some(s) => sequence_shape(s, input)?,
                    None => input.to_vec(),
                };
                if main != short {
                    return Err(Error::Shape(format!(
                        "residual paths disagree: main {main:?}, shortcut {short:?}"
                    )));
                }
                Ok(main)
            }
        }
    }
}

fn sequence_shape(stages: &[Stage], input: &[usize]) -> Result<Vec<usize>> {
    stages.iter().try_fold(input.to_vec(), |shape, s| s.output_shape(&shape))
}

/// Borrowed view of a learned (affine) stage.
#[derive(Debug, Clone, Copy)]
pub enum LearnedLayer<'a> {
    Dense(&'a Dense),
    Conv2d(&'a Conv2d),
    BatchNorm(&'a BatchNorm),
}

impl<'a> LearnedLayer<'a> {
    pub fn kind(&self) -> &'static str {
        match self {
            LearnedLayer::Dense(_) => "dense",
            LearnedLayer::Conv2d(_) => "conv2d",
            LearnedLayer::BatchNorm(_) => "batch_norm",
        }
    }

    /// The weight the MaxGain projection rescales (`W`, the kernel, or `α`).
    pub fn weight(&self) -> &'a Tensor {
        match self {
            LearnedLayer::Dense(d) => &d.weight,
            LearnedLayer::Conv2d(c) => &c.kernel,
            LearnedLayer::BatchNorm(b) => &b.alpha,
        }
    }

    pub fn bias(&self) -> &'a Tensor {
        match self {
            LearnedLayer::Dense(d) => &d.bias,
            LearnedLayer::Conv2d(c) => &c.bias,
            LearnedLayer::BatchNorm(b) => &b.beta,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LearnedLayer::Dense(d) => Stage::Dense(d.clone()).output_shape(input),
            LearnedLayer::Conv2d(c) => c.output_shape(input),
            LearnedLayer::BatchNorm(b) => b.check_input(input).map(|_| input.to_vec()),
        }
    }

    /// `W x` for a single instance, bias excluded. Batch norm uses its
    /// running statistics: `diag(α/√(running_var+ε)) x`.
    pub fn apply_linear(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let z = match *self {
            LearnedLayer::Dense(d) => d.apply(x.data()),
            LearnedLayer::Conv2d(c) => c.apply(&c.geometry(x.shape())?, x.data()),
            LearnedLayer::BatchNorm(b) => {
                let spatial = b.check_input(x.shape())?;
                b.scale_channels(x.data(), spatial, &b.running_scale())
            }
        };
        Ok(Tensor::from_parts(out_shape, z))
    }

    /// `Wᵀ y` for a single output-shaped `y`, given the instance input shape.
    pub fn apply_adjoint(&self, y: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
        let out_shape = self.output_shape(input_shape)?;
        if y.shape() != out_shape.as_slice() {
            return Err(Error::Shape(format!(
                "adjoint input {:?}, expected {out_shape:?}",
                y.shape()
            )));
        }
        let x = match *self {
            LearnedLayer::Dense(d) => d.apply_adjoint(y.data()),
            LearnedLayer::Conv2d(c) => c.apply_adjoint(&c.geometry(input_shape)?, y.data()),
            LearnedLayer::BatchNorm(b) => {
                let spatial = b.check_input(input_shape)?;
                b.scale_channels(y.data(), spatial, &b.running_scale())
            }
        };
        Ok(Tensor::from_parts(input_shape.to_vec(), x))
    }
}

/// Mutable view of a learned stage.
#[derive(Debug)]
pub enum LearnedLayerMut<'a> {
    Dense(&'a mut Dense),
    Conv2d(&'a mut Conv2d),
    BatchNorm(&'a mut BatchNorm),
}

impl LearnedLayerMut<'_> {
    pub fn as_ref(&self) -> LearnedLayer<'_> {
        match self {
            LearnedLayerMut::Dense(d) => LearnedLayer::Dense(d),
            LearnedLayerMut::Conv2d(c) => LearnedLayer::Conv2d(c),
            LearnedLayerMut::BatchNorm(b) => LearnedLayer::BatchNorm(b),
        }
    }

    /// `(weight, bias)`: `(W, b)`, `(kernel, b)` or `(α, β)`.
    pub fn params_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        match self {
            LearnedLayerMut::Dense(d) => (&mut d.weight, &mut d.bias),
            LearnedLayerMut::Conv2d(c) => (&mut c.kernel, &mut c.bias),
            LearnedLayerMut::BatchNorm(b) => (&mut b.alpha, &mut b.beta),
        }
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        self.params_mut().0
    }
}

/// Input batch and linear-term output recorded for one learned layer.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub inputs: Tensor,
    pub outputs: Tensor,
}

/// What one forward pass recorded: per-learned-layer `(X, Z)` plus the
/// state backward needs.
#[derive(Debug, Clone)]
pub struct StepCaches {
    pub layers: Vec<LayerCache>,
    tape: Option<Vec<Tape>>,
    version: u64,
    output_shape: Vec<usize>,
}

impl StepCaches {
    pub fn mode(&self) -> Mode {
        if self.tape.is_some() {
            Mode::Train
        } else {
            Mode::Eval
        }
    }

    pub fn network_version(&self) -> u64 {
        self.version
    }
}

#[derive(Debug, Clone)]
enum Tape {
    Dense,
    Conv,
    BatchNorm { xhat: Tensor, inv_std: Vec<f64> },
    Dropout { mask: Vec<f64> },
    Relu { mask: Vec<bool> },
    MaxPool { argmax: Vec<usize>, in_shape: Vec<usize> },
    Flatten { in_shape: Vec<usize> },
    Residual { main: Vec<Tape>, shortcut: Option<Vec<Tape>> },
}

/// Gradient of the loss for one learned layer's `(weight, bias)`.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub input: Tensor,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.input.is_finite()
            && self
                .layers
                .iter()
                .all(|g| g.weight.is_finite() && g.bias.is_finite())
    }
}

/// Options for the train-mode forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Record batch-norm `Z` with minibatch rather than running variance.
    /// Only useful for demonstrating how unstable that gain estimate is.
    pub batchnorm_minibatch_gain: bool,
}

/// An ordered sequence of stages applied to instances of `input_shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    stages: Vec<Stage>,
    version: u64,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, stages: Vec<Stage>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::DegenerateShape(format!("input shape {input_shape:?}")));
        }
        sequence_shape(&stages, &input_shape)?;
        validate_stages(&stages)?;
        Ok(Network {
            input_shape,
            stages,
            version: 0,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        sequence_shape(&self.stages, &self.input_shape).expect("validated at construction")
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Increments on every mutable access to parameters.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn learned_layers(&self) -> Vec<LearnedLayer<'_>> {
        let mut out = Vec::new();
        collect_learned(&self.stages, &mut out);
        out
    }

    pub fn learned_layers_mut(&mut self) -> Vec<LearnedLayerMut<'_>> {
        self.version += 1;
        let mut out = Vec::new();
        collect_learned_mut(&mut self.stages, &mut out);
        out
    }

    pub fn learned_count(&self) -> usize {
        self.learned_layers().len()
    }

    /// Per-instance input shape of each learned layer, in learned order.
    pub fn learned_input_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        collect_learned_shapes(&self.stages, &self.input_shape, &mut out).expect("validated at construction");
        out
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        if x.ndim() == 0 || x.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "network takes instances of shape {:?}, batch has shape {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Runs a batch through the network. In train mode batch norm uses
    /// minibatch statistics and updates its running averages, and dropout
    /// draws masks from `rng`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, StepCaches)> {
        self.forward_with(x, mode, rng, ForwardOptions::default())
    }

    pub fn forward_with(
        &mut self,
        x: &Tensor,
        mode: Mode,
        rng: &mut Rng,
        options: ForwardOptions,
    ) -> Result<(Tensor, StepCaches)> {
        if mode == Mode::Eval {
            return self.forward_eval(x);
        }
        self.check_batch(x)?;
        let mut pass = Pass {
            mode,
            rng: Some(rng),
            options,
            layers: Vec::new(),
            bn_updates: Vec::new(),
        };
        let (y, tape) = run(&self.stages, x.clone(), &mut pass)?;
        let updates = std::mem::take(&mut pass.bn_updates);
        let layers = pass.layers;
        if !updates.is_empty() {
            let mut learned = self.learned_layers_mut();
            for (idx, mean, var) in updates {
                if let LearnedLayerMut::BatchNorm(bn) = &mut learned[idx] {
                    bn.running_mean = Tensor::from_parts(vec![mean.len()], mean);
                    bn.running_var = Tensor::from_parts(vec![var.len()], var);
                }
            }
        }
        let caches = StepCaches {
            layers,
            tape: Some(tape),
            version: self.version,
            output_shape: y.shape().to_vec(),
        };
        Ok((y, caches))
    }

    /// Eval-mode pass; does not mutate the network.
    pub fn forward_eval(&self, x: &Tensor) -> Result<(Tensor, StepCaches)> {
        self.check_batch(x)?;
        let mut pass = Pass {
            mode: Mode::Eval,
            rng: None,
            options: ForwardOptions::default(),
            layers: Vec::new(),
            bn_updates: Vec::new(),
        };
        let (y, _) = run(&self.stages, x.clone(), &mut pass)?;
        let caches = StepCaches {
            layers: pass.layers,
            tape: None,
            version: self.version,
            output_shape: y.shape().to_vec(),
        };
        Ok((y, caches))
    }

    /// Eval-mode output only.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_eval(x).map(|(y, _)| y)
    }

    /// Gradients of a loss with respect to every learned parameter, given
    /// `∂L/∂output` and the caches of the matching train-mode forward.
    pub fn backward(&self, caches: &StepCaches, loss_grad: &Tensor) -> Result<Gradients> {
        let tape = caches
            .tape
            .as_ref()
            .ok_or_else(|| Error::CacheMismatch("caches come from an eval-mode pass".into()))?;
        if caches.version != self.version {
            return Err(Error::CacheMismatch(format!(
                "caches recorded at network version {}, network is at {}",
                caches.version, self.version
            )));
        }
        if loss_grad.shape() != caches.output_shape.as_slice() {
            return Err(Error::CacheMismatch(format!(
                "loss gradient {:?} does not match forward output {:?}",
                loss_grad.shape(),
                caches.output_shape
            )));
        }
        let n = self.learned_count();
        if caches.layers.len() != n || tape.len() != self.stages.len() {
            return Err(Error::CacheMismatch("caches do not match network structure".into()));
        }
        let mut grads: Vec<Option<LayerGrads>> = vec![None; n];
        let mut cursor = n;
        let input = back(&self.stages, tape, loss_grad.clone(), &caches.layers, &mut grads, &mut cursor)?;
        let layers = grads
            .into_iter()
            .map(|g| g.ok_or_else(|| Error::CacheMismatch("missing layer gradient".into())))
            .collect::<Result<_>>()?;
        Ok(Gradients { layers, input })
    }
}

fn validate_stages(stages: &[Stage]) -> Result<()> {
    for s in stages {
        match s {
            Stage::Dense(d) => {
                Dense::new(d.weight.clone(), d.bias.clone())?;
            }
            Stage::BatchNorm(b) => b.validate()?,
            Stage::Dropout(d) => {
                Dropout::new(d.rate)?;
            }
            Stage::MaxPool(p) => {
                MaxPool::new(p.size, p.stride)?;
            }
            Stage::Residual(r) => {
                validate_stages(&r.main)?;
                if let Some(s) = &r.shortcut {
                    validate_stages(s)?;
                }
            }
            Stage::Conv2d(_) | Stage::Relu | Stage::Flatten => {}
        }
    }
    Ok(())
}

fn collect_learned<'a>(stages: &'a [Stage], out: &mut Vec<LearnedLayer<'a>>) {
    for s in stages {
        match s {
            Stage::Dense(d) => out.push(LearnedLayer::Dense(d)),
            Stage::Conv2d(c) => out.push(LearnedLayer::Conv2d(c)),
            Stage::BatchNorm(b) => out.push(LearnedLayer::BatchNorm(b)),
            Stage::Residual(r) => {
                collect_learned(&r.main, out);
                if let Some(sc) = &r.shortcut {
                    collect_learned(sc, out);
                }
            }
            _ => {}
        }
    }
}

fn collect_learned_mut<'a>(stages: &'a mut [Stage], out: &mut Vec<LearnedLayerMut<'a>>) {
    for s in stages {
        match s {
            Stage::Dense(d) => out.push(LearnedLayerMut::Dense(d)),
            Stage::Conv2d(c) => out.push(LearnedLayerMut::Conv2d(c)),
            Stage::BatchNorm(b) => out.push(LearnedLayerMut::BatchNorm(b)),
            Stage::Residual(r) => {
                collect_learned_mut(&mut r.main, out);
                if let Some(sc) = &mut r.shortcut {
                    collect_learned_mut(sc, out);
                }
            }
            _ => {}
        }
    }
}

fn collect_learned_shapes(stages: &[Stage], input: &[usize], out: &mut Vec<Vec<usize>>) -> Result<Vec<usize>> {
    let mut shape = input.to_vec();
    for s in stages {
        match s {
            Stage::Dense(_) | Stage::Conv2d(_) | Stage::BatchNorm(_) => out.push(shape.clone()),
            Stage::Residual(r) => {
                collect_learned_shapes(&r.main, &shape, out)?;
                if let Some(sc) = &r.shortcut {
                    collect_learned_shapes(sc, &shape, out)?;
                }
            }
            _ => {}
        }
        shape = s.output_shape(&shape)?;
    }
    Ok(shape)
}

struct Pass<'r> {
    mode: Mode,
    rng: Option<&'r mut Rng>,
    options: ForwardOptions,
    layers: Vec<LayerCache>,
    /// (learned index, running mean, running variance) to commit after the pass.
    bn_updates: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

fn run(stages: &[Stage], mut x: Tensor, pass: &mut Pass) -> Result<(Tensor, Vec<Tape>)> {
    let mut tape = Vec::with_capacity(stages.len());
    for stage in stages {
        let (y, t) = run_stage(stage, x, pass)?;
        x = y;
        tape.push(t);
    }
    Ok((x, tape))
}

fn run_stage(stage: &Stage, x: Tensor, pass: &mut Pass) -> Result<(Tensor, Tape)> {
    let in_shape = &x.shape()[1..];
    stage.output_shape(in_shape)?;
    Ok(match stage {
        Stage::Dense(d) => {
            let z = d.linear_batch(&x);
            let y = d.add_bias(&z);
            pass.layers.push(LayerCache { inputs: x, outputs: z });
            (y, Tape::Dense)
        }
        Stage::Conv2d(c) => {
            let g = c.geometry(in_shape)?;
            let z = c.linear_batch(&g, &x);
            let y = c.add_bias(&g, &z);
            pass.layers.push(LayerCache { inputs: x, outputs: z });
            (y, Tape::Conv)
        }
        Stage::BatchNorm(bn) => {
            let spatial = bn.check_input(in_shape)?;
            let idx = pass.layers.len();
            match pass.mode {
                Mode::Eval => {
                    let y = bn.infer(&x, spatial);
                    let z = bn.scale_channels(x.data(), spatial, &bn.running_scale());
                    let z = Tensor::from_parts(x.shape().to_vec(), z);
                    pass.layers.push(LayerCache { inputs: x, outputs: z });
                    (y, Tape::Dense)
                }
                Mode::Train => {
                    let stats = bn.batch_stats(&x, spatial);
                    let (y, xhat, inv_std) = bn.normalize(&x, spatial, &stats);
                    let (mean, var) = bn.updated_running(&stats);
                    // Z for the gain uses the running variance the projection
                    // will see, i.e. after this batch has been absorbed.
                    let diag = if pass.options.batchnorm_minibatch_gain {
                        bn.scale_for(&stats.var)
                    } else {
                        bn.scale_for(&var)
                    };
                    let z = Tensor::from_parts(x.shape().to_vec(), bn.scale_channels(x.data(), spatial, &diag));
                    pass.layers.push(LayerCache { inputs: x, outputs: z });
                    pass.bn_updates.push((idx, mean, var));
                    (y, Tape::BatchNorm { xhat, inv_std })
                }
            }
        }
        Stage::Dropout(d) => match (pass.mode, pass.rng.as_deref_mut()) {
            (Mode::Train, Some(rng)) => {
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.uniform() < d.rate { 0.0 } else { 1.0 })
                    .collect();
                let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                (Tensor::from_parts(x.shape().to_vec(), data), Tape::Dropout { mask })
            }
            _ => (x.scale(1.0 - d.rate), Tape::Dropout { mask: Vec::new() }),
        },
        Stage::Relu => {
            let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
            (x.map(|v| v.max(0.0)), Tape::Relu { mask })
        }
        Stage::MaxPool(p) => {
            let (y, argmax) = p.forward(&x)?;
            (y, Tape::MaxPool { argmax, in_shape: x.shape().to_vec() })
        }
        Stage::Flatten => {
            let in_shape = x.shape().to_vec();
            let n = x.rows();
            let w = x.row_len();
            (x.reshape(vec![n, w])?, Tape::Flatten { in_shape })
        }
        Stage::Residual(r) => {
            let (main_y, main_t) = run(&r.main, x.clone(), pass)?;
            let (short_y, short_t) = match &r.shortcut {
                Some(s) => {
                    let (y, t) = run(s, x, pass)?;
                    (y, Some(t))
                }
                None => (x, None),
            };
            (main_y.add(&short_y)?, Tape::Residual { main: main_t, shortcut: short_t })
        }
    })
}

/// Walks stages in reverse. `cursor` counts learned layers from the end.
fn back(
    stages: &[Stage],
    tapes: &[Tape],
    mut dy: Tensor,
    caches: &[LayerCache],
    grads: &mut [Option<LayerGrads>],
    cursor: &mut usize,
) -> Result<Tensor> {
    if stages.len() != tapes.len() {
        return Err(Error::CacheMismatch("tape length differs from stage count".into()));
    }
    for (stage, tape) in stages.iter().zip(tapes).rev() {
        dy = back_stage(stage, tape, dy, caches, grads, cursor)?;
    }
    Ok(dy)
}

fn back_stage(
    stage: &Stage,
    tape: &Tape,
    dy: Tensor,
    caches: &[LayerCache],
    grads: &mut [Option<LayerGrads>],
    cursor: &mut usize,
) -> Result<Tensor> {
    let mismatch = || Error::CacheMismatch(format!("tape entry does not match {} stage", stage.name()));
    let take_layer = |cursor: &mut usize| -> Result<usize> {
        *cursor = cursor.checked_sub(1).ok_or_else(mismatch)?;
        Ok(*cursor)
    };
    Ok(match (stage, tape) {
        (Stage::Dense(d), Tape::Dense) => {
            let i = take_layer(cursor)?;
            let x = &caches[i].inputs;
            if x.shape()[1..] != [d.inputs()] || dy.shape() != [x.rows(), d.outputs()] {
                return Err(mismatch());
            }
            let (dw, db, dx) = d.backward(x, &dy);
            grads[i] = Some(LayerGrads { weight: dw, bias: db });
            dx
        }
        (Stage::Conv2d(c), Tape::Conv) => {
            let i = take_layer(cursor)?;
            let x = &caches[i].inputs;
            let g = c.geometry(&x.shape()[1..])?;
            if dy.len() != x.rows() * g.out_len() {
                return Err(mismatch());
            }
            let (dk, db, dx) = c.backward(&g, x, &dy);
            grads[i] = Some(LayerGrads { weight: dk, bias: db });
            dx
        }
        (Stage::BatchNorm(bn), Tape::BatchNorm { xhat, inv_std }) => {
            let i = take_layer(cursor)?;
            if xhat.shape() != dy.shape() {
                return Err(mismatch());
            }
            let spatial = bn.check_input(&xhat.shape()[1..])?;
            let (da, dbeta, dx) = bn.backward(xhat, inv_std, &dy, spatial);
            grads[i] = Some(LayerGrads { weight: da, bias: dbeta });
            dx
        }
        (Stage::Dropout(_), Tape::Dropout { mask }) => {
            if mask.len() != dy.len() {
                return Err(mismatch());
            }
            let data = dy.data().iter().zip(mask).map(|(g, m)| g * m).collect();
            Tensor::from_parts(dy.shape().to_vec(), data)
        }
        (Stage::Relu, Tape::Relu { mask }) => {
            if mask.len() != dy.len() {
                return Err(mismatch());
            }
            let data = dy
                .data()
                .iter()
                .zip(mask)
                .map(|(&g, &m)| if m { g } else { 0.0 })
                .collect();
            Tensor::from_parts(dy.shape().to_vec(), data)
        }
        (Stage::MaxPool(_), Tape::MaxPool { argmax, in_shape }) => {
            if argmax.len() != dy.len() {
                return Err(mismatch());
            }
            MaxPool::backward(in_shape, argmax, &dy)
        }
        (Stage::Flatten, Tape::Flatten { in_shape }) => dy.reshape(in_shape.clone())?,
        (Stage::Residual(r), Tape::Residual { main, shortcut }) => {
            // Learned layers were numbered main-then-shortcut, so unwind the
            // shortcut first.
            let short_dx = match (&r.shortcut, shortcut) {
                (Some(s), Some(t)) => back(s, t, dy.clone(), caches, grads, cursor)?,
                (None, None) => dy.clone(),
                _ => return Err(mismatch()),
            };
            let main_dx = back(&r.main, main, dy, caches, grads, cursor)?;
            main_dx.add(&short_dx)?
        }
        _ => return Err(mismatch()),
    })
}
