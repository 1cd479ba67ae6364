//! Feed-forward network training with MaxGain regularisation.
//!
//! The gain of an affine layer `x ↦ W x + b` on an input `x` is
//! `‖W x‖_p / ‖x‖_p` (zero when `‖x‖_p = 0`). MaxGain bounds the largest
//! gain each learned layer shows on its inputs by a user-set `γ`. After every
//! optimizer update, each layer's maximum gain over the current minibatch is
//! measured from the activations recorded during that step's forward pass,
//! and the freshly updated weights are divided by `max(1, γ̂/γ)`.
//!
//! Modules:
//!
//! - [`tensor`]: dense `f64` arrays, vector norms, matrix products, seeded RNG.
//! - [`layers`]: dense, conv, batch norm, dropout, ReLU, max pool, flatten and
//!   residual stages with forward/backward passes and checkpoints.
//! - [`gain`]: empirical gain, operator norms, power iteration, Lipschitz
//!   upper bounds, five-number summaries.
//! - [`optim`]: SGD with Nesterov momentum, Adam, step schedules, the
//!   projection and the training loop.
//! - [`data`]: datasets, IDX and CSV loaders, synthetic generators,
//!   augmentation, predefined folds.
//! - [`eval`]: metrics, paired t-test, γ sweeps and gain reports.

pub mod data;
mod error;
pub mod eval;
pub mod gain;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use layers::{Mode, Network, NetworkSpec, Stage, StageSpec};
pub use tensor::{InitScheme, NormOrder, Rng, Tensor};
