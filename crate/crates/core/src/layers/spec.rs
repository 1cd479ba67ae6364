use serde::{Deserialize, Serialize};

use super::{BatchNorm, Conv2d, Dense, Dropout, MaxPool, Network, Residual, Stage};
use crate::tensor::{InitScheme, Rng};
use crate::{Error, Result};

fn one() -> usize {
    1
}

/// Architecture description; shapes are inferred stage by stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StageSpec {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    BatchNorm,
    Dropout {
        rate: f64,
    },
    Relu,
    MaxPool {
        size: usize,
        #[serde(default)]
        stride: Option<usize>,
    },
    Flatten,
    Residual {
        main: Vec<StageSpec>,
        /// Empty means an identity shortcut.
        #[serde(default)]
        shortcut: Vec<StageSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub stages: Vec<StageSpec>,
}

impl NetworkSpec {
    /// `input → [dense(h) → (batch_norm) → relu → (dropout)]* → dense(classes)`.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize, dropout: f64, batchnorm: bool) -> Self {
        let mut stages = Vec::new();
        for &h in hidden {
            stages.push(StageSpec::Dense { units: h });
            if batchnorm {
                stages.push(StageSpec::BatchNorm);
            }
            stages.push(StageSpec::Relu);
            if dropout > 0.0 {
                stages.push(StageSpec::Dropout { rate: dropout });
            }
        }
        stages.push(StageSpec::Dense { units: classes });
        NetworkSpec {
            input_shape: vec![inputs],
            stages,
        }
    }

    pub fn build(&self, scheme: InitScheme, rng: &mut Rng) -> Result<Network> {
        let stages = build_sequence(&self.stages, &self.input_shape, scheme, rng)?.0;
        Network::new(self.input_shape.clone(), stages)
    }
}

fn build_sequence(
    specs: &[StageSpec],
    input: &[usize],
    scheme: InitScheme,
    rng: &mut Rng,
) -> Result<(Vec<Stage>, Vec<usize>)> {
    let mut shape = input.to_vec();
    let mut stages = Vec::with_capacity(specs.len());
    for spec in specs {
        let stage = build_stage(spec, &shape, scheme, rng)?;
        shape = stage.output_shape(&shape)?;
        stages.push(stage);
    }
    Ok((stages, shape))
}

fn build_stage(spec: &StageSpec, input: &[usize], scheme: InitScheme, rng: &mut Rng) -> Result<Stage> {
    Ok(match spec {
        StageSpec::Dense { units } => match input {
            &[features] => Stage::Dense(Dense::init(features, *units, scheme, rng)?),
            _ => {
                return Err(Error::Shape(format!(
                    "dense stage needs flat instances, got {input:?}; add a flatten stage"
                )))
            }
        },
        StageSpec::Conv2d {
            filters,
            kernel,
            stride,
            padding,
        } => match input {
            &[channels, _, _] => Stage::Conv2d(Conv2d::init(
                channels,
                *filters,
                (*kernel, *kernel),
                *stride,
                (*padding, *padding),
                scheme,
                rng,
            )?),
            _ => return Err(Error::Shape(format!("conv stage needs (c, h, w) instances, got {input:?}"))),
        },
        StageSpec::BatchNorm => Stage::BatchNorm(BatchNorm::new(input[0])),
        StageSpec::Dropout { rate } => Stage::Dropout(Dropout::new(*rate)?),
        StageSpec::Relu => Stage::Relu,
        StageSpec::MaxPool { size, stride } => Stage::MaxPool(MaxPool::new(*size, stride.unwrap_or(*size))?),
        StageSpec::Flatten => Stage::Flatten,
        StageSpec::Residual { main, shortcut } => {
            let main = build_sequence(main, input, scheme, rng)?.0;
            let shortcut = if shortcut.is_empty() {
                None
            } else {
                Some(build_sequence(shortcut, input, scheme, rng)?.0)
            };
            Stage::Residual(Residual { main, shortcut })
        }
    })
}
