//! Run configuration files.
//!
//! ```toml
//! seed = 7
//! epochs = 200
//! batch_size = 64
//! optimizer = "adam"        # or "sgd" (Nesterov momentum)
//! lr = 1e-3
//! schedule = [{ epoch = 100, factor = 0.1 }]
//!
//! [model]
//! hidden = [64, 64]         # MLP shorthand; or `stages = [...]`
//! dropout = 0.0
//! batchnorm = false
//!
//! [maxgain]
//! gamma = 2.0
//! p = 2
//!
//! [data]
//! source = "spirals"
//! n = 2000
//! test_n = 1000
//! noise = 0.05
//! seed = 7
//!
//! [augment]
//! flip_horizontal = false
//! ```
//!
//! Relative paths in `[data]` resolve against the config file's directory.

use std::path::{Path, PathBuf};

use maxgain::data::{
    load_csv, load_idx, synth_blobs, synth_spirals_with_turns, Augment, CsvOptions, Dataset,
    DEFAULT_SPIRAL_TURNS,
};
use maxgain::eval::Experiment;
use maxgain::optim::{
    Drop, FitConfig, MaxGainConfig, Optimizer, Schedule, DEFAULT_ADAM_EPS, DEFAULT_BATCH_SIZE, DEFAULT_BETA1,
    DEFAULT_BETA2, DEFAULT_MOMENTUM,
};
use maxgain::{Error, InitScheme, NetworkSpec, NormOrder, Rng, StageSpec};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerName {
    #[serde(alias = "sgd-nesterov")]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub init: InitScheme,
    pub optimizer: OptimizerName,
    pub lr: f64,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub beta1: Option<f64>,
    #[serde(default)]
    pub beta2: Option<f64>,
    #[serde(default)]
    pub adam_eps: Option<f64>,
    #[serde(default)]
    pub schedule: Vec<Drop>,
    pub model: ModelConfig,
    #[serde(default)]
    pub maxgain: Option<MaxGainSection>,
    pub data: DataConfig,
    #[serde(default)]
    pub augment: Augment,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths of an MLP ending in one dense unit per class.
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub batchnorm: bool,
    /// Explicit stage list; the input shape comes from the data.
    #[serde(default)]
    pub stages: Option<Vec<StageSpec>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerGamma {
    pub layer: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxGainSection {
    pub gamma: f64,
    #[serde(default)]
    pub p: NormOrder,
    #[serde(default)]
    pub overrides: Vec<LayerGamma>,
    #[serde(default)]
    pub batchnorm_minibatch_gain: bool,
}

fn default_test_n() -> usize {
    1000
}
fn default_noise() -> f64 {
    0.05
}
fn default_classes() -> usize {
    2
}
fn default_turns() -> f64 {
    DEFAULT_SPIRAL_TURNS
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Spirals {
        n: usize,
        #[serde(default = "default_test_n")]
        test_n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_turns")]
        turns: f64,
        #[serde(default)]
        seed: u64,
        /// Defaults to `seed + 1`.
        #[serde(default)]
        test_seed: Option<u64>,
    },
    Blobs {
        n: usize,
        #[serde(default = "default_test_n")]
        test_n: usize,
        centers: Vec<Vec<f64>>,
        sd: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        test_seed: Option<u64>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        label_col: usize,
        #[serde(default)]
        feature_cols: Option<Vec<usize>>,
        #[serde(default)]
        has_header: bool,
    },
}

/// A parsed config plus the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub base: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let config = parse(&text).map_err(|msg| Error::Format { path: path.into(), msg })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base })
}

pub fn parse(text: &str) -> Result<Config, String> {
    let config: Config = toml::from_str(text).map_err(|e| e.to_string())?;
    config.check().map_err(|e| e.to_string())?;
    Ok(config)
}

impl Config {
    fn check(&self) -> Result<(), Error> {
        match (&self.model.hidden, &self.model.stages) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("model: set exactly one of `hidden` or `stages`".into())),
        }
        if self.model.stages.is_some() && (self.model.dropout != 0.0 || self.model.batchnorm) {
            return Err(Error::Config("model: `dropout`/`batchnorm` only apply with `hidden`".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!("model.dropout: {} outside [0, 1)", self.model.dropout)));
        }
        let wrong = match self.optimizer {
            OptimizerName::Sgd => self.beta1.or(self.beta2).or(self.adam_eps).map(|_| "beta1/beta2/adam_eps"),
            OptimizerName::Adam => self.momentum.map(|_| "momentum"),
        };
        if let Some(keys) = wrong {
            return Err(Error::Config(format!("{keys} do not apply to optimizer {:?}", self.optimizer)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr: must be positive and finite, got {}", self.lr)));
        }
        self.fit_config().schedule.validate()?;
        self.fit_config().optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size: must be positive".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerName::Sgd => Optimizer::SgdNesterov {
                momentum: self.momentum.unwrap_or(DEFAULT_MOMENTUM),
            },
            OptimizerName::Adam => Optimizer::Adam {
                beta1: self.beta1.unwrap_or(DEFAULT_BETA1),
                beta2: self.beta2.unwrap_or(DEFAULT_BETA2),
                eps: self.adam_eps.unwrap_or(DEFAULT_ADAM_EPS),
            },
        }
    }

    pub fn maxgain(&self) -> Option<MaxGainConfig> {
        self.maxgain.as_ref().map(|m| {
            let mut c = MaxGainConfig::new(m.gamma, m.p);
            c.overrides = m.overrides.iter().map(|o| (o.layer, o.gamma)).collect();
            c.batchnorm_minibatch_gain = m.batchnorm_minibatch_gain;
            c
        })
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer(),
            schedule: Schedule {
                base_lr: self.lr,
                drops: self.schedule.clone(),
            },
            maxgain: self.maxgain(),
            augment: self.augment,
            seed: self.seed,
        }
    }

    /// Train and test splits, with a shared class count.
    pub fn datasets(&self, base: &Path) -> Result<(Dataset, Dataset), Error> {
        let (train, test) = match &self.data {
            &DataConfig::Spirals { n, test_n, noise, classes, turns, seed, test_seed } => (
                synth_spirals_with_turns(n, noise, classes, turns, &mut Rng::seeded(seed))?,
                synth_spirals_with_turns(test_n, noise, classes, turns, &mut Rng::seeded(test_seed.unwrap_or(seed + 1)))?,
            ),
            DataConfig::Blobs { n, test_n, centers, sd, seed, test_seed } => (
                synth_blobs(*n, centers, *sd, &mut Rng::seeded(*seed))?,
                synth_blobs(*test_n, centers, *sd, &mut Rng::seeded(test_seed.unwrap_or(seed + 1)))?,
            ),
            DataConfig::Idx { train_images, train_labels, test_images, test_labels } => (
                load_idx(&base.join(train_images), &base.join(train_labels))?,
                load_idx(&base.join(test_images), &base.join(test_labels))?,
            ),
            DataConfig::Csv { train, test, label_col, feature_cols, has_header } => {
                let opts = CsvOptions {
                    feature_cols: feature_cols.clone(),
                    label_col: *label_col,
                    has_header: *has_header,
                };
                (load_csv(&base.join(train), &opts)?, load_csv(&base.join(test), &opts)?)
            }
        };
        if train.feature_shape() != test.feature_shape() {
            return Err(Error::Consistency(format!(
                "train instances {:?}, test instances {:?}",
                train.feature_shape(),
                test.feature_shape()
            )));
        }
        let classes = train.classes().max(test.classes());
        Ok((train.with_classes(classes)?, test.with_classes(classes)?))
    }

    pub fn network_spec(&self, data: &Dataset) -> NetworkSpec {
        let shape = data.feature_shape().to_vec();
        match (&self.model.hidden, &self.model.stages) {
            (_, Some(stages)) => NetworkSpec { input_shape: shape, stages: stages.clone() },
            (hidden, None) => {
                let inputs = shape.iter().product();
                let hidden = hidden.as_deref().unwrap_or(&[]);
                let mut spec = NetworkSpec::mlp(inputs, hidden, data.classes(), self.model.dropout, self.model.batchnorm);
                if shape.len() > 1 {
                    spec.stages.insert(0, StageSpec::Flatten);
                    spec.input_shape = shape;
                }
                spec
            }
        }
    }

    pub fn experiment(&self, train: Dataset, test: Dataset) -> Experiment {
        Experiment {
            spec: self.network_spec(&train),
            init: self.init,
            init_seed: self.seed,
            train,
            test,
            fit: self.fit_config(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        seed = 3
        epochs = 2
        optimizer = "adam"
        lr = 1e-3
        [model]
        hidden = [8]
        [data]
        source = "spirals"
        n = 40
        test_n = 20
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.optimizer(), Optimizer::adam());
        assert!(c.maxgain().is_none());
        let (train, test) = c.datasets(Path::new(".")).unwrap();
        assert_eq!((train.len(), test.len()), (40, 20));
        assert_ne!(train.x(), test.x());
        let spec = c.network_spec(&train);
        assert_eq!(spec, NetworkSpec::mlp(2, &[8], 2, 0.0, false));
    }

    #[test]
    fn maxgain_section() {
        let text = format!("{BASE}\n[maxgain]\ngamma = inf\np = \"inf\"\noverrides = [{{ layer = 1, gamma = 0.5 }}]\n");
        let m = parse(&text).unwrap().maxgain().unwrap();
        assert_eq!(m.gamma, f64::INFINITY);
        assert_eq!(m.p, NormOrder::Inf);
        assert_eq!(m.gamma_for(1), 0.5);
    }

    #[test]
    fn field_level_errors() {
        let err = parse(&BASE.replace("lr = 1e-3", "lr = \"fast\"")).unwrap_err();
        assert!(err.contains("lr"), "{err}");
        let err = parse(&BASE.replace("epochs = 2", "epochs = 2\nepohcs = 3")).unwrap_err();
        assert!(err.contains("epohcs"), "{err}");
        let err = parse(&BASE.replace("optimizer = \"adam\"", "optimizer = \"adam\"\nmomentum = 0.5")).unwrap_err();
        assert!(err.contains("momentum"), "{err}");
        assert!(parse(&BASE.replace("hidden = [8]", "")).is_err());
    }

    #[test]
    fn image_data_gets_flattened_for_mlp() {
        let c = parse(BASE).unwrap();
        let d = Dataset::new(maxgain::Tensor::zeros(&[2, 1, 3, 3]), vec![0, 1], 2).unwrap();
        let spec = c.network_spec(&d);
        assert_eq!(spec.input_shape, vec![1, 3, 3]);
        assert_eq!(spec.stages[0], StageSpec::Flatten);
        assert!(spec.build(InitScheme::HeNormal, &mut Rng::seeded(0)).is_ok());
    }
}
