//! Browser demo: train a small MLP on two interleaved spirals with a gain
//! limit, then look at its decision surface, its per-layer gain
//! distributions and a small γ sweep.
//!
//! Everything returns plain numbers or JSON strings, so the same API runs
//! natively in tests.

use maxgain::data::{synth_spirals, Dataset};
use maxgain::eval::{evaluate, gain_report, gamma_sweep, Experiment};
use maxgain::optim::{fit, FitConfig, MaxGainConfig, Optimizer, Schedule};
use maxgain::{InitScheme, Network, NetworkSpec, NormOrder, Rng, Tensor};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Half-width of the square the decision grid covers.
pub const EXTENT: f64 = 1.25;

const HIDDEN: [usize; 2] = [32, 32];

fn js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("plain data serialises")
}

/// `γ ≤ 0` or non-finite disables the limit.
fn limit(gamma: f64) -> Option<MaxGainConfig> {
    (gamma > 0.0 && gamma.is_finite()).then(|| MaxGainConfig::new(gamma, NormOrder::L2))
}

#[derive(Serialize)]
struct TrainSummary {
    train_accuracy: f64,
    test_accuracy: f64,
    train_loss: Vec<f64>,
    /// Smallest projection factor per learned layer over the last epoch.
    min_scale: Vec<f64>,
}

#[derive(Serialize)]
struct LayerBoxes {
    layer: usize,
    train: [f64; 5],
    test: [f64; 5],
}

#[wasm_bindgen]
pub struct Demo {
    train: Dataset,
    test: Dataset,
    net: Network,
    seed: u64,
    lr: f64,
}

impl Demo {
    pub fn create(seed: u64, n: usize, noise: f64) -> maxgain::Result<Demo> {
        let train = synth_spirals(n, noise, 2, &mut Rng::seeded(seed))?;
        let test = synth_spirals(n, noise, 2, &mut Rng::seeded(seed + 1))?;
        let net = Self::spec().build(InitScheme::HeNormal, &mut Rng::seeded(seed))?;
        Ok(Demo { train, test, net, seed, lr: 1e-2 })
    }

    fn spec() -> NetworkSpec {
        NetworkSpec::mlp(2, &HIDDEN, 2, 0.0, false)
    }

    fn fit_config(&self, epochs: usize, gamma: f64) -> FitConfig {
        let mut c = FitConfig::new(epochs, Optimizer::adam(), Schedule::constant(self.lr), self.seed);
        c.batch_size = 32;
        c.maxgain = limit(gamma);
        c
    }

    pub fn run_training(&mut self, gamma: f64, epochs: usize) -> maxgain::Result<String> {
        self.net = Self::spec().build(InitScheme::HeNormal, &mut Rng::seeded(self.seed))?;
        let config = self.fit_config(epochs, gamma);
        let ledger = fit(&mut self.net, &self.train, None, &config).map_err(|a| a.error)?;
        let train_loss = ledger.records.iter().map(|r| r.loss).collect();
        let min_scale = ledger
            .records
            .last()
            .map(|r| r.layers.iter().map(|l| l.min_scale).collect())
            .unwrap_or_default();
        Ok(json(&TrainSummary {
            train_accuracy: evaluate(&self.net, &self.train)?.1,
            test_accuracy: evaluate(&self.net, &self.test)?.1,
            train_loss,
            min_scale,
        }))
    }

    pub fn grid(&self, resolution: usize) -> maxgain::Result<Vec<f64>> {
        let r = resolution.max(2);
        let step = 2.0 * EXTENT / (r - 1) as f64;
        let mut xs = Vec::with_capacity(2 * r * r);
        for i in 0..r {
            for j in 0..r {
                xs.push(-EXTENT + j as f64 * step);
                xs.push(EXTENT - i as f64 * step);
            }
        }
        let probs = maxgain::layers::softmax(&self.net.predict(&Tensor::new(vec![r * r, 2], xs)?)?)?;
        Ok((0..r * r).map(|k| probs.row(k)[1]).collect())
    }

    pub fn gain_boxes(&self) -> maxgain::Result<String> {
        let report = gain_report(&self.net, &self.train, &self.test, NormOrder::L2)?;
        let boxes: Vec<LayerBoxes> = report
            .train
            .iter()
            .zip(&report.test)
            .enumerate()
            .map(|(layer, (a, b))| LayerBoxes { layer, train: a.fields(), test: b.fields() })
            .collect();
        Ok(json(&boxes))
    }

    pub fn run_sweep(&self, gammas: &[f64], epochs: usize) -> maxgain::Result<String> {
        let experiment = Experiment {
            spec: Self::spec(),
            init: InitScheme::HeNormal,
            init_seed: self.seed,
            train: self.train.clone(),
            test: self.test.clone(),
            fit: self.fit_config(epochs, 0.0),
        };
        Ok(json(&gamma_sweep(&experiment, gammas, 1)?.rows))
    }
}

#[wasm_bindgen]
impl Demo {
    /// Fresh spiral splits (`n` points each) and an untrained network.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n: u32, noise: f64) -> Result<Demo, JsValue> {
        Demo::create(seed.into(), n as usize, noise).map_err(js)
    }

    #[wasm_bindgen(js_name = setLearningRate)]
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Flat `[x, y, label, ...]` of the training points.
    pub fn points(&self) -> Vec<f64> {
        (0..self.train.len())
            .flat_map(|i| {
                let x = self.train.x().row(i);
                [x[0], x[1], self.train.labels()[i] as f64]
            })
            .collect()
    }

    /// Retrains from the same initialisation; returns a JSON summary.
    pub fn train(&mut self, gamma: f64, epochs: u32) -> Result<String, JsValue> {
        self.run_training(gamma, epochs as usize).map_err(js)
    }

    /// Row-major `resolution²` probabilities of class 1, top row first,
    /// over `[-EXTENT, EXTENT]²`.
    #[wasm_bindgen(js_name = decisionGrid)]
    pub fn decision_grid(&self, resolution: u32) -> Result<Vec<f64>, JsValue> {
        self.grid(resolution as usize).map_err(js)
    }

    /// JSON list of per-layer five-number gain summaries on both splits.
    #[wasm_bindgen(js_name = gainBoxes)]
    pub fn gain_boxes_js(&self) -> Result<String, JsValue> {
        self.gain_boxes().map_err(js)
    }

    /// JSON sweep rows, one fresh training per γ.
    pub fn sweep(&self, gammas: Vec<f64>, epochs: u32) -> Result<String, JsValue> {
        self.run_sweep(&gammas, epochs as usize).map_err(js)
    }
}

#[wasm_bindgen]
pub fn extent() -> f64 {
    EXTENT
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_gamma_limits_gains_and_underfits() {
        let mut d = Demo::create(3, 200, 0.05).unwrap();
        let free: serde_json::Value = serde_json::from_str(&d.run_training(0.0, 30).unwrap()).unwrap();
        let tight: serde_json::Value = serde_json::from_str(&d.run_training(0.2, 30).unwrap()).unwrap();
        assert!(tight["train_accuracy"].as_f64() < free["train_accuracy"].as_f64());
        assert!(tight["min_scale"].as_array().unwrap().iter().any(|s| s.as_f64().unwrap() < 1.0));
        let boxes: Vec<serde_json::Value> = serde_json::from_str(&d.gain_boxes().unwrap()).unwrap();
        assert_eq!(boxes.len(), 3);
    }

    #[test]
    fn grid_is_probabilities() {
        let d = Demo::create(1, 50, 0.0).unwrap();
        let g = d.grid(7).unwrap();
        assert_eq!(g.len(), 49);
        assert!(g.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(d.points().len(), 150);
    }

    #[test]
    fn sweep_rows_are_sorted() {
        let d = Demo::create(2, 60, 0.05).unwrap();
        let rows: Vec<serde_json::Value> = serde_json::from_str(&d.run_sweep(&[4.0, 0.5], 2).unwrap()).unwrap();
        assert_eq!(rows[0]["gamma"], 0.5);
        assert_eq!(rows[1]["gamma"], 4.0);
    }
}
