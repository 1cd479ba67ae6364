use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::evaluate;
use super::report::layer_gains;
use crate::data::Dataset;
use crate::optim::{fit, FitConfig, Ledger, MaxGainConfig};
use crate::{Error, InitScheme, Network, NetworkSpec, NormOrder, Result, Rng};

/// Everything a sweep point needs besides `γ`.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: NetworkSpec,
    pub init: InitScheme,
    /// Seeds the weight initialisation; `fit.seed` seeds training.
    pub init_seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    /// `fit.maxgain`, when set, supplies `p` and per-layer overrides; its
    /// `gamma` is replaced by each sweep value.
    pub fit: FitConfig,
}

impl Experiment {
    pub fn norm(&self) -> NormOrder {
        self.fit.maxgain.as_ref().map_or(NormOrder::L2, |m| m.p)
    }

    fn maxgain(&self, gamma: f64) -> MaxGainConfig {
        let mut m = self.fit.maxgain.clone().unwrap_or_else(|| MaxGainConfig::new(gamma, NormOrder::L2));
        m.gamma = gamma;
        m
    }

    /// Builds a fresh network and trains it with `maxgain`.
    pub fn train(&self, maxgain: Option<MaxGainConfig>) -> Result<(Network, Ledger)> {
        let mut net = self.spec.build(self.init, &mut Rng::seeded(self.init_seed))?;
        let config = FitConfig { maxgain, ..self.fit.clone() };
        let ledger = fit(&mut net, &self.train, Some(&self.test), &config).map_err(|a| a.error)?;
        Ok((net, ledger))
    }

    /// Trains with limit `gamma` and scores the result.
    pub fn run_gamma(&self, gamma: f64) -> Result<SweepRow> {
        let annotate = |e: Error| match e {
            Error::Divergence { step, what } => Error::Divergence {
                step,
                what: format!("gamma={gamma}: {what}"),
            },
            other => other,
        };
        let (net, _) = self.train(Some(self.maxgain(gamma))).map_err(annotate)?;
        let (train_loss, train_accuracy) = evaluate(&net, &self.train)?;
        let (test_loss, test_accuracy) = evaluate(&net, &self.test)?;
        let test_max_gain = layer_gains(&net, &self.test, self.norm())?
            .iter()
            .map(|g| g.iter().copied().fold(0.0, f64::max))
            .collect();
        Ok(SweepRow {
            gamma,
            train_accuracy,
            train_loss,
            test_accuracy,
            test_loss,
            test_max_gain,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Per learned layer, the largest eval-mode gain on the test split.
    pub test_max_gain: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    /// Sorted by ascending `γ`.
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let layers = self.rows.first().map_or(0, |r| r.test_max_gain.len());
        let mut out = String::from("gamma,train_acc,train_loss,test_acc,test_loss");
        for j in 0..layers {
            let _ = write!(out, ",test_max_gain_{j}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                r.gamma, r.train_accuracy, r.train_loss, r.test_accuracy, r.test_loss
            );
            for g in &r.test_max_gain {
                let _ = write!(out, ",{g}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs one training per `γ` with identical data and seeds, on up to `jobs`
/// threads. The table is ordered by `γ`, not by completion.
pub fn gamma_sweep(experiment: &Experiment, gammas: &[f64], jobs: usize) -> Result<SweepTable> {
    if gammas.is_empty() {
        return Err(Error::Config("empty gamma list".into()));
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g > 0.0)) {
        return Err(Error::Config(format!("gamma must be positive, got {g}")));
    }
    let mut sorted = gammas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let workers = jobs.clamp(1, sorted.len());
    if workers == 1 {
        // No thread at all, so single-threaded targets (wasm) work too.
        let rows = sorted.iter().map(|&g| experiment.run_gamma(g)).collect::<Result<Vec<_>>>()?;
        return Ok(SweepTable { rows });
    }
    let results: Vec<Mutex<Option<Result<SweepRow>>>> = sorted.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&gamma) = sorted.get(i) else { break };
                let row = experiment.run_gamma(gamma);
                *results[i].lock().expect("no poisoned sweep slot") = Some(row);
            });
        }
    });
    let rows = results
        .into_iter()
        .map(|slot| slot.into_inner().expect("no poisoned sweep slot").expect("every slot filled"))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows })
}
