//! The `maxgain` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

pub mod config;
mod scores;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use maxgain::data::{make_folds, FoldProtocol};
use maxgain::eval::{evaluate, gain_report, gamma_sweep, mean_stderr, paired_t_test};
use maxgain::layers::checkpoint;
use maxgain::optim::fit;
use maxgain::{Error, NormOrder, Rng};

pub use scores::{read_scores, write_scores, FoldScore};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "maxgain", version, about = "Train networks under a per-layer gain limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// Overrides the config's top-level `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one network; writes ledger.csv and model.ckpt.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train once per γ and tabulate train/test loss, accuracy and max test gain.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated γ values; `inf` disables the limit.
        #[arg(long, value_delimiter = ',', required = true)]
        gamma: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Table file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer gain distributions of a checkpoint on the config's splits.
    GainReport {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config whose `[data]` section provides the splits.
        #[arg(long)]
        config: PathBuf,
        /// `1`, `2` or `inf`.
        #[arg(long, default_value = "2")]
        norm: NormOrder,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score one network per predefined fold of the training split.
    Folds {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        train_per_fold: usize,
        #[arg(long)]
        test_per_fold: usize,
        /// Seeds the fold assignment.
        #[arg(long, default_value_t = 0)]
        fold_seed: u64,
        /// Fold file: read if it exists, written otherwise.
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Score file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired t-test between two fold score files.
    Ttest {
        a: PathBuf,
        b: PathBuf,
        /// Score column to compare.
        #[arg(long, default_value = "accuracy")]
        metric: String,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Reports go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load(run: &RunArgs) -> Result<config::Loaded, Failure> {
    let mut loaded = config::load(&run.config)?;
    if let Some(seed) = run.seed {
        loaded.config.seed = seed;
    }
    Ok(loaded)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e }.into())
}

fn emit(out: &mut dyn std::io::Write, path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write_file(p, text),
        None => out.write_all(text.as_bytes()).map_err(|e| usage(format!("stdout: {e}"))),
    }
}

fn dispatch(command: Command, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    let say = |out: &mut dyn std::io::Write, line: String| {
        let _ = writeln!(out, "{line}");
    };
    match command {
        Command::Train { run, out: dir } => {
            let config::Loaded { config, base } = load(&run)?;
            let (train, test) = config.datasets(&base)?;
            let mut net = config
                .network_spec(&train)
                .build(config.init, &mut Rng::seeded(config.seed))?;
            let result = fit(&mut net, &train, Some(&test), &config.fit_config());
            let ledger = match &result {
                Ok(l) => l,
                Err(aborted) => &aborted.ledger,
            };
            write_file(&dir.join("ledger.csv"), &ledger.to_csv())?;
            if let Err(aborted) = result {
                return Err(aborted.error.into());
            }
            checkpoint::save(&net, &dir.join("model.ckpt"))?;
            let (_, train_acc) = evaluate(&net, &train)?;
            let (_, test_acc) = evaluate(&net, &test)?;
            say(out, format!("train accuracy {train_acc:.4}, test accuracy {test_acc:.4}"));
            Ok(())
        }
        Command::Sweep { run, gamma, jobs, out: path } => {
            let config::Loaded { config, base } = load(&run)?;
            let (train, test) = config.datasets(&base)?;
            let table = gamma_sweep(&config.experiment(train, test), &gamma, jobs)?;
            emit(out, path.as_deref(), &table.to_csv())
        }
        Command::GainReport { checkpoint: ckpt, config: cfg, norm, out: path } => {
            let config::Loaded { config, base } = config::load(&cfg)?;
            let net = checkpoint::load(&ckpt)?;
            let (train, test) = config.datasets(&base)?;
            let report = gain_report(&net, &train, &test, norm)?;
            emit(out, path.as_deref(), &report.to_csv())
        }
        Command::Folds { run, folds, train_per_fold, test_per_fold, fold_seed, protocol, jobs, out: path } => {
            let config::Loaded { config, base } = load(&run)?;
            let (pool, _) = config.datasets(&base)?;
            let protocol = match protocol {
                Some(p) if p.exists() => FoldProtocol::load(&p)?,
                other => {
                    let made = make_folds(pool.len(), folds, train_per_fold, test_per_fold, &mut Rng::seeded(fold_seed))?;
                    if let Some(p) = other {
                        made.save(&p)?;
                    }
                    made
                }
            };
            if protocol.n != pool.len() {
                return Err(usage(format!(
                    "fold file indexes {} instances, dataset has {}",
                    protocol.n,
                    pool.len()
                )));
            }
            let scores = run_folds(&config, &pool, &protocol, jobs)?;
            let accs: Vec<f64> = scores.iter().map(|s| s.accuracy).collect();
            let summary = mean_stderr(&accs)?;
            emit(out, path.as_deref(), &write_scores(&scores))?;
            let line = format!("accuracy {:.4} ± {:.4} over {} folds", summary.mean, summary.stderr, summary.n);
            if path.is_some() {
                say(out, line);
            } else {
                eprintln!("{line}");
            }
            Ok(())
        }
        Command::Ttest { a, b, metric } => {
            let sa = read_scores(&a)?;
            let sb = read_scores(&b)?;
            let folds_a: Vec<usize> = sa.iter().map(|s| s.fold).collect();
            let folds_b: Vec<usize> = sb.iter().map(|s| s.fold).collect();
            if folds_a != folds_b {
                return Err(usage(format!(
                    "misaligned folds: {} lists {folds_a:?}, {} lists {folds_b:?}",
                    a.display(),
                    b.display()
                )));
            }
            let pick = |s: &[FoldScore]| -> Result<Vec<f64>, Failure> {
                s.iter().map(|f| f.metric(&metric).ok_or_else(|| usage(format!("unknown metric {metric:?}")))).collect()
            };
            let (va, vb) = (pick(&sa)?, pick(&sb)?);
            for (path, v) in [(&a, &va), (&b, &vb)] {
                let s = mean_stderr(v)?;
                say(out, format!("{}: {metric} {} ± {} ({} folds)", path.display(), s.mean, s.stderr, s.n));
            }
            let t = paired_t_test(&va, &vb)?;
            say(out, format!("t = {}, df = {}, p = {}", t.t, t.df, t.p));
            Ok(())
        }
    }
}

fn run_folds(
    config: &config::Config,
    pool: &maxgain::data::Dataset,
    protocol: &FoldProtocol,
    jobs: usize,
) -> Result<Vec<FoldScore>, Failure> {
    let slots: Vec<Mutex<Option<Result<FoldScore, Error>>>> = protocol.folds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, protocol.fold_count().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(fold) = protocol.folds.get(i) else { break };
                let result = fold.split(pool).and_then(|(train, test)| {
                    let (net, _) = config.experiment(train, test.clone()).train(config.maxgain())?;
                    let (loss, accuracy) = evaluate(&net, &test)?;
                    Ok(FoldScore { fold: i, accuracy, loss })
                });
                *slots[i].lock().expect("no poisoned fold slot") = Some(result);
            });
        }
    });
    Ok(slots
        .into_iter()
        .map(|s| s.into_inner().expect("no poisoned fold slot").expect("every fold ran"))
        .collect::<Result<Vec<_>, Error>>()?)
}
