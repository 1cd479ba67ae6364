//! Acceptance suite. Each test prints one `ACCEPTANCE <n> PASS|FAIL` line
//! straight to stdout (bypassing capture) and then asserts.
//!
//! `cargo test -p maxgain-cli --test acceptance`

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use maxgain::data::{make_folds, synth_spirals_with_turns, Dataset};
use maxgain::eval::{evaluate, gain_report, gamma_sweep, paired_t_test, Experiment, SweepTable};
use maxgain::gain::{
    batch_max_gain, gain, materialize_linear, operator_norm_exact, spectral_norm_power_iteration, PowerIteration,
};
use maxgain::layers::{
    softmax_cross_entropy, BatchNorm, Conv2d, Dense, Dropout, LearnedLayer, MaxPool, Residual,
};
use maxgain::optim::{train_step, FitConfig, MaxGainConfig, Optimizer, OptimizerState, Schedule};
use maxgain::{InitScheme, Mode, Network, NetworkSpec, NormOrder, Rng, Stage, Tensor};

const NORMS: [NormOrder; 3] = [NormOrder::L1, NormOrder::L2, NormOrder::Inf];

fn report(n: usize, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "ACCEPTANCE {n} {verdict}: {detail}");
    let _ = out.flush();
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn pnorm(v: &[f64], p: NormOrder) -> f64 {
    match p {
        NormOrder::L1 => v.iter().map(|x| x.abs()).sum(),
        NormOrder::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormOrder::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

fn dims(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// A random dense, conv or batch-norm stage and the instance shape it takes.
fn tiny_layer(rng: &mut Rng, kind: usize) -> (Stage, Vec<usize>) {
    match kind % 3 {
        0 => {
            let (i, o) = (dims(rng, 1, 32), dims(rng, 1, 32));
            let w = rng.normal_tensor(&[o, i]);
            (Stage::Dense(Dense::new(w, rng.normal_tensor(&[o])).unwrap()), vec![i])
        }
        1 => {
            let (ic, oc) = (dims(rng, 1, 2), dims(rng, 1, 2));
            let stride = dims(rng, 1, 2);
            let pad = (rng.below(2), rng.below(2));
            let mut c = Conv2d::init(ic, oc, (3, 3), stride, pad, InitScheme::HeNormal, rng).unwrap();
            c.bias = rng.normal_tensor(&[oc]);
            (Stage::Conv2d(c), vec![ic, 6, 6])
        }
        _ => {
            let ch = dims(rng, 1, 16);
            let mut bn = BatchNorm::new(ch);
            bn.alpha = rng.normal_tensor(&[ch]);
            bn.beta = rng.normal_tensor(&[ch]);
            bn.running_var = rng.normal_tensor(&[ch]).map(|v| v * v + 0.01);
            let shape = if rng.bernoulli(0.5) { vec![ch] } else { vec![ch, dims(rng, 1, 3), dims(rng, 1, 3)] };
            (Stage::BatchNorm(bn), shape)
        }
    }
}

fn learned(stage: &Stage) -> LearnedLayer<'_> {
    match stage {
        Stage::Dense(d) => LearnedLayer::Dense(d),
        Stage::Conv2d(c) => LearnedLayer::Conv2d(c),
        Stage::BatchNorm(b) => LearnedLayer::BatchNorm(b),
        other => panic!("{} has no weights", other.name()),
    }
}

#[test]
fn criterion_01_implicit_gain_matches_materialized_matrix() {
    let start = Instant::now();
    let mut rng = Rng::seeded(101);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for trial in 0..50 {
        let (stage, shape) = tiny_layer(&mut rng, trial);
        let layer = learned(&stage);
        let m = materialize_linear(layer, &shape).unwrap();
        let (r, c) = m.dims2().unwrap();
        for _ in 0..4 {
            let x = rng.normal_tensor(&shape);
            let mx: Vec<f64> = (0..r).map(|i| (0..c).map(|j| m.data()[i * c + j] * x.data()[j]).sum()).collect();
            for p in NORMS {
                let implicit = gain(layer, &x, p).unwrap();
                let explicit = pnorm(&mx, p) / pnorm(x.data(), p);
                worst = worst.max(rel(implicit, explicit));
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-10 && elapsed < Duration::from_secs(30);
    report(
        1,
        pass,
        format!("50 layers, {checked} gains, worst relative error {worst:.2e} (tol 1e-10), {}", secs(elapsed)),
    );
    assert!(pass);
}

#[test]
fn criterion_02_operator_norms() {
    let start = Instant::now();
    let mut rng = Rng::seeded(202);
    let mut exact_ok = true;
    for _ in 0..40 {
        let (r, c) = (dims(&mut rng, 1, 12), dims(&mut rng, 1, 12));
        let w = rng.normal_tensor(&[r, c]);
        let row = |i: usize| &w.data()[i * c..(i + 1) * c];
        // p = 1: the supremum is attained at ±e_j.
        let mut best1 = 0.0f64;
        for j in 0..c {
            for sign in [1.0, -1.0] {
                let col: Vec<f64> = (0..r).map(|i| sign * row(i)[j]).collect();
                best1 = best1.max(pnorm(&col, NormOrder::L1));
            }
        }
        // p = ∞: the supremum is attained at a sign vector.
        let mut best_inf = 0.0f64;
        for mask in 0u32..(1 << c) {
            let s: Vec<f64> = (0..c).map(|j| if mask >> j & 1 == 1 { -1.0 } else { 1.0 }).collect();
            let ws: Vec<f64> = (0..r).map(|i| row(i).iter().zip(&s).fold(0.0, |acc, (a, b)| acc + a * b)).collect();
            best_inf = best_inf.max(pnorm(&ws, NormOrder::Inf));
        }
        exact_ok &= operator_norm_exact(&w, NormOrder::L1).unwrap() == best1;
        exact_ok &= operator_norm_exact(&w, NormOrder::Inf).unwrap() == best_inf;
    }

    let mut worst = 0.0f64;
    let settings = PowerIteration { max_iters: 100_000, tol: 1e-15 };
    for _ in 0..20 {
        let (r, c) = (dims(&mut rng, 1, 32), dims(&mut rng, 1, 32));
        let w = rng.normal_tensor(&[r, c]);
        let a = nalgebra::DMatrix::from_row_slice(r, c, w.data());
        let eig = nalgebra::SymmetricEigen::new(a.transpose() * &a);
        let oracle = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v)).sqrt();
        let map = |x: &[f64]| (0..r).map(|i| (0..c).map(|j| w.data()[i * c + j] * x[j]).sum()).collect();
        let adj = |y: &[f64]| (0..c).map(|j| (0..r).map(|i| w.data()[i * c + j] * y[i]).sum()).collect();
        let est = spectral_norm_power_iteration(map, adj, c, settings, &mut rng).unwrap();
        worst = worst.max(rel(est.sigma, oracle));
    }
    let elapsed = start.elapsed();
    let pass = exact_ok && worst <= 1e-6 && elapsed < Duration::from_secs(30);
    report(
        2,
        pass,
        format!(
            "p=1/∞ exact on 40 matrices: {exact_ok}; power iteration worst relative error {worst:.2e} (tol 1e-6), {}",
            secs(elapsed)
        ),
    );
    assert!(pass);
}

/// Relative L2 error between backprop and central differences of
/// `L = Σ r ⊙ net(x)` over the input and every learned parameter.
fn gradcheck(net: &Network, x: &Tensor, seed: u64) -> f64 {
    let h = 1e-5;
    let mut probe = Rng::seeded(seed.wrapping_mul(31) + 1);
    let out_shape: Vec<usize> = std::iter::once(x.rows()).chain(net.output_shape()).collect();
    let r = probe.normal_tensor(&out_shape);
    let objective = |net: &Network, x: &Tensor| -> f64 {
        let mut n = net.clone();
        let (y, _) = n.forward(x, Mode::Train, &mut Rng::seeded(seed)).unwrap();
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let mut n = net.clone();
    let (_, caches) = n.forward(x, Mode::Train, &mut Rng::seeded(seed)).unwrap();
    let grads = n.backward(&caches, &r).unwrap();

    let mut analytic = grads.input.data().to_vec();
    let mut numeric = Vec::new();
    for i in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[i] += h;
        xm.data_mut()[i] -= h;
        numeric.push((objective(net, &xp) - objective(net, &xm)) / (2.0 * h));
    }
    for (j, g) in grads.layers.iter().enumerate() {
        for (which, t) in [&g.weight, &g.bias].into_iter().enumerate() {
            analytic.extend_from_slice(t.data());
            for i in 0..t.len() {
                let shifted = |delta: f64| {
                    let mut m = net.clone();
                    {
                        let mut layers = m.learned_layers_mut();
                        let (w, b) = layers[j].params_mut();
                        let p = if which == 0 { w } else { b };
                        p.data_mut()[i] += delta;
                    }
                    objective(&m, x)
                };
                numeric.push((shifted(h) - shifted(-h)) / (2.0 * h));
            }
        }
    }
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = pnorm(&analytic, NormOrder::L2).max(pnorm(&numeric, NormOrder::L2)).max(1e-12);
    pnorm(&diff, NormOrder::L2) / scale
}

fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.normal_tensor(shape).map(|v| if v.abs() < 0.05 { v + v.signum() * 0.05 } else { v })
}

fn gradcheck_case(kind: &str, rng: &mut Rng) -> (Network, Tensor) {
    let n = dims(rng, 2, 5);
    let (shape, stage): (Vec<usize>, Stage) = match kind {
        "dense" => {
            let (i, o) = (dims(rng, 1, 6), dims(rng, 1, 6));
            (vec![i], Stage::Dense(Dense::new(rng.normal_tensor(&[o, i]), rng.normal_tensor(&[o])).unwrap()))
        }
        "conv" => {
            let (ic, oc, k) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 3));
            let (hw, stride) = (dims(rng, k.max(2), 5), dims(rng, 1, 2));
            let mut c = Conv2d::init(ic, oc, (k, k), stride, (rng.below(2), rng.below(2)), InitScheme::HeNormal, rng).unwrap();
            c.bias = rng.normal_tensor(&[oc]);
            (vec![ic, hw, hw], Stage::Conv2d(c))
        }
        "batchnorm" => {
            let ch = dims(rng, 1, 4);
            let mut bn = BatchNorm::new(ch);
            bn.alpha = rng.normal_tensor(&[ch]);
            bn.beta = rng.normal_tensor(&[ch]);
            let shape = if rng.bernoulli(0.5) { vec![ch] } else { vec![ch, dims(rng, 1, 3), dims(rng, 1, 3)] };
            (shape, Stage::BatchNorm(bn))
        }
        "dropout" => (vec![dims(rng, 1, 8)], Stage::Dropout(Dropout::new(0.1 + 0.8 * rng.uniform()).unwrap())),
        "relu" => (vec![dims(rng, 1, 8)], Stage::Relu),
        "maxpool" => {
            let size = dims(rng, 1, 2);
            let hw = dims(rng, size, 5);
            (vec![dims(rng, 1, 2), hw, hw], Stage::MaxPool(MaxPool::new(size, dims(rng, 1, 2)).unwrap()))
        }
        "flatten" => (vec![dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3)], Stage::Flatten),
        "residual" => {
            let (i, o) = (dims(rng, 1, 5), dims(rng, 1, 5));
            let main = vec![
                Stage::Dense(Dense::init(i, o, InitScheme::HeNormal, rng).unwrap()),
                Stage::Relu,
                Stage::Dense(Dense::init(o, o, InitScheme::HeNormal, rng).unwrap()),
            ];
            let shortcut = (i != o || rng.bernoulli(0.5)).then(|| vec![Stage::Dense(Dense::init(i, o, InitScheme::HeNormal, rng).unwrap())]);
            (vec![i], Stage::Residual(Residual { main, shortcut }))
        }
        other => unreachable!("{other}"),
    };
    let x_shape: Vec<usize> = std::iter::once(n).chain(shape.iter().copied()).collect();
    let x = if kind == "relu" || kind == "residual" { away_from_zero(rng, &x_shape) } else { rng.normal_tensor(&x_shape) };
    (Network::new(shape, vec![stage]).unwrap(), x)
}

#[test]
fn criterion_03_gradient_checks() {
    let start = Instant::now();
    let mut rng = Rng::seeded(303);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for kind in ["dense", "conv", "batchnorm", "dropout", "relu", "maxpool", "flatten", "residual"] {
        let mut w = 0.0f64;
        for trial in 0..10 {
            let (net, x) = gradcheck_case(kind, &mut rng);
            w = w.max(gradcheck(&net, &x, trial));
        }
        worst.push((kind.into(), w));
    }
    let mut w = 0.0f64;
    let h = 1e-5;
    for _ in 0..10 {
        let (n, c) = (dims(&mut rng, 1, 6), dims(&mut rng, 2, 6));
        let logits = rng.normal_tensor(&[n, c]);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let numeric: Vec<f64> = (0..logits.len())
            .map(|i| {
                let (mut p, mut m) = (logits.clone(), logits.clone());
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                (softmax_cross_entropy(&p, &labels).unwrap().0 - softmax_cross_entropy(&m, &labels).unwrap().0) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = grad.data().iter().zip(&numeric).map(|(a, b)| a - b).collect();
        w = w.max(pnorm(&diff, NormOrder::L2) / pnorm(grad.data(), NormOrder::L2).max(pnorm(&numeric, NormOrder::L2)));
    }
    worst.push(("loss".into(), w));
    let elapsed = start.elapsed();
    let max = worst.iter().fold(0.0f64, |m, (_, v)| m.max(*v));
    let pass = max <= 1e-5 && elapsed < Duration::from_secs(60);
    let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    report(3, pass, format!("10 shapes each, worst relative error: {} (tol 1e-5), {}", detail.join(", "), secs(elapsed)));
    assert!(pass);
}

/// γ̂ of the first learned layer on the instances of `x`, recomputed from its current weights.
fn recomputed_max_gain(net: &Network, x: &Tensor, p: NormOrder) -> f64 {
    let layer = net.learned_layers()[0];
    let z: Vec<Tensor> = (0..x.rows()).map(|i| layer.apply_linear(&x.instance(i)).unwrap()).collect();
    let out_len = z[0].len();
    let zs = Tensor::new(vec![x.rows(), out_len], z.into_iter().flat_map(Tensor::into_data).collect()).unwrap();
    let xs = Tensor::new(vec![x.rows(), x.row_len()], x.data().to_vec()).unwrap();
    batch_max_gain(&xs, &zs, p).unwrap()
}

#[test]
fn criterion_04_projection_exactness_at_zero_learning_rate() {
    let mut rng = Rng::seeded(404);
    let mut worst = 0.0f64;
    let (mut projected, mut untouched, mut untouched_ok) = (0, 0, true);
    for trial in 0..100 {
        let (stage, shape) = tiny_layer(&mut rng, trial);
        // Flatten so the output is a logit batch the loss accepts.
        let mut net = Network::new(shape.clone(), vec![stage, Stage::Flatten]).unwrap();
        let out = net.output_shape().iter().product::<usize>();
        let n = dims(&mut rng, 2, 8);
        let x_shape: Vec<usize> = std::iter::once(n).chain(shape.iter().copied()).collect();
        let x = rng.normal_tensor(&x_shape);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(out)).collect();
        let p = NORMS[trial % 3];
        let before = recomputed_max_gain(&net, &x, p);
        let gamma = before * (0.05 + 1.95 * rng.uniform());
        let original = net.clone();
        let opt = if trial % 2 == 0 { Optimizer::adam() } else { Optimizer::sgd_nesterov() };
        let mut state = OptimizerState::new(opt, &net).unwrap();
        let config = MaxGainConfig::new(gamma, p);
        let step = train_step(&mut net, &x, &labels, &mut state, Some(&config), 0.0, &mut Rng::seeded(trial as u64));
        let report = match step {
            Ok(r) => r,
            Err(e) => panic!("trial {trial}: {e}"),
        };
        let gamma_hat = report.gamma_hat[0];
        let after = recomputed_max_gain(&net, &x, p);
        worst = worst.max(rel(after, gamma_hat.min(gamma)));
        if gamma_hat <= gamma {
            untouched += 1;
            untouched_ok &= net.learned_layers()[0].weight().data().iter().map(|v| v.to_bits()).eq(original
                .learned_layers()[0]
                .weight()
                .data()
                .iter()
                .map(|v| v.to_bits()));
        } else {
            projected += 1;
        }
    }
    let pass = worst <= 1e-12 && untouched_ok && projected > 0 && untouched > 0;
    report(
        4,
        pass,
        format!(
            "100 triples ({projected} projected, {untouched} untouched): worst |γ̂' − min(γ̂,γ)| relative {worst:.2e} (tol 1e-12), untouched bitwise: {untouched_ok}"
        ),
    );
    assert!(pass);
}

struct SpiralRuns {
    tables: Vec<SweepTable>,
    /// Per seed, per learned layer, `(train, test)` stats of the γ = 2 network.
    gamma2: Vec<maxgain::eval::GainReport>,
    elapsed: Duration,
}

const SWEEP: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];
const SEEDS: [u64; 3] = [1, 2, 3];

fn spiral_data() -> (Dataset, Dataset) {
    let train = synth_spirals_with_turns(2000, 0.05, 2, 1.0, &mut Rng::seeded(7)).unwrap();
    let test = synth_spirals_with_turns(1000, 0.05, 2, 1.0, &mut Rng::seeded(8)).unwrap();
    (train, test)
}

fn spiral_runs() -> &'static SpiralRuns {
    static RUNS: OnceLock<SpiralRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let (train, test) = spiral_data();
        let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
        let mut tables = Vec::new();
        let mut gamma2 = Vec::new();
        for seed in SEEDS {
            let fit = FitConfig::new(200, Optimizer::adam(), Schedule::constant(1e-3), seed);
            let exp = Experiment {
                spec: NetworkSpec::mlp(2, &[64, 64], 2, 0.0, false),
                init: InitScheme::HeNormal,
                init_seed: seed,
                train: train.clone(),
                test: test.clone(),
                fit,
            };
            tables.push(gamma_sweep(&exp, &SWEEP, jobs).unwrap());
            let (net, _) = exp.train(Some(MaxGainConfig::new(2.0, NormOrder::L2))).unwrap();
            let row = &tables.last().unwrap().rows[2];
            assert_eq!(evaluate(&net, &train).unwrap(), (row.train_loss, row.train_accuracy));
            gamma2.push(gain_report(&net, &train, &test, NormOrder::L2).unwrap());
        }
        SpiralRuns { tables, gamma2, elapsed: start.elapsed() }
    })
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

#[test]
fn criterion_05_gamma_sweep_shape() {
    let runs = spiral_runs();
    let med = |f: &dyn Fn(&maxgain::eval::SweepRow) -> f64, i: usize| {
        median3([f(&runs.tables[0].rows[i]), f(&runs.tables[1].rows[i]), f(&runs.tables[2].rows[i])])
    };
    let acc: Vec<f64> = (0..SWEEP.len()).map(|i| med(&|r| r.train_accuracy, i)).collect();
    let loss: Vec<f64> = (0..SWEEP.len()).map(|i| med(&|r| r.train_loss, i)).collect();
    // Within noise: each step may rise by at most 0.01 nats.
    let monotone = loss.windows(2).all(|w| w[1] <= w[0] + 0.01);
    let gap = acc[SWEEP.len() - 1] - acc[0];
    let pass = gap >= 0.05 && monotone && runs.elapsed < Duration::from_secs(600);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    report(
        5,
        pass,
        format!(
            "γ {SWEEP:?}: median train acc [{}], median train loss [{}]; acc(8)−acc(0.5) = {gap:.3} (≥ 0.05), loss non-increasing: {monotone}, {}",
            fmt(&acc),
            fmt(&loss),
            secs(runs.elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_gain_transfer() {
    let runs = spiral_runs();
    let mut max_test = 0.0f64;
    let mut worst = (0.0f64, String::new());
    // Informational only: the same comparison without the `min` field.
    let mut worst_central = 0.0f64;
    for (seed, rep) in SEEDS.iter().zip(&runs.gamma2) {
        for (j, (tr, te)) in rep.train.iter().zip(&rep.test).enumerate() {
            max_test = max_test.max(te.max);
            for (name, (a, b)) in ["min", "lq", "median", "uq", "max"].iter().zip(tr.fields().into_iter().zip(te.fields())) {
                let d = rel(a, b);
                if *name != "min" {
                    worst_central = worst_central.max(d);
                }
                if d > worst.0 {
                    worst = (d, format!("seed {seed} layer {j} {name}: train {a:.4} test {b:.4}"));
                }
            }
        }
    }
    let pass = max_test <= 2.5 && worst.0 < 0.2;
    report(
        6,
        pass,
        format!(
            "γ=2, 3 seeds: max test gain {max_test:.4} (≤ 2.5); worst train/test field difference {:.1}% (< 20%) at {}; excluding min fields {:.1}%",
            100.0 * worst.0,
            worst.1,
            100.0 * worst_central
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_unconstrained_equivalence() {
    let spec = NetworkSpec::mlp(2, &[16, 16], 3, 0.2, true);
    let data = synth_spirals_with_turns(64, 0.05, 3, 1.0, &mut Rng::seeded(70)).unwrap();
    let mut identical = true;
    for opt in [Optimizer::adam(), Optimizer::sgd_nesterov()] {
        let base = spec.build(InitScheme::HeNormal, &mut Rng::seeded(71)).unwrap();
        let (mut plain, mut off, mut huge) = (base.clone(), base.clone(), base);
        let mut s_plain = OptimizerState::new(opt, &plain).unwrap();
        let (mut s_off, mut s_huge) = (s_plain.clone(), s_plain.clone());
        let (mut r_plain, mut r_off, mut r_huge) = (Rng::seeded(72), Rng::seeded(72), Rng::seeded(72));
        let huge_cfg = MaxGainConfig::new(1e9, NormOrder::L2);
        for step in 0..50 {
            let idx: Vec<usize> = (0..16).map(|i| (step * 16 + i) % data.len()).collect();
            let (x, y) = data.batch(&idx).unwrap();
            let (logits, caches) = plain.forward(&x, Mode::Train, &mut r_plain).unwrap();
            let (_, g) = softmax_cross_entropy(&logits, &y).unwrap();
            let grads = plain.backward(&caches, &g).unwrap();
            s_plain.apply(&mut plain, &grads, 1e-2).unwrap();
            train_step(&mut off, &x, &y, &mut s_off, None, 1e-2, &mut r_off).unwrap();
            train_step(&mut huge, &x, &y, &mut s_huge, Some(&huge_cfg), 1e-2, &mut r_huge).unwrap();
            identical &= plain == off && plain == huge && s_plain == s_off && s_plain == s_huge;
        }
    }
    report(7, identical, format!("50 steps with Adam and SGD, disabled and γ=1e9 vs plain optimizer bitwise identical: {identical}"));
    assert!(identical);
}

#[test]
fn criterion_08_statistics() {
    #[derive(serde::Deserialize)]
    struct Case {
        a: Vec<f64>,
        b: Vec<f64>,
        t: f64,
        df: usize,
        p: f64,
    }
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ttest_oracle.json");
    let cases: Vec<Case> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let (mut dt, mut dp, mut df_ok) = (0.0f64, 0.0f64, true);
    for c in &cases {
        let r = paired_t_test(&c.a, &c.b).unwrap();
        dt = dt.max((r.t - c.t).abs());
        dp = dp.max((r.p - c.p).abs());
        df_ok &= r.df == c.df;
    }

    let mut rng = Rng::seeded(808);
    let (mut anti_ok, mut shift_worst) = (true, 0.0f64);
    for _ in 0..1000 {
        let k = dims(&mut rng, 2, 30);
        let a: Vec<f64> = (0..k).map(|_| 20.0 * rng.uniform() - 10.0).collect();
        let b: Vec<f64> = (0..k).map(|_| 20.0 * rng.uniform() - 10.0).collect();
        let shift = 200.0 * rng.uniform() - 100.0;
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        anti_ok &= ab.t == -ba.t && ab.p == ba.p;
        let a2: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let b2: Vec<f64> = b.iter().map(|v| v + shift).collect();
        let s = paired_t_test(&a2, &b2).unwrap();
        shift_worst = shift_worst.max((s.t - ab.t).abs() / ab.t.abs().max(1.0));
    }
    let pass = cases.len() == 20 && dt <= 1e-9 && dp <= 1e-9 && df_ok && anti_ok && shift_worst <= 1e-12;
    report(
        8,
        pass,
        format!(
            "{} oracle cases: max |Δt| {dt:.1e}, max |Δp| {dp:.1e} (tol 1e-9); 1000 cases antisymmetric exactly: {anti_ok}, shift worst {shift_worst:.1e} (tol 1e-12)",
            cases.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_fold_protocol() {
    let start = Instant::now();
    let n = 100_000;
    let protocol = make_folds(n, 10, 9000, 1000, &mut Rng::seeded(909)).unwrap();
    let mut owner = vec![usize::MAX; n];
    let mut ok = protocol.folds.len() == 10 && protocol.n == n;
    for (f, fold) in protocol.folds.iter().enumerate() {
        ok &= fold.train.len() == 9000 && fold.test.len() == 1000;
        for &i in fold.train.iter().chain(&fold.test) {
            ok &= i < n && owner[i] == usize::MAX;
            if i < n {
                owner[i] = f;
            }
        }
    }
    ok &= protocol.validate().is_ok();
    let used = owner.iter().filter(|&&f| f != usize::MAX).count();
    let elapsed = start.elapsed();
    let pass = ok && used == n && elapsed < Duration::from_secs(10);
    report(
        9,
        pass,
        format!("k=10, 9000/1000 on n={n}: every index used at most once across all folds and splits: {ok}, {used} used, {}", secs(elapsed)),
    );
    assert!(pass);
}

#[test]
fn criterion_10_cmd_train_determinism() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/spirals.toml");
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_maxgain"))
            .arg("train")
            .arg(&config)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
        (read("ledger.csv"), read("model.ckpt"))
    };
    let (l1, c1) = run();
    let (l2, c2) = run();
    let pass = l1 == l2 && c1 == c2;
    report(
        10,
        pass,
        format!("two runs: ledger {} bytes identical: {}, checkpoint {} bytes identical: {}", l1.len(), l1 == l2, c1.len(), c1 == c2),
    );
    assert!(pass);
}
