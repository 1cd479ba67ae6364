use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maxgain::data::Dataset;
use maxgain::eval::{mean_stderr, paired_t_test};
use maxgain::layers::{checkpoint, Dense};
use maxgain::{Network, Stage, Tensor};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn maxgain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxgain")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(config: &str, dir: &Path) -> Output {
    maxgain(&["train", s(&fixture(config)), "--out", s(dir)])
}

#[test]
fn train_missing_config_exits_2() {
    let o = maxgain(&["train", "/nonexistent/run.toml"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn train_bad_field_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(fixture("spirals.toml")).unwrap().replace("lr = 1e-3", "lr = -1.0");
    std::fs::write(&cfg, text).unwrap();
    let o = maxgain(&["train", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lr"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(code(&maxgain(&["fly"])), 2);
}

#[test]
fn train_writes_ledger_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = train("spirals.toml", dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("train accuracy"), "{}", stdout(&o));
    let ledger = std::fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    // Header plus a train and validation row per epoch.
    assert_eq!(ledger.lines().count(), 1 + 2 * 5);
    checkpoint::load(&dir.path().join("model.ckpt")).unwrap();
}

#[test]
fn seed_flag_overrides_config() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = fixture("spirals.toml");
    assert_eq!(code(&maxgain(&["train", s(&cfg), "--out", s(a.path())])), 0);
    assert_eq!(code(&maxgain(&["train", s(&cfg), "--seed", "7", "--out", s(b.path())])), 0);
    assert_eq!(code(&maxgain(&["train", s(&cfg), "--seed", "8", "--out", s(c.path())])), 0);
    let read = |d: &Path| std::fs::read(d.join("model.ckpt")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn tiny_gamma_projects_in_first_epoch() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train("tiny_gamma.toml", dir.path())), 0);
    let ledger = std::fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    let mut lines = ledger.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let first: Vec<&str> = lines.find(|l| l.starts_with("1,train,")).unwrap().split(',').collect();
    let scales: Vec<f64> = header
        .iter()
        .zip(&first)
        .filter(|(h, _)| h.starts_with("min_scale_"))
        .map(|(_, v)| v.parse().unwrap())
        .collect();
    assert_eq!(scales.len(), 3);
    assert!(scales.iter().any(|&s| s < 1.0), "{scales:?}");
}

#[test]
fn sweep_single_gamma_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("spirals.toml");
    let out = |name: &str| {
        let path = dir.path().join(name);
        let o = maxgain(&["sweep", s(&cfg), "--gamma", "2", "--out", s(&path)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read_to_string(path).unwrap()
    };
    let a = out("a.csv");
    assert_eq!(a, out("b.csv"));
    assert_eq!(a.lines().count(), 2);
    assert!(a.starts_with("gamma,train_acc,train_loss,test_acc,test_loss,test_max_gain_0"));

    let parallel = maxgain(&["sweep", s(&cfg), "--gamma", "4,0.5,inf", "--jobs", "3"]);
    assert_eq!(code(&parallel), 0);
    let gammas: Vec<String> = stdout(&parallel).lines().skip(1).map(|l| l.split(',').next().unwrap().to_owned()).collect();
    assert_eq!(gammas, ["0.5", "4", "inf"]);
}

#[test]
fn sweep_rejects_nonpositive_gamma() {
    let o = maxgain(&["sweep", s(&fixture("spirals.toml")), "--gamma", "0"]);
    assert_eq!(code(&o), 2);
}

fn identity_checkpoint(dir: &Path) -> PathBuf {
    let dense = Dense::new(Tensor::eye(2), Tensor::zeros(&[2])).unwrap();
    let net = Network::new(vec![2], vec![Stage::Dense(dense)]).unwrap();
    let path = dir.join("identity.ckpt");
    checkpoint::save(&net, &path).unwrap();
    path
}

fn report_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn gain_report_of_identity_layer_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = identity_checkpoint(dir.path());
    for norm in ["1", "2", "inf"] {
        let o = maxgain(&["gain-report", "--checkpoint", s(&ckpt), "--config", s(&fixture("spirals.toml")), "--norm", norm]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let text = stdout(&o);
        assert!(text.starts_with("layer_index,split,n,min,lq,median,uq,max\n"));
        let rows = report_rows(&text);
        assert_eq!(rows.len(), 2);
        for row in rows {
            assert!(row[3..].iter().all(|v| v.parse::<f64>().unwrap() == 1.0), "{row:?}");
        }
    }
}

#[test]
fn gain_report_on_empty_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = identity_checkpoint(dir.path());
    let o = maxgain(&["gain-report", "--checkpoint", s(&ckpt), "--config", s(&fixture("empty_data.toml"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn gain_report_first_layer_matches_hand_gains() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train("spirals.toml", dir.path())), 0);
    let ckpt = dir.path().join("model.ckpt");
    let out = dir.path().join("report.csv");
    let o = maxgain(&[
        "gain-report", "--checkpoint", s(&ckpt), "--config", s(&fixture("spirals.toml")), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = report_rows(&std::fs::read_to_string(out).unwrap());

    let net = checkpoint::load(&ckpt).unwrap();
    let w = net.learned_layers()[0].weight().clone();
    let (r, c) = w.dims2().unwrap();
    let test = synth_test_split();
    let mut gains: Vec<f64> = (0..test.len())
        .map(|i| {
            let x = test.x().row(i);
            let z: Vec<f64> = (0..r).map(|k| (0..c).map(|j| w.data()[k * c + j] * x[j]).sum()).collect();
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            norm(&z) / norm(x)
        })
        .collect();
    gains.sort_by(f64::total_cmp);
    let row = rows.iter().find(|r| r[0] == "0" && r[1] == "test").unwrap();
    assert_eq!(row[2], test.len().to_string());
    let min: f64 = row[3].parse().unwrap();
    let max: f64 = row[7].parse().unwrap();
    assert!((min - gains[0]).abs() <= 1e-12 * gains[0]);
    assert!((max - gains[gains.len() - 1]).abs() <= 1e-12 * max);
}

fn synth_test_split() -> Dataset {
    let mut rng = maxgain::Rng::seeded(8);
    maxgain::data::synth_spirals(200, 0.05, 2, &mut rng).unwrap()
}

#[test]
fn folds_write_then_reuse_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let protocol = dir.path().join("folds.json");
    let run = |out: &Path, jobs: &str| {
        let o = maxgain(&[
            "folds", s(&fixture("spirals.toml")), "--folds", "3", "--train-per-fold", "80", "--test-per-fold", "40",
            "--protocol", s(&protocol), "--jobs", jobs, "--out", s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("over 3 folds"), "{}", stdout(&o));
        std::fs::read_to_string(out).unwrap()
    };
    let first = run(&dir.path().join("a.csv"), "1");
    assert!(protocol.exists());
    let second = run(&dir.path().join("b.csv"), "3");
    assert_eq!(first, second);
    assert_eq!(first.lines().count(), 4);
    assert!(first.starts_with("fold,accuracy,loss\n0,"));
}

#[test]
fn folds_too_large_exits_2() {
    let o = maxgain(&[
        "folds", s(&fixture("spirals.toml")), "--folds", "3", "--train-per-fold", "300", "--test-per-fold", "200",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

fn parse_ttest(text: &str) -> (f64, usize, f64) {
    let last = text.lines().last().unwrap();
    let fields: Vec<&str> = last.split(", ").map(|f| f.split(" = ").nth(1).unwrap()).collect();
    (fields[0].parse().unwrap(), fields[1].parse().unwrap(), fields[2].parse().unwrap())
}

fn column(name: &str, col: usize) -> Vec<f64> {
    std::fs::read_to_string(fixture(name))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn ttest_matches_library() {
    let o = maxgain(&["ttest", s(&fixture("scores_a.csv")), s(&fixture("scores_b.csv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (t, df, p) = parse_ttest(&stdout(&o));
    let expected = paired_t_test(&column("scores_a.csv", 1), &column("scores_b.csv", 1)).unwrap();
    assert_eq!((t, df, p), (expected.t, expected.df, expected.p));
    // 40-digit values for the same pair.
    assert!((t - 2.764093276322570).abs() < 1e-12);
    assert!((p - 0.05063659195177179).abs() < 1e-12);

    let o = maxgain(&["ttest", s(&fixture("scores_a.csv")), s(&fixture("scores_b.csv")), "--metric", "loss"]);
    let (t, _, _) = parse_ttest(&stdout(&o));
    assert_eq!(t, paired_t_test(&column("scores_a.csv", 2), &column("scores_b.csv", 2)).unwrap().t);
}

#[test]
fn ttest_reports_mean_and_stderr_per_file() {
    let o = maxgain(&["ttest", s(&fixture("ten_folds.csv")), s(&fixture("ten_folds_b.csv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let first = text.lines().next().unwrap();
    let (_, rest) = first.split_once(": accuracy ").unwrap();
    let (mean, rest) = rest.split_once(" ± ").unwrap();
    let stderr_v: f64 = rest.split_once(' ').unwrap().0.parse().unwrap();
    // Hand computation: mean 163/200, sample sd over √10.
    assert!((mean.parse::<f64>().unwrap() - 0.815).abs() < 1e-12);
    assert!((stderr_v - 0.007187952884282608).abs() < 1e-12);
    assert!(first.contains("(10 folds)"));
    let lib = mean_stderr(&column("ten_folds.csv", 1)).unwrap();
    assert_eq!(stderr_v, lib.stderr);
}

#[test]
fn ttest_identical_files_is_degenerate() {
    let a = fixture("scores_a.csv");
    let o = maxgain(&["ttest", s(&a), s(&a)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("zero variance"), "{}", stderr(&o));
}

#[test]
fn ttest_misaligned_folds_exit_2() {
    let o = maxgain(&["ttest", s(&fixture("scores_a.csv")), s(&fixture("scores_shuffled.csv"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("misaligned"), "{}", stderr(&o));
    let o = maxgain(&["ttest", s(&fixture("scores_a.csv")), s(&fixture("ten_folds.csv"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.toml");
    let text = std::fs::read_to_string(fixture("spirals.toml"))
        .unwrap()
        .replace("optimizer = \"adam\"", "optimizer = \"sgd\"")
        .replace("lr = 1e-3", "lr = 1e154");
    std::fs::write(&cfg, text).unwrap();
    let o = maxgain(&["train", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    // The ledger up to the failure is still written.
    assert!(dir.path().join("ledger.csv").exists());
}
