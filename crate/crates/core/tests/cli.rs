use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mg1nn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mg1nn"))
        .args(args)
        .current_dir(dir)
        .env_remove("MG1_SEED")
        .output()
        .expect("spawn mg1nn")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = mg1nn(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const MM1: &str = r#"{"m":1,"alpha":[1.0],"S":[[-1.0]]}"#;

#[test]
fn solve_prints_geometric_law() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("mm1.json"), MM1).unwrap();
    let text = ok(&["solve", "--lambda", "0.5", "--ph", "mm1.json"], dir.path());
    let probs: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 70);
    for (n, p) in probs.iter().enumerate() {
        assert!((p - 0.5f64.powi(n as i32 + 1)).abs() < 1e-10);
    }
    assert!(text.contains("# tail_mass"));
}

#[test]
fn errors_are_one_categorized_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("mm1.json"), MM1).unwrap();
    let out = mg1nn(&["solve", "--lambda", "1.2", "--ph", "mm1.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: Unstable: "), "{err}");

    fs::write(dir.path().join("bad.txt"), "1.0\n-3\n").unwrap();
    let out = mg1nn(&["case-study", "--sample", "bad.txt", "--lambda", "0.5", "--model", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: Io: "));

    let out = mg1nn(&["solve", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_ph_is_reproducible_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sample-ph", "--max-ph", "20", "--seed", "7", "--count", "25"];
    let a = ok(&args, dir.path());
    assert_eq!(a, ok(&args, dir.path()));
    assert_eq!(a.lines().count(), 25);
    for line in a.lines() {
        let ph: mg1nn::PhaseType = serde_json::from_str(line).unwrap();
        assert!(ph.phases() <= 20);
    }
}

#[test]
fn env_seed_overrides_default() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mg1nn"));
        cmd.args(["sample-ph", "--count", "3"]).current_dir(dir.path());
        match seed {
            Some(s) => cmd.env("MG1_SEED", s),
            None => cmd.env_remove("MG1_SEED"),
        };
        cmd.output().unwrap().stdout
    };
    assert_eq!(run(None), run(Some("42")));
    assert_ne!(run(None), run(Some("43")));
}

#[test]
fn smoke_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (split, file) in [("train", "train.ds"), ("val", "val.ds"), ("test", "test.ds")] {
        ok(
            &["gen-dataset", "--count", "1000", "--n-moments", "5", "--split", split, "--seed", "11", "--out", file],
            d,
        );
    }
    let train_args = [
        "train", "--train", "train.ds", "--val", "val.ds", "--epochs", "5", "--batch", "128", "--seed", "3", "--out",
    ];
    ok(&[&train_args[..], &["model.json"]].concat(), d);
    ok(&[&train_args[..], &["model2.json"]].concat(), d);
    assert_eq!(fs::read(d.join("model.json")).unwrap(), fs::read(d.join("model2.json")).unwrap());

    ok(&["gen-dataset", "--count", "1000", "--split", "train", "--seed", "11", "--workers", "1", "--out", "again.ds"], d);
    assert_eq!(fs::read(d.join("train.ds")).unwrap(), fs::read(d.join("again.ds")).unwrap());

    let report = ok(
        &["evaluate", "--model", "model.json", "--test", "test.ds", "--histogram", "hist.csv"],
        d,
    );
    assert!(report.starts_with("metric1_mean "));
    assert!(fs::read_to_string(d.join("hist.csv")).unwrap().starts_with("bin_lo,bin_hi,count"));

    let pred = ok(&["predict", "--model", "model.json", "--lambda", "0.85", "--moments", "2,6,24,120"], d);
    let probs: Vec<f64> = pred.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(probs.len(), 70);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    fs::write(d.join("exp.json"), MM1).unwrap();
    ok(&["draw-sample", "--ph", "exp.json", "--count", "2000", "--seed", "5", "--out", "svc.txt"], d);
    let cs = ok(
        &["case-study", "--sample", "svc.txt", "--lambda", "0.5", "--model", "model.json", "--ph", "exp.json"],
        d,
    );
    assert!(cs.contains("metric1 "));
    assert_eq!(cs.lines().filter(|l| l.starts_with("metric2 ")).count(), 6);
}
