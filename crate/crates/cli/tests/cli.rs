use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

fn privpred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privpred")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two separable classes in the plane.
fn write_data(p: &Path, n: usize) {
    let mut s = String::from("f0,f1,label\n");
    for i in 0..n {
        let t = i as f64 * 0.37;
        let (c, sign) = (i % 2, if i % 2 == 0 { 1.0 } else { -1.0 });
        writeln!(s, "{},{},{c}", sign * (2.0 + t.sin()), t.cos()).unwrap();
    }
    std::fs::write(p, s).unwrap();
}

fn statuses(out: &Output) -> Vec<String> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["status"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn predict_enforces_and_persists_budget() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = (dir.path().join("d.csv"), dir.path().join("m.json"));
    write_data(&data, 40);
    let queries = dir.path().join("q.csv");
    write_data(&queries, 5);

    let out = privpred(&[
        "train", "--csv", path(&data), "--mechanism", "prediction_sensitivity", "--epsilon", "1", "--budget", "3",
        "--lambda", "0.1", "--seed", "4", "--out", path(&model),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let first = privpred(&["predict", "--model", path(&model), "--inputs", path(&queries)]);
    assert_eq!(first.status.code(), Some(2));
    assert_eq!(statuses(&first), ["ok", "ok", "ok", "refused", "refused"]);

    let second = privpred(&["predict", "--model", path(&model), "--inputs", path(&queries)]);
    assert_eq!(statuses(&second), ["refused"; 5]);
}

#[test]
fn model_release_is_unlimited_and_exports_params() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model, params) = (dir.path().join("d.csv"), dir.path().join("m.json"), dir.path().join("p.bin"));
    write_data(&data, 40);
    let out = privpred(&[
        "train", "--csv", path(&data), "--mechanism", "loss_perturbation", "--epsilon", "2", "--lambda", "0.1",
        "--out", path(&model), "--params-out", path(&params),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::metadata(&params).unwrap().len() > 0);
    let out = privpred(&["predict", "--model", path(&model), "--inputs", path(&data)]);
    assert!(out.status.success());
    assert!(statuses(&out).iter().all(|s| s == "ok"));
}

#[test]
fn sweep_output_is_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(
        &cfg,
        r#"
mechanisms = ["model_sensitivity", "subsample_aggregate"]
epsilons = [0.5, 4.0]
budgets = [10]
lambdas = [0.05]
ensembles = [8]
trials = 100

[dataset]
kind = "synth"
n_per_class = 50
classes = 3
dim = 4
separation = 1.0
"#,
    )
    .unwrap();
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let summary = dir.path().join(format!("s_{name}"));
        let o = privpred(&[
            "sweep", "--config", path(&cfg), "--trials", "4", "--seed", "9", "--threads", threads, "--out", path(&out),
            "--summary", path(&summary),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read_to_string(out).unwrap(), std::fs::read_to_string(summary).unwrap())
    };
    let (a, sa) = run("1", "a.csv");
    let (b, sb) = run("3", "b.csv");
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_eq!(a.lines().count(), 1 + 2 * 2 * 4);
    assert_eq!(sa.lines().count(), 1 + 2 * 2);
}

#[test]
fn verify_reports_and_bad_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("v.json");
    let out = privpred(&["verify", "--suite", "budget", "--suite", "bounds", "--trials", "200", "--out", path(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).lines().all(|l| l.starts_with("PASS")));
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    assert!(parsed.as_array().is_some_and(|a| !a.is_empty()));

    let missing = privpred(&["predict", "--model", path(&dir.path().join("nope.json")), "--inputs", "x.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));
}
