use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use macrocause::designer::value_partition;
use macrocause::learner::MacroModel;
use macrocause::pipeline::CctReport;
use macrocause::GroundTruth;
use serde_json::Value;

fn macrocause(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_macrocause"));
    cmd.args(args).env_remove("MACROCAUSE_SEED").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> Output {
    let out = macrocause(args, &[]);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    let out = macrocause(&["--help"], &[]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["simulate", "oracle", "fit-density", "learn", "subsidiary", "design", "merge", "validate-cct", "run-all"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn usage_and_config_errors_exit_three() {
    assert_eq!(code(&macrocause(&["bogus"], &[])), 3);
    assert_eq!(code(&macrocause(&["validate-cct", "--threads", "0"], &[])), 3);
    let bad_seed = macrocause(&["validate-cct", "--n-systems", "1"], &[("MACROCAUSE_SEED", "abc")]);
    assert_eq!(code(&bad_seed), 3);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&macrocause(&["--config", p(&missing), "validate-cct", "--n-systems", "1"], &[])), 3);
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ not json").unwrap();
    assert_eq!(code(&macrocause(&["--config", p(&broken), "validate-cct", "--n-systems", "1"], &[])), 3);
    // Learning needs a density source.
    assert_eq!(code(&macrocause(&["learn", "--data", "x", "--out", "y"], &[])), 3);
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("cct.json");
    let args = ["validate-cct", "--n-systems", "20", "--m", "4", "--n", "4", "--k", "1", "--out", p(&report)];
    let out = macrocause(&args, &[("MACROCAUSE_SEED", "77")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: CctReport = serde_json::from_value(read_json(&report)).unwrap();
    assert_eq!(r.seed, 77);
    assert_eq!(r.violations(), 0);
    // An explicit flag wins over the environment.
    let out = macrocause(&[&args[..], &["--seed", "5"]].concat(), &[("MACROCAUSE_SEED", "77")]);
    assert_eq!(code(&out), 0);
    let r: CctReport = serde_json::from_value(read_json(&report)).unwrap();
    assert_eq!(r.seed, 5);
}

#[test]
fn coarsening_violations_exit_two() {
    let out = macrocause(&["validate-cct", "--n-systems", "50", "--m", "4", "--n", "3", "--k", "2"], &[]);
    let report: CctReport = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.violations() > 0);
    assert_eq!(code(&out), 2);
}

#[test]
fn oracle_then_learn_recovers_exact_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("sys");
    let model = dir.path().join("model");
    ok(&["--seed", "3", "oracle", "--m", "5", "--n", "4", "--k", "2", "--out", p(&sys), "--samples", "20000"]);
    let out = ok(&[
        "learn",
        "--data",
        p(&sys.join("data")),
        "--system",
        p(&sys.join("system.json")),
        "--out",
        p(&model),
        "--interactive-merge-report",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("symmetrized KL"));
    assert!(model.join("merge_report.json").exists());

    let truth: GroundTruth = serde_json::from_value(read_json(&sys.join("ground_truth.json"))["partitions"].clone()).unwrap();
    let learned = MacroModel::load(&model).unwrap();
    assert_eq!(value_partition(&learned.cause), Some(truth.causal_i));
    assert_eq!(value_partition(&learned.effect), Some(truth.causal_j));

    let subs = dir.path().join("subsidiary.json");
    ok(&["subsidiary", "--model", p(&model), "--out", p(&subs)]);
    assert!(read_json(&subs)["search"]["fundamental"].is_object());
}

#[test]
fn design_and_merge_chain() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("sys");
    let design = dir.path().join("design");
    let merged = dir.path().join("merged");
    ok(&["oracle", "--m", "4", "--n", "3", "--k", "2", "--out", p(&sys), "--samples", "20000", "--observational"]);
    let system = sys.join("system.json");
    ok(&[
        "design",
        "--data",
        p(&sys.join("data")),
        "--system",
        p(&system),
        "--out",
        p(&design),
        "--runner-system",
        p(&system),
        "--trials",
        "400",
    ]);
    assert!(design.join("plan.json").exists());
    assert!(design.join("results/manifest.json").exists());
    ok(&["merge", "--design", p(&design), "--out", p(&merged)]);
    let obs = MacroModel::load(&design.join("observational")).unwrap();
    let m = MacroModel::load(&merged).unwrap();
    assert!(m.n_causes() <= obs.n_causes());
    for row in &m.table {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn corrupted_dataset_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("sys");
    ok(&["oracle", "--m", "3", "--n", "3", "--k", "1", "--out", p(&sys), "--samples", "100"]);
    let stimuli = sys.join("data/stimuli.f32");
    let bytes = fs::read(&stimuli).unwrap();
    fs::write(&stimuli, &bytes[..bytes.len() - 4]).unwrap();
    let out = macrocause(
        &["learn", "--data", p(&sys.join("data")), "--system", p(&sys.join("system.json")), "--out", p(&dir.path().join("m"))],
        &[],
    );
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_fit_and_run_all() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"n_per_class": 60, "density": {"d_i": 6, "d_j": 4, "bandwidth_factor": 3.0}, "heatmap_size": 20}"#).unwrap();
    let data = dir.path().join("data");
    ok(&["--config", p(&cfg), "simulate", "--out", p(&data)]);
    assert_eq!(read_json(&data.join("manifest.json"))["n"], 240);
    assert!(data.join("truth.csv").exists());
    let density = dir.path().join("density.bin");
    ok(&["--config", p(&cfg), "fit-density", "--data", p(&data), "--out", p(&density)]);
    assert!(density.exists());

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["--config", p(&cfg), "--threads", "1", "run-all", "--out", p(&a)]);
    ok(&["--config", p(&cfg), "run-all", "--out", p(&b)]);
    let ma = fs::read(a.join("metrics.json")).unwrap();
    assert_eq!(ma, fs::read(b.join("metrics.json")).unwrap());
    for f in ["run_manifest.json", "matrix.svg", "matrix.csv", "table.csv", "purity.csv", "model/model.json", "density.bin"] {
        assert!(a.join(f).exists(), "{f}");
    }
}
