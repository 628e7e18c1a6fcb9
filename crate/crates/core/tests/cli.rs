//! The `frugal` binary end to end: verbs, run directories and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use frugal::persist::Summary;

const MANIFEST: &str = r#"kind = "mlp"
seed = 2

[objective]
w_c = 0.1

[evaluator]
id = "synthetic:mlp-smooth"

[stage1]
mode = "balanced"
n3 = 100

[stage3]
mode = "balanced"
n3 = 100
"#;

fn frugal(args: &[&str], extra: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frugal"))
        .args(args)
        .args(extra)
        .env("FRUGAL_LOG", "error")
        .env_remove("FRUGAL_OUT_DIR")
        .output()
        .unwrap()
}

fn manifest(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("manifest.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

#[test]
fn search_writes_a_complete_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), MANIFEST);
    let run = dir.path().join("run");
    let out = frugal(&["search", "--manifest"], &[&m, Path::new("--out"), &run]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["trace.jsonl", "summary.json", "run_info.json", "manifest.toml", "c0.json"] {
        assert!(run.join(file).exists(), "missing {file}");
    }
    let summary = Summary::load(&run).unwrap();
    assert_eq!(summary.evaluations, 65);
    assert_eq!(summary.header.w_c, 0.1);
    // the copied manifest reruns to the same result
    let again = dir.path().join("again");
    let out = frugal(&["search", "--manifest"], &[&run.join("manifest.toml"), Path::new("--out"), &again]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(run.join("summary.json")).unwrap(), std::fs::read(again.join("summary.json")).unwrap());
}

#[test]
fn a_sweep_makes_one_run_per_weight_and_exports_them() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), MANIFEST);
    let root = dir.path().join("sweep");
    let out = frugal(&["search", "--wc", "10,0,0.1,1,0.01", "--manifest"], &[&m, Path::new("--out"), &root]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let c0: Vec<f64> = ["0", "0.01", "0.1", "1", "10"]
        .iter()
        .map(|w| Summary::load(&root.join(format!("wc_{w}"))).unwrap().header.c0)
        .collect();
    assert!(c0.windows(2).all(|w| w[0] == w[1]), "runs of a sweep share c0");

    let csv = dir.path().join("tradeoff.csv");
    let out = frugal(&["export", "--out"], &[&csv, &root]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("w_c,acc,t_tr_sec,n_params,search_cost_sec"));
    let weights: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(weights, [0.0, 0.01, 0.1, 1.0, 10.0]);
}

#[test]
fn compare_tabulates_every_mode_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), MANIFEST);
    let root = dir.path().join("cmp");
    let out = frugal(&["compare", "--mode", "random,balanced", "--repeats", "2", "--manifest"], &[&m, Path::new("--out"), &root]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(root.join("compare.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert!(rows[0].starts_with("mode,seed,w_c,f"));
    assert_eq!(rows.len(), 5);
    assert!(root.join("random/seed_3/summary.json").exists());
}

#[test]
fn transfer_and_ensemble_from_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), MANIFEST);
    let source = dir.path().join("src");
    assert_eq!(code(&frugal(&["search", "--manifest"], &[&m, Path::new("--out"), &source])), 0);

    let target = dir.path().join("dst");
    let out = frugal(
        &["transfer", "--evaluator", "synthetic:mlp-interacting", "--source"],
        &[&source, Path::new("--manifest"), &m, Path::new("--out"), &target],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = Summary::load(&target).unwrap();
    assert_eq!(summary.evaluations, 30);
    assert!(summary.header.transferred_from.is_some());

    let out = frugal(&["ensemble", "--n", "4", "--run"], &[&source]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ensemble: serde_json::Value = serde_json::from_slice(&std::fs::read(source.join("ensemble.json")).unwrap()).unwrap();
    assert_eq!(ensemble["members"].as_array().unwrap().len(), 4);

    let out = frugal(&["ensemble", "--n", "31", "--run"], &[&source]);
    assert_eq!(code(&out), 1);
}

#[test]
fn exit_codes_separate_user_errors_from_evaluator_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&frugal(&["search", "--manifest"], &[&missing])), 1);
    assert_eq!(code(&frugal(&["search", "--bogus"], &[])), 1);

    let bad = manifest(dir.path(), &MANIFEST.replace("w_c = 0.1", "w_c = -1"));
    assert_eq!(code(&frugal(&["search", "--manifest"], &[&bad])), 1);

    let unknown = manifest(dir.path(), &MANIFEST.replace("synthetic:mlp-smooth", "synthetic:nothing"));
    assert_eq!(code(&frugal(&["search", "--manifest"], &[&unknown])), 1);

    let unstartable = manifest(
        dir.path(),
        &MANIFEST.replace("id = \"synthetic:mlp-smooth\"", "id = \"external\"\ncommand = [\"/nonexistent/evaluator\"]"),
    );
    assert_eq!(code(&frugal(&["search", "--manifest"], &[&unstartable])), 2);

    // a CNN architecture cannot transfer to an MLP-only evaluator
    let cnn = manifest(dir.path(), &MANIFEST.replace("kind = \"mlp\"", "kind = \"cnn\"").replace("mlp-smooth", "cnn-smooth"));
    let source = dir.path().join("cnn");
    assert_eq!(code(&frugal(&["search", "--manifest"], &[&cnn, Path::new("--out"), &source])), 0);
    let mlp = manifest(dir.path(), MANIFEST);
    let out = frugal(&["transfer", "--source"], &[&source, Path::new("--manifest"), &mlp, Path::new("--out"), &dir.path().join("x")]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}
