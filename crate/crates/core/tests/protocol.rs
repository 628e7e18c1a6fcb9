//! External evaluator over the line protocol, driven against the echo
//! evaluator binary.

use std::process::Command;
use std::time::Duration;

use frugal::config::ProblemKind;
use frugal::evaluators::external::{ExternalEvaluator, ExternalSpec, ProtocolError};
use frugal::evaluators::synthetic::{SyntheticEvaluator, SyntheticObjective};
use frugal::evaluators::Evaluator;
use frugal::pipeline::Presets;

const ECHO: &str = env!("CARGO_BIN_EXE_frugal-echo-evaluator");

fn spec(args: &[&str], timeout: Duration) -> ExternalSpec {
    let mut command = vec![ECHO.to_string()];
    command.extend(args.iter().map(|a| a.to_string()));
    ExternalSpec { command, epochs: 5, timeout, dataset: None }
}

fn spawn(args: &[&str]) -> ExternalEvaluator {
    ExternalEvaluator::spawn(&spec(args, Duration::from_secs(20))).expect("handshake")
}

fn sample_configs() -> Vec<frugal::config::Config> {
    let objective = SyntheticObjective::mlp_smooth();
    let presets = Presets::default();
    [vec![100], vec![512, 64], vec![20, 30, 40], vec![1024]]
        .into_iter()
        .map(|w| presets.complete(ProblemKind::Mlp, w, &objective.shape))
        .collect()
}

#[test]
fn results_match_the_in_process_surface_bit_for_bit() {
    let mut external = spawn(&["--problem", "mlp-smooth"]);
    let mut local = SyntheticEvaluator::new(SyntheticObjective::mlp_smooth(), 5);
    assert_eq!(external.contract().dataset, local.contract().dataset);
    for (i, config) in sample_configs().iter().enumerate() {
        let seed = 40 + i as u64;
        let a = external.evaluate(config, seed);
        let b = local.evaluate(config, seed);
        assert!(!a.failed, "{:?}", a.reason);
        assert_eq!(a.best_val_acc.to_bits(), b.best_val_acc.to_bits());
        assert_eq!(a.t_tr_sec.to_bits(), b.t_tr_sec.to_bits());
        assert_eq!(a.n_params, b.n_params);
    }
}

#[test]
fn cnn_results_carry_a_matching_digest() {
    let objective = SyntheticObjective::cnn_smooth();
    let mut external = spawn(&["--problem", "cnn-smooth"]);
    let config = Presets::default().complete(ProblemKind::Cnn, vec![32, 64, 128, 128], &objective.shape);
    let r = external.evaluate(&config, 1);
    assert!(!r.failed, "{:?}", r.reason);
    assert_eq!(r.best_val_acc, objective.result(&config, 1, 5).best_val_acc);
}

#[test]
fn version_mismatch_fails_the_handshake() {
    match ExternalEvaluator::spawn(&spec(&["--fail", "bad-version"], Duration::from_secs(20))) {
        Err(ProtocolError::VersionMismatch { theirs, ours }) => assert_eq!(theirs, ours + 1),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("handshake accepted a foreign version"),
    }
}

#[test]
fn missing_dataset_needs_a_fallback() {
    let err = ExternalEvaluator::spawn(&spec(&["--no-dataset"], Duration::from_secs(20))).err();
    assert!(matches!(err, Some(ProtocolError::NoDataset)));
    let mut fallback = spec(&["--no-dataset"], Duration::from_secs(20));
    fallback.dataset = Some(SyntheticEvaluator::new(SyntheticObjective::mlp_smooth(), 5).contract().dataset.clone());
    assert!(ExternalEvaluator::spawn(&fallback).is_ok());
}

#[test]
fn bad_replies_fail_the_evaluation_but_keep_the_process() {
    for (fault, needle) in [
        ("malformed", "malformed line"),
        ("error", "injected failure"),
        ("wrong-id", "does not match request id"),
        ("bad-digest", "structural digest"),
    ] {
        let mut external = spawn(&["--fail", fault, "--after", "1"]);
        let configs = sample_configs();
        assert!(!external.evaluate(&configs[0], 0).failed, "{fault}: first evaluation is well-behaved");
        let r = external.evaluate(&configs[1], 0);
        assert!(r.failed, "{fault}");
        let reason = r.reason.unwrap_or_default();
        assert!(reason.contains(needle), "{fault}: {reason}");
        if fault != "error" {
            assert!(reason.contains("transcript"), "{fault}: {reason}");
        }
        assert!(external.fatal().is_none(), "{fault}");
    }
}

#[test]
fn exit_and_hang_are_fatal() {
    for (fault, timeout) in [("exit", Duration::from_secs(20)), ("hang", Duration::from_millis(300))] {
        let mut external = ExternalEvaluator::spawn(&spec(&["--fail", fault], timeout)).unwrap();
        let config = &sample_configs()[0];
        let r = external.evaluate(config, 0);
        assert!(r.failed, "{fault}");
        assert!(external.fatal().is_some(), "{fault}");
        let again = external.evaluate(config, 0);
        assert!(again.reason.unwrap_or_default().contains("unavailable"), "{fault}");
    }
}

fn write_manifest(dir: &std::path::Path, fail: &str, after: usize) -> std::path::PathBuf {
    let path = dir.join("manifest.toml");
    let text = format!(
        "kind = \"mlp\"\n\n[objective]\nw_c = 0.1\nc0 = 1.0\n\n[evaluator]\nid = \"external\"\ntimeout_sec = 5\ncommand = [\"{ECHO}\", \"--fail\", \"{fail}\", \"--after\", \"{after}\"]\n\n[stage1]\nmode = \"balanced\"\nn3 = 50\n\n[stage3]\nmode = \"balanced\"\nn3 = 50\n"
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn a_dead_evaluator_stops_the_search_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), "exit", 3);
    let out = Command::new(env!("CARGO_BIN_EXE_frugal"))
        .args(["search", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(dir.path().join("run"))
        .env("FRUGAL_LOG", "error")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("closed"), "{stderr}");
}

#[test]
fn per_evaluation_failures_do_not_stop_the_search() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), "error", 40);
    let out = Command::new(env!("CARGO_BIN_EXE_frugal"))
        .args(["search", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(dir.path().join("run"))
        .env("FRUGAL_LOG", "error")
        .output()
        .unwrap();
    // Stages 1 and 2 and the first five Stage-3 evaluations succeed.
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = frugal::persist::Summary::load(&dir.path().join("run")).unwrap();
    assert_eq!(summary.evaluations, 65);
    assert_eq!(summary.evaluations_per_stage.values().copied().collect::<Vec<_>>(), [30, 5, 30]);
    assert_eq!(summary.failed_evaluations, 25);
    assert!(summary.final_config.f.is_finite());
}

#[test]
fn a_stage_with_no_successes_stops_the_search() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), "error", 3);
    let out = Command::new(env!("CARGO_BIN_EXE_frugal"))
        .args(["search", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(dir.path().join("run"))
        .env("FRUGAL_LOG", "error")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("every evaluation"));
    // the trace keeps what was evaluated before the stop
    let trace = std::fs::read_to_string(dir.path().join("run/trace.jsonl")).unwrap();
    assert!(trace.lines().count() > 30);
}
