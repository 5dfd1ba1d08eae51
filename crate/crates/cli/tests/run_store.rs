mod common;

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use gier_cli::config::Ablation;
use gier_cli::store::{InstanceStatus, RunStore};
use gier_cli::{cmd_run, ExperimentConfig};
use gier_core::backend::BackendKind;
use gier_core::engine::StopReason;

use common::{config, fixtures, snapshot};

#[test]
fn replay_fixture_gives_three_histories_and_manifest() {
    let out = tempfile::tempdir().unwrap();
    let summary = cmd_run(&config("esnli.replay.config.json"), out.path()).unwrap();
    assert_eq!((summary.instances, summary.executed, summary.failed), (3, 3, 0));

    let store = RunStore::open(&summary.store).unwrap();
    let files = fs::read_dir(store.instances_dir()).unwrap().count();
    assert_eq!(files, 3);
    let manifest = store.read_manifest().unwrap();
    assert_eq!(manifest.instances.len(), 3);
    assert!(manifest.instances.iter().all(|e| e.status == InstanceStatus::Complete));
    assert_eq!(manifest.gap_set.len(), 5);
    assert_eq!(manifest.seed, 0);
    assert!(manifest.backend_source_sha256.is_some());
    for record in store.records().unwrap() {
        let history = record.gier.unwrap();
        assert_eq!(history.revisions.len(), 5);
        assert_eq!(history.stop_reason, StopReason::MaxIterations);
        assert_eq!(history.calls.calls, history.calls.expected_calls());
    }
}

#[test]
fn rerun_makes_no_backend_requests() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config("esnli.config.json");
    let first = cmd_run(&cfg, out.path()).unwrap();
    assert_eq!(first.backend_requests, 21);
    let second = cmd_run(&cfg, out.path()).unwrap();
    assert_eq!(second.backend_requests, 0);
    assert_eq!((second.executed, second.skipped), (0, 3));
}

#[test]
fn stores_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = config("esnli.config.json");
    let mut parallel = cfg.clone();
    parallel.parallel = 3;
    let sa = cmd_run(&cfg, a.path()).unwrap();
    let sb = cmd_run(&parallel, b.path()).unwrap();
    gier_cli::cmd_evaluate(&sa.store).unwrap();
    gier_cli::cmd_evaluate(&sb.store).unwrap();
    let (mut left, mut right) = (snapshot(&sa.store), snapshot(&sb.store));
    // the parallel bound is part of the recorded config
    left.retain(|(p, _)| p != "manifest.json");
    right.retain(|(p, _)| p != "manifest.json");
    assert_eq!(left, right);

    let c = tempfile::tempdir().unwrap();
    let sc = cmd_run(&cfg, c.path()).unwrap();
    gier_cli::cmd_evaluate(&sc.store).unwrap();
    assert_eq!(snapshot(&sa.store), snapshot(&sc.store));
}

#[test]
fn failed_instance_is_retried_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let script: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("esnli.script.json")).unwrap()).unwrap();
    let mut broken = script.clone();
    broken["rules"].as_array_mut().unwrap().insert(
        0,
        serde_json::json!({"all": ["Racers run for the finish line"], "error": "connection reset"}),
    );
    fs::write(dir.path().join("broken.json"), broken.to_string()).unwrap();
    let mut cfg = config("esnli.config.json");
    cfg.backend.script = Some(dir.path().join("broken.json"));
    let out = dir.path().join("out");

    let first = cmd_run(&cfg, &out).unwrap();
    assert_eq!((first.executed, first.failed), (3, 1));
    let store = RunStore::open(&first.store).unwrap();
    let manifest = store.read_manifest().unwrap();
    let failed: Vec<&str> = manifest
        .instances
        .iter()
        .filter(|e| e.status == InstanceStatus::Failed)
        .map(|e| e.instance_id.as_str())
        .collect();
    assert_eq!(failed, ["esnli-racers"]);
    let kept = fs::read(store.instance_path("esnli-boy-dog")).unwrap();

    cfg.backend.script = Some(fixtures().join("esnli.script.json"));
    let second = cmd_run(&cfg, &out).unwrap();
    assert_eq!((second.executed, second.skipped, second.failed), (1, 2, 0));
    assert_eq!(second.backend_requests, 7);
    assert_eq!(fs::read(store.instance_path("esnli-boy-dog")).unwrap(), kept);
}

#[test]
fn killed_run_resumes_remaining_instances_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut script: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("esnli.script.json")).unwrap()).unwrap();
    for rule in script["rules"].as_array_mut().unwrap() {
        rule["delay_ms"] = serde_json::json!(150);
    }
    fs::write(dir.path().join("slow.json"), script.to_string()).unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("esnli.config.json")).unwrap()).unwrap();
    cfg["corpus"] = serde_json::json!(fixtures().join("esnli.jsonl"));
    cfg["backend"]["script"] = serde_json::json!("slow.json");
    let cfg_path = dir.path().join("slow.config.json");
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = dir.path().join("out");
    let instances = out.join("esnli-worked/instances");

    let mut child = Command::new(env!("CARGO_BIN_EXE_gier"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .spawn()
        .unwrap();
    let start = Instant::now();
    loop {
        let done = fs::read_dir(&instances).map(|d| d.count()).unwrap_or(0);
        if done >= 1 {
            break;
        }
        assert!(start.elapsed() < Duration::from_secs(30), "no instance finished");
        std::thread::sleep(Duration::from_millis(20));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let done_before = fs::read_dir(&instances).unwrap().count();
    assert!(done_before < 3, "run finished before it was killed");
    assert!(!out.join("esnli-worked/manifest.json").exists());

    let resumed = cmd_run(&ExperimentConfig::load(&cfg_path).unwrap(), &out).unwrap();
    assert_eq!(resumed.skipped, done_before);
    assert_eq!(resumed.executed, 3 - done_before);
    assert_eq!(resumed.failed, 0);

    let clean = tempfile::tempdir().unwrap();
    let reference = cmd_run(&config("esnli.config.json"), clean.path()).unwrap();
    assert_eq!(
        snapshot(&reference.store.join("instances")),
        snapshot(&resumed.store.join("instances"))
    );
}

#[test]
fn binary_exit_code_reflects_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("esnli.config.json")).unwrap()).unwrap();
    cfg["corpus"] = serde_json::json!(fixtures().join("esnli.jsonl"));
    cfg["backend"]["script"] = serde_json::json!(fixtures().join("scifact.script.json"));
    let cfg_path = dir.path().join("c.json");
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_gier"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    let status = Command::new(env!("CARGO_BIN_EXE_gier"))
        .args(["run", "--config"])
        .arg(fixtures().join("esnli.config.json"))
        .arg("--out")
        .arg(dir.path().join("ok"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
}

#[test]
fn config_errors_precede_backend_calls() {
    let out = tempfile::tempdir().unwrap();

    let mut cfg = config("esnli.config.json");
    cfg.ablations.push(Ablation::DropGap {
        gap: "Coverage".into(),
    });
    let err = cmd_run(&cfg, out.path()).unwrap_err();
    assert!(err.to_string().contains("unknown gap"));

    let mut cfg = config("esnli.replay.config.json");
    cfg.backend.transcript = Some(out.path().join("missing.json"));
    assert!(cmd_run(&cfg, out.path()).is_err());

    let mut cfg = config("esnli.config.json");
    cfg.run.iterations = 11;
    assert!(cmd_run(&cfg, out.path()).is_err());

    let mut cfg = config("esnli.config.json");
    cfg.backend.kind = BackendKind::Http;
    assert!(cmd_run(&cfg, out.path()).is_err());

    assert!(fs::read_dir(out.path()).unwrap().next().is_none());
}

#[test]
fn record_exports_replayable_transcript() {
    let out = tempfile::tempdir().unwrap();
    let summary = cmd_run(&config("scifact.config.json"), out.path()).unwrap();
    let transcript = out.path().join("t.json");
    let n = gier_cli::cmd_record(&summary.store, &transcript).unwrap();
    assert_eq!(n, summary.backend_requests);

    let mut replay = config("scifact.config.json");
    replay.backend.kind = BackendKind::Replay;
    replay.backend.transcript = Some(transcript);
    replay.run_id = Some("replayed".into());
    let again = cmd_run(&replay, out.path()).unwrap();
    assert_eq!(again.failed, 0);
    assert_eq!(
        snapshot(&summary.store.join("instances")),
        snapshot(&again.store.join("instances"))
    );
}

#[test]
fn validate_reports_corpus_and_gaps() {
    let report = gier_cli::cmd_validate(Some(&config("scifact.config.json")), None, None, None).unwrap();
    assert_eq!(report.instances, 1);
    assert_eq!(report.gaps.len(), 5);
    let err = gier_cli::cmd_validate(
        None,
        Some(&fixtures().join("scifact.jsonl")),
        None,
        Some(gier_core::TaskKind::Esnli),
    );
    assert!(err.is_err());
}
