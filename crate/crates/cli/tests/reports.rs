mod common;

use std::fs;

use gier_cli::evaluate::{AttributionReport, InstanceTable, StageMetrics};
use gier_cli::significance::compare_stages;
use gier_cli::store::RunStore;
use gier_cli::{cmd_ablate, cmd_evaluate, cmd_run, cmd_significance};
use gier_core::gaps::{builtin_gapset, drop_gap};
use gier_core::metrics::InstanceMetrics;
use gier_core::prompting::{count_gap_entries, render_revision_from};
use gier_core::stats::TestOptions;
use gier_core::TaskKind;

use common::config;

fn run_and_evaluate(name: &str) -> (tempfile::TempDir, RunStore) {
    let out = tempfile::tempdir().unwrap();
    let summary = cmd_run(&config(name), out.path()).unwrap();
    cmd_evaluate(&summary.store).unwrap();
    let store = RunStore::open(&summary.store).unwrap();
    (out, store)
}

fn report(store: &RunStore, name: &str) -> String {
    fs::read_to_string(store.reports_dir().join(name)).unwrap()
}

#[test]
fn scifact_trajectory_has_one_row_per_metric_and_column_per_stage() {
    let (_out, store) = run_and_evaluate("scifact.config.json");
    let csv = report(&store, "trajectory.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "metric,baseline_no_gaps,baseline_gaps,iter1,iter2,iter3,iter4,iter5"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("rationales_recall,0.500000,0.500000,1.000000,"));
    let md = report(&store, "trajectory.md");
    assert!(md.contains("| Rationales Recall | 0.50 | 0.50 | 1.00 → 1.00 → 1.00 → 1.00 → 1.00 |"));

    let table = InstanceTable::read(&store).unwrap();
    assert_eq!(table.rows.len(), 7);
    let instances = report(&store, "instances.csv");
    assert!(instances.starts_with("stage,instance_id,task,decision_correct,"));
    assert_eq!(instances.lines().count(), 8);
    let agg: serde_json::Value = serde_json::from_str(&report(&store, "aggregate.json")).unwrap();
    assert_eq!(agg["iter5"]["rationales_recall"], 1.0);
    assert_eq!(agg["baseline_no_gaps"]["rationales_recall"], 0.5);
}

#[test]
fn missing_baseline_is_marked_absent() {
    let (_out, store) = run_and_evaluate("scifact.config.json");
    for mut record in store.records().unwrap() {
        record.baseline_no_gaps = None;
        store.write_instance(&record).unwrap();
    }
    let summary = cmd_evaluate(store.root()).unwrap();
    assert_eq!(summary.stages_absent, ["baseline_no_gaps"]);
    let md = report(&store, "trajectory.md");
    assert!(md.contains("| Rationales Recall | — | 0.50 |"));
    let csv = report(&store, "trajectory.csv");
    assert!(csv.lines().nth(2).unwrap().starts_with("rationales_recall,,0.500000,"));
}

#[test]
fn esnli_report_includes_attribution_and_best_alignment() {
    let (_out, store) = run_and_evaluate("esnli.config.json");
    let attribution: AttributionReport =
        serde_json::from_str(&report(&store, "attribution.json")).unwrap();
    assert_eq!(attribution.stages.len(), 7);
    assert_eq!(attribution.best_alignment_instances, 3);
    let shares: f64 = attribution.best_alignment.values().sum();
    assert!((shares - 1.0).abs() < 1e-12);
    assert_eq!(
        attribution.best_alignment.keys().collect::<Vec<_>>(),
        ["baseline_no_gaps", "gier_initial", "gier_final"]
    );
    let breakdown: f64 = attribution.gap_breakdown.values().sum();
    assert!((breakdown - 1.0).abs() < 1e-12);
    assert_eq!(attribution.gap_breakdown.len(), 7);
    assert!(report(&store, "attribution.md").contains("Best alignment over 3 instances"));

    let table = InstanceTable::read(&store).unwrap();
    let boy = |stage: &str| {
        table
            .stage(stage)
            .find(|m| m.instance_id == "esnli-boy-dog")
            .unwrap()
            .decision_correct
    };
    assert!(!boy("baseline_no_gaps"));
    assert!(boy("iter5"));
}

#[test]
fn identical_stages_give_p_one() {
    let (_out, store) = run_and_evaluate("esnli.config.json");
    let out = cmd_significance(store.root(), "iter4", "final", false).unwrap();
    assert_eq!(out.stage_b, "iter5");
    assert!(!out.results.is_empty());
    assert!(out.results.iter().all(|r| r.p_value == 1.0));
    let md = fs::read_to_string(&out.markdown).unwrap();
    assert!(md.contains("| decision_accuracy | 1.00000 | +0.00 | [+0.00, +0.00] | 0 | degenerate | not significant |"));
    assert!(out.csv.ends_with("significance_iter4_vs_iter5.csv"));
}

#[test]
fn significance_needs_evaluated_stages() {
    let out = tempfile::tempdir().unwrap();
    let summary = cmd_run(&config("esnli.config.json"), out.path()).unwrap();
    assert!(cmd_significance(&summary.store, "initial", "final", false).is_err());
    cmd_evaluate(&summary.store).unwrap();
    assert!(cmd_significance(&summary.store, "initial", "iter9", false).is_err());
}

fn scifact_row(stage: &str, id: &str, recall: f64) -> StageMetrics {
    StageMetrics {
        stage: stage.into(),
        metrics: InstanceMetrics {
            instance_id: id.into(),
            task: TaskKind::Scifact,
            decision_correct: true,
            rationales_recall: Some(recall),
            grounding_ratio: Some(0.5),
            answered: None,
            selection_precision: None,
            selection_recall: None,
            thematic_drift: None,
            predicted_label: None,
            reasoning_attribution: None,
        },
    }
}

#[test]
fn injected_shift_gives_interval_excluding_zero() {
    let mut rows = Vec::new();
    for i in 0..40 {
        let before = (i % 5) as f64 / 10.0;
        rows.push(scifact_row("a", &format!("i{i}"), before));
        rows.push(scifact_row("b", &format!("i{i}"), before + 0.1 + (i % 3) as f64 / 100.0));
    }
    let table = InstanceTable {
        task: TaskKind::Scifact,
        stages: vec!["a".into(), "b".into()],
        rows,
    };
    let results = compare_stages(&table, "a", "b", &TestOptions::default(), false).unwrap();
    let recall = results.iter().find(|r| r.metric == "rationales_recall").unwrap();
    assert!(recall.ci_low > 0.0);
    assert!(recall.significant());
    assert_eq!(recall.verdict(), "▲ significant increase");
    let grounding = results.iter().find(|r| r.metric == "grounding_ratio").unwrap();
    assert_eq!(grounding.p_value, 1.0);
}

#[test]
fn mismatched_instance_sets_are_rejected() {
    let table = InstanceTable {
        task: TaskKind::Scifact,
        stages: vec!["a".into(), "b".into()],
        rows: vec![
            scifact_row("a", "x", 0.0),
            scifact_row("a", "y", 0.0),
            scifact_row("b", "x", 1.0),
        ],
    };
    let err = compare_stages(&table, "a", "b", &TestOptions::default(), false).unwrap_err();
    assert!(err.to_string().contains("only in a: [\"y\"]"));
    let partial = compare_stages(&table, "a", "b", &TestOptions::default(), true).unwrap();
    assert_eq!(partial[0].n, 1);
}

#[test]
fn privacyqa_pairs_only_mutually_answered_instances() {
    let row = |stage: &str, id: &str, answered: bool, p: f64| StageMetrics {
        stage: stage.into(),
        metrics: InstanceMetrics {
            instance_id: id.into(),
            task: TaskKind::Privacyqa,
            decision_correct: answered,
            rationales_recall: None,
            grounding_ratio: None,
            answered: Some(answered),
            selection_precision: answered.then_some(p),
            selection_recall: answered.then_some(p),
            thematic_drift: answered.then_some(1.0),
            predicted_label: None,
            reasoning_attribution: None,
        },
    };
    let table = InstanceTable {
        task: TaskKind::Privacyqa,
        stages: vec!["a".into(), "b".into()],
        rows: vec![
            row("a", "q1", true, 0.5),
            row("a", "q2", false, 0.0),
            row("a", "q3", true, 0.2),
            row("a", "q4", true, 0.4),
            row("b", "q1", true, 0.6),
            row("b", "q2", true, 0.9),
            row("b", "q3", false, 0.0),
            row("b", "q4", true, 0.4),
        ],
    };
    let results = compare_stages(&table, "a", "b", &TestOptions::default(), false).unwrap();
    let precision = results.iter().find(|r| r.metric == "selection_precision").unwrap();
    assert_eq!(precision.n, 2);
    assert_eq!(precision.n_effective, 1);
    assert_eq!(results.iter().find(|r| r.metric == "decision_accuracy").unwrap().n, 4);
}

#[test]
fn ablations_run_and_report_one_row_each() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config("scifact.config.json");
    let result = cmd_ablate(&cfg, out.path()).unwrap();
    assert_eq!(result.rows.len(), cfg.ablations.len());
    assert_eq!(result.variants.len(), 2);
    assert!(result.variants.iter().all(|v| v.failed == 0));

    let md = fs::read_to_string(&result.markdown).unwrap();
    let body: Vec<&str> = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| ablation")).collect();
    assert_eq!(body.len(), 2);
    assert!(md.contains("| Coverage Drop | No change | No change | No change |"));
    let csv = fs::read_to_string(&result.csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);

    let reflection = RunStore::open(out.path().join("scifact-worked-reflection-drop")).unwrap();
    for record in reflection.records().unwrap() {
        let history = record.gier.unwrap();
        assert_eq!(history.revisions.len(), 5);
        assert!(history.revisions.iter().all(|r| r.gap_scores.is_empty()));
        assert!(!history.config.reflection);
    }

    let dropped = RunStore::open(out.path().join("scifact-worked-drop-coverage")).unwrap();
    let gaps = dropped.read_gaps().unwrap();
    assert_eq!(gaps.len(), 4);
    assert!(!gaps.contains("Coverage"));
    let full = builtin_gapset(TaskKind::Scifact);
    assert_eq!(gaps, drop_gap(&full, "Coverage").unwrap());
    let records = dropped.records().unwrap();
    let history = records[0].gier.as_ref().unwrap();
    assert!(history.revisions.iter().all(|r| r.gap_scores.len() == 4));
    let instance = &dropped.read_corpus(TaskKind::Scifact).unwrap()[0];
    let prompt = render_revision_from(instance, &gaps, Some(&history.baseline), &history.revisions[..1], true)
        .unwrap()
        .text;
    let base = render_revision_from(instance, &full, Some(&history.baseline), &history.revisions[..1], true)
        .unwrap()
        .text;
    assert_eq!(count_gap_entries(&prompt, &gaps), 4);
    assert_eq!(count_gap_entries(&base, &full), 5);
    assert!(!prompt.contains("Coverage:"));
}
