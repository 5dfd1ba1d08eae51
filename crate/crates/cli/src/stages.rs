//! Pipeline stages of a stored run.

use anyhow::{bail, Result};

use gier_core::engine::{RevisionRecord, StopReason};
use gier_core::response::TaskResponse;
use gier_core::TaskKind;

use crate::store::InstanceRecord;

pub const BASELINE_NO_GAPS: &str = "baseline_no_gaps";
pub const BASELINE_GAPS: &str = "baseline_gaps";

pub fn iteration_stage(k: usize) -> String {
    format!("iter{k}")
}

/// `baseline_no_gaps`, `baseline_gaps`, `iter1` .. `iterK`.
pub fn stage_names(iterations: usize) -> Vec<String> {
    let mut out = vec![BASELINE_NO_GAPS.to_string(), BASELINE_GAPS.to_string()];
    out.extend((1..=iterations).map(iteration_stage));
    out
}

/// Canonical stage name. Accepts `final` for the last iteration and
/// `initial` for the gap-informed baseline.
pub fn resolve_stage(name: &str, iterations: usize) -> Result<String> {
    let stage = match name {
        "final" if iterations > 0 => iteration_stage(iterations),
        "final" => BASELINE_GAPS.to_string(),
        "initial" => BASELINE_GAPS.to_string(),
        other => other.to_string(),
    };
    if !stage_names(iterations).contains(&stage) {
        bail!("unknown stage `{name}` (expected one of {})", stage_names(iterations).join(", "));
    }
    Ok(stage)
}

fn iteration_of(stage: &str) -> Option<usize> {
    stage.strip_prefix("iter")?.parse().ok().filter(|&k| k > 0)
}

/// Output of `record` at `stage` with the revision records whose gap
/// explanations belong to it. A run that plateaued carries its last output
/// forward; a failed run has no output after the failing round.
pub fn stage_output<'a>(
    record: &'a InstanceRecord,
    stage: &str,
    pool_all_iterations: bool,
) -> Option<(&'a TaskResponse, Vec<&'a RevisionRecord>)> {
    match stage {
        BASELINE_NO_GAPS => record.baseline_no_gaps.as_ref().map(|r| (r, Vec::new())),
        BASELINE_GAPS => record.gier.as_ref().map(|h| (&h.baseline, Vec::new())),
        _ => {
            let k = iteration_of(stage)?;
            let h = record.gier.as_ref()?;
            let done = h.revisions.len();
            let upto = if k <= done {
                k
            } else if h.stop_reason == StopReason::Plateau && done > 0 {
                done
            } else {
                return None;
            };
            let own = &h.revisions[upto - 1];
            let records = if pool_all_iterations {
                h.revisions[..upto].iter().collect()
            } else {
                vec![own]
            };
            Some((&own.output, records))
        }
    }
}

/// Metric rows shown for a task, in report order.
pub fn task_metrics(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Scifact => &["decision_correct", "rationales_recall", "grounding_ratio"],
        TaskKind::Privacyqa => &[
            "decision_correct",
            "selection_precision",
            "selection_recall",
            "thematic_drift",
        ],
        TaskKind::Esnli => &["decision_correct", "reasoning_attribution"],
    }
}

pub fn metric_title(field: &str) -> &str {
    match field {
        "decision_correct" => "Decision Accuracy",
        "rationales_recall" => "Rationales Recall",
        "grounding_ratio" => "Grounding Ratio",
        "selection_precision" => "Selection Precision",
        "selection_recall" => "Selection Recall",
        "thematic_drift" => "Thematic Drift",
        "reasoning_attribution" => "Reasoning Attribution",
        other => other,
    }
}
