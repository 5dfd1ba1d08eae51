//! Per-task evaluation metrics and their aggregation.

mod selection;
mod text;

pub use selection::{
    drift_input, score_to_label, selection_prf, thematic_drift, DriftInput, QuestionThemeMode,
    ScaffoldMap,
};
pub use text::{
    extract_quotes, grounded_mask, grounding_ratio, normalize, partially_quoted, quoted_regions,
    rationales_recall, tokenize, QuoteFragment,
};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaskInstance;
use crate::response::{NliLabel, TaskResponse};
use crate::scalar::{mean, Scalar};
use crate::task::TaskKind;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("instance `{0}` has no gold answer")]
    NotAnswerable(String),
    #[error("sentence id `{0}` is not in the policy")]
    UnknownSentenceId(String),
    #[error("sentence `{0}` has no theme label")]
    MissingTheme(String),
    #[error("entailment score {0} is outside 0..=10")]
    ScoreOutOfRange(u8),
    #[error("response task `{response}` does not match instance task `{instance}`")]
    TaskMismatch { response: TaskKind, instance: TaskKind },
    #[error("no instances to aggregate")]
    Empty,
    #[error("cannot aggregate across tasks `{0}` and `{1}`")]
    MixedTasks(TaskKind, TaskKind),
}

fn default_quote_tokens() -> usize {
    4
}

fn default_min_run() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricOptions {
    #[serde(default = "default_quote_tokens")]
    pub partial_quote_min_tokens: usize,
    #[serde(default = "default_min_run")]
    pub grounding_min_run: usize,
    #[serde(default)]
    pub question_theme_mode: QuestionThemeMode,
    #[serde(default)]
    pub scaffold: ScaffoldMap,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            partial_quote_min_tokens: default_quote_tokens(),
            grounding_min_run: default_min_run(),
            question_theme_mode: QuestionThemeMode::default(),
            scaffold: ScaffoldMap::linear(),
        }
    }
}

/// Metric column names, in report order.
pub const METRIC_FIELDS: [&str; 7] = [
    "decision_correct",
    "rationales_recall",
    "grounding_ratio",
    "selection_precision",
    "selection_recall",
    "thematic_drift",
    "reasoning_attribution",
];

/// Metrics of one response. Fields not defined for the task stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics<S> {
    pub instance_id: String,
    pub task: TaskKind,
    pub decision_correct: bool,
    pub rationales_recall: Option<S>,
    pub grounding_ratio: Option<S>,
    /// Whether the model declared the question answerable.
    pub answered: Option<bool>,
    pub selection_precision: Option<S>,
    pub selection_recall: Option<S>,
    pub thematic_drift: Option<S>,
    pub predicted_label: Option<NliLabel>,
    pub reasoning_attribution: Option<S>,
}

impl<S: Scalar> InstanceMetrics<S> {
    fn empty(instance: &TaskInstance) -> Self {
        InstanceMetrics {
            instance_id: instance.id().to_string(),
            task: instance.task(),
            decision_correct: false,
            rationales_recall: None,
            grounding_ratio: None,
            answered: None,
            selection_precision: None,
            selection_recall: None,
            thematic_drift: None,
            predicted_label: None,
            reasoning_attribution: None,
        }
    }

    /// Value of a metric column; `decision_correct` reads as 0 or 1.
    pub fn get(&self, field: &str) -> Option<S> {
        match field {
            "decision_correct" => Some(if self.decision_correct { S::one() } else { S::zero() }),
            "rationales_recall" => self.rationales_recall,
            "grounding_ratio" => self.grounding_ratio,
            "selection_precision" => self.selection_precision,
            "selection_recall" => self.selection_recall,
            "thematic_drift" => self.thematic_drift,
            "reasoning_attribution" => self.reasoning_attribution,
            _ => None,
        }
    }

    /// Same metrics in another scalar type.
    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> InstanceMetrics<T> {
        InstanceMetrics {
            instance_id: self.instance_id.clone(),
            task: self.task,
            decision_correct: self.decision_correct,
            rationales_recall: self.rationales_recall.map(&f),
            grounding_ratio: self.grounding_ratio.map(&f),
            answered: self.answered,
            selection_precision: self.selection_precision.map(&f),
            selection_recall: self.selection_recall.map(&f),
            thematic_drift: self.thematic_drift.map(&f),
            predicted_label: self.predicted_label,
            reasoning_attribution: self.reasoning_attribution.map(&f),
        }
    }
}

/// Scores `response` against the gold data of `instance`.
///
/// PrivacyQA precision and recall are defined only when both the model and
/// the gold data call the question answerable; drift whenever the model
/// selected at least one sentence.
pub fn evaluate_response<S: Scalar>(
    instance: &TaskInstance,
    response: &TaskResponse,
    options: &MetricOptions,
) -> Result<InstanceMetrics<S>, MetricError> {
    let mut m = InstanceMetrics::empty(instance);
    match (instance, response) {
        (TaskInstance::Scifact(inst), TaskResponse::Scifact { decision, rationale }) => {
            m.decision_correct = *decision == inst.gold_decision;
            m.rationales_recall =
                rationales_recall(inst, rationale, options.partial_quote_min_tokens);
            m.grounding_ratio = Some(grounding_ratio(
                rationale,
                &inst.abstract_sentences,
                options.grounding_min_run,
            ));
        }
        (
            TaskInstance::Privacyqa(inst),
            TaskResponse::Privacyqa {
                answerable,
                selected_sentence_ids,
            },
        ) => {
            m.decision_correct = *answerable == inst.gold_answerable;
            m.answered = Some(*answerable);
            if *answerable && inst.gold_answerable {
                let (p, r) = selection_prf(selected_sentence_ids, inst)?;
                m.selection_precision = Some(p);
                m.selection_recall = Some(r);
            }
            if *answerable && !selected_sentence_ids.is_empty() {
                let input = drift_input(
                    inst,
                    selected_sentence_ids,
                    &options.scaffold,
                    options.question_theme_mode,
                )?;
                m.thematic_drift = thematic_drift(&input);
            }
        }
        (TaskInstance::Esnli(inst), TaskResponse::Esnli { entailment_score, .. }) => {
            let label = score_to_label(*entailment_score)?;
            m.predicted_label = Some(label);
            m.decision_correct = label == inst.gold_label;
        }
        _ => {
            return Err(MetricError::TaskMismatch {
                response: response.task(),
                instance: instance.task(),
            })
        }
    }
    Ok(m)
}

/// Means over the instances of one task and one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<S> {
    pub task: TaskKind,
    pub n_instances: usize,
    pub decision_accuracy: S,
    pub rationales_recall: Option<S>,
    pub grounding_ratio: Option<S>,
    pub selection_precision: Option<S>,
    pub selection_recall: Option<S>,
    pub thematic_drift: Option<S>,
    pub reasoning_attribution: Option<S>,
    /// Number of instances contributing to each metric.
    pub support: IndexMap<String, usize>,
}

impl<S: Scalar> MetricReport<S> {
    pub fn get(&self, field: &str) -> Option<S> {
        match field {
            "decision_correct" | "decision_accuracy" => Some(self.decision_accuracy),
            "rationales_recall" => self.rationales_recall,
            "grounding_ratio" => self.grounding_ratio,
            "selection_precision" => self.selection_precision,
            "selection_recall" => self.selection_recall,
            "thematic_drift" => self.thematic_drift,
            "reasoning_attribution" => self.reasoning_attribution,
            _ => None,
        }
    }
}

pub fn aggregate<S: Scalar>(instances: &[InstanceMetrics<S>]) -> Result<MetricReport<S>, MetricError> {
    let first = instances.first().ok_or(MetricError::Empty)?;
    if let Some(other) = instances.iter().find(|m| m.task != first.task) {
        return Err(MetricError::MixedTasks(first.task, other.task));
    }
    let mut support = IndexMap::new();
    let mut column = |field: &str| -> Option<S> {
        let values: Vec<S> = instances.iter().filter_map(|m| m.get(field)).collect();
        support.insert(field.to_string(), values.len());
        mean(&values)
    };
    let decision_accuracy = column("decision_correct").expect("non-empty");
    Ok(MetricReport {
        task: first.task,
        n_instances: instances.len(),
        decision_accuracy,
        rationales_recall: column("rationales_recall"),
        grounding_ratio: column("grounding_ratio"),
        selection_precision: column("selection_precision"),
        selection_recall: column("selection_recall"),
        thematic_drift: column("thematic_drift"),
        reasoning_attribution: column("reasoning_attribution"),
        support,
    })
}

fn cell<S: Scalar>(v: Option<S>) -> String {
    v.map(|x| format_value(x.to_f64())).unwrap_or_default()
}

/// Fixed six-decimal rendering used in every report.
pub fn format_value(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per instance. `stage` is written as the first column when given.
pub fn instances_csv<S: Scalar>(rows: &[(Option<&str>, &InstanceMetrics<S>)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["stage", "instance_id", "task"];
    header.extend(METRIC_FIELDS);
    header.extend(["answered", "predicted_label"]);
    w.write_record(&header).expect("in-memory write");
    for (stage, m) in rows {
        let mut record = vec![
            stage.unwrap_or("").to_string(),
            m.instance_id.clone(),
            m.task.to_string(),
            m.decision_correct.to_string(),
        ];
        for field in &METRIC_FIELDS[1..] {
            record.push(cell(m.get(field)));
        }
        record.push(m.answered.map(|a| a.to_string()).unwrap_or_default());
        record.push(m.predicted_label.map(|l| l.to_string()).unwrap_or_default());
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Aggregate report as JSON with `f64` values.
pub fn report_json<S: Scalar>(report: &MetricReport<S>) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    obj.insert("task".into(), serde_json::json!(report.task));
    obj.insert("n_instances".into(), serde_json::json!(report.n_instances));
    obj.insert(
        "decision_accuracy".into(),
        serde_json::json!(report.decision_accuracy.to_f64()),
    );
    for field in &METRIC_FIELDS[1..] {
        obj.insert(
            (*field).to_string(),
            serde_json::json!(report.get(field).map(Scalar::to_f64)),
        );
    }
    obj.insert("support".into(), serde_json::json!(report.support));
    serde_json::Value::Object(obj)
}
