//! Conceptual gap definitions.
//!
//! A gap is a named natural-language quality criterion. Gap sets are task
//! scoped and ordered; the order is the enumeration order used in prompts
//! and the key order of every gap analysis.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::TaskKind;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GapError {
    #[error("malformed gap file: {0}")]
    Malformed(String),
    #[error("unknown task kind `{0}`")]
    UnknownTask(String),
    #[error("duplicate gap name `{0}`")]
    DuplicateName(String),
    #[error("gap `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("gap with empty name")]
    EmptyName,
    #[error("gap file declares no gaps")]
    NoGaps,
    #[error("gap `{name}` is bound to task `{found}` but the file is for `{expected}`")]
    MixedTasks {
        name: String,
        expected: TaskKind,
        found: String,
    },
    #[error("no gap named `{0}` in the set")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapDefinition {
    pub id: String,
    pub name: String,
    pub description: String,
    pub task: TaskKind,
}

impl GapDefinition {
    pub fn new(task: TaskKind, name: &str, description: &str) -> Self {
        GapDefinition {
            id: slugify(name),
            name: name.to_string(),
            description: description.to_string(),
            task,
        }
    }
}

/// Lowercase, alphanumeric runs joined by single hyphens.
pub fn slugify(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_hyphen = false;
    for c in name.chars() {
        if c.is_alphanumeric() {
            if pending_hyphen && !out.is_empty() {
                out.push('-');
            }
            pending_hyphen = false;
            out.extend(c.to_lowercase());
        } else {
            pending_hyphen = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSet {
    pub task: TaskKind,
    pub gaps: Vec<GapDefinition>,
}

impl GapSet {
    /// Builds a set, enforcing name uniqueness and non-empty text.
    pub fn new(task: TaskKind, gaps: Vec<GapDefinition>) -> Result<Self, GapError> {
        let mut seen = HashSet::new();
        for gap in &gaps {
            if gap.name.trim().is_empty() {
                return Err(GapError::EmptyName);
            }
            if gap.description.trim().is_empty() {
                return Err(GapError::EmptyDescription(gap.name.clone()));
            }
            if gap.task != task {
                return Err(GapError::MixedTasks {
                    name: gap.name.clone(),
                    expected: task,
                    found: gap.task.to_string(),
                });
            }
            if !seen.insert(gap.name.as_str()) {
                return Err(GapError::DuplicateName(gap.name.clone()));
            }
        }
        Ok(GapSet { task, gaps })
    }

    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.gaps.iter().map(|g| g.name.clone()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.gaps.iter().any(|g| g.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&GapDefinition> {
        self.gaps.iter().find(|g| g.name == name)
    }

    /// Serializes to the gap-file schema.
    pub fn to_document(&self) -> String {
        let doc = GapFile {
            task: self.task.to_string(),
            extends_builtin: false,
            gaps: self
                .gaps
                .iter()
                .map(|g| GapEntry {
                    name: g.name.clone(),
                    description: g.description.clone(),
                    task: None,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("gap file serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GapFile {
    task: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    extends_builtin: bool,
    gaps: Vec<GapEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GapEntry {
    name: String,
    description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<String>,
}

const SCIFACT_GAPS: [(&str, &str); 5] = [
    (
        "Coverage",
        "The rationale fails to accumulate all independent lines of reasoning from the source text that may lead to the decision in a stand-alone manner.",
    ),
    (
        "Conciseness",
        "The rationale includes supplemental explanations, details, or qualifiers that lead to a longer explanation.",
    ),
    (
        "Textual Grounding",
        "The rationale fails to anchor its reasoning in specific quotes or phrases from the source text.",
    ),
    (
        "Source Faithfulness",
        "The rationale introduces content, interpretations, or conclusions drawn from external knowledge that are not stated in the source text.",
    ),
    (
        "Unsupported Emphasis",
        "The rationale places undue weight on a piece of evidence, interpretation, or claim without sufficient justification or clear support from the source text.",
    ),
];

const PRIVACYQA_GAPS: [(&str, &str); 2] = [
    (
        "Coverage",
        "The selection omits available information, relevant context, or important nuances, conditions, and exceptions required to fully answer the question.",
    ),
    (
        "Thematic Overreach",
        "The selection crosses into privacy-related themes that significantly widen the scope of the provided response.",
    ),
];

const ESNLI_GAPS: [(&str, &str); 5] = [
    (
        "Quantitative and Comparative Reasoning",
        "The output overlooks or misinterprets numeric or comparative information, including quantities, dates, durations, orderings (e.g., first, more, twice), or arithmetic relations.",
    ),
    (
        "Reference Resolution",
        "The output fails to correctly match pronouns, names, or noun phrases to the right entities across the context and statement.",
    ),
    (
        "Logical Inferences",
        "The output mishandles logical structures, such as negation, conditionals (if/then), conjunctions (and/or), or syntactic transformations (e.g., passive to active).",
    ),
    (
        "Pragmatic Inferences",
        "The output mishandles pragmatic inferences, including drawing incorrect conclusions from implicit facts, not accounting for possibilities left unclear in the context, or failing to apply commonsense reasoning based on the context.",
    ),
    (
        "Lexical Inferences",
        "The output misses inferences based on word meaning (e.g., synonyms, antonyms, scalar terms) or lexical similarities.",
    ),
];

/// The built-in gap set for a task, in canonical order.
pub fn builtin_gapset(task: TaskKind) -> GapSet {
    let table: &[(&str, &str)] = match task {
        TaskKind::Scifact => &SCIFACT_GAPS,
        TaskKind::Privacyqa => &PRIVACYQA_GAPS,
        TaskKind::Esnli => &ESNLI_GAPS,
    };
    GapSet {
        task,
        gaps: table
            .iter()
            .map(|(name, desc)| GapDefinition::new(task, name, desc))
            .collect(),
    }
}

/// Same as [`builtin_gapset`] but from a task name.
pub fn builtin_gapset_named(task: &str) -> Result<GapSet, GapError> {
    let kind = task
        .parse::<TaskKind>()
        .map_err(|_| GapError::UnknownTask(task.to_string()))?;
    Ok(builtin_gapset(kind))
}

/// Parses a gap file.
///
/// With `"extends_builtin": true` the file's gaps are appended after the
/// built-in set for the same task.
pub fn load_gapset(document: &str) -> Result<GapSet, GapError> {
    let file: GapFile =
        serde_json::from_str(document).map_err(|e| GapError::Malformed(e.to_string()))?;
    let task = file
        .task
        .parse::<TaskKind>()
        .map_err(|_| GapError::UnknownTask(file.task.clone()))?;
    let mut gaps = if file.extends_builtin {
        builtin_gapset(task).gaps
    } else {
        Vec::new()
    };
    for entry in file.gaps {
        if let Some(t) = &entry.task {
            if t.parse::<TaskKind>().ok() != Some(task) {
                return Err(GapError::MixedTasks {
                    name: entry.name,
                    expected: task,
                    found: t.clone(),
                });
            }
        }
        gaps.push(GapDefinition::new(task, entry.name.trim(), entry.description.trim()));
    }
    if gaps.is_empty() {
        return Err(GapError::NoGaps);
    }
    GapSet::new(task, gaps)
}

/// Removes one gap by name, keeping the order of the rest.
pub fn drop_gap(set: &GapSet, name: &str) -> Result<GapSet, GapError> {
    if !set.contains(name) {
        return Err(GapError::NotFound(name.to_string()));
    }
    Ok(GapSet {
        task: set.task,
        gaps: set.gaps.iter().filter(|g| g.name != name).cloned().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_sizes() {
        assert_eq!(builtin_gapset(TaskKind::Scifact).len(), 5);
        assert_eq!(builtin_gapset(TaskKind::Privacyqa).len(), 2);
        assert_eq!(builtin_gapset(TaskKind::Esnli).len(), 5);
    }

    #[test]
    fn scifact_starts_with_coverage() {
        let set = builtin_gapset(TaskKind::Scifact);
        assert_eq!(set.gaps[0].name, "Coverage");
        assert!(set.gaps[0]
            .description
            .contains("fails to accumulate all independent lines"));
        assert_eq!(set.gaps[2].id, "textual-grounding");
    }

    #[test]
    fn privacyqa_names() {
        assert_eq!(
            builtin_gapset(TaskKind::Privacyqa).names(),
            vec!["Coverage", "Thematic Overreach"]
        );
    }

    #[test]
    fn esnli_has_reference_resolution() {
        assert!(builtin_gapset(TaskKind::Esnli).contains("Reference Resolution"));
    }

    #[test]
    fn unknown_builtin_task() {
        assert_eq!(
            builtin_gapset_named("squad"),
            Err(GapError::UnknownTask("squad".into()))
        );
    }

    #[test]
    fn slugs() {
        assert_eq!(
            slugify("Quantitative and Comparative Reasoning"),
            "quantitative-and-comparative-reasoning"
        );
        assert_eq!(slugify("  Thematic  Overreach "), "thematic-overreach");
    }

    #[test]
    fn round_trip_builtin() {
        for task in TaskKind::ALL {
            let set = builtin_gapset(task);
            assert_eq!(load_gapset(&set.to_document()).unwrap(), set);
        }
    }

    #[test]
    fn duplicate_name_rejected() {
        let doc = r#"{"task":"privacyqa","gaps":[
            {"name":"Coverage","description":"a"},
            {"name":"Coverage","description":"b"}]}"#;
        assert_eq!(load_gapset(doc), Err(GapError::DuplicateName("Coverage".into())));
    }

    #[test]
    fn empty_description_rejected() {
        let doc = r#"{"task":"scifact","gaps":[{"name":"Brevity","description":"  "}]}"#;
        assert_eq!(load_gapset(doc), Err(GapError::EmptyDescription("Brevity".into())));
    }

    #[test]
    fn unknown_task_rejected() {
        let doc = r#"{"task":"squad","gaps":[{"name":"A","description":"b"}]}"#;
        assert_eq!(load_gapset(doc), Err(GapError::UnknownTask("squad".into())));
    }

    #[test]
    fn mixed_tasks_rejected() {
        let doc = r#"{"task":"scifact","gaps":[{"name":"A","description":"b","task":"esnli"}]}"#;
        assert!(matches!(load_gapset(doc), Err(GapError::MixedTasks { .. })));
    }

    #[test]
    fn extends_builtin_appends() {
        let doc = r#"{"task":"privacyqa","extends_builtin":true,
            "gaps":[{"name":"Answer Hedging","description":"The selection hedges."}]}"#;
        let set = load_gapset(doc).unwrap();
        assert_eq!(set.names(), vec!["Coverage", "Thematic Overreach", "Answer Hedging"]);

        let clash = r#"{"task":"privacyqa","extends_builtin":true,
            "gaps":[{"name":"Coverage","description":"again"}]}"#;
        assert_eq!(load_gapset(clash), Err(GapError::DuplicateName("Coverage".into())));
    }

    #[test]
    fn drop_gap_preserves_order() {
        let set = builtin_gapset(TaskKind::Scifact);
        let dropped = drop_gap(&set, "Coverage").unwrap();
        assert_eq!(dropped.len(), 4);
        assert!(!dropped.contains("Coverage"));
        assert_eq!(dropped.gaps[0].name, "Conciseness");

        let pqa = drop_gap(&builtin_gapset(TaskKind::Privacyqa), "Thematic Overreach").unwrap();
        assert_eq!(pqa.names(), vec!["Coverage"]);

        assert_eq!(
            drop_gap(&set, "Brevity"),
            Err(GapError::NotFound("Brevity".into()))
        );
    }
}
