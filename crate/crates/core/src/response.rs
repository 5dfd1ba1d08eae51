//! Structured task outputs as produced by the model.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::task::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    #[serde(alias = "SUPPORT", alias = "Support")]
    Support,
    #[serde(alias = "REFUTE", alias = "Refute")]
    Refute,
}

impl Decision {
    /// Case-insensitive parse of `SUPPORT` / `REFUTE`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SUPPORT" => Some(Decision::Support),
            "REFUTE" => Some(Decision::Refute),
            _ => None,
        }
    }

    pub fn as_upper(self) -> &'static str {
        match self {
            Decision::Support => "SUPPORT",
            Decision::Refute => "REFUTE",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_upper())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        }
    }
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum TaskResponse {
    Scifact {
        decision: Decision,
        rationale: String,
    },
    Privacyqa {
        answerable: bool,
        selected_sentence_ids: Vec<String>,
    },
    Esnli {
        entailment_score: u8,
        reason: String,
    },
}

impl TaskResponse {
    pub fn task(&self) -> TaskKind {
        match self {
            TaskResponse::Scifact { .. } => TaskKind::Scifact,
            TaskResponse::Privacyqa { .. } => TaskKind::Privacyqa,
            TaskResponse::Esnli { .. } => TaskKind::Esnli,
        }
    }

    /// The free-text justification, if the task has one.
    pub fn explanation(&self) -> Option<&str> {
        match self {
            TaskResponse::Scifact { rationale, .. } => Some(rationale),
            TaskResponse::Esnli { reason, .. } => Some(reason),
            TaskResponse::Privacyqa { .. } => None,
        }
    }

    /// Output fields in the model-facing schema, each key prefixed with
    /// `prefix` (`""` for initial responses, `"revised_"` for revisions).
    pub fn model_fields(&self, prefix: &str) -> Map<String, Value> {
        let mut map = Map::new();
        match self {
            TaskResponse::Scifact {
                decision,
                rationale,
            } => {
                map.insert(format!("{prefix}decision"), json!(decision.as_upper()));
                map.insert(format!("{prefix}rationale"), json!(rationale));
            }
            TaskResponse::Privacyqa {
                answerable,
                selected_sentence_ids,
            } => {
                map.insert(format!("{prefix}answerable"), json!(answerable));
                map.insert(
                    format!("{prefix}selected_sentence_ids"),
                    json!(selected_sentence_ids),
                );
            }
            TaskResponse::Esnli {
                entailment_score,
                reason,
            } => {
                map.insert(format!("{prefix}entailment_score"), json!(entailment_score));
                map.insert(format!("{prefix}reason"), json!(reason));
            }
        }
        map
    }
}
