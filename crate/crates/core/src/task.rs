use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three supported tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Claim verification with a quoted rationale.
    Scifact,
    /// Answerability plus extractive sentence selection over a privacy policy.
    Privacyqa,
    /// Entailment scoring with a short reason.
    Esnli,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Scifact, TaskKind::Privacyqa, TaskKind::Esnli];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Scifact => "scifact",
            TaskKind::Privacyqa => "privacyqa",
            TaskKind::Esnli => "esnli",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown task kind `{0}` (expected scifact, privacyqa or esnli)")]
pub struct UnknownTask(pub String);

impl FromStr for TaskKind {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "scifact" => Ok(TaskKind::Scifact),
            "privacyqa" => Ok(TaskKind::Privacyqa),
            "esnli" | "e-snli" => Ok(TaskKind::Esnli),
            other => Err(UnknownTask(other.to_string())),
        }
    }
}
