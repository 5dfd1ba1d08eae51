use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CompletionKey};

/// A canned answer chosen when every `all` substring is present in the
/// prompt and no `none` substring is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(default)]
    pub all: Vec<String>,
    #[serde(default)]
    pub none: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Simulated transport failure instead of a response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Pause before answering, in milliseconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

impl ScriptRule {
    pub fn respond(all: &[&str], response: &str) -> Self {
        ScriptRule {
            all: all.iter().map(|s| s.to_string()).collect(),
            none: Vec::new(),
            response: Some(response.to_string()),
            error: None,
            delay_ms: None,
        }
    }

    pub fn excluding(mut self, none: &[&str]) -> Self {
        self.none = none.iter().map(|s| s.to_string()).collect();
        self
    }

    fn matches(&self, prompt: &str) -> bool {
        self.all.iter().all(|s| prompt.contains(s.as_str()))
            && !self.none.iter().any(|s| prompt.contains(s.as_str()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default)]
    model_name: Option<String>,
    rules: Vec<ScriptRule>,
}

enum Source {
    Rules(Vec<ScriptRule>),
    Sequence(Mutex<VecDeque<String>>),
}

/// Deterministic backend driven by rules (first match wins) or by a fixed
/// sequence of replies.
pub struct ScriptedBackend {
    model_name: String,
    temperature: f64,
    source: Source,
}

impl ScriptedBackend {
    pub fn from_rules(model_name: &str, rules: Vec<ScriptRule>) -> Self {
        ScriptedBackend {
            model_name: model_name.to_string(),
            temperature: 0.0,
            source: Source::Rules(rules),
        }
    }

    /// Replies in order, one per call; errors once exhausted.
    pub fn sequence(model_name: &str, replies: Vec<String>) -> Self {
        ScriptedBackend {
            model_name: model_name.to_string(),
            temperature: 0.0,
            source: Source::Sequence(Mutex::new(replies.into())),
        }
    }

    pub fn constant(model_name: &str, reply: &str) -> Self {
        Self::from_rules(model_name, vec![ScriptRule::respond(&[], reply)])
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        Self::from_file_or_model(path, "scripted")
    }

    /// Loads a rule file; `model_name` applies when the file names none.
    pub fn from_file_or_model(path: &Path, model_name: &str) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let file: ScriptFile = serde_json::from_str(&text).map_err(|e| BackendError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::from_rules(
            file.model_name.as_deref().unwrap_or(model_name),
            file.rules,
        ))
    }

    pub fn with_model(mut self, model_name: &str) -> Self {
        self.model_name = model_name.to_string();
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        match &self.source {
            Source::Rules(rules) => {
                let rule = rules.iter().find(|r| r.matches(prompt)).ok_or_else(|| {
                    BackendError::ScriptMiss {
                        digest: CompletionKey::new(&self.model_name, self.temperature, prompt)
                            .to_string(),
                    }
                })?;
                if let Some(ms) = rule.delay_ms {
                    std::thread::sleep(std::time::Duration::from_millis(ms));
                }
                if let Some(err) = &rule.error {
                    return Err(BackendError::Network(err.clone()));
                }
                Ok(rule.response.clone().unwrap_or_default())
            }
            Source::Sequence(queue) => queue
                .lock()
                .expect("script queue poisoned")
                .pop_front()
                .ok_or_else(|| BackendError::ScriptMiss {
                    digest: CompletionKey::new(&self.model_name, self.temperature, prompt)
                        .to_string(),
                }),
        }
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }
}
