use std::collections::HashMap;

use super::{Backend, BackendError, CompletionKey, TranscriptEntry};

/// Serves completions recorded in a transcript.
///
/// In strict mode a miss is an error naming the digest. Otherwise misses fall
/// through to the optional fallback backend.
pub struct ReplayBackend {
    model_name: String,
    temperature: f64,
    entries: HashMap<String, String>,
    strict: bool,
    fallback: Option<Box<dyn Backend>>,
}

impl ReplayBackend {
    pub fn new(model_name: &str, entries: Vec<TranscriptEntry>) -> Self {
        ReplayBackend {
            model_name: model_name.to_string(),
            temperature: 0.0,
            entries: entries
                .into_iter()
                .map(|e| (e.digest, e.completion))
                .collect(),
            strict: true,
            fallback: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn with_fallback(mut self, fallback: Box<dyn Backend>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let key = CompletionKey::new(&self.model_name, self.temperature, prompt);
        if let Some(hit) = self.entries.get(key.as_str()) {
            return Ok(hit.clone());
        }
        match (&self.fallback, self.strict) {
            (Some(fallback), false) => fallback.complete(prompt),
            _ => Err(BackendError::ReplayMiss {
                digest: key.to_string(),
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
