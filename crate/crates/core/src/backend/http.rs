use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError};

/// OpenAI-compatible chat-completions client.
///
/// Sends `POST {endpoint}/chat/completions` with a single user message and
/// reads `choices[0].message.content`. Transport failures, timeouts, 429 and
/// 5xx replies are retried up to `max_retries` times.
pub struct HttpBackend {
    endpoint: String,
    model_name: String,
    temperature: f64,
    api_key: Option<String>,
    max_retries: usize,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model_name: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model_name: model_name.to_string(),
            temperature: 0.0,
            api_key: None,
            max_retries: 2,
            agent,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_max_retries(mut self, max_retries: usize) -> Self {
        self.max_retries = max_retries;
        self
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model_name,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.endpoint);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
    }
}

fn transport_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(t) => BackendError::Timeout(t.to_string()),
        ureq::Error::StatusCode(status) => BackendError::Status {
            status,
            body: String::new(),
        },
        other => BackendError::Network(other.to_string()),
    }
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let body = self.request_body(prompt);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempts <= self.max_retries => {
                    log::warn!("completion attempt {attempts} failed: {e}; retrying");
                    std::thread::sleep(Duration::from_millis(50 * attempts as u64));
                }
                Err(e) if e.is_retryable() => {
                    return Err(BackendError::RetriesExhausted {
                        attempts,
                        last: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }
}
