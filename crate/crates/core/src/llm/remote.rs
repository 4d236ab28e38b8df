use std::sync::OnceLock;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, LlmError};

/// Connection settings for an HTTP chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(with = "secs_f64")]
    pub timeout: Duration,
    pub retries: u32,
    #[serde(skip)]
    pub api_key: Option<String>,
    /// Base delay between attempts; doubles per retry.
    #[serde(skip, default = "default_backoff")]
    pub backoff: Duration,
    #[serde(default = "default_temperature")]
    pub temperature: Option<f32>,
}

fn default_backoff() -> Duration {
    Duration::from_millis(250)
}

fn default_temperature() -> Option<f32> {
    Some(0.0)
}

mod secs_f64 {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
            api_key: None,
            backoff: default_backoff(),
            temperature: default_temperature(),
        }
    }
}

enum Attempt {
    Retryable(LlmError),
    Fatal(LlmError),
}

/// Blocking client for the chat-completions wire shape.
///
/// The HTTP client is built on first use so constructing a backend inside an
/// async runtime is safe; calls must still run on a blocking thread.
pub struct RemoteBackend {
    config: RemoteConfig,
    client: OnceLock<reqwest::blocking::Client>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish()
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        Self {
            config,
            client: OnceLock::new(),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(self.config.timeout)
                .build()
                .expect("http client builds")
        })
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        body
    }

    fn attempt(&self, body: &Value, attempt: u32) -> Result<String, Attempt> {
        let mut req = self.client().post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retryable(LlmError::Timeout { attempts: attempt })
            } else {
                Attempt::Retryable(LlmError::Transport {
                    attempts: attempt,
                    detail: e.to_string(),
                })
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retryable(LlmError::Timeout { attempts: attempt })
            } else {
                Attempt::Retryable(LlmError::Transport {
                    attempts: attempt,
                    detail: e.to_string(),
                })
            }
        })?;
        if !status.is_success() {
            let err = LlmError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            };
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                Attempt::Retryable(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        parse_completion(&text).map_err(Attempt::Fatal)
    }
}

/// Reads `choices[0].message.content` from a completion payload.
pub(crate) fn parse_completion(text: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(text).map_err(|e| LlmError::MalformedPayload(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::MalformedPayload("missing choices[0].message.content".into()))
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        if request.messages.is_empty() {
            return Err(LlmError::EmptyRequest);
        }
        let body = self.body(request);
        let mut attempt = 1;
        loop {
            match self.attempt(&body, attempt) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(e)) if attempt > self.config.retries => return Err(e),
                Err(Attempt::Retryable(e)) => {
                    tracing::warn!(attempt, error = %e, "completion failed, retrying");
                    let delay = self.config.backoff.saturating_mul(1 << (attempt - 1).min(4));
                    thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}
