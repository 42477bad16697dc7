//! HTTP adapters.
//!
//! The backend speaks the OpenAI-style chat completions protocol (streamed as
//! server-sent `data:` lines). The infill client posts the rendered context
//! to a plain completions endpoint. Clients are built per request on the
//! calling thread so handles can be created and dropped from async code.

use std::io::{BufRead, BufReader};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    validate_phrase, Backend, BackendError, DialogueHistory, Generation, Infill, InfillError,
    TextGenerator,
};
use crate::prompt::{generation_header, MSG_END, SILENCE_TOKEN};
use crate::queue::KnowledgeSink;
use crate::time::{secs, Clock};

pub const DEFAULT_SYSTEM_PROMPT: &str =
    "You are a knowledge source. Respond in short standalone sentences. No greetings, no filler.";

fn default_system_prompt() -> String {
    DEFAULT_SYSTEM_PROMPT.to_string()
}

fn default_backend_timeout() -> f64 {
    120.0
}

fn default_infill_timeout() -> f64 {
    30.0
}

fn default_max_tokens() -> u32 {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub url: String,
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_system_prompt")]
    pub system_prompt: String,
    #[serde(default = "default_backend_timeout")]
    pub timeout_seconds: f64,
}

impl HttpBackendConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key_env: None,
            system_prompt: default_system_prompt(),
            timeout_seconds: default_backend_timeout(),
        }
    }
}

fn api_key(env: &Option<String>) -> Result<Option<String>, String> {
    match env {
        None => Ok(None),
        Some(name) => std::env::var(name)
            .map(Some)
            .map_err(|_| format!("environment variable {name} is not set")),
    }
}

fn client(timeout: f64) -> Result<reqwest::blocking::Client, String> {
    reqwest::blocking::Client::builder()
        .connect_timeout(Duration::from_secs(10))
        .timeout(secs(timeout))
        .build()
        .map_err(|e| e.to_string())
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    label: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let label = if config.model.is_empty() {
            "http".to_string()
        } else {
            config.model.clone()
        };
        Self { config, label }
    }

    /// Request body: system prompt followed by the full dialogue history.
    pub fn request_body(&self, system_prompt: Option<&str>, history: &DialogueHistory, stream: bool) -> Value {
        let mut messages = Vec::with_capacity(history.len() + 1);
        if let Some(sp) = system_prompt {
            messages.push(json!({"role": "system", "content": sp}));
        }
        for m in history.messages() {
            messages.push(json!({"role": m.role.as_str(), "content": m.text}));
        }
        let mut body = json!({"messages": messages, "stream": stream});
        if !self.config.model.is_empty() {
            body["model"] = json!(self.config.model);
        }
        body
    }

    fn send(&self, body: &Value) -> Result<reqwest::blocking::Response, BackendError> {
        let key = api_key(&self.config.api_key_env).map_err(BackendError::Auth)?;
        let client = client(self.config.timeout_seconds).map_err(BackendError::Config)?;
        let mut req = client.post(&self.config.url).json(body);
        if let Some(key) = key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Network(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(BackendError::Auth(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Provider(format!("HTTP {status}: {}", text.trim())));
        }
        Ok(resp)
    }

    fn stream_into(&self, body: &Value, sink: &KnowledgeSink) -> Result<(), BackendError> {
        let resp = self.send(body)?;
        let is_sse = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("text/event-stream"));
        if !is_sse {
            let v: Value = resp
                .json()
                .map_err(|e| BackendError::Provider(format!("bad response body: {e}")))?;
            let text = message_content(&v)?;
            push(sink, &text)?;
            return Ok(());
        }
        for line in BufReader::new(resp).lines() {
            let line = line.map_err(|e| BackendError::Network(e.to_string()))?;
            let Some(data) = line.trim().strip_prefix("data:") else {
                continue;
            };
            let data = data.trim();
            if data == "[DONE]" {
                break;
            }
            let v: Value = serde_json::from_str(data)
                .map_err(|e| BackendError::Provider(format!("bad stream frame: {e}")))?;
            if let Some(err) = v.get("error") {
                return Err(BackendError::Provider(err.to_string()));
            }
            if let Some(text) = delta_text(&v) {
                push(sink, text)?;
            }
        }
        Ok(())
    }
}

fn push(sink: &KnowledgeSink, text: &str) -> Result<(), BackendError> {
    sink.push_text(text)
        .map_err(|e| BackendError::Provider(e.to_string()))
}

fn delta_text(frame: &Value) -> Option<&str> {
    let delta = frame.pointer("/choices/0/delta")?;
    if let Some(obj) = delta.as_object() {
        for key in obj.keys() {
            if key != "content" && key != "role" {
                tracing::debug!(key = %key, "dropping non-text delta");
            }
        }
    }
    delta.get("content").and_then(Value::as_str)
}

fn message_content(v: &Value) -> Result<String, BackendError> {
    if let Some(err) = v.get("error") {
        return Err(BackendError::Provider(err.to_string()));
    }
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Provider("response has no message content".into()))
}

impl Backend for HttpBackend {
    fn label(&self) -> &str {
        &self.label
    }

    fn start_turn(&self, history: &DialogueHistory, sink: KnowledgeSink) -> Result<(), BackendError> {
        let body = self.request_body(Some(&self.config.system_prompt), history, true);
        let this = HttpBackend::new(self.config.clone());
        std::thread::Builder::new()
            .name("backend-stream".into())
            .spawn(move || match this.stream_into(&body, &sink) {
                Ok(()) => sink.finish(),
                Err(e) => {
                    tracing::warn!(error = %e, "backend stream failed");
                    sink.fail(e)
                }
            })
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(())
    }
}

impl TextGenerator for HttpBackend {
    fn complete(&self, system_prompt: Option<&str>, history: &DialogueHistory) -> Result<String, BackendError> {
        let body = self.request_body(system_prompt, history, false);
        let resp = self.send(&body)?;
        let v: Value = resp
            .json()
            .map_err(|e| BackendError::Provider(format!("bad response body: {e}")))?;
        message_content(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpInfillConfig {
    pub url: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_infill_timeout")]
    pub timeout_seconds: f64,
}

impl HttpInfillConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: None,
            api_key_env: None,
            max_tokens: default_max_tokens(),
            timeout_seconds: default_infill_timeout(),
        }
    }
}

/// Client for a local completion server hosting the infill model.
///
/// Only the first non-empty line of the completion is kept as the phrase.
pub struct HttpInfill {
    config: HttpInfillConfig,
}

impl HttpInfill {
    pub fn new(config: HttpInfillConfig) -> Self {
        Self { config }
    }

    fn fetch(&self, context: &str) -> Result<String, InfillError> {
        let key = api_key(&self.config.api_key_env).map_err(InfillError::Network)?;
        let client = client(self.config.timeout_seconds).map_err(InfillError::Network)?;
        let mut body = json!({
            "prompt": format!("{context}{}", generation_header()),
            "max_tokens": self.config.max_tokens,
            "stop": [MSG_END],
        });
        if let Some(m) = &self.config.model {
            body["model"] = json!(m);
        }
        let mut req = client.post(&self.config.url).json(&body);
        if let Some(key) = key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| InfillError::Network(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| InfillError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(InfillError::Network(format!("HTTP {status}: {}", text.trim())));
        }
        completion_text(&text)
    }
}

/// Accepts `{"choices":[{"text":..}]}`, `{"content":..}`, `{"text":..}` or a
/// plain-text body.
fn completion_text(body: &str) -> Result<String, InfillError> {
    let raw = match serde_json::from_str::<Value>(body) {
        Ok(v @ Value::Object(_)) => ["/choices/0/text", "/content", "/text"]
            .iter()
            .find_map(|p| v.pointer(p).and_then(Value::as_str))
            .map(str::to_string)
            .ok_or_else(|| InfillError::Parse("no completion text in response".into()))?,
        Ok(Value::String(s)) => s,
        _ => body.to_string(),
    };
    let raw = raw.replace(SILENCE_TOKEN, "");
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or(InfillError::Empty)?;
    validate_phrase(line)
}

impl Infill for HttpInfill {
    fn label(&self) -> &str {
        self.config.model.as_deref().unwrap_or("http-infill")
    }

    fn generate(&self, context: &str, clock: &dyn Clock) -> Result<Generation, InfillError> {
        let started = clock.now();
        let text = self.fetch(context)?;
        Ok(Generation {
            text,
            started,
            first_output: clock.now(),
        })
    }
}
