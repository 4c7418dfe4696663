use std::path::Path;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{validate_turns, ChatClient, ChatRequest, ClientConfig, Role};
use crate::error::{Error, Result};

/// Client for OpenAI-compatible `POST {endpoint}/chat/completions` services.
pub struct HttpClient {
    config: ClientConfig,
    http: reqwest::blocking::Client,
}

enum Failure {
    Transient(String),
    Fatal(Error),
}

impl HttpClient {
    pub fn new(config: ClientConfig) -> Result<Self> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn body(&self, request: &ChatRequest) -> Result<Value> {
        validate_turns(&request.turns)?;
        let messages = request
            .turns
            .iter()
            .map(|turn| {
                let role = match turn.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                let content = match &turn.image_ref {
                    None => json!(turn.text),
                    Some(path) => json!([
                        {"type": "text", "text": turn.text},
                        {"type": "image_url", "image_url": {"url": data_uri(path)?}},
                    ]),
                };
                Ok(json!({"role": role, "content": content}))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature.max(self.config.temperature),
            "stream": false,
        }))
    }

    fn send_once(&self, body: &Value) -> std::result::Result<String, Failure> {
        let mut builder = self.http.post(self.url()).json(body);
        if let Some(var) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                builder = builder.bearer_auth(key);
            }
        }
        let response = builder
            .send()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(Failure::Transient(format!("http status {status}")));
        }
        let text = response
            .text()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        if !status.is_success() {
            return Err(Failure::Fatal(Error::Protocol(format!(
                "http status {status}: {}",
                text.chars().take(200).collect::<String>()
            ))));
        }
        extract_content(&text).map_err(Failure::Fatal)
    }
}

fn data_uri(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_lowercase).as_deref() {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        _ => "image/png",
    };
    Ok(format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

/// Pulls `choices[0].message.content` out of a response body.
pub(crate) fn extract_content(body: &str) -> Result<String> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| Error::Protocol(format!("invalid json: {e}")))?;
    match value.pointer("/choices/0/message/content") {
        Some(Value::String(text)) => Ok(text.clone()),
        Some(Value::Array(parts)) => {
            let text: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            if text.is_empty() {
                Err(Error::Protocol("response content has no text parts".into()))
            } else {
                Ok(text.concat())
            }
        }
        _ => Err(Error::Protocol("response has no text content".into())),
    }
}

impl ChatClient for HttpClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let body = self.body(request)?;
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    log::warn!("chat request attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Transport {
            attempts,
            message: last,
        })
    }

    fn model(&self) -> &str {
        &self.config.model
    }
}
