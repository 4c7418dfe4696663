//! Chat-model clients: prompt templates, request digests, response parsing,
//! an on-disk response cache, an HTTP client and a deterministic stub.

mod cache;
mod http;
mod parse;
mod stub;
pub mod templates;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::digest::{file_sha256, sha256_hex};
use crate::error::{Error, Result};

pub use cache::CachedClient;
pub use http::HttpClient;
pub use parse::{parse_object, parse_yes_no, YesNo};
pub use stub::{StubClient, StubRule};
pub use templates::{ExpectedForm, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<PathBuf>,
}

impl ChatTurn {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
            image_ref: None,
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            image_ref: None,
        }
    }

    pub fn with_image(mut self, path: impl Into<PathBuf>) -> Self {
        self.image_ref = Some(path.into());
        self
    }
}

/// Checks the turn-order invariants: at most one system turn, and only first;
/// images only on user turns.
pub fn validate_turns(turns: &[ChatTurn]) -> Result<()> {
    if turns.is_empty() {
        return Err(Error::ChatTurns("no turns".into()));
    }
    for (i, turn) in turns.iter().enumerate() {
        if turn.role == Role::System && i != 0 {
            return Err(Error::ChatTurns(format!("system turn at position {i}")));
        }
        if turn.image_ref.is_some() && turn.role != Role::User {
            return Err(Error::ChatTurns(format!(
                "image attached to non-user turn at position {i}"
            )));
        }
    }
    Ok(())
}

/// A fully rendered request.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub turns: Vec<ChatTurn>,
    pub temperature: f64,
    /// Re-query counter. Attempt 0 is the plain request; later attempts get
    /// their own cache entry so a re-query is a genuinely new call.
    pub attempt: u32,
}

#[derive(Serialize)]
struct DigestTurn<'a> {
    role: Role,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_sha256: Option<String>,
}

#[derive(Serialize)]
struct DigestBody<'a> {
    model: &'a str,
    turns: Vec<DigestTurn<'a>>,
    #[serde(skip_serializing_if = "is_zero")]
    attempt: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, turns: Vec<ChatTurn>) -> Self {
        Self {
            model: model.into(),
            turns,
            temperature: 0.0,
            attempt: 0,
        }
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    /// Content digest over (model, turns, image bytes, attempt).
    pub fn digest(&self) -> Result<String> {
        let turns = self
            .turns
            .iter()
            .map(|t| {
                Ok(DigestTurn {
                    role: t.role,
                    text: &t.text,
                    image_sha256: t.image_ref.as_deref().map(file_sha256).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let body = DigestBody {
            model: &self.model,
            turns,
            attempt: self.attempt,
        };
        let bytes = serde_json::to_vec(&body).expect("digest body serializes");
        Ok(sha256_hex(&bytes))
    }

    pub fn last_user_text(&self) -> &str {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
            .unwrap_or("")
    }

    pub fn image(&self) -> Option<&Path> {
        self.turns.iter().rev().find_map(|t| t.image_ref.as_deref())
    }
}

/// Anything that can answer a chat request with raw text.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;

    /// Model name stamped into requests built for this client.
    fn model(&self) -> &str;
}

impl<C: ChatClient + ?Sized> ChatClient for Arc<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        (**self).complete(request)
    }

    fn model(&self) -> &str {
        (**self).model()
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        (**self).complete(request)
    }

    fn model(&self) -> &str {
        (**self).model()
    }
}

/// Connection settings for an HTTP chat endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    /// Base URL of an OpenAI-compatible chat-completions service.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub cache_dir: Option<PathBuf>,
    pub timeout_ms: u64,
    pub backoff_ms: u64,
    /// Environment variable holding a bearer token, if any.
    pub api_key_env: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            temperature: 0.0,
            max_retries: 3,
            cache_dir: None,
            timeout_ms: 60_000,
            backoff_ms: 250,
            api_key_env: None,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Renders a template and sends it, returning the raw reply.
pub fn ask<C: ChatClient + ?Sized>(
    client: &C,
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
    attempt: u32,
) -> Result<String> {
    let turns = template.render(bindings)?;
    let request = ChatRequest::new(client.model(), turns).with_attempt(attempt);
    client.complete(&request)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn turn_validation() {
        assert!(validate_turns(&[ChatTurn::system("s"), ChatTurn::user("u")]).is_ok());
        assert!(validate_turns(&[ChatTurn::user("u"), ChatTurn::system("s")]).is_err());
        let bad = ChatTurn {
            role: Role::Assistant,
            text: "x".into(),
            image_ref: Some("a.png".into()),
        };
        assert!(validate_turns(&[bad]).is_err());
        assert!(validate_turns(&[]).is_err());
    }

    #[test]
    fn digest_depends_on_attempt_and_text() {
        let a = ChatRequest::new("m", vec![ChatTurn::user("hi")]);
        let b = a.clone().with_attempt(1);
        let c = ChatRequest::new("m", vec![ChatTurn::user("hi!")]);
        let d = ChatRequest::new("m2", vec![ChatTurn::user("hi")]);
        let da = a.digest().unwrap();
        assert_eq!(da, a.digest().unwrap());
        assert_ne!(da, b.digest().unwrap());
        assert_ne!(da, c.digest().unwrap());
        assert_ne!(da, d.digest().unwrap());
    }

    #[test]
    fn digest_tracks_image_bytes_not_path() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        std::fs::write(&p1, b"same").unwrap();
        std::fs::write(&p2, b"same").unwrap();
        let r1 = ChatRequest::new("m", vec![ChatTurn::user("q").with_image(&p1)]);
        let r2 = ChatRequest::new("m", vec![ChatTurn::user("q").with_image(&p2)]);
        assert_eq!(r1.digest().unwrap(), r2.digest().unwrap());
        std::fs::write(&p2, b"different").unwrap();
        assert_ne!(r1.digest().unwrap(), r2.digest().unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(ClientConfig::default().validate().is_ok());
        let cfg = ClientConfig {
            temperature: -0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
