use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatClient, ChatRequest};
use crate::error::{Error, Result};

/// One canned response rule. All present matchers must hold.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StubRule {
    /// Exact request digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    /// Substring of the last user turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// Regex over the last user turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    /// Substring of the attached image path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    /// Replies indexed by request attempt; the last one repeats.
    pub replies: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StubFile {
    #[serde(default)]
    rules: Vec<StubRule>,
    #[serde(default)]
    default: Option<String>,
}

#[derive(Debug)]
struct CompiledRule {
    rule: StubRule,
    regex: Option<Regex>,
}

/// Deterministic in-process client: the reply is a pure function of the request.
#[derive(Debug)]
pub struct StubClient {
    model: String,
    rules: Vec<CompiledRule>,
    default: Option<String>,
}

impl StubClient {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            rules: Vec::new(),
            default: None,
        }
    }

    pub fn with_rule(mut self, rule: StubRule) -> Result<Self> {
        let regex = rule
            .regex
            .as_deref()
            .map(Regex::new)
            .transpose()
            .map_err(|e| Error::Config(format!("stub regex: {e}")))?;
        if rule.replies.is_empty() {
            return Err(Error::Config("stub rule without replies".into()));
        }
        self.rules.push(CompiledRule { rule, regex });
        Ok(self)
    }

    /// Shorthand: reply `replies` whenever the user turn contains `needle`.
    pub fn on(self, needle: &str, replies: &[&str]) -> Self {
        self.with_rule(StubRule {
            contains: Some(needle.to_owned()),
            replies: replies.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        })
        .expect("literal rule is valid")
    }

    pub fn with_default(mut self, reply: impl Into<String>) -> Self {
        self.default = Some(reply.into());
        self
    }

    /// Loads a stub map. Accepted layouts:
    ///
    /// * `{"rules": [...], "default": "..."}`
    /// * a flat object mapping a 64-hex request digest, or otherwise a user
    ///   turn substring, to a reply string.
    pub fn from_json(model: impl Into<String>, text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::parse("stub map", e))?;
        let mut client = Self::new(model);
        let is_rules = value
            .as_object()
            .is_some_and(|o| o.contains_key("rules") || o.contains_key("default"));
        if is_rules {
            let file: StubFile =
                serde_json::from_value(value).map_err(|e| Error::parse("stub map", e))?;
            for rule in file.rules {
                client = client.with_rule(rule)?;
            }
            client.default = file.default;
        } else {
            let map = value
                .as_object()
                .ok_or_else(|| Error::parse("stub map", "expected a JSON object"))?;
            for (key, reply) in map {
                let reply = reply
                    .as_str()
                    .ok_or_else(|| Error::parse("stub map", format!("reply for `{key}` is not a string")))?;
                let is_digest = key.len() == 64 && key.bytes().all(|b| b.is_ascii_hexdigit());
                let rule = if is_digest {
                    StubRule {
                        digest: Some(key.to_lowercase()),
                        replies: vec![reply.to_owned()],
                        ..Default::default()
                    }
                } else {
                    StubRule {
                        contains: Some(key.clone()),
                        replies: vec![reply.to_owned()],
                        ..Default::default()
                    }
                };
                client = client.with_rule(rule)?;
            }
        }
        Ok(client)
    }

    pub fn from_file(model: impl Into<String>, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(model, &text)
    }
}

impl ChatClient for StubClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let user = request.last_user_text();
        let image = request
            .image()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut digest: Option<String> = None;
        for compiled in &self.rules {
            let rule = &compiled.rule;
            if let Some(needle) = &rule.contains {
                if !user.contains(needle.as_str()) {
                    continue;
                }
            }
            if let Some(re) = &compiled.regex {
                if !re.is_match(user) {
                    continue;
                }
            }
            if let Some(needle) = &rule.image {
                if !image.contains(needle.as_str()) {
                    continue;
                }
            }
            if let Some(want) = &rule.digest {
                if digest.is_none() {
                    digest = Some(request.digest()?);
                }
                if digest.as_deref() != Some(want.as_str()) {
                    continue;
                }
            }
            let idx = (request.attempt as usize).min(rule.replies.len() - 1);
            return Ok(rule.replies[idx].clone());
        }
        match &self.default {
            Some(reply) => Ok(reply.clone()),
            None => Err(Error::StubMiss {
                digest: match digest {
                    Some(d) => d,
                    None => request.digest()?,
                },
            }),
        }
    }

    fn model(&self) -> &str {
        &self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_clients::ChatTurn;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("stub", vec![ChatTurn::system("s"), ChatTurn::user(text)])
    }

    #[test]
    fn canned_mapping() {
        let stub = StubClient::new("stub").on("horse", &["saddle"]);
        assert_eq!(stub.complete(&req("a man riding a horse")).unwrap(), "saddle");
        assert!(matches!(
            stub.complete(&req("a cat")).unwrap_err(),
            Error::StubMiss { .. }
        ));
    }

    #[test]
    fn replies_follow_attempts() {
        let stub = StubClient::new("stub").on("x", &["first", "second"]);
        assert_eq!(stub.complete(&req("x")).unwrap(), "first");
        assert_eq!(stub.complete(&req("x").with_attempt(1)).unwrap(), "second");
        assert_eq!(stub.complete(&req("x").with_attempt(7)).unwrap(), "second");
    }

    #[test]
    fn flat_map_by_digest_and_pattern() {
        let r = req("exact question");
        let digest = r.digest().unwrap();
        let json = format!(r#"{{"{digest}": "by digest", "other": "by pattern"}}"#);
        let stub = StubClient::from_json("stub", &json).unwrap();
        assert_eq!(stub.complete(&r).unwrap(), "by digest");
        assert_eq!(stub.complete(&req("some other text")).unwrap(), "by pattern");
    }

    #[test]
    fn rules_layout_with_image_and_default() {
        let json = r#"{
            "rules": [
                {"contains": "Is there", "image": "img_3", "replies": ["Yes."]},
                {"regex": "^Is there \\w+", "replies": ["No."]}
            ],
            "default": "fallback"
        }"#;
        let stub = StubClient::from_json("stub", json).unwrap();
        let with_img = |p: &str| {
            ChatRequest::new("stub", vec![ChatTurn::user("Is there cup in this image?").with_image(p)])
        };
        assert_eq!(stub.complete(&with_img("data/img_3.png")).unwrap(), "Yes.");
        assert_eq!(stub.complete(&with_img("data/img_4.png")).unwrap(), "No.");
        assert_eq!(stub.complete(&req("unrelated")).unwrap(), "fallback");
    }

    #[test]
    fn invalid_rules_rejected() {
        assert!(StubClient::from_json("s", r#"{"rules":[{"regex":"(","replies":["x"]}]}"#).is_err());
        assert!(StubClient::from_json("s", r#"{"rules":[{"contains":"a","replies":[]}]}"#).is_err());
        assert!(StubClient::from_json("s", r#"["not", "an", "object"]"#).is_err());
    }
}
