//! Process-spawn adapters for image generation, detection and segmentation.
//!
//! Each call runs the configured program once, writes one JSON request to its
//! stdin and reads one JSON object from its stdout:
//!
//! | task       | request fields          | reply fields        |
//! |------------|-------------------------|---------------------|
//! | `generate` | `prompt`, `seed`        | `image` (file path) |
//! | `detect`   | `image`, `object`       | `detected` (bool)   |
//! | `segment`  | `image`, `text`         | `heatmap` (file path) |
//!
//! A reply of `{"error": "..."}` or a non-zero exit status is a failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub trait ImageGenerator: Send + Sync {
    fn generate(&self, prompt: &str, seed: u64) -> Result<PathBuf>;
}

pub trait ObjectDetector: Send + Sync {
    fn detect(&self, image: &Path, object: &str) -> Result<bool>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &Path, text: &str) -> Result<PathBuf>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandAdapter {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl CommandAdapter {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    fn call(&self, request: Value) -> Result<Value> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Adapter(format!("spawn `{}`: {e}", self.program)))?;
        let io = |e: std::io::Error| Error::Adapter(format!("adapter i/o: {e}"));
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin.write_all(request.to_string().as_bytes()).map_err(io)?;
            stdin.write_all(b"\n").map_err(io)?;
        }
        let output = child.wait_with_output().map_err(io)?;
        if !output.status.success() {
            return Err(Error::Adapter(format!(
                "`{}` exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let reply: Value = serde_json::from_slice(&output.stdout)
            .map_err(|e| Error::Adapter(format!("adapter reply is not valid json: {e}")))?;
        if let Some(err) = reply.get("error") {
            return Err(Error::Adapter(err.as_str().unwrap_or("unspecified").to_string()));
        }
        Ok(reply)
    }

    fn path_field(reply: &Value, field: &str) -> Result<PathBuf> {
        reply
            .get(field)
            .and_then(Value::as_str)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Adapter(format!("adapter reply lacks string field `{field}`")))
    }
}

impl ImageGenerator for CommandAdapter {
    fn generate(&self, prompt: &str, seed: u64) -> Result<PathBuf> {
        let reply = self.call(json!({"task": "generate", "prompt": prompt, "seed": seed}))?;
        Self::path_field(&reply, "image")
    }
}

impl ObjectDetector for CommandAdapter {
    fn detect(&self, image: &Path, object: &str) -> Result<bool> {
        let reply = self.call(json!({"task": "detect", "image": image, "object": object}))?;
        reply
            .get("detected")
            .and_then(Value::as_bool)
            .ok_or_else(|| Error::Adapter("adapter reply lacks bool field `detected`".into()))
    }
}

impl Segmenter for CommandAdapter {
    fn segment(&self, image: &Path, text: &str) -> Result<PathBuf> {
        let reply = self.call(json!({"task": "segment", "image": image, "text": text}))?;
        Self::path_field(&reply, "heatmap")
    }
}
