//! Built-in towers plus an out-of-process adapter for real checkpoints.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use base64::Engine;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text_negation::tokenize;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut hash = FNV_OFFSET;
    for part in parts {
        for &byte in *part {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(FNV_PRIME);
        }
        hash ^= 0xff;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn uniform_init(len: usize, scale: f64, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Hashed unigram+bigram bag-of-features text encoder.
///
/// A caption maps to feature buckets (unigrams, and bigrams when enabled);
/// the embedding is the mean of those buckets' rows in `table`. Bigrams let
/// the tower tell `no hat` apart from `hat`, which unigrams alone blur.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedTextTower {
    pub buckets: usize,
    pub dim: usize,
    pub bigrams: bool,
    /// Row-major `buckets × dim`.
    pub table: Vec<f64>,
}

impl HashedTextTower {
    pub fn init(buckets: usize, dim: usize, bigrams: bool, seed: u64) -> Self {
        Self {
            buckets,
            dim,
            bigrams,
            table: uniform_init(buckets * dim, 1.0 / (dim as f64).sqrt(), seed, 1),
        }
    }

    /// Bucket ids for `text`, with multiplicity. Never empty.
    pub fn features(&self, text: &str) -> Vec<usize> {
        let tokens = tokenize(text);
        let bucket = |h: u64| (h % self.buckets as u64) as usize;
        let mut out: Vec<usize> = tokens
            .iter()
            .map(|t| bucket(fnv1a(&[b"u", t.as_bytes()])))
            .collect();
        if self.bigrams {
            out.extend(
                tokens
                    .windows(2)
                    .map(|w| bucket(fnv1a(&[b"b", w[0].as_bytes(), w[1].as_bytes()]))),
            );
        }
        if out.is_empty() {
            out.push(bucket(fnv1a(&[b"empty"])));
        }
        out
    }

    /// Un-normalized mean of feature rows.
    pub fn pooled(&self, features: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &f in features {
            let row = &self.table[f * self.dim..(f + 1) * self.dim];
            for (acc, x) in v.iter_mut().zip(row) {
                *acc += x;
            }
        }
        let n = features.len() as f64;
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.pooled(&self.features(text))
    }
}

/// Linear projection over the preprocessed pixel tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImageTower {
    pub input: usize,
    pub dim: usize,
    /// Row-major `dim × input`.
    pub weights: Vec<f64>,
}

impl LinearImageTower {
    pub fn init(input: usize, dim: usize, seed: u64) -> Self {
        Self {
            input,
            dim,
            weights: uniform_init(dim * input, 1.0 / (input as f64).sqrt(), seed, 2),
        }
    }

    pub fn encode(&self, tensor: &[f64]) -> Result<Vec<f64>> {
        if tensor.len() != self.input {
            return Err(Error::ShapeMismatch(format!(
                "image tower expects {} inputs, got {}",
                self.input,
                tensor.len()
            )));
        }
        Ok(self
            .weights
            .chunks_exact(self.input)
            .map(|row| row.iter().zip(tensor).map(|(w, x)| w * x).sum())
            .collect())
    }
}

/// Launch description for an out-of-process tower.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    pub dim: usize,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Long-lived child process speaking one JSON request/response per line.
///
/// Request: `{"modality": "text"|"image", "inputs": [...]}` where image
/// inputs are base64 PNG crops. Response: `{"embeddings": [[f64; dim], ...]}`
/// or `{"error": "..."}`.
pub struct ProcessTower {
    pub spec: ProcessSpec,
    running: Mutex<Option<Running>>,
}

impl std::fmt::Debug for ProcessTower {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessTower").field("spec", &self.spec).finish()
    }
}

impl Clone for ProcessTower {
    fn clone(&self) -> Self {
        Self::new(self.spec.clone())
    }
}

impl PartialEq for ProcessTower {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

#[derive(Deserialize)]
struct ProcessReply {
    #[serde(default)]
    embeddings: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    error: Option<String>,
}

impl ProcessTower {
    pub fn new(spec: ProcessSpec) -> Self {
        Self {
            spec,
            running: Mutex::new(None),
        }
    }

    fn spawn(&self) -> Result<Running> {
        let mut child = Command::new(&self.spec.program)
            .args(&self.spec.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Adapter(format!("spawn `{}`: {e}", self.spec.program)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Running {
            child,
            stdin,
            stdout,
        })
    }

    fn call(&self, modality: &str, inputs: Vec<String>) -> Result<Vec<Vec<f64>>> {
        let n = inputs.len();
        let mut guard = self.running.lock().expect("process tower lock poisoned");
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let running = guard.as_mut().expect("spawned above");
        let request = serde_json::json!({"modality": modality, "inputs": inputs});
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        let io = |e: std::io::Error| Error::Adapter(format!("tower process i/o: {e}"));
        running.stdin.write_all(line.as_bytes()).map_err(io)?;
        running.stdin.flush().map_err(io)?;
        let mut reply = String::new();
        if running.stdout.read_line(&mut reply).map_err(io)? == 0 {
            *guard = None;
            return Err(Error::Adapter("tower process closed its output".into()));
        }
        let reply: ProcessReply = serde_json::from_str(&reply)
            .map_err(|e| Error::Adapter(format!("tower reply is not valid json: {e}")))?;
        if let Some(err) = reply.error {
            return Err(Error::Adapter(err));
        }
        let embeddings = reply
            .embeddings
            .ok_or_else(|| Error::Adapter("tower reply has no embeddings".into()))?;
        if embeddings.len() != n || embeddings.iter().any(|e| e.len() != self.spec.dim) {
            return Err(Error::Adapter(format!(
                "tower returned {} embeddings, expected {n} of dim {}",
                embeddings.len(),
                self.spec.dim
            )));
        }
        Ok(embeddings)
    }

    pub fn encode_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        self.call("text", texts.to_vec())
    }

    pub fn encode_images(&self, images: &[RgbImage]) -> Result<Vec<Vec<f64>>> {
        let inputs = images
            .iter()
            .map(|img| {
                let mut png = Vec::new();
                img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
                    .map_err(|e| Error::Adapter(format!("png encode: {e}")))?;
                Ok(base64::engine::general_purpose::STANDARD.encode(png))
            })
            .collect::<Result<Vec<_>>>()?;
        self.call("image", inputs)
    }
}

impl Drop for ProcessTower {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.running.lock() {
            if let Some(mut running) = guard.take() {
                drop(running.stdin);
                let _ = running.child.wait();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_are_deterministic_and_bounded() {
        let tower = HashedTextTower::init(64, 4, true, 0);
        let f = tower.features("a dog not running");
        assert_eq!(f.len(), 4 + 3);
        assert!(f.iter().all(|&b| b < 64));
        assert_eq!(f, tower.features("A dog, not running!"));
        assert_eq!(tower.features("").len(), 1);
    }

    #[test]
    fn bigrams_separate_word_order() {
        let tower = HashedTextTower::init(4096, 8, true, 0);
        assert_ne!(tower.encode("not a red hat"), tower.encode("a red not hat"));
        let unigram = HashedTextTower::init(4096, 8, false, 0);
        assert_eq!(unigram.encode("not a red hat"), unigram.encode("a red not hat"));
    }

    #[test]
    fn linear_tower_shape_check() {
        let tower = LinearImageTower::init(6, 2, 0);
        assert_eq!(tower.encode(&[0.0; 6]).unwrap(), vec![0.0, 0.0]);
        assert!(tower.encode(&[0.0; 5]).is_err());
    }

    fn python() -> Option<&'static str> {
        Command::new("python3")
            .arg("--version")
            .output()
            .ok()
            .filter(|o| o.status.success())
            .map(|_| "python3")
    }

    const ECHO_TOWER: &str = r#"
import sys, json
for line in sys.stdin:
    req = json.loads(line)
    out = [[float(len(x)), 1.0 if req["modality"] == "text" else -1.0] for x in req["inputs"]]
    print(json.dumps({"embeddings": out}), flush=True)
"#;

    #[test]
    fn process_tower_round_trip() {
        let Some(py) = python() else {
            eprintln!("python3 unavailable; skipping");
            return;
        };
        let tower = ProcessTower::new(ProcessSpec {
            program: py.into(),
            args: vec!["-c".into(), ECHO_TOWER.into()],
            dim: 2,
        });
        let out = tower.encode_texts(&["ab".into(), "abcd".into()]).unwrap();
        assert_eq!(out, vec![vec![2.0, 1.0], vec![4.0, 1.0]]);
        let img = RgbImage::from_pixel(3, 3, image::Rgb([1, 2, 3]));
        let out = tower.encode_images(&[img]).unwrap();
        assert_eq!(out[0][1], -1.0);
        // Second call reuses the same process.
        assert_eq!(tower.encode_texts(&["x".into()]).unwrap()[0][0], 1.0);
    }

    #[test]
    fn process_tower_dimension_guard() {
        let Some(py) = python() else { return };
        let tower = ProcessTower::new(ProcessSpec {
            program: py.into(),
            args: vec!["-c".into(), ECHO_TOWER.into()],
            dim: 3,
        });
        assert!(matches!(tower.encode_texts(&["x".into()]), Err(Error::Adapter(_))));
    }

    #[test]
    fn missing_program_is_adapter_error() {
        let tower = ProcessTower::new(ProcessSpec {
            program: "/nonexistent/tower".into(),
            args: vec![],
            dim: 2,
        });
        assert_eq!(tower.encode_texts(&["x".into()]).unwrap_err().class(), "adapter");
    }
}
