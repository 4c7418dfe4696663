//! On-disk checkpoints: `manifest.json` plus a little-endian f64 payload.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    EncoderBundle, HashedTextTower, ImageTower, LinearImageTower, PreprocessSpec, ProcessSpec,
    ProcessTower, TextTower,
};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::jsonl::{read_json, write_atomic, write_json};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "weights.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Full,
    TextTowerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TowerEntry {
    Hashed { buckets: usize, bigrams: bool },
    Linear { input: usize },
    Process(ProcessSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tensor {
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    architecture: String,
    component: Component,
    dim: usize,
    logit_scale: f64,
    preprocess: PreprocessSpec,
    text_tower: TowerEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_tower: Option<TowerEntry>,
    tensors: Vec<Tensor>,
    payload_sha256: String,
}

/// What a checkpoint directory holds, read from its manifest alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointRef {
    pub source: PathBuf,
    pub architecture: String,
    pub component: Component,
    pub format_version: u32,
}

impl CheckpointRef {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        Ok(Self {
            source: dir.to_path_buf(),
            architecture: manifest.architecture,
            component: manifest.component,
            format_version: manifest.format_version,
        })
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::BundleNotFound(dir.display().to_string()));
    }
    let manifest: Manifest = read_json(&path)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

fn text_entry(tower: &TextTower, tensors: &mut Vec<(String, Vec<f64>)>) -> TowerEntry {
    match tower {
        TextTower::Hashed(t) => {
            tensors.push(("text.table".into(), t.table.clone()));
            TowerEntry::Hashed {
                buckets: t.buckets,
                bigrams: t.bigrams,
            }
        }
        TextTower::Process(p) => TowerEntry::Process(p.spec.clone()),
    }
}

fn image_entry(tower: &ImageTower, tensors: &mut Vec<(String, Vec<f64>)>) -> TowerEntry {
    match tower {
        ImageTower::Linear(t) => {
            tensors.push(("image.weights".into(), t.weights.clone()));
            TowerEntry::Linear { input: t.input }
        }
        ImageTower::Process(p) => TowerEntry::Process(p.spec.clone()),
    }
}

pub(super) fn save(bundle: &EncoderBundle, dir: &Path, component: Component) -> Result<()> {
    let mut named = Vec::new();
    let text_tower = text_entry(&bundle.text, &mut named);
    let image_tower = match component {
        Component::Full => Some(image_entry(&bundle.image, &mut named)),
        Component::TextTowerOnly => None,
    };
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, values) in named {
        tensors.push(Tensor {
            name,
            offset: payload.len() / 8,
            len: values.len(),
        });
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        architecture: bundle.architecture.clone(),
        component,
        dim: bundle.dim(),
        logit_scale: bundle.logit_scale,
        preprocess: bundle.preprocess.clone(),
        text_tower,
        image_tower,
        tensors,
        payload_sha256: sha256_hex(&payload),
    };
    write_atomic(&dir.join(PAYLOAD_FILE), |w| w.write_all(&payload))?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

struct Loaded {
    manifest: Manifest,
    payload: Vec<f64>,
}

impl Loaded {
    fn read(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let path = dir.join(PAYLOAD_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != manifest.payload_sha256 {
            return Err(Error::Checkpoint(format!("{} does not match its manifest digest", path.display())));
        }
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint("payload length is not a multiple of 8".into()));
        }
        let payload = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { manifest, payload })
    }

    fn tensor(&self, name: &str, expected: usize) -> Result<Vec<f64>> {
        let t = self
            .manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.len != expected || t.offset + t.len > self.payload.len() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has {} values at offset {}, expected {expected}",
                t.len, t.offset
            )));
        }
        Ok(self.payload[t.offset..t.offset + t.len].to_vec())
    }

    fn text_tower(&self) -> Result<TextTower> {
        let dim = self.manifest.dim;
        Ok(match &self.manifest.text_tower {
            TowerEntry::Hashed { buckets, bigrams } => TextTower::Hashed(HashedTextTower {
                buckets: *buckets,
                dim,
                bigrams: *bigrams,
                table: self.tensor("text.table", buckets * dim)?,
            }),
            TowerEntry::Process(spec) => TextTower::Process(ProcessTower::new(spec.clone())),
            TowerEntry::Linear { .. } => {
                return Err(Error::Checkpoint("text tower cannot be linear".into()))
            }
        })
    }

    fn image_tower(&self) -> Result<ImageTower> {
        let dim = self.manifest.dim;
        Ok(match &self.manifest.image_tower {
            Some(TowerEntry::Linear { input }) => ImageTower::Linear(LinearImageTower {
                input: *input,
                dim,
                weights: self.tensor("image.weights", input * dim)?,
            }),
            Some(TowerEntry::Process(spec)) => ImageTower::Process(ProcessTower::new(spec.clone())),
            Some(TowerEntry::Hashed { .. }) => {
                return Err(Error::Checkpoint("image tower cannot be hashed".into()))
            }
            None => return Err(Error::Checkpoint("checkpoint has no image tower".into())),
        })
    }
}

pub(super) fn load_full(dir: &Path) -> Result<EncoderBundle> {
    let loaded = Loaded::read(dir)?;
    if loaded.manifest.component != Component::Full {
        return Err(Error::Checkpoint(format!(
            "{} holds a text tower only; load a full bundle and swap it in",
            dir.display()
        )));
    }
    EncoderBundle::new(
        loaded.manifest.architecture.clone(),
        loaded.text_tower()?,
        loaded.image_tower()?,
        loaded.manifest.preprocess.clone(),
        loaded.manifest.logit_scale,
    )
}

/// Reads the text tower of any checkpoint, returning its architecture tag.
pub(super) fn load_text_tower(dir: &Path) -> Result<(String, TextTower)> {
    let loaded = Loaded::read(dir)?;
    let tower = loaded.text_tower()?;
    Ok((loaded.manifest.architecture, tower))
}
