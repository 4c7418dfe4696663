use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::digest::file_sha256;
use crate::error::Result;
use crate::jsonl::write_json;

/// Record of one CLI run: what went in, what came out, and how it was configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix_ms: u128,
    pub wall_clock_ms: u128,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

/// Files under `path` (itself if a file), sorted.
fn files(path: &Path) -> Vec<PathBuf> {
    if path.is_dir() {
        let mut out: Vec<PathBuf> = std::fs::read_dir(path)
            .into_iter()
            .flatten()
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        out.sort();
        out
    } else {
        vec![path.to_path_buf()]
    }
}

fn digest_into(map: &mut BTreeMap<String, String>, path: &Path) -> Result<()> {
    for f in files(path) {
        map.insert(f.display().to_string(), file_sha256(&f)?);
    }
    Ok(())
}

impl ManifestBuilder {
    pub fn start(subcommand: &str) -> Self {
        let started_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        Self {
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                started_unix_ms,
                wall_clock_ms: 0,
            },
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, config: serde_json::Value) -> &mut Self {
        self.manifest.config = config;
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        digest_into(&mut self.manifest.inputs, path)?;
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        digest_into(&mut self.manifest.outputs, path)?;
        Ok(self)
    }

    /// Writes the manifest next to `primary` and returns its path.
    pub fn finish(mut self, primary: &Path) -> Result<PathBuf> {
        self.manifest.wall_clock_ms = self.started.elapsed().as_millis();
        let path = manifest_path(primary);
        write_json(&path, &self.manifest)?;
        Ok(path)
    }
}

/// `<dir>/run_manifest.json` for directory outputs, `<file>.manifest.json` otherwise.
pub fn manifest_path(primary: &Path) -> PathBuf {
    if primary.is_dir() {
        return primary.join("run_manifest.json");
    }
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

impl RunManifest {
    /// Paths whose current digest differs from the recorded one.
    pub fn stale_outputs(&self) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|(p, d)| file_sha256(Path::new(p)).ok().as_deref() != Some(d.as_str()))
            .map(|(p, _)| p.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_and_rechecks_digests() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.txt");
        std::fs::write(&out, "hello").unwrap();
        let mut b = ManifestBuilder::start("demo");
        b.output(&out).unwrap();
        let path = b.finish(&out).unwrap();
        assert_eq!(path, dir.path().join("out.txt.manifest.json"));
        let m: RunManifest = crate::jsonl::read_json(&path).unwrap();
        assert_eq!(
            m.outputs[&out.display().to_string()],
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(m.stale_outputs().is_empty());
        std::fs::write(&out, "changed").unwrap();
        assert_eq!(m.stale_outputs().len(), 1);
    }
}
