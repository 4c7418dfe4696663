//! TOML configuration file with one section per subcommand.
//!
//! Every field is optional; command-line flags override the file, and the
//! file overrides built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::eval::CommandAdapter;
use crate::model_clients::ClientConfig;
use crate::text_negation::{CorpusFormat, NegationLexicon};
use crate::error::{Error, Result};

/// Environment variable naming the chat-response cache root.
pub const CACHE_ENV: &str = "NEGCLIP_CACHE_DIR";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub cache: CacheSection,
    pub stats: StatsSection,
    pub generate: GenerateSection,
    pub build_benchmark: BuildSection,
    pub finetune: FinetuneSection,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub format: Option<CorpusFormat>,
    pub lexicon: Option<NegationLexicon>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub seed: Option<u64>,
    pub max_items: Option<usize>,
    pub width: Option<usize>,
    pub image_root: Option<PathBuf>,
    pub stub_map: Option<PathBuf>,
    pub lexicon: Option<NegationLexicon>,
    pub vocabulary: Option<Vec<String>>,
    pub llm: Option<ClientConfig>,
    pub mllm: Option<ClientConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub min_dim: Option<u32>,
    pub lexicon: Option<NegationLexicon>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub sources: Option<Vec<String>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub train_fraction: Option<f64>,
    pub logit_scale_trainable: Option<bool>,
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub seeds: Option<Vec<u64>>,
    pub threshold: Option<f64>,
    pub k: Option<usize>,
    pub image_root: Option<PathBuf>,
    pub stub_map: Option<PathBuf>,
    pub adapter: Option<CommandAdapter>,
    pub mllm: Option<ClientConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Flag value, then environment, then file.
    pub fn cache_dir(&self, flag: Option<&Path>) -> Option<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
            .or_else(|| self.cache.dir.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let text = r#"
            [cache]
            dir = "/tmp/cache"

            [stats]
            format = "tsv"
            lexicon = ["no", "never"]

            [generate]
            seed = 4
            [generate.llm]
            endpoint = "http://localhost:1/v1"
            model = "llm"

            [finetune]
            sources = ["p1", "rand-p1"]
            epochs = 2

            [evaluate]
            seeds = [1, 2]
            adapter = { program = "python3", args = ["adapter.py"] }
        "#;
        let c: FileConfig = toml::from_str(text).unwrap();
        assert_eq!(c.stats.format, Some(CorpusFormat::Tsv));
        assert!(c.stats.lexicon.unwrap().contains("never"));
        assert_eq!(c.generate.llm.unwrap().model, "llm");
        assert_eq!(c.finetune.epochs, Some(2));
        assert_eq!(c.evaluate.adapter.unwrap().args, vec!["adapter.py"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[stats]\nformats = \"tsv\"").is_err());
    }
}
