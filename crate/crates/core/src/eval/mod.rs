//! Scoring protocols and their shared report type.

pub mod adapters;
pub mod assets;
mod generative;
mod protocols;
mod segmentation;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{read_json, write_json};

pub use adapters::{CommandAdapter, ImageGenerator, ObjectDetector, Segmenter};
pub use assets::{celeba_prompts, neg_score_prompts, AttributePromptPair, NegPrompt};
pub use generative::{absence_check, absence_prompt, neg_score, neg_score_item, NegScoreOutcome};
pub use protocols::{
    balanced_accuracy_attributes, recall_at_k, score_existence, score_negrefcocog,
    zero_shot_classify, AttributeItem, ClassifyItem, ExistenceItem, PoolImage, RecallQuery, Truth,
    ZERO_SHOT_TEMPLATE,
};
pub use segmentation::{
    load_heatmap, load_mask, segmentation_metrics, segmentation_protocol, Grid, SegmentationItem,
    SegmentationPair, SegmentationScore,
};

/// Allowed gap between a stored aggregate and its recomputation.
const AGGREGATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
    #[serde(default)]
    pub detail: serde_json::Value,
}

impl ItemResult {
    pub fn new(id: impl Into<String>, score: f64, detail: serde_json::Value) -> Self {
        Self {
            id: id.into(),
            score,
            flagged: false,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub id: String,
    pub reason: String,
}

/// Per-item results plus an aggregate that must equal `mean(score) × scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub protocol: String,
    pub aggregate: f64,
    pub scale: f64,
    pub items: Vec<ItemResult>,
    #[serde(default)]
    pub excluded: Vec<Excluded>,
    #[serde(default)]
    pub config: BTreeMap<String, serde_json::Value>,
    /// Secondary metrics that are not item means.
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

/// Mean of item scores times `scale`; 0 for no items.
pub fn aggregate(items: &[ItemResult], scale: f64) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().map(|i| i.score).sum::<f64>() / items.len() as f64 * scale
}

impl BenchmarkReport {
    /// Sorts items and exclusions by id, then computes the aggregate.
    pub fn new(protocol: impl Into<String>, mut items: Vec<ItemResult>, scale: f64, mut excluded: Vec<Excluded>) -> Self {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        excluded.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            protocol: protocol.into(),
            aggregate: aggregate(&items, scale),
            scale,
            items,
            excluded,
            config: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, key: &str, value: impl Serialize) -> Self {
        self.config
            .insert(key.to_string(), serde_json::to_value(value).expect("config value serializes"));
        self
    }

    pub fn flagged(&self) -> usize {
        self.items.iter().filter(|i| i.flagged).count()
    }

    pub fn verify(&self) -> Result<()> {
        let recomputed = aggregate(&self.items, self.scale);
        if (recomputed - self.aggregate).abs() > AGGREGATE_TOLERANCE * self.scale.max(1.0) {
            return Err(Error::ReportMismatch {
                stored: self.aggregate,
                recomputed,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Reads a report and rejects it if the aggregate does not recompute.
    pub fn load(path: &Path) -> Result<Self> {
        let report: Self = read_json(path)?;
        report.verify()?;
        Ok(report)
    }
}

/// Two-way comparison rule: the first side wins only if strictly greater.
pub fn wins(first: f64, second: f64) -> bool {
    first > second
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// `(TPR + TNR) / 2`, or `None` when either class is absent.
pub fn balanced_accuracy(predictions: &[bool], labels: &[bool]) -> Option<f64> {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        if l {
            pos += 1;
            tp += p as usize;
        } else {
            neg += 1;
            tn += !p as usize;
        }
    }
    if pos == 0 || neg == 0 {
        return None;
    }
    Some((tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

/// 1-based rank of `target` under descending similarity, ties broken by
/// ascending id.
pub fn rank_of(target: usize, scored: &[(String, f64)]) -> usize {
    let (tid, ts) = (&scored[target].0, scored[target].1);
    1 + scored
        .iter()
        .enumerate()
        .filter(|&(i, (id, s))| i != target && (*s > ts || (*s == ts && id < tid)))
        .count()
}
