//! Protocols scored directly with an encoder bundle.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{argmax_first, balanced_accuracy, rank_of, wins, BenchmarkReport, Excluded, ItemResult};
use crate::encoders::{load_image, similarity, EmbeddingVector, EncoderBundle};
use crate::error::{Error, Result};
use crate::negref::NegTriplet;

pub const ZERO_SHOT_TEMPLATE: &str = "a photo of a {class}";

fn resolve(root: Option<&Path>, image: &str) -> PathBuf {
    root.map_or_else(|| PathBuf::from(image), |r| r.join(image))
}

fn encode_path(bundle: &EncoderBundle, root: Option<&Path>, image: &str) -> Result<EmbeddingVector> {
    bundle.encode_image(&load_image(&resolve(root, image))?)
}

/// Splits per-item outcomes into scored items and image-level exclusions.
/// Non-image errors abort the run.
fn partition(outcomes: Vec<(String, Result<ItemResult>)>) -> Result<(Vec<ItemResult>, Vec<Excluded>)> {
    let mut items = Vec::new();
    let mut excluded = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(item) => items.push(item),
            Err(e @ (Error::Image { .. } | Error::Io { .. })) => excluded.push(Excluded {
                id,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok((items, excluded))
}

/// Scores 1 when the text is strictly closer to the positive patch.
pub fn score_negrefcocog(triplets: &[NegTriplet], bundle: &EncoderBundle, image_root: Option<&Path>) -> Result<BenchmarkReport> {
    let outcomes = triplets
        .par_iter()
        .map(|t| {
            let item = (|| {
                let image = load_image(&resolve(image_root, &t.image))?;
                let text = bundle.encode_text(&t.text)?;
                let pos = similarity(&text, &bundle.crop_and_encode(&image, t.positive.bbox)?)?;
                let neg = similarity(&text, &bundle.crop_and_encode(&image, t.negative.bbox)?)?;
                let score = if wins(pos, neg) { 1.0 } else { 0.0 };
                Ok(ItemResult::new(&t.id, score, json!({"positive": pos, "negative": neg})))
            })();
            (t.id.clone(), item)
        })
        .collect();
    let (items, excluded) = partition(outcomes)?;
    Ok(BenchmarkReport::new("negrefcocog", items, 100.0, excluded).with_config("bundle", &bundle.architecture))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExistenceItem {
    pub id: String,
    pub image: String,
    pub present_caption: String,
    pub absent_caption: String,
    pub truth: Truth,
}

/// Scores 1 when the caption matching `truth` is strictly more similar.
pub fn score_existence(items: &[ExistenceItem], bundle: &EncoderBundle, image_root: Option<&Path>) -> Result<BenchmarkReport> {
    let outcomes = items
        .par_iter()
        .map(|it| {
            let item = (|| {
                let image = encode_path(bundle, image_root, &it.image)?;
                let present = similarity(&image, &bundle.encode_text(&it.present_caption)?)?;
                let absent = similarity(&image, &bundle.encode_text(&it.absent_caption)?)?;
                let correct = match it.truth {
                    Truth::Present => wins(present, absent),
                    Truth::Absent => wins(absent, present),
                };
                Ok(ItemResult::new(
                    &it.id,
                    correct as u8 as f64,
                    json!({"present": present, "absent": absent}),
                ))
            })();
            (it.id.clone(), item)
        })
        .collect();
    let (items, excluded) = partition(outcomes)?;
    Ok(BenchmarkReport::new("existence", items, 100.0, excluded).with_config("bundle", &bundle.architecture))
}

/// An image with binary labels keyed by attribute name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeItem {
    pub id: String,
    pub image: String,
    pub labels: BTreeMap<String, u8>,
}

/// One item per attribute, scored by balanced accuracy over all images.
/// Attributes lacking positives or negatives are excluded.
pub fn balanced_accuracy_attributes(
    images: &[AttributeItem],
    prompts: &[super::AttributePromptPair],
    bundle: &EncoderBundle,
    image_root: Option<&Path>,
) -> Result<BenchmarkReport> {
    for item in images {
        if let Some((name, v)) = item.labels.iter().find(|(_, &v)| v > 1) {
            return Err(Error::parse(&item.id, format!("label `{name}` is {v}, expected 0 or 1")));
        }
    }
    let mut excluded = Vec::new();
    let outcomes: Vec<(String, Result<Option<EmbeddingVector>>)> = images
        .par_iter()
        .map(|it| (it.id.clone(), encode_path(bundle, image_root, &it.image).map(Some)))
        .collect();
    let mut embedded = Vec::new();
    for ((id, outcome), item) in outcomes.into_iter().zip(images) {
        match outcome {
            Ok(Some(e)) => embedded.push((item, e)),
            Ok(None) => {}
            Err(e @ (Error::Image { .. } | Error::Io { .. })) => excluded.push(Excluded { id, reason: e.to_string() }),
            Err(e) => return Err(e),
        }
    }

    let mut items = Vec::new();
    for pair in prompts {
        let pos = bundle.encode_text(&pair.positive_prompt)?;
        let neg = bundle.encode_text(&pair.negative_prompt)?;
        let mut predictions = Vec::new();
        let mut labels = Vec::new();
        for (item, emb) in &embedded {
            let Some(&label) = item.labels.get(&pair.attribute) else { continue };
            predictions.push(wins(similarity(emb, &pos)?, similarity(emb, &neg)?));
            labels.push(label == 1);
        }
        match balanced_accuracy(&predictions, &labels) {
            Some(ba) => items.push(ItemResult::new(
                &pair.attribute,
                ba,
                json!({
                    "positives": labels.iter().filter(|&&l| l).count(),
                    "negatives": labels.iter().filter(|&&l| !l).count(),
                }),
            )),
            None => excluded.push(Excluded {
                id: pair.attribute.clone(),
                reason: "attribute has no positive or no negative examples".into(),
            }),
        }
    }
    Ok(BenchmarkReport::new("balanced-accuracy", items, 100.0, excluded).with_config("bundle", &bundle.architecture))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyItem {
    pub id: String,
    pub image: String,
    pub label: String,
}

/// Top-1 accuracy of argmax over `template`-rendered class prompts.
pub fn zero_shot_classify(
    items: &[ClassifyItem],
    classes: &[String],
    template: &str,
    bundle: &EncoderBundle,
    image_root: Option<&Path>,
) -> Result<BenchmarkReport> {
    if classes.len() < 2 {
        return Err(Error::Config("zero-shot classification needs at least 2 classes".into()));
    }
    if let Some(bad) = items.iter().find(|i| !classes.contains(&i.label)) {
        return Err(Error::Config(format!("item `{}` has unknown label `{}`", bad.id, bad.label)));
    }
    let prompts: Vec<String> = classes.iter().map(|c| template.replace("{class}", c)).collect();
    let class_embs = bundle.encode_texts(&prompts)?;
    let outcomes = items
        .par_iter()
        .map(|it| {
            let item = (|| {
                let image = encode_path(bundle, image_root, &it.image)?;
                let sims = class_embs
                    .iter()
                    .map(|c| similarity(&image, c))
                    .collect::<Result<Vec<_>>>()?;
                let predicted = &classes[argmax_first(&sims).expect("at least 2 classes")];
                Ok(ItemResult::new(
                    &it.id,
                    (predicted == &it.label) as u8 as f64,
                    json!({"predicted": predicted}),
                ))
            })();
            (it.id.clone(), item)
        })
        .collect();
    let (items, excluded) = partition(outcomes)?;
    Ok(BenchmarkReport::new("zero-shot", items, 100.0, excluded)
        .with_config("bundle", &bundle.architecture)
        .with_config("template", template))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallQuery {
    pub id: String,
    pub text: String,
    pub image_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolImage {
    pub id: String,
    pub image: String,
}

/// Text-to-image recall: a hit when the ground-truth image ranks within `k`.
pub fn recall_at_k(
    queries: &[RecallQuery],
    pool: &[PoolImage],
    k: usize,
    bundle: &EncoderBundle,
    image_root: Option<&Path>,
) -> Result<BenchmarkReport> {
    let mut seen = BTreeSet::new();
    for p in pool {
        if !seen.insert(&p.id) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
    }
    if let Some(q) = queries.iter().find(|q| !seen.contains(&q.image_id)) {
        return Err(Error::Config(format!(
            "query `{}` refers to image `{}` outside the pool",
            q.id, q.image_id
        )));
    }
    let pool_embs = pool
        .par_iter()
        .map(|p| encode_path(bundle, image_root, &p.image))
        .collect::<Result<Vec<_>>>()?;
    let index: HashMap<&str, usize> = pool.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let items = queries
        .par_iter()
        .map(|q| {
            let text = bundle.encode_text(&q.text)?;
            let scored = pool
                .iter()
                .zip(&pool_embs)
                .map(|(p, e)| Ok((p.id.clone(), similarity(&text, e)?)))
                .collect::<Result<Vec<_>>>()?;
            let rank = rank_of(index[q.image_id.as_str()], &scored);
            Ok(ItemResult::new(&q.id, (rank <= k) as u8 as f64, json!({"rank": rank})))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport::new("recall-at-k", items, 100.0, vec![])
        .with_config("bundle", &bundle.architecture)
        .with_config("k", k))
}
