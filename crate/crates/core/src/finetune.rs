//! Text-tower-only contrastive fine-tuning against a frozen image tower.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{GeneratedPair, Pipeline};
use crate::encoders::{load_image, EncoderBundle, HashedTextTower, TextTower};
use crate::error::{Error, Result};
use crate::jsonl::read_jsonl;

/// Tolerated deviation of a row norm from 1 in [`info_nce`].
pub const NORM_TOLERANCE: f64 = 1e-3;

/// CLIP caps the learned temperature at this value.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

/// Default batch size per architecture tag.
pub fn default_batch_size(architecture: &str) -> Option<usize> {
    match architecture {
        "ViT-B/32" => Some(512),
        "ViT-B/16" => Some(256),
        "ViT-L/14" | "ViT-L/14@336px" => Some(128),
        "ViT-bigG/14" => Some(64),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub sources: BTreeSet<Pipeline>,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sources: [Pipeline::P1, Pipeline::P2].into_iter().collect(),
            split_seed: 0,
            train_fraction: 0.8,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Config("at least one data source is required".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// One training example: the caption text the text tower sees, and its image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub id: String,
    pub image: String,
    pub text: String,
    pub pipeline: Pipeline,
}

impl TrainPair {
    pub fn from_generated(pair: &GeneratedPair) -> Self {
        let text = match pair.pipeline {
            Pipeline::OriginalCaption => &pair.original_caption,
            _ => &pair.augmented_caption,
        };
        Self {
            id: pair.id.clone(),
            image: pair.image.path.clone(),
            text: text.clone(),
            pipeline: pair.pipeline,
        }
    }
}

/// Number of training examples out of `n` under `fraction`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction).round() as usize
}

/// Filters `pairs` to the configured sources, shuffles with the split seed,
/// and splits into (train, validation).
pub fn split(pairs: Vec<TrainPair>, config: &DataConfig) -> Result<(Vec<TrainPair>, Vec<TrainPair>)> {
    config.validate()?;
    let mut kept: Vec<TrainPair> = pairs
        .into_iter()
        .filter(|p| config.sources.contains(&p.pipeline))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no pairs from sources {:?}",
            config.sources
        )));
    }
    kept.shuffle(&mut ChaCha8Rng::seed_from_u64(config.split_seed));
    let val = kept.split_off(train_count(kept.len(), config.train_fraction).min(kept.len()));
    Ok((kept, val))
}

/// Reads generated-pair files and splits them.
pub fn assemble(files: &[PathBuf], config: &DataConfig) -> Result<(Vec<TrainPair>, Vec<TrainPair>)> {
    let mut pairs = Vec::new();
    for file in files {
        let generated: Vec<GeneratedPair> = read_jsonl(file)?;
        pairs.extend(generated.iter().map(TrainPair::from_generated));
    }
    split(pairs, config)
}

/// Loss and gradients of the symmetric InfoNCE objective.
#[derive(Debug, Clone)]
pub struct InfoNce {
    pub loss: f64,
    pub grad_text: Array2<f64>,
    pub grad_image: Array2<f64>,
    /// Derivative with respect to the logit scale itself.
    pub grad_scale: f64,
}

fn check_batch(text: ArrayView2<f64>, image: ArrayView2<f64>, scale: f64) -> Result<()> {
    if text.dim() != image.dim() {
        return Err(Error::ShapeMismatch(format!(
            "text batch {:?} vs image batch {:?}",
            text.dim(),
            image.dim()
        )));
    }
    if text.nrows() < 2 {
        return Err(Error::ShapeMismatch("InfoNCE needs at least 2 rows".into()));
    }
    if scale.is_nan() || scale <= 0.0 {
        return Err(Error::Config(format!("logit scale must be positive, got {scale}")));
    }
    for m in [text, image] {
        for (row, r) in m.outer_iter().enumerate() {
            let norm = r.dot(&r).sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NotNormalized { row, norm });
            }
        }
    }
    Ok(())
}

fn softmax_rows(m: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut out = m.clone();
    let mut lse = Array1::zeros(m.nrows());
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
        lse[i] = max + sum.ln();
    }
    (out, lse)
}

fn info_nce_unchecked(text: ArrayView2<f64>, image: ArrayView2<f64>, scale: f64) -> InfoNce {
    let n = text.nrows();
    let cos = text.dot(&image.t());
    let logits = &cos * scale;
    let (p_rows, lse_rows) = softmax_rows(&logits);
    let (p_cols_t, lse_cols) = softmax_rows(&logits.t().to_owned());
    let diag = logits.diag();
    let t2i = (&lse_rows - &diag).sum() / n as f64;
    let i2t = (&lse_cols - &diag).sum() / n as f64;
    let mut g = p_rows + p_cols_t.t();
    for i in 0..n {
        g[[i, i]] -= 2.0;
    }
    g /= 2.0 * n as f64;
    InfoNce {
        loss: 0.5 * (t2i + i2t),
        grad_text: g.dot(&image) * scale,
        grad_image: g.t().dot(&text) * scale,
        grad_scale: (&g * &cos).sum(),
    }
}

/// Symmetric InfoNCE over `scale`-multiplied cosine similarities; the
/// matching row index is the positive in both directions.
pub fn info_nce(text: ArrayView2<f64>, image: ArrayView2<f64>, scale: f64) -> Result<f64> {
    Ok(info_nce_with_grad(text, image, scale)?.loss)
}

pub fn info_nce_with_grad(text: ArrayView2<f64>, image: ArrayView2<f64>, scale: f64) -> Result<InfoNce> {
    check_batch(text, image, scale)?;
    Ok(info_nce_unchecked(text, image, scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub logit_scale_trainable: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for `architecture`; unknown tags need an explicit batch size.
    pub fn for_architecture(architecture: &str, batch_size: Option<usize>) -> Result<Self> {
        let batch_size = batch_size.or_else(|| default_batch_size(architecture)).ok_or_else(|| {
            Error::Config(format!(
                "no default batch size for architecture `{architecture}`; pass one explicitly"
            ))
        })?;
        let config = Self {
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size,
            epochs: 5,
            logit_scale_trainable: false,
            seed: 0,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Precomputed, unit-normalized image embeddings keyed by image path.
#[derive(Debug, Clone, Default)]
pub struct ImageEmbeddings {
    map: HashMap<String, Vec<f64>>,
}

impl ImageEmbeddings {
    pub fn from_map(map: HashMap<String, Vec<f64>>) -> Self {
        Self { map }
    }

    /// Encodes every distinct image referenced by `pairs` once.
    pub fn compute<'a>(
        bundle: &EncoderBundle,
        pairs: impl IntoIterator<Item = &'a TrainPair>,
        image_root: Option<&Path>,
    ) -> Result<Self> {
        let paths: BTreeSet<&str> = pairs.into_iter().map(|p| p.image.as_str()).collect();
        let map = paths
            .into_par_iter()
            .map(|p| {
                let full = image_root.map_or_else(|| PathBuf::from(p), |r| r.join(p));
                let embedding = bundle.encode_image(&load_image(&full)?)?;
                Ok((p.to_string(), embedding.into_values()))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(Self { map })
    }

    pub fn get(&self, image: &str) -> Result<&[f64]> {
        self.map
            .get(image)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("no precomputed embedding for image `{image}`")))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Loss of one optimizer step's batch, before the update.
    Train,
    /// Mean batch loss over one epoch.
    EpochTrain,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Bundle carrying the best-validation text tower.
    pub bundle: EncoderBundle,
    pub log: Vec<LogEntry>,
    /// Epoch whose tower was kept; 0 means the initial tower.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub steps: usize,
    pub vision_digest: String,
}

/// Splits `n` indices into batches of `size`, folding a trailing singleton
/// into the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("len > 1").extend(tail);
    }
    out
}

struct Encoded {
    features: Vec<Vec<usize>>,
    images: Array2<f64>,
}

fn encode_set(tower: &HashedTextTower, pairs: &[TrainPair], images: &ImageEmbeddings) -> Result<Encoded> {
    let mut rows = Array2::zeros((pairs.len(), tower.dim));
    for (i, p) in pairs.iter().enumerate() {
        let e = images.get(&p.image)?;
        if e.len() != tower.dim {
            return Err(Error::DimMismatch {
                left: tower.dim,
                right: e.len(),
            });
        }
        rows.row_mut(i).assign(&ndarray::ArrayView1::from(e));
    }
    Ok(Encoded {
        features: pairs.iter().map(|p| tower.features(&p.text)).collect(),
        images: rows,
    })
}

/// Pooled text rows and their norms for the batch `idx`.
fn text_rows(tower: &HashedTextTower, features: &[Vec<usize>], idx: &[usize]) -> (Array2<f64>, Vec<f64>) {
    let mut rows = Array2::zeros((idx.len(), tower.dim));
    let mut norms = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        let pooled = tower.pooled(&features[i]);
        let norm = pooled.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for (d, x) in pooled.iter().enumerate() {
            rows[[r, d]] = x / norm;
        }
        norms.push(norm);
    }
    (rows, norms)
}

fn batch_loss(tower: &HashedTextTower, data: &Encoded, idx: &[usize], scale: f64) -> Result<f64> {
    let (text, _) = text_rows(tower, &data.features, idx);
    let image = data.images.select(Axis(0), idx);
    info_nce(text.view(), image.view(), scale)
}

/// Size-weighted mean InfoNCE over fixed-order batches of `pairs`.
pub fn evaluate_loss(
    bundle: &EncoderBundle,
    pairs: &[TrainPair],
    images: &ImageEmbeddings,
    batch_size: usize,
) -> Result<f64> {
    let tower = hashed(bundle)?;
    let data = encode_set(tower, pairs, images)?;
    mean_loss(tower, &data, batch_size, bundle.logit_scale)
}

fn mean_loss(tower: &HashedTextTower, data: &Encoded, batch_size: usize, scale: f64) -> Result<f64> {
    let order: Vec<usize> = (0..data.features.len()).collect();
    let mut total = 0.0;
    for b in batches(&order, batch_size) {
        total += batch_loss(tower, data, &b, scale)? * b.len() as f64;
    }
    Ok(total / order.len() as f64)
}

fn hashed(bundle: &EncoderBundle) -> Result<&HashedTextTower> {
    match &bundle.text {
        TextTower::Hashed(t) => Ok(t),
        TextTower::Process(_) => Err(Error::Config(
            "only in-process text towers can be fine-tuned".into(),
        )),
    }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], c: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let update = (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + c.eps);
            params[i] -= c.learning_rate * (update + c.weight_decay * params[i]);
        }
    }
}

/// Fine-tunes the text tower of `bundle` on `train`, keeping the tower with
/// the lowest validation loss (the initial tower competes as epoch 0).
pub fn train(
    bundle: &EncoderBundle,
    train: &[TrainPair],
    val: &[TrainPair],
    images: &ImageEmbeddings,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "need at least 2 training pairs, got {}",
            train.len()
        )));
    }
    let vision_digest = bundle.image_digest();
    let mut tower = hashed(bundle)?.clone();
    let train_data = encode_set(&tower, train, images)?;
    let val_data = if val.len() >= 2 {
        Some(encode_set(&tower, val, images)?)
    } else {
        None
    };
    let mut scale = bundle.logit_scale;
    let mut log = Vec::new();
    let mut step = 0;

    let mut best_val = match &val_data {
        Some(v) => {
            let loss = mean_loss(&tower, v, config.batch_size, scale)?;
            log.push(LogEntry { step, epoch: 0, split: Split::Val, loss });
            Some(loss)
        }
        None => None,
    };
    let mut best = (tower.clone(), scale, 0);

    let mut adam = AdamW::new(tower.table.len());
    let mut scale_adam = AdamW::new(1);
    let mut grad = vec![0.0; tower.table.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for idx in batches(&order, config.batch_size) {
            let (text, norms) = text_rows(&tower, &train_data.features, &idx);
            let image = train_data.images.select(Axis(0), &idx);
            let out = info_nce_with_grad(text.view(), image.view(), scale)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged { step, loss: out.loss });
            }
            log.push(LogEntry { step, epoch, split: Split::Train, loss: out.loss });
            epoch_total += out.loss * idx.len() as f64;

            grad.iter_mut().for_each(|g| *g = 0.0);
            for (r, &i) in idx.iter().enumerate() {
                let t = text.row(r);
                let g = out.grad_text.row(r);
                let radial = g.dot(&t);
                let feats = &train_data.features[i];
                let w = 1.0 / (norms[r] * feats.len() as f64);
                for &f in feats {
                    let slot = &mut grad[f * tower.dim..(f + 1) * tower.dim];
                    for d in 0..tower.dim {
                        slot[d] += (g[d] - radial * t[d]) * w;
                    }
                }
            }
            adam.step(&mut tower.table, &grad, config);
            if config.logit_scale_trainable {
                let mut log_scale = [scale.ln()];
                let frozen_decay = TrainConfig { weight_decay: 0.0, ..config.clone() };
                scale_adam.step(&mut log_scale, &[out.grad_scale * scale], &frozen_decay);
                scale = log_scale[0].exp().min(MAX_LOGIT_SCALE);
            }
            step += 1;
            if bundle.image_digest() != vision_digest {
                return Err(Error::Checkpoint("image tower changed during training".into()));
            }
        }
        log.push(LogEntry {
            step,
            epoch,
            split: Split::EpochTrain,
            loss: epoch_total / train.len() as f64,
        });
        match &val_data {
            Some(v) => {
                let loss = mean_loss(&tower, v, config.batch_size, scale)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { step, loss });
                }
                log.push(LogEntry { step, epoch, split: Split::Val, loss });
                if best_val.is_none_or(|b| loss < b) {
                    best_val = Some(loss);
                    best = (tower.clone(), scale, epoch);
                }
            }
            None => best = (tower.clone(), scale, epoch),
        }
    }

    let (tower, scale, best_epoch) = best;
    let mut out = bundle.with_text_tower(TextTower::Hashed(tower))?;
    out.logit_scale = scale;
    Ok(TrainOutcome {
        bundle: out,
        log,
        best_epoch,
        best_val_loss: best_val,
        steps: step,
        vision_digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ToyConfig;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_rows(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m: Array2<f64> = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0));
        for mut r in m.outer_iter_mut() {
            let n = r.dot(&r).sqrt();
            r.mapv_inplace(|x| x / n);
        }
        m
    }

    #[test]
    fn uniform_similarities_give_ln_n() {
        let ones = Array2::from_elem((4, 1), 1.0);
        let loss = info_nce(ones.view(), ones.view(), 100.0).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn saturated_diagonal_is_near_zero() {
        let eye = Array2::eye(4);
        let loss = info_nce(eye.view(), eye.view(), 100.0).unwrap();
        assert!((0.0..1e-3).contains(&loss), "{loss}");
    }

    #[test]
    fn rejects_unnormalized_rows() {
        let a = array![[1.0, 0.0], [0.0, 1.01]];
        let err = info_nce(a.view(), a.view(), 1.0).unwrap_err();
        assert!(matches!(err, Error::NotNormalized { row: 1, .. }));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let text = unit_rows(3, 8, 1);
        let image = unit_rows(3, 8, 2);
        let scale = 7.5;
        let analytic = info_nce_unchecked(text.view(), image.view(), scale);
        let h = 1e-6;
        let fd = |which: usize, i: usize, j: usize| {
            let mut plus = [text.clone(), image.clone()];
            let mut minus = [text.clone(), image.clone()];
            plus[which][[i, j]] += h;
            minus[which][[i, j]] -= h;
            let lp = info_nce_unchecked(plus[0].view(), plus[1].view(), scale).loss;
            let lm = info_nce_unchecked(minus[0].view(), minus[1].view(), scale).loss;
            (lp - lm) / (2.0 * h)
        };
        for (which, g) in [(0, &analytic.grad_text), (1, &analytic.grad_image)] {
            for i in 0..3 {
                for j in 0..8 {
                    let numeric = fd(which, i, j);
                    let exact = g[[i, j]];
                    let rel = (numeric - exact).abs() / exact.abs().max(1e-8);
                    assert!(rel < 1e-4, "[{which}][{i},{j}] {exact} vs {numeric}");
                }
            }
        }
        let ls = info_nce_unchecked(text.view(), image.view(), scale + h).loss;
        let lm = info_nce_unchecked(text.view(), image.view(), scale - h).loss;
        let numeric = (ls - lm) / (2.0 * h);
        assert!((numeric - analytic.grad_scale).abs() / analytic.grad_scale.abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn permutation_equivariant_and_non_negative(seed in 0u64..1000, n in 2usize..7) {
            let text = unit_rows(n, 5, seed);
            let image = unit_rows(n, 5, seed + 7);
            let base = info_nce(text.view(), image.view(), 10.0).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let permuted = info_nce(
                text.select(Axis(0), &perm).view(),
                image.select(Axis(0), &perm).view(),
                10.0,
            ).unwrap();
            prop_assert!((base - permuted).abs() < 1e-9);
            prop_assert!(base >= 0.0);
        }
    }

    fn pairs(n: usize, pipeline: Pipeline) -> Vec<TrainPair> {
        (0..n)
            .map(|i| TrainPair {
                id: format!("{pipeline:?}-{i}"),
                image: format!("img{}", i % 7),
                text: format!("a photo of thing {i} with no item {}", i % 3),
                pipeline,
            })
            .collect()
    }

    #[test]
    fn split_is_deterministic_disjoint_and_filtered() {
        let mut all = pairs(10, Pipeline::P1);
        all.extend(pairs(5, Pipeline::P2));
        let config = DataConfig {
            sources: [Pipeline::P1].into_iter().collect(),
            split_seed: 3,
            train_fraction: 0.8,
        };
        let (tr, va) = split(all.clone(), &config).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        assert!(tr.iter().chain(&va).all(|p| p.pipeline == Pipeline::P1));
        let ids: BTreeSet<_> = tr.iter().map(|p| &p.id).collect();
        assert!(va.iter().all(|p| !ids.contains(&p.id)));
        assert_eq!(split(all, &config).unwrap(), (tr, va));
    }

    #[test]
    fn empty_after_filter_is_error() {
        let config = DataConfig {
            sources: [Pipeline::RandP1].into_iter().collect(),
            ..DataConfig::default()
        };
        assert_eq!(split(pairs(4, Pipeline::P1), &config).unwrap_err().class(), "empty-dataset");
    }

    #[test]
    fn split_sizes_follow_fraction() {
        assert_eq!(train_count(229_000, 0.8), 183_200);
        assert_eq!(229_000 - train_count(229_000, 0.8), 45_800);
    }

    #[test]
    fn original_caption_pairs_train_on_the_original_text() {
        let line = r#"{"id":"a","image":{"path":"x.png","width":4,"height":4},"original_caption":"a dog","augmented_caption":"a dog","pipeline":"OriginalCaption","provenance":{"kind":"none"},"matched_terms":[]}"#;
        let mut g: GeneratedPair = serde_json::from_str(line).unwrap();
        g.augmented_caption = "a dog with no hat".into();
        assert_eq!(TrainPair::from_generated(&g).text, "a dog");
        g.pipeline = Pipeline::P1;
        assert_eq!(TrainPair::from_generated(&g).text, "a dog with no hat");
    }

    #[test]
    fn batches_fold_singletons() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
    }

    #[test]
    fn batch_size_defaults_and_guard() {
        assert_eq!(TrainConfig::for_architecture("ViT-B/32", None).unwrap().batch_size, 512);
        assert_eq!(TrainConfig::for_architecture("ViT-bigG/14", None).unwrap().batch_size, 64);
        assert!(TrainConfig::for_architecture("toy", None).is_err());
        assert!(TrainConfig::for_architecture("toy", Some(1)).is_err());
    }

    fn toy_setup(n: usize) -> (EncoderBundle, Vec<TrainPair>, ImageEmbeddings) {
        let config = ToyConfig {
            dim: 16,
            buckets: 512,
            ..ToyConfig::default()
        };
        let bundle = EncoderBundle::init_toy("toy", &config, 5).unwrap();
        let set = pairs(n, Pipeline::P1);
        let mut map = HashMap::new();
        for (i, p) in set.iter().enumerate() {
            map.entry(p.image.clone())
                .or_insert_with(|| unit_rows(1, 16, 100 + i as u64).row(0).to_vec());
        }
        (bundle, set, ImageEmbeddings::from_map(map))
    }

    #[test]
    fn zero_epochs_returns_input_tower() {
        let (bundle, set, images) = toy_setup(20);
        let mut config = TrainConfig::for_architecture("toy", Some(8)).unwrap();
        config.epochs = 0;
        let out = train(&bundle, &set[..16], &set[16..], &images, &config).unwrap();
        assert_eq!(out.bundle, bundle);
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn training_moves_text_only() {
        let (bundle, set, images) = toy_setup(24);
        let mut config = TrainConfig::for_architecture("toy", Some(24)).unwrap();
        config.learning_rate = 1e-3;
        config.epochs = 4;
        let out = train(&bundle, &set, &[], &images, &config).unwrap();
        assert_ne!(out.bundle.text_digest(), bundle.text_digest());
        assert_eq!(out.bundle.image_digest(), bundle.image_digest());
        assert_eq!(out.vision_digest, bundle.image_digest());
        let losses: Vec<f64> = out.log.iter().filter(|e| e.split == Split::Train).map(|e| e.loss).collect();
        assert_eq!(losses.len(), 4);
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn trainable_scale_moves_and_stays_capped() {
        let (bundle, set, images) = toy_setup(12);
        let mut config = TrainConfig::for_architecture("toy", Some(12)).unwrap();
        config.learning_rate = 1e-2;
        config.epochs = 3;
        config.logit_scale_trainable = true;
        let out = train(&bundle, &set, &[], &images, &config).unwrap();
        assert!(out.bundle.logit_scale <= MAX_LOGIT_SCALE);
        config.logit_scale_trainable = false;
        let frozen = train(&bundle, &set, &[], &images, &config).unwrap();
        assert_eq!(frozen.bundle.logit_scale, bundle.logit_scale);
    }
}
