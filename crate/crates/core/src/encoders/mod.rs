//! Dual-encoder bundles: text tower, image tower, preprocessing, logit scale.

mod checkpoint;
mod preprocess;
mod towers;

use std::path::Path;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::digest::{params_sha256, sha256_hex};
use crate::error::{Error, Result};
use crate::negref::BBox;

pub use checkpoint::{CheckpointRef, Component, FORMAT_VERSION, MANIFEST_FILE, PAYLOAD_FILE};
pub use preprocess::{PreprocessSpec, CLIP_MEAN, CLIP_STD};
pub use towers::{HashedTextTower, LinearImageTower, ProcessSpec, ProcessTower};

/// Smallest box side accepted by [`EncoderBundle::crop_and_encode`].
pub const MIN_CROP_SIDE: u32 = 2;

/// Scales `v` to unit L2 norm. A zero vector is returned unchanged.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / norm).collect()
}

/// A unit-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `values` on construction.
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values: normalize(&values),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TextTower {
    Hashed(HashedTextTower),
    Process(ProcessTower),
}

impl TextTower {
    pub fn dim(&self) -> usize {
        match self {
            TextTower::Hashed(t) => t.dim,
            TextTower::Process(t) => t.spec.dim,
        }
    }

    /// SHA-256 over the tower's parameters (or launch spec for process towers).
    pub fn digest(&self) -> String {
        match self {
            TextTower::Hashed(t) => params_sha256(&t.table),
            TextTower::Process(t) => process_digest(&t.spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageTower {
    Linear(LinearImageTower),
    Process(ProcessTower),
}

impl ImageTower {
    pub fn dim(&self) -> usize {
        match self {
            ImageTower::Linear(t) => t.dim,
            ImageTower::Process(t) => t.spec.dim,
        }
    }

    pub fn digest(&self) -> String {
        match self {
            ImageTower::Linear(t) => params_sha256(&t.weights),
            ImageTower::Process(t) => process_digest(&t.spec),
        }
    }
}

fn process_digest(spec: &ProcessSpec) -> String {
    sha256_hex(&serde_json::to_vec(spec).expect("spec serializes"))
}

/// Shape of a freshly initialized in-process bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub dim: usize,
    pub buckets: usize,
    pub bigrams: bool,
    pub image_size: u32,
    pub logit_scale: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            buckets: 4096,
            bigrams: true,
            image_size: 16,
            logit_scale: 100.0,
        }
    }
}

/// Text tower, image tower, preprocessing and logit scale under one
/// architecture tag. Immutable once built; swaps return a new bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBundle {
    pub architecture: String,
    pub text: TextTower,
    pub image: ImageTower,
    pub preprocess: PreprocessSpec,
    pub logit_scale: f64,
}

impl EncoderBundle {
    pub fn new(
        architecture: impl Into<String>,
        text: TextTower,
        image: ImageTower,
        preprocess: PreprocessSpec,
        logit_scale: f64,
    ) -> Result<Self> {
        if text.dim() != image.dim() {
            return Err(Error::DimMismatch {
                left: text.dim(),
                right: image.dim(),
            });
        }
        if !(logit_scale > 0.0 && logit_scale.is_finite()) {
            return Err(Error::Config(format!("logit_scale must be positive, got {logit_scale}")));
        }
        if let ImageTower::Linear(t) = &image {
            if t.input != preprocess.tensor_len() {
                return Err(Error::ShapeMismatch(format!(
                    "image tower takes {} inputs but preprocessing yields {}",
                    t.input,
                    preprocess.tensor_len()
                )));
            }
        }
        Ok(Self {
            architecture: architecture.into(),
            text,
            image,
            preprocess,
            logit_scale,
        })
    }

    /// Seeded in-process bundle with hashed text and linear image towers.
    pub fn init_toy(architecture: impl Into<String>, config: &ToyConfig, seed: u64) -> Result<Self> {
        let preprocess = PreprocessSpec::square(config.image_size);
        Self::new(
            architecture,
            TextTower::Hashed(HashedTextTower::init(config.buckets, config.dim, config.bigrams, seed)),
            ImageTower::Linear(LinearImageTower::init(preprocess.tensor_len(), config.dim, seed)),
            preprocess,
            config.logit_scale,
        )
    }

    pub fn dim(&self) -> usize {
        self.text.dim()
    }

    pub fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        match &self.text {
            TextTower::Hashed(t) => Ok(EmbeddingVector::new(t.encode(text))),
            TextTower::Process(_) => Ok(self.encode_texts(&[text.to_string()])?.remove(0)),
        }
    }

    pub fn encode_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        match &self.text {
            TextTower::Hashed(t) => Ok(texts.iter().map(|s| EmbeddingVector::new(t.encode(s))).collect()),
            TextTower::Process(p) => Ok(p
                .encode_texts(texts)?
                .into_iter()
                .map(EmbeddingVector::new)
                .collect()),
        }
    }

    /// Preprocesses `image` with the bundle's spec, then runs the image tower.
    /// Process towers receive the raw image and apply their own preprocessing.
    pub fn encode_image(&self, image: &DynamicImage) -> Result<EmbeddingVector> {
        match &self.image {
            ImageTower::Linear(t) => Ok(EmbeddingVector::new(t.encode(&self.preprocess.apply(image))?)),
            ImageTower::Process(p) => {
                let mut out = p.encode_images(&[image.to_rgb8()])?;
                Ok(EmbeddingVector::new(out.remove(0)))
            }
        }
    }

    /// Crops exactly to `bbox` and encodes the crop.
    pub fn crop_and_encode(&self, image: &DynamicImage, bbox: BBox) -> Result<EmbeddingVector> {
        let crop = crop(image, bbox)?;
        self.encode_image(&crop)
    }

    pub fn text_digest(&self) -> String {
        self.text.digest()
    }

    pub fn image_digest(&self) -> String {
        self.image.digest()
    }

    /// Copy of this bundle with a different text tower.
    pub fn with_text_tower(&self, text: TextTower) -> Result<Self> {
        Self::new(
            self.architecture.clone(),
            text,
            self.image.clone(),
            self.preprocess.clone(),
            self.logit_scale,
        )
    }

    /// Replaces the text tower with one loaded from a text-tower-only
    /// checkpoint. Image tower, preprocessing and logit scale are carried over.
    pub fn swap_text_tower(&self, checkpoint: &Path) -> Result<Self> {
        let (architecture, text) = checkpoint::load_text_tower(checkpoint)?;
        if architecture != self.architecture {
            return Err(Error::ArchitectureMismatch {
                bundle: self.architecture.clone(),
                checkpoint: architecture,
            });
        }
        self.with_text_tower(text)
    }

    /// Writes a full checkpoint to `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(self, dir, Component::Full)
    }

    /// Writes a text-tower-only checkpoint to `dir`.
    pub fn export_text_tower(&self, dir: &Path) -> Result<()> {
        checkpoint::save(self, dir, Component::TextTowerOnly)
    }

    /// Loads a full checkpoint from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        checkpoint::load_full(dir)
    }
}

/// Crops `image` to `bbox`, rejecting degenerate and out-of-bounds boxes.
pub fn crop(image: &DynamicImage, bbox: BBox) -> Result<DynamicImage> {
    if bbox.min_side() < MIN_CROP_SIDE {
        return Err(Error::DegenerateBox { w: bbox.w, h: bbox.h });
    }
    if !bbox.within(image.width(), image.height()) {
        return Err(Error::BoxOutOfBounds {
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h,
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(image.crop_imm(bbox.x, bbox.y, bbox.w, bbox.h))
}

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use proptest::prelude::*;

    fn small() -> ToyConfig {
        ToyConfig {
            dim: 8,
            buckets: 256,
            bigrams: true,
            image_size: 4,
            logit_scale: 100.0,
        }
    }

    fn picture() -> DynamicImage {
        DynamicImage::ImageRgb8(RgbImage::from_fn(20, 12, |x, y| {
            Rgb([(x * 12) as u8, (y * 20) as u8, ((x + y) * 7) as u8])
        }))
    }

    #[test]
    fn similarity_examples() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]);
        let b = EmbeddingVector::new(vec![0.0, 3.0]);
        let neg = EmbeddingVector::new(vec![-1.0, 0.0]);
        assert_eq!(similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(similarity(&a, &b).unwrap(), 0.0);
        assert_eq!(similarity(&a, &neg).unwrap(), -1.0);
        let c = EmbeddingVector::new(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            similarity(&a, &c),
            Err(Error::DimMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn bundle_embeddings_are_unit_norm() {
        let bundle = EncoderBundle::init_toy("toy", &small(), 1).unwrap();
        for v in [
            bundle.encode_text("a cat without a hat").unwrap(),
            bundle.encode_image(&picture()).unwrap(),
        ] {
            let norm = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-5);
            assert_eq!(v.dim(), 8);
        }
    }

    #[test]
    fn crop_identity_and_guards() {
        let bundle = EncoderBundle::init_toy("toy", &small(), 1).unwrap();
        let img = picture();
        let full = bundle.crop_and_encode(&img, BBox::new(0, 0, 20, 12)).unwrap();
        assert_eq!(full, bundle.encode_image(&img).unwrap());
        let b = BBox::new(3, 2, 9, 7);
        assert_eq!(
            bundle.crop_and_encode(&img, b).unwrap(),
            bundle.crop_and_encode(&img, b).unwrap()
        );
        assert_eq!(
            bundle.crop_and_encode(&img, BBox::new(0, 0, 1, 1)).unwrap_err().class(),
            "degenerate-box"
        );
        assert_eq!(
            bundle.crop_and_encode(&img, BBox::new(15, 0, 10, 5)).unwrap_err().class(),
            "box-out-of-bounds"
        );
    }

    #[test]
    fn swap_preserves_vision_and_identity_swap_is_noop() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = EncoderBundle::init_toy("ViT-B/32", &small(), 1).unwrap();
        bundle.export_text_tower(dir.path()).unwrap();
        let same = bundle.swap_text_tower(dir.path()).unwrap();
        assert_eq!(same, bundle);

        let other = EncoderBundle::init_toy("ViT-B/32", &small(), 2).unwrap();
        other.export_text_tower(dir.path()).unwrap();
        let swapped = bundle.swap_text_tower(dir.path()).unwrap();
        assert_eq!(swapped.image, bundle.image);
        assert_eq!(swapped.preprocess, bundle.preprocess);
        assert_eq!(swapped.logit_scale.to_bits(), bundle.logit_scale.to_bits());
        assert_eq!(swapped.text, other.text);
        let img = picture();
        assert_eq!(
            swapped.encode_image(&img).unwrap(),
            bundle.encode_image(&img).unwrap()
        );
    }

    #[test]
    fn swap_rejects_other_architecture() {
        let dir = tempfile::tempdir().unwrap();
        EncoderBundle::init_toy("ViT-B/32", &small(), 1)
            .unwrap()
            .export_text_tower(dir.path())
            .unwrap();
        let b16 = EncoderBundle::init_toy("ViT-B/16", &small(), 1).unwrap();
        let err = b16.swap_text_tower(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ViT-B/16") && msg.contains("ViT-B/32"), "{msg}");
    }

    #[test]
    fn mismatched_towers_rejected() {
        let pre = PreprocessSpec::square(4);
        let err = EncoderBundle::new(
            "x",
            TextTower::Hashed(HashedTextTower::init(16, 8, false, 0)),
            ImageTower::Linear(LinearImageTower::init(pre.tensor_len(), 4, 0)),
            pre,
            1.0,
        )
        .unwrap_err();
        assert_eq!(err.class(), "dim-mismatch");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in prop::collection::vec(-1e3f64..1e3, 1..16)) {
            let once = normalize(&v);
            let twice = normalize(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn similarity_ignores_positive_scaling(
            a in prop::collection::vec(-10f64..10.0, 4),
            b in prop::collection::vec(-10f64..10.0, 4),
            s in 1e-3f64..1e3,
            t in 1e-3f64..1e3,
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-6) && b.iter().any(|x| x.abs() > 1e-6));
            let base = similarity(&EmbeddingVector::new(a.clone()), &EmbeddingVector::new(b.clone())).unwrap();
            let scaled = similarity(
                &EmbeddingVector::new(a.iter().map(|x| x * s).collect()),
                &EmbeddingVector::new(b.iter().map(|x| x * t).collect()),
            ).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
