//! Negation retrieval benchmark construction from referring-expression data.
//!
//! Each triplet pairs a negated referring expression `T` with the region it
//! describes (`P+`) and a same-category region elsewhere in the image (`P-`).
//! Both regions are then grown, within per-direction limits equal to their
//! own size, as far as possible without touching the *original* box of the
//! other region.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text_negation::{contains_negation, NegationLexicon};

pub const DEFAULT_MIN_DIM: u32 = 100;

/// Axis-aligned integer box, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    fn from_edges(left: u32, top: u32, right: u32, bottom: u32) -> Self {
        Self::new(left, top, right - left, bottom - top)
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Positive-area intersection; shared edges do not count.
    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x <= other.x && self.y <= other.y && self.right() >= other.right() && self.bottom() >= other.bottom()
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= width && self.bottom() <= height
    }

    pub fn min_side(&self) -> u32 {
        self.w.min(self.h)
    }
}

/// The largest box `patch` may grow into: one own-width left and right,
/// one own-height up and down, clipped to the image.
pub fn expansion_limits(patch: BBox, width: u32, height: u32) -> BBox {
    let left = patch.x.saturating_sub(patch.w);
    let top = patch.y.saturating_sub(patch.h);
    let right = (patch.right() + patch.w).min(width);
    let bottom = (patch.bottom() + patch.h).min(height);
    BBox::from_edges(left, top, right, bottom)
}

/// Grows `patch` to the maximum-area box inside its expansion limits that
/// stays disjoint from `other`.
///
/// If the full expansion already avoids `other` it is returned. Otherwise a
/// feasible box must be separated from `other` along one side, and the best
/// box for a given side is the limit box with just that edge pulled in, so
/// the four single-edge clips cover the optimum. Ties prefer horizontal
/// clips, then the clip that keeps the left/top edge.
pub fn maximize_patch(patch: BBox, other: BBox, width: u32, height: u32) -> BBox {
    let limits = expansion_limits(patch, width, height);
    if !limits.overlaps(&other) {
        return limits;
    }
    let (l, t, r, b) = (limits.x, limits.y, limits.right(), limits.bottom());
    // Order encodes the tie-break: right clip keeps the left edge, bottom
    // clip keeps the top edge.
    let clips = [
        (other.x >= patch.right()).then(|| BBox::from_edges(l, t, other.x.min(r), b)),
        (other.right() <= patch.x).then(|| BBox::from_edges(other.right().max(l), t, r, b)),
        (other.y >= patch.bottom()).then(|| BBox::from_edges(l, t, r, other.y.min(b))),
        (other.bottom() <= patch.y).then(|| BBox::from_edges(l, other.bottom().max(t), r, b)),
    ];
    let mut best: Option<BBox> = None;
    for candidate in clips.into_iter().flatten() {
        if best.is_none_or(|b| candidate.area() > b.area()) {
            best = Some(candidate);
        }
    }
    // Disjoint inputs always admit at least one clip; fall back to the
    // original patch if the caller broke that precondition.
    best.unwrap_or(patch)
}

/// One referring-expression region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionAnnotation {
    pub image: String,
    pub image_width: u32,
    pub image_height: u32,
    pub bbox: BBox,
    pub category: u32,
    pub ref_text: String,
    pub annotation_id: u64,
}

/// A negated expression, its region and the qualifying same-category peers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub anchor: RegionAnnotation,
    pub peers: Vec<RegionAnnotation>,
}

/// Applies the selection criteria to every annotation of one image.
pub fn select_candidates(
    annotations: &[RegionAnnotation],
    lexicon: &NegationLexicon,
    min_dim: u32,
) -> Vec<Candidate> {
    let big_enough = |a: &RegionAnnotation| a.bbox.w >= min_dim && a.bbox.h >= min_dim;
    annotations
        .iter()
        .filter(|a| big_enough(a) && contains_negation(&a.ref_text, lexicon).found())
        .filter_map(|anchor| {
            let mut seen = std::collections::BTreeSet::new();
            let peers: Vec<RegionAnnotation> = annotations
                .iter()
                .filter(|p| {
                    p.image == anchor.image
                        && p.category == anchor.category
                        && p.annotation_id != anchor.annotation_id
                        && big_enough(p)
                        && !p.bbox.overlaps(&anchor.bbox)
                })
                .filter(|p| seen.insert(p.annotation_id))
                .cloned()
                .collect();
            (!peers.is_empty()).then(|| Candidate {
                anchor: anchor.clone(),
                peers,
            })
        })
        .collect()
}

/// Largest area wins; ties go to the smallest annotation id.
pub fn choose_hard_negative(peers: &[RegionAnnotation]) -> Option<&RegionAnnotation> {
    peers.iter().min_by(|a, b| {
        b.bbox
            .area()
            .cmp(&a.bbox.area())
            .then(a.annotation_id.cmp(&b.annotation_id))
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub bbox: BBox,
    pub original: BBox,
    pub annotation_id: u64,
}

/// One benchmark item: negated text, matching patch, hard-negative patch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegTriplet {
    pub id: String,
    pub text: String,
    pub image: String,
    pub image_width: u32,
    pub image_height: u32,
    pub category: u32,
    pub positive: Patch,
    pub negative: Patch,
}

impl NegTriplet {
    /// Checks every triplet invariant; returns the first violation.
    pub fn check(&self, lexicon: &NegationLexicon, min_dim: u32) -> std::result::Result<(), String> {
        let (w, h) = (self.image_width, self.image_height);
        if !contains_negation(&self.text, lexicon).found() {
            return Err("text has no negation term".into());
        }
        if self.positive.annotation_id == self.negative.annotation_id {
            return Err("positive and negative share an annotation".into());
        }
        for (name, patch) in [("positive", &self.positive), ("negative", &self.negative)] {
            if patch.original.min_side() < min_dim {
                return Err(format!("{name} original below {min_dim}px"));
            }
            if !patch.bbox.within(w, h) || !patch.original.within(w, h) {
                return Err(format!("{name} patch outside image"));
            }
            if !patch.bbox.contains(&patch.original) {
                return Err(format!("{name} patch does not contain its original"));
            }
            let limits = expansion_limits(patch.original, w, h);
            if !limits.contains(&patch.bbox) {
                return Err(format!("{name} patch exceeds its expansion limits"));
            }
        }
        if self.positive.bbox.overlaps(&self.negative.original) {
            return Err("positive patch overlaps the original negative".into());
        }
        if self.negative.bbox.overlaps(&self.positive.original) {
            return Err("negative patch overlaps the original positive".into());
        }
        Ok(())
    }
}

/// Builds triplets over annotations from any number of images. Output is
/// sorted by (image, positive annotation id, text).
pub fn build(annotations: &[RegionAnnotation], lexicon: &NegationLexicon, min_dim: u32) -> Vec<NegTriplet> {
    let mut by_image: BTreeMap<&str, Vec<RegionAnnotation>> = BTreeMap::new();
    for a in annotations {
        by_image.entry(a.image.as_str()).or_default().push(a.clone());
    }
    let mut triplets: Vec<NegTriplet> = by_image
        .into_par_iter()
        .flat_map_iter(|(_, mut group)| {
            group.sort_by(|a, b| a.annotation_id.cmp(&b.annotation_id).then(a.ref_text.cmp(&b.ref_text)));
            select_candidates(&group, lexicon, min_dim)
                .into_iter()
                .filter_map(|c| triplet_for(&c))
                .collect::<Vec<_>>()
        })
        .collect();
    triplets.sort_by(|a, b| {
        a.image
            .cmp(&b.image)
            .then(a.positive.annotation_id.cmp(&b.positive.annotation_id))
            .then(a.text.cmp(&b.text))
    });
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for t in &mut triplets {
        let n = seen.entry(t.id.clone()).or_default();
        if *n > 0 {
            t.id = format!("{}-{}", t.id, n);
        }
        *n += 1;
    }
    triplets
}

fn triplet_for(candidate: &Candidate) -> Option<NegTriplet> {
    let anchor = &candidate.anchor;
    let neg = choose_hard_negative(&candidate.peers)?;
    let (w, h) = (anchor.image_width, anchor.image_height);
    let pos_box = maximize_patch(anchor.bbox, neg.bbox, w, h);
    let neg_box = maximize_patch(neg.bbox, anchor.bbox, w, h);
    Some(NegTriplet {
        id: format!("{}", anchor.annotation_id),
        text: anchor.ref_text.clone(),
        image: anchor.image.clone(),
        image_width: w,
        image_height: h,
        category: anchor.category,
        positive: Patch {
            bbox: pos_box,
            original: anchor.bbox,
            annotation_id: anchor.annotation_id,
        },
        negative: Patch {
            bbox: neg_box,
            original: neg.bbox,
            annotation_id: neg.annotation_id,
        },
    })
}

// ---- annotation file ---------------------------------------------------------

#[derive(Debug, Deserialize)]
struct FileImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct FileAnnotation {
    id: u64,
    image_id: u64,
    bbox: [f64; 4],
    category_id: u32,
    #[serde(default)]
    ref_text: Option<String>,
    #[serde(default)]
    ref_texts: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct AnnotationFile {
    images: Vec<FileImage>,
    annotations: Vec<FileAnnotation>,
}

/// Snaps a float `[x, y, w, h]` box outward to whole pixels, clipped to the image.
pub fn pixel_box(bbox: [f64; 4], width: u32, height: u32) -> Option<BBox> {
    let [x, y, w, h] = bbox;
    if !(w > 0.0 && h > 0.0) {
        return None;
    }
    let left = x.floor().max(0.0) as u32;
    let top = y.floor().max(0.0) as u32;
    let right = ((x + w).ceil() as u32).min(width);
    let bottom = ((y + h).ceil() as u32).min(height);
    (right > left && bottom > top).then(|| BBox::from_edges(left, top, right, bottom))
}

/// Parses a referring-expression annotation document; one
/// [`RegionAnnotation`] per (region, expression).
pub fn parse_annotations(text: &str, location: &str) -> Result<Vec<RegionAnnotation>> {
    let file: AnnotationFile = serde_json::from_str(text).map_err(|e| Error::parse(location, e))?;
    let images: BTreeMap<u64, &FileImage> = file.images.iter().map(|i| (i.id, i)).collect();
    let mut out = Vec::new();
    for ann in &file.annotations {
        let image = images.get(&ann.image_id).ok_or_else(|| {
            Error::parse(location, format!("annotation {} references unknown image {}", ann.id, ann.image_id))
        })?;
        let Some(bbox) = pixel_box(ann.bbox, image.width, image.height) else {
            log::warn!("annotation {} has a degenerate box; skipped", ann.id);
            continue;
        };
        let texts = ann.ref_text.iter().chain(ann.ref_texts.iter());
        for text in texts {
            out.push(RegionAnnotation {
                image: image.file_name.clone(),
                image_width: image.width,
                image_height: image.height,
                bbox,
                category: ann.category_id,
                ref_text: text.clone(),
                annotation_id: ann.id,
            });
        }
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<RegionAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}
