//! Per-item mean IoU and pooled binary IoU for predicted heatmaps.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::adapters::Segmenter;
use super::{BenchmarkReport, Excluded, ItemResult};
use crate::error::{Error, Result};
use crate::jsonl::read_json;

/// Row-major 2-D field of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != (width as usize) * (height as usize) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} grid with {} values",
                width,
                height,
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationPair {
    pub id: String,
    pub heatmap: Grid,
    /// Non-zero cells are foreground.
    pub mask: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    pub miou: f64,
    pub iou_bin: f64,
    pub intersection: u64,
    pub union: u64,
}

/// Intersection and union after thresholding `heatmap` strictly above `threshold`.
fn counts(pair: &SegmentationPair, threshold: f64) -> Result<(u64, u64)> {
    let (h, m) = (&pair.heatmap, &pair.mask);
    if (h.width, h.height) != (m.width, m.height) || h.values.len() != m.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "item `{}`: heatmap {}x{} vs mask {}x{}",
            pair.id, h.width, h.height, m.width, m.height
        )));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &g) in h.values.iter().zip(&m.values) {
        let (p, g) = (p > threshold, g != 0.0);
        inter += (p && g) as u64;
        union += (p || g) as u64;
    }
    Ok((inter, union))
}

fn item_iou(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// mIoU over items (an empty-vs-empty item counts as 1) and IoU over all
/// pixels pooled.
pub fn segmentation_metrics(pairs: &[SegmentationPair], threshold: f64) -> Result<SegmentationScore> {
    let per_item = pairs.iter().map(|p| counts(p, threshold)).collect::<Result<Vec<_>>>()?;
    let intersection: u64 = per_item.iter().map(|c| c.0).sum();
    let union: u64 = per_item.iter().map(|c| c.1).sum();
    let miou = if per_item.is_empty() {
        0.0
    } else {
        per_item.iter().map(|&(i, u)| item_iou(i, u)).sum::<f64>() / per_item.len() as f64
    };
    Ok(SegmentationScore {
        miou,
        iou_bin: item_iou(intersection, union),
        intersection,
        union,
    })
}

/// Reads a heatmap: a JSON [`Grid`], or a grayscale image scaled to `[0, 1]`.
pub fn load_heatmap(path: &Path) -> Result<Grid> {
    if path.extension().is_some_and(|e| e == "json") {
        let grid: Grid = read_json(path)?;
        return Grid::new(grid.width, grid.height, grid.values);
    }
    let img = crate::encoders::load_image(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Grid::new(w, h, img.pixels().map(|p| p[0] as f64 / 255.0).collect())
}

/// Reads a mask; any non-zero value is foreground.
pub fn load_mask(path: &Path) -> Result<Grid> {
    let grid = load_heatmap(path)?;
    let values = grid.values.iter().map(|&v| (v != 0.0) as u8 as f64).collect();
    Grid::new(grid.width, grid.height, values)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationItem {
    pub id: String,
    pub image: String,
    pub text: String,
    pub mask: String,
}

/// Runs the segmenter on each item, then scores. Adapter failures exclude
/// the item; shape mismatches abort.
pub fn segmentation_protocol(
    items: &[SegmentationItem],
    segmenter: &dyn Segmenter,
    threshold: f64,
    root: Option<&Path>,
) -> Result<BenchmarkReport> {
    let resolve = |p: &str| root.map_or_else(|| PathBuf::from(p), |r| r.join(p));
    let fetched: Vec<(String, Result<SegmentationPair>)> = items
        .par_iter()
        .map(|it| {
            let pair = (|| {
                let heatmap_path = segmenter.segment(&resolve(&it.image), &it.text)?;
                Ok(SegmentationPair {
                    id: it.id.clone(),
                    heatmap: load_heatmap(&heatmap_path)?,
                    mask: load_mask(&resolve(&it.mask))?,
                })
            })();
            (it.id.clone(), pair)
        })
        .collect();
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for (id, pair) in fetched {
        match pair {
            Ok(p) => pairs.push(p),
            Err(e) => excluded.push(Excluded { id, reason: format!("{}: {e}", e.class()) }),
        }
    }
    let score = segmentation_metrics(&pairs, threshold)?;
    let results = pairs
        .iter()
        .map(|p| {
            let (i, u) = counts(p, threshold)?;
            Ok(ItemResult::new(&p.id, item_iou(i, u), json!({"intersection": i, "union": u})))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = BenchmarkReport::new("segmentation", results, 1.0, excluded).with_config("threshold", threshold);
    report.extra.insert("iou_bin".into(), score.iou_bin);
    Ok(report)
}
