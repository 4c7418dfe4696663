use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

/// Resize-shortest-side, center-crop, per-channel normalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub resize: u32,
    pub crop: u32,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// CLIP's published normalization constants.
pub const CLIP_MEAN: [f64; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_STD: [f64; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

impl PreprocessSpec {
    pub fn square(size: u32) -> Self {
        Self {
            resize: size,
            crop: size,
            mean: CLIP_MEAN,
            std: CLIP_STD,
        }
    }

    /// Length of the tensor produced by [`Self::apply`].
    pub fn tensor_len(&self) -> usize {
        3 * (self.crop as usize) * (self.crop as usize)
    }

    /// Geometric part only: resize then center crop to `crop`×`crop`.
    pub fn resize_crop(&self, image: &DynamicImage) -> RgbImage {
        let rgb = image.to_rgb8();
        let (w, h) = rgb.dimensions();
        let scale = self.resize as f64 / w.min(h) as f64;
        let nw = ((w as f64 * scale).round() as u32).max(self.crop);
        let nh = ((h as f64 * scale).round() as u32).max(self.crop);
        let resized = image::imageops::resize(&rgb, nw, nh, FilterType::Triangle);
        let x = (nw - self.crop) / 2;
        let y = (nh - self.crop) / 2;
        image::imageops::crop_imm(&resized, x, y, self.crop, self.crop).to_image()
    }

    /// Channel-major normalized tensor.
    pub fn apply(&self, image: &DynamicImage) -> Vec<f64> {
        let cropped = self.resize_crop(image);
        let plane = (self.crop * self.crop) as usize;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in cropped.pixels().enumerate() {
            for c in 0..3 {
                out[c * plane + i] = (px[c] as f64 / 255.0 - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}
