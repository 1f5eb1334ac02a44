//! Image preprocessing driven by the bundle's `preprocess.json`.
//!
//! All constants (resize edge, crop, normalization) come from the bundle;
//! nothing model-specific is compiled in.

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Bilinear,
    Bicubic,
}

impl Interpolation {
    fn filter(self) -> FilterType {
        match self {
            Interpolation::Nearest => FilterType::Nearest,
            Interpolation::Bilinear => FilterType::Triangle,
            Interpolation::Bicubic => FilterType::CatmullRom,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePreprocess {
    pub resize_shortest_edge: u32,
    pub crop_size: u32,
    pub interpolation: Interpolation,
    pub mean: [f32; 3],
    pub std: [f32; 3],
    #[serde(default = "default_rescale")]
    pub rescale_factor: f32,
}

fn default_rescale() -> f32 {
    1.0 / 255.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPreprocess {
    pub context_length: usize,
    #[serde(default)]
    pub pad_token_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPreprocess {
    pub image: ImagePreprocess,
    /// Output index of the class logits (or probabilities).
    #[serde(default)]
    pub logits_output: usize,
    /// Output index of the pooled features.
    #[serde(default = "one")]
    pub features_output: usize,
    #[serde(default)]
    pub outputs_are_probabilities: bool,
}

fn one() -> usize {
    1
}

/// Contents of `preprocess.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub image: ImagePreprocess,
    pub text: TextPreprocess,
    #[serde(default)]
    pub classifier: Option<ClassifierPreprocess>,
    #[serde(default)]
    pub opset: Option<u32>,
}

impl ImagePreprocess {
    fn validate(&self) -> Result<()> {
        if self.resize_shortest_edge == 0 || self.crop_size == 0 || self.crop_size > self.resize_shortest_edge {
            return Err(Error::BundleMismatch(format!(
                "resize edge {} cannot yield a {} crop",
                self.resize_shortest_edge, self.crop_size
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::BundleMismatch("normalization std must be positive".into()));
        }
        Ok(())
    }

    /// Resizes the shorter side, center-crops, and returns a normalized
    /// channel-major `3 × crop × crop` tensor.
    pub fn apply(&self, img: &RgbImage) -> Result<Vec<f32>> {
        self.validate()?;
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::InvalidSize { index: 0 });
        }
        let edge = self.resize_shortest_edge;
        let (nw, nh) = if w <= h {
            (edge, (u64::from(edge) * u64::from(h) / u64::from(w)) as u32)
        } else {
            ((u64::from(edge) * u64::from(w) / u64::from(h)) as u32, edge)
        };
        let resized = if (nw, nh) == (w, h) {
            img.clone()
        } else {
            imageops::resize(img, nw, nh, self.interpolation.filter())
        };
        let c = self.crop_size;
        let left = ((nw - c) as f64 / 2.0).round() as u32;
        let top = ((nh - c) as f64 / 2.0).round() as u32;
        let cropped = imageops::crop_imm(&resized, left, top, c, c).to_image();
        let plane = (c * c) as usize;
        let mut out = vec![0.0f32; 3 * plane];
        for (i, px) in cropped.pixels().enumerate() {
            for ch in 0..3 {
                let v = f32::from(px.0[ch]) * self.rescale_factor;
                out[ch * plane + i] = (v - self.mean[ch]) / self.std[ch];
            }
        }
        Ok(out)
    }
}
