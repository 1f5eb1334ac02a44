//! Image–text scoring and classifier backends.
//!
//! [`EmbeddingBackend`] is the scoring contract: unit-norm text and image
//! embeddings that can be compared by cosine similarity. [`ClassifierBackend`]
//! produces class probabilities and pooled features for the distribution
//! metrics. Two implementations ship: [`MockBackend`], an exact oracle driven
//! by ground-truth component sets, and (with the `onnx` feature) an ONNX
//! backend reading an exported model bundle.

pub mod bundle;
mod cache;
mod mock;
#[cfg(feature = "onnx")]
mod onnx;
pub mod preprocess;
pub mod tokenizer;

use std::path::PathBuf;

use sha2::{Digest, Sha256};

pub use bundle::{BundleFiles, GoldenFixtures, BUNDLE_FILES};
pub use cache::EmbeddingCache;
pub use mock::{MockBackend, MockWorldConfig};
#[cfg(feature = "onnx")]
pub use onnx::OnnxBackend;

use crate::error::{Error, Result};
use crate::metrics::{FeatureMatrix, ProbMatrix};

/// A text to embed. `components` carries the structured subset (vocabulary
/// indices) for backends that score sets rather than strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextQuery<'a> {
    pub text: &'a str,
    pub components: Option<&'a [usize]>,
}

/// An image to embed or classify. `planted` is the ground-truth component
/// set when one is known (composites, synthetic fixtures).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInput {
    pub image_id: String,
    pub path: PathBuf,
    pub planted: Option<Vec<usize>>,
}

pub(crate) fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub trait EmbeddingBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn embed_dim(&self) -> usize;

    fn embed_texts(&self, texts: &[TextQuery<'_>]) -> Result<Vec<Vec<f32>>>;

    fn embed_images(&self, images: &[ImageInput]) -> Result<Vec<Vec<f32>>>;

    /// Content key for a text; equal keys must yield equal embeddings.
    fn text_key(&self, text: &TextQuery<'_>) -> String {
        sha256_hex(&[b"text", text.text.as_bytes()])
    }

    /// Content key for an image, by default the hash of its file bytes.
    fn image_key(&self, image: &ImageInput) -> Result<String> {
        let bytes = std::fs::read(&image.path).map_err(|e| Error::ImageLoadError {
            path: image.path.clone(),
            reason: e.to_string(),
        })?;
        Ok(sha256_hex(&[b"image", &bytes]))
    }
}

pub trait ClassifierBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn class_count(&self) -> usize;

    fn feature_dim(&self) -> usize;

    /// Class probabilities and pooled features in one pass.
    fn classify(&self, images: &[ImageInput]) -> Result<(ProbMatrix, FeatureMatrix)>;

    fn class_probs(&self, images: &[ImageInput]) -> Result<ProbMatrix> {
        self.classify(images).map(|(p, _)| p)
    }

    fn features(&self, images: &[ImageInput]) -> Result<FeatureMatrix> {
        self.classify(images).map(|(_, f)| f)
    }
}

pub(crate) fn l2_normalize(v: &mut [f32]) -> Result<()> {
    let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::NumericalError(format!("cannot normalize vector of norm {norm}")));
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(())
}
