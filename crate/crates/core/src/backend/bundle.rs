use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingBackend, ImageInput, TextQuery};
use crate::error::{Error, Result};

pub const IMAGE_ENCODER: &str = "image_encoder.onnx";
pub const TEXT_ENCODER: &str = "text_encoder.onnx";
pub const CLASSIFIER: &str = "classifier.onnx";
pub const PREPROCESS: &str = "preprocess.json";
pub const VOCAB: &str = "vocab.json";
pub const MERGES: &str = "merges.txt";
pub const GOLDEN: &str = "golden_fixtures.json";

/// Every file of a complete model bundle.
pub const BUNDLE_FILES: [&str; 7] = [
    IMAGE_ENCODER,
    TEXT_ENCODER,
    CLASSIFIER,
    PREPROCESS,
    VOCAB,
    MERGES,
    GOLDEN,
];

/// Files needed to embed texts and images.
pub const EMBEDDING_FILES: [&str; 5] = [IMAGE_ENCODER, TEXT_ENCODER, PREPROCESS, VOCAB, MERGES];
/// Files needed for class probabilities and features.
pub const CLASSIFIER_FILES: [&str; 2] = [CLASSIFIER, PREPROCESS];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleFiles {
    dir: PathBuf,
}

impl BundleFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        BundleFiles { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Fails with [`Error::BundleIncomplete`] naming every absent file.
    pub fn require(&self, names: &[&str]) -> Result<()> {
        let missing: Vec<String> = names
            .iter()
            .filter(|n| !self.path(n).is_file())
            .map(|n| n.to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::BundleIncomplete {
                dir: self.dir.clone(),
                missing,
            })
        }
    }

    pub fn check_complete(&self) -> Result<()> {
        self.require(&BUNDLE_FILES)
    }

    pub fn golden_fixtures(&self) -> Result<GoldenFixtures> {
        self.require(&[GOLDEN])?;
        let path = self.path(GOLDEN);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextFixture {
    pub text: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFixture {
    /// Image file, relative to the bundle directory.
    pub file: String,
    pub embedding: Vec<f32>,
}

/// Reference embeddings captured when the bundle was exported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenFixtures {
    pub texts: Vec<TextFixture>,
    #[serde(default)]
    pub images: Vec<ImageFixture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub min_text_cosine: f64,
    pub min_image_cosine: f64,
    pub cases: usize,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

impl GoldenFixtures {
    /// Embeds every fixture with `backend` and reports the worst cosine
    /// similarity against the reference embeddings.
    pub fn parity(&self, backend: &dyn EmbeddingBackend, bundle_dir: &Path) -> Result<ParityReport> {
        let queries: Vec<TextQuery<'_>> = self
            .texts
            .iter()
            .map(|t| TextQuery {
                text: &t.text,
                components: None,
            })
            .collect();
        let got = backend.embed_texts(&queries)?;
        let min_text_cosine = got
            .iter()
            .zip(&self.texts)
            .map(|(g, f)| cosine(g, &f.embedding))
            .fold(f64::INFINITY, f64::min);
        let inputs: Vec<ImageInput> = self
            .images
            .iter()
            .map(|f| ImageInput {
                image_id: f.file.clone(),
                path: bundle_dir.join(&f.file),
                planted: None,
            })
            .collect();
        let got = backend.embed_images(&inputs)?;
        let min_image_cosine = got
            .iter()
            .zip(&self.images)
            .map(|(g, f)| cosine(g, &f.embedding))
            .fold(f64::INFINITY, f64::min);
        Ok(ParityReport {
            min_text_cosine,
            min_image_cosine,
            cases: self.texts.len() + self.images.len(),
        })
    }
}
