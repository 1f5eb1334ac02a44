use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{l2_normalize, sha256_hex, ClassifierBackend, EmbeddingBackend, ImageInput, TextQuery};
use crate::error::{Error, Result};
use crate::metrics::{FeatureMatrix, ProbMatrix};
use crate::rng;

/// Logit sharpness of the mock classifier.
const MOCK_CLASS_SCALE: f64 = 10.0;

/// Ground-truth world for [`MockBackend`].
#[derive(Debug, Clone, PartialEq)]
pub struct MockWorldConfig {
    /// Vocabulary size P; embeddings have P + 1 dimensions, the last one
    /// reserved for the empty subset.
    pub vocab_size: usize,
    /// Standard deviation of Gaussian noise added to image embeddings.
    pub noise: f64,
    /// Probability that a planted component is visible, per label.
    pub detection: BTreeMap<usize, f64>,
    /// Visibility probability for labels without an override.
    pub default_detection: f64,
    pub seed: u64,
    /// Check that image files exist and have a readable header.
    pub verify_files: bool,
}

impl MockWorldConfig {
    pub fn perfect(vocab_size: usize) -> Self {
        MockWorldConfig {
            vocab_size,
            noise: 0.0,
            detection: BTreeMap::new(),
            default_detection: 1.0,
            seed: 0,
            verify_files: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::InvalidParameter("mock vocabulary is empty".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidParameter(format!("mock noise must be finite and >= 0, got {}", self.noise)));
        }
        let probs = self.detection.values().chain(std::iter::once(&self.default_detection));
        for &p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("detection probability {p} outside [0, 1]")));
            }
        }
        if let Some(&label) = self.detection.keys().find(|&&l| l >= self.vocab_size) {
            return Err(Error::InvalidParameter(format!("detection override for unknown label {label}")));
        }
        Ok(())
    }

    pub fn detection_probability(&self, label: usize) -> f64 {
        self.detection.get(&label).copied().unwrap_or(self.default_detection)
    }
}

/// Oracle backend: a text embeds as the normalized indicator of its component
/// set, an image as the normalized indicator of its visible planted
/// components. Embeddings depend only on sets, never on order.
#[derive(Debug, Clone)]
pub struct MockBackend {
    config: MockWorldConfig,
    id: String,
}

impl MockBackend {
    pub fn new(config: MockWorldConfig) -> Result<Self> {
        config.validate()?;
        let digest = sha256_hex(&[format!("{config:?}").as_bytes()]);
        let id = format!("mock-p{}-{}", config.vocab_size, &digest[..12]);
        Ok(MockBackend { config, id })
    }

    pub fn config(&self) -> &MockWorldConfig {
        &self.config
    }

    fn dim(&self) -> usize {
        self.config.vocab_size + 1
    }

    fn indicator(&self, set: &[usize]) -> Result<Vec<f32>> {
        let mut v = vec![0.0f32; self.dim()];
        if set.is_empty() {
            v[self.config.vocab_size] = 1.0;
        }
        for &i in set {
            if i >= self.config.vocab_size {
                return Err(Error::MockResolutionError(format!(
                    "label {i} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
            v[i] = 1.0;
        }
        l2_normalize(&mut v)?;
        Ok(v)
    }

    pub fn text_embedding(&self, components: &[usize]) -> Result<Vec<f32>> {
        self.indicator(components)
    }

    /// Embedding of an image whose planted components are `planted`. Each
    /// component survives with its detection probability, drawn from the
    /// image's own stream.
    pub fn image_embedding(&self, image_id: &str, planted: &[usize]) -> Result<Vec<f32>> {
        let mut rng = rng::child(self.config.seed, &[rng::key_id(image_id)]);
        let mut sorted = planted.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let visible: Vec<usize> = sorted
            .into_iter()
            .filter(|&c| {
                let p = self.config.detection_probability(c);
                p >= 1.0 || rng.random::<f64>() < p
            })
            .collect();
        let mut v = self.indicator(&visible)?;
        if self.config.noise > 0.0 {
            for x in v.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x += (self.config.noise * z) as f32;
            }
            l2_normalize(&mut v)?;
        }
        Ok(v)
    }

    fn planted<'a>(&self, image: &'a ImageInput) -> Result<&'a [usize]> {
        if self.config.verify_files {
            image::image_dimensions(&image.path).map_err(|e| Error::ImageLoadError {
                path: image.path.clone(),
                reason: e.to_string(),
            })?;
        }
        image.planted.as_deref().ok_or_else(|| {
            Error::MockResolutionError(format!("image {} has no planted components", image.image_id))
        })
    }
}

impl EmbeddingBackend for MockBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn embed_dim(&self) -> usize {
        self.dim()
    }

    fn embed_texts(&self, texts: &[TextQuery<'_>]) -> Result<Vec<Vec<f32>>> {
        texts
            .iter()
            .map(|t| {
                let set = t.components.ok_or_else(|| {
                    Error::MockResolutionError(format!("text {:?} has no structured subset", t.text))
                })?;
                self.text_embedding(set)
            })
            .collect()
    }

    fn embed_images(&self, images: &[ImageInput]) -> Result<Vec<Vec<f32>>> {
        images
            .iter()
            .map(|img| self.image_embedding(&img.image_id, self.planted(img)?))
            .collect()
    }

    fn text_key(&self, text: &TextQuery<'_>) -> String {
        let mut set: Vec<usize> = text.components.unwrap_or(&[]).to_vec();
        set.sort_unstable();
        let encoded: Vec<u8> = set.iter().flat_map(|i| (*i as u64).to_le_bytes()).collect();
        let tag: &[u8] = if text.components.is_some() { b"set" } else { b"none" };
        sha256_hex(&[b"mock-text", tag, &encoded])
    }

    fn image_key(&self, image: &ImageInput) -> Result<String> {
        let mut set = self.planted(image)?.to_vec();
        set.sort_unstable();
        let encoded: Vec<u8> = set.iter().flat_map(|i| (*i as u64).to_le_bytes()).collect();
        Ok(sha256_hex(&[b"mock-image", image.image_id.as_bytes(), &encoded]))
    }
}

impl ClassifierBackend for MockBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn class_count(&self) -> usize {
        self.config.vocab_size
    }

    fn feature_dim(&self) -> usize {
        self.dim()
    }

    /// Probabilities are a softmax over the label coordinates of the image
    /// embedding; features are the embedding itself.
    fn classify(&self, images: &[ImageInput]) -> Result<(ProbMatrix, FeatureMatrix)> {
        let embeddings = self.embed_images(images)?;
        let n = embeddings.len();
        let p = self.config.vocab_size;
        let mut probs = Vec::with_capacity(n * p);
        let mut feats = Vec::with_capacity(n * (p + 1));
        for e in &embeddings {
            let logits: Vec<f64> = e[..p].iter().map(|&x| MOCK_CLASS_SCALE * f64::from(x)).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            probs.extend(exps.iter().map(|x| x / total));
            feats.extend(e.iter().map(|&x| f64::from(x)));
        }
        Ok((
            ProbMatrix::new(DMatrix::from_row_slice(n, p, &probs))?,
            FeatureMatrix::new(DMatrix::from_row_slice(n, p + 1, &feats))?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::classify_subsets;
    use std::path::PathBuf;

    fn image(id: &str, planted: &[usize]) -> ImageInput {
        ImageInput {
            image_id: id.into(),
            path: PathBuf::new(),
            planted: Some(planted.to_vec()),
        }
    }

    #[test]
    fn text_embeddings_are_set_indicators() {
        let m = MockBackend::new(MockWorldConfig::perfect(3)).unwrap();
        assert_eq!(m.text_embedding(&[1]).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.text_embedding(&[]).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        let two = m.text_embedding(&[0, 1]).unwrap();
        let r = std::f32::consts::FRAC_1_SQRT_2;
        assert!((two[0] - r).abs() < 1e-7 && (two[1] - r).abs() < 1e-7 && two[2] == 0.0);
        assert!(matches!(m.text_embedding(&[3]), Err(Error::MockResolutionError(_))));
        let q = TextQuery { text: "a sock", components: None };
        assert!(matches!(m.embed_texts(&[q]), Err(Error::MockResolutionError(_))));
    }

    #[test]
    fn planted_pair_selects_full_mask() {
        // Exhaustive cosine comparison over the four subsets of {0, 1}.
        let m = MockBackend::new(MockWorldConfig::perfect(3)).unwrap();
        let texts: Vec<Vec<f32>> = [vec![], vec![0], vec![1], vec![0, 1]]
            .iter()
            .map(|s| m.text_embedding(s).unwrap())
            .collect();
        let full = m.image_embedding("x", &[0, 1]).unwrap();
        assert_eq!(classify_subsets(&full, &texts, 100.0).unwrap().argmax_entry, 0b11);
        let one = m.image_embedding("x", &[0]).unwrap();
        assert_eq!(classify_subsets(&one, &texts, 100.0).unwrap().argmax_entry, 0b01);
        let none = m.image_embedding("x", &[]).unwrap();
        assert_eq!(classify_subsets(&none, &texts, 100.0).unwrap().argmax_entry, 0);
    }

    #[test]
    fn images_are_deterministic_and_unit_norm() {
        let cfg = MockWorldConfig {
            noise: 0.3,
            default_detection: 0.5,
            seed: 4,
            ..MockWorldConfig::perfect(10)
        };
        let m = MockBackend::new(cfg).unwrap();
        let imgs = [image("a", &[1, 2, 3]), image("b", &[1, 2, 3])];
        let first = m.embed_images(&imgs).unwrap();
        assert_eq!(first, m.embed_images(&imgs).unwrap());
        assert_ne!(first[0], first[1]);
        for e in &first {
            let norm: f32 = e.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn order_of_planted_components_is_irrelevant() {
        let cfg = MockWorldConfig {
            default_detection: 0.5,
            ..MockWorldConfig::perfect(10)
        };
        let m = MockBackend::new(cfg).unwrap();
        assert_eq!(
            m.image_embedding("z", &[4, 1, 7]).unwrap(),
            m.image_embedding("z", &[7, 4, 1]).unwrap()
        );
        let q1 = TextQuery { text: "x", components: Some(&[1, 4]) };
        let q2 = TextQuery { text: "y", components: Some(&[4, 1]) };
        assert_eq!(m.text_key(&q1), m.text_key(&q2));
    }

    #[test]
    fn config_validation() {
        let mut cfg = MockWorldConfig::perfect(3);
        cfg.noise = f64::NAN;
        assert!(MockBackend::new(cfg).is_err());
        let mut cfg = MockWorldConfig::perfect(3);
        cfg.detection.insert(5, 0.5);
        assert!(MockBackend::new(cfg).is_err());
        let mut cfg = MockWorldConfig::perfect(3);
        cfg.default_detection = 1.5;
        assert!(MockBackend::new(cfg).is_err());
    }

    #[test]
    fn classifier_rows_are_distributions() {
        let m = MockBackend::new(MockWorldConfig::perfect(5)).unwrap();
        let (p, f) = m.classify(&[image("a", &[0]), image("b", &[1, 2])]).unwrap();
        assert_eq!((p.nrows(), p.ncols(), f.ncols()), (2, 5, 6));
        for row in p.matrix().row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
