use std::fs;
use std::path::Path;

use image::RgbImage;
use nalgebra::DMatrix;
use tract_onnx::prelude::*;

use super::bundle::{self, BundleFiles};
use super::preprocess::{ClassifierPreprocess, PreprocessConfig};
use super::tokenizer::ClipTokenizer;
use super::{l2_normalize, sha256_hex, ClassifierBackend, EmbeddingBackend, ImageInput, TextQuery};
use crate::error::{Error, Result};
use crate::metrics::{FeatureMatrix, ProbMatrix};

type Plan = TypedRunnableModel<TypedModel>;

fn backend_err(e: impl std::fmt::Display) -> Error {
    Error::Backend(e.to_string())
}

fn load_plan(path: &Path, facts: Vec<InferenceFact>) -> Result<(Plan, usize)> {
    let mut model = tract_onnx::onnx().model_for_path(path).map_err(backend_err)?;
    let inputs = model.input_outlets().map_err(backend_err)?.len();
    for (i, fact) in facts.into_iter().enumerate().take(inputs) {
        model = model.with_input_fact(i, fact).map_err(backend_err)?;
    }
    let plan = model
        .into_optimized()
        .and_then(|m| m.into_runnable())
        .map_err(backend_err)?;
    Ok((plan, inputs))
}

fn load_image(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::ImageLoadError {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

fn output_row(outputs: &TVec<TValue>, index: usize) -> Result<Vec<f32>> {
    let t = outputs
        .get(index)
        .ok_or_else(|| Error::BundleMismatch(format!("model has no output {index}")))?;
    let view = t.to_array_view::<f32>().map_err(backend_err)?;
    Ok(view.iter().copied().collect())
}

/// ONNX-backed encoders and classifier read from an exported bundle.
/// Inference runs one item at a time with fixed batch size 1.
pub struct OnnxBackend {
    id: String,
    config: PreprocessConfig,
    tokenizer: Option<ClipTokenizer>,
    text: Option<(Plan, usize)>,
    image: Option<Plan>,
    classifier: Option<(Plan, ClassifierPreprocess, usize, usize)>,
    embed_dim: usize,
}

impl std::fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackend").field("id", &self.id).finish_non_exhaustive()
    }
}

impl OnnxBackend {
    /// Loads the encoders. Fails with `BundleIncomplete` if any embedding
    /// file is missing.
    pub fn embedding(dir: &Path) -> Result<Self> {
        Self::load(dir, true, false)
    }

    /// Loads the classifier only.
    pub fn classifier(dir: &Path) -> Result<Self> {
        Self::load(dir, false, true)
    }

    fn load(dir: &Path, embed: bool, classify: bool) -> Result<Self> {
        let files = BundleFiles::new(dir);
        if embed {
            files.require(&bundle::EMBEDDING_FILES)?;
        }
        if classify {
            files.require(&bundle::CLASSIFIER_FILES)?;
        }
        let pre_path = files.path(bundle::PREPROCESS);
        let pre_text =
            fs::read_to_string(&pre_path).map_err(|e| Error::io(format!("reading {}", pre_path.display()), e))?;
        let config: PreprocessConfig = serde_json::from_str(&pre_text)?;
        let mut backend = OnnxBackend {
            id: String::new(),
            config,
            tokenizer: None,
            text: None,
            image: None,
            classifier: None,
            embed_dim: 0,
        };
        let mut hashed: Vec<Vec<u8>> = vec![pre_text.into_bytes()];
        if embed {
            let ctx = backend.config.text.context_length;
            backend.tokenizer = Some(
                ClipTokenizer::from_files(&files.path(bundle::VOCAB), &files.path(bundle::MERGES))?
                    .with_context_length(ctx)
                    .with_pad_id(backend.config.text.pad_token_id),
            );
            let ids = InferenceFact::dt_shape(i64::datum_type(), tvec![1, ctx]);
            backend.text = Some(load_plan(&files.path(bundle::TEXT_ENCODER), vec![ids.clone(), ids])?);
            let c = backend.config.image.crop_size as usize;
            let pixels = InferenceFact::dt_shape(f32::datum_type(), tvec![1, 3, c, c]);
            backend.image = Some(load_plan(&files.path(bundle::IMAGE_ENCODER), vec![pixels])?.0);
            for f in [bundle::TEXT_ENCODER, bundle::IMAGE_ENCODER, bundle::VOCAB, bundle::MERGES] {
                hashed.push(fs::read(files.path(f)).map_err(|e| Error::io(format!("reading {f}"), e))?);
            }
            backend.embed_dim = backend.embed_texts(&[TextQuery { text: "", components: None }])?[0].len();
        }
        if classify {
            let cls = backend
                .config
                .classifier
                .clone()
                .ok_or_else(|| Error::BundleMismatch("preprocess.json has no classifier section".into()))?;
            let c = cls.image.crop_size as usize;
            let pixels = InferenceFact::dt_shape(f32::datum_type(), tvec![1, 3, c, c]);
            let plan = load_plan(&files.path(bundle::CLASSIFIER), vec![pixels])?.0;
            hashed.push(fs::read(files.path(bundle::CLASSIFIER)).map_err(|e| Error::io("reading classifier", e))?);
            let probe = Tensor::zero::<f32>(&[1, 3, c, c]).map_err(backend_err)?;
            let out = plan.run(tvec!(probe.into())).map_err(backend_err)?;
            let classes = output_row(&out, cls.logits_output)?.len();
            let features = output_row(&out, cls.features_output)?.len();
            backend.classifier = Some((plan, cls, classes, features));
        }
        let refs: Vec<&[u8]> = hashed.iter().map(Vec::as_slice).collect();
        backend.id = format!("onnx-{}", &sha256_hex(&refs)[..16]);
        Ok(backend)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        let (plan, inputs) = self.text.as_ref().ok_or_else(|| Error::Backend("text encoder not loaded".into()))?;
        let enc = self.tokenizer.as_ref().expect("loaded with text encoder").encode(text)?;
        let ctx = enc.ids.len();
        let ids: Vec<i64> = enc.ids.iter().map(|&i| i64::from(i)).collect();
        let mut feed: TVec<TValue> = tvec!(Tensor::from_shape(&[1, ctx], &ids).map_err(backend_err)?.into());
        if *inputs >= 2 {
            let mask: Vec<i64> = enc.attention_mask().iter().map(|&m| i64::from(m)).collect();
            feed.push(Tensor::from_shape(&[1, ctx], &mask).map_err(backend_err)?.into());
        }
        let out = plan.run(feed).map_err(backend_err)?;
        let mut v = output_row(&out, 0)?;
        l2_normalize(&mut v)?;
        Ok(v)
    }

    fn run_image(plan: &Plan, tensor: Vec<f32>, crop: usize) -> Result<TVec<TValue>> {
        let t = Tensor::from_shape(&[1, 3, crop, crop], &tensor).map_err(backend_err)?;
        plan.run(tvec!(t.into())).map_err(backend_err)
    }

    fn embed_image(&self, path: &Path) -> Result<Vec<f32>> {
        let plan = self.image.as_ref().ok_or_else(|| Error::Backend("image encoder not loaded".into()))?;
        let tensor = self.config.image.apply(&load_image(path)?)?;
        let out = Self::run_image(plan, tensor, self.config.image.crop_size as usize)?;
        let mut v = output_row(&out, 0)?;
        l2_normalize(&mut v)?;
        Ok(v)
    }
}

impl EmbeddingBackend for OnnxBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn embed_texts(&self, texts: &[TextQuery<'_>]) -> Result<Vec<Vec<f32>>> {
        texts.iter().map(|t| self.embed_text(t.text)).collect()
    }

    fn embed_images(&self, images: &[ImageInput]) -> Result<Vec<Vec<f32>>> {
        images.iter().map(|i| self.embed_image(&i.path)).collect()
    }
}

impl ClassifierBackend for OnnxBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn class_count(&self) -> usize {
        self.classifier.as_ref().map_or(0, |c| c.2)
    }

    fn feature_dim(&self) -> usize {
        self.classifier.as_ref().map_or(0, |c| c.3)
    }

    fn classify(&self, images: &[ImageInput]) -> Result<(ProbMatrix, FeatureMatrix)> {
        let (plan, cls, classes, dim) = self
            .classifier
            .as_ref()
            .ok_or_else(|| Error::Backend("classifier not loaded".into()))?;
        let mut probs = Vec::with_capacity(images.len() * classes);
        let mut feats = Vec::with_capacity(images.len() * dim);
        for img in images {
            let tensor = cls.image.apply(&load_image(&img.path)?)?;
            let out = Self::run_image(plan, tensor, cls.image.crop_size as usize)?;
            let logits: Vec<f64> = output_row(&out, cls.logits_output)?.iter().map(|&x| f64::from(x)).collect();
            if cls.outputs_are_probabilities {
                probs.extend(logits);
            } else {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                probs.extend(exps.iter().map(|e| e / total));
            }
            feats.extend(output_row(&out, cls.features_output)?.iter().map(|&x| f64::from(x)));
        }
        let n = images.len();
        Ok((
            ProbMatrix::new(DMatrix::from_row_slice(n, *classes, &probs))?,
            FeatureMatrix::new(DMatrix::from_row_slice(n, *dim, &feats))?,
        ))
    }
}
