//! End-to-end CIS evaluation over a prompt set and an image manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{ClassifierBackend, EmbeddingBackend, EmbeddingCache, ImageInput, TextQuery};
use crate::error::{Error, Result};
use crate::io::read_jsonl;
use crate::lookup::{build_lookup, LookupOptions};
use crate::metrics::{FeatureMatrix, ProbMatrix};
use crate::promptgen::PromptSpec;
use crate::scoring::{aggregate_cis, classify_subsets, score_image, CisResult, ScoreRecord, DEFAULT_SCALE};

/// One image to score. Composite manifests deserialize directly: their
/// `composite_path` and `component_indices` fill `image_path` and `planted`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub prompt_id: u64,
    #[serde(default)]
    pub image_id: String,
    #[serde(alias = "composite_path")]
    pub image_path: String,
    #[serde(default, alias = "component_indices", skip_serializing_if = "Option::is_none")]
    pub planted: Option<Vec<usize>>,
}

impl ImageEntry {
    /// An in-memory image with known components and no file behind it.
    pub fn planted(prompt_id: u64, image_id: impl Into<String>, planted: Vec<usize>) -> Self {
        ImageEntry {
            prompt_id,
            image_id: image_id.into(),
            image_path: String::new(),
            planted: Some(planted),
        }
    }

    fn input(&self) -> ImageInput {
        ImageInput {
            image_id: self.image_id.clone(),
            path: PathBuf::from(&self.image_path),
            planted: self.planted.clone(),
        }
    }
}

/// Reads an image manifest; relative paths are resolved against the
/// manifest's directory and missing image ids default to the file stem.
pub fn load_image_manifest(path: &Path) -> Result<Vec<ImageEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries: Vec<ImageEntry> = read_jsonl(path)?;
    for e in &mut entries {
        let p = Path::new(&e.image_path);
        if p.is_relative() && !e.image_path.is_empty() {
            e.image_path = base.join(p).display().to_string();
        }
        if e.image_id.is_empty() {
            e.image_id = Path::new(&e.image_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub scale: f64,
    pub lookup: LookupOptions,
    /// Drop unreadable images instead of aborting.
    pub skip_broken: bool,
    /// Expected images per prompt; inferred from the manifest when `None`.
    pub images_per_prompt: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            scale: DEFAULT_SCALE,
            lookup: LookupOptions::default(),
            skip_broken: false,
            images_per_prompt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub prompt_id: u64,
    pub image_id: String,
    pub image_path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub result: CisResult,
    /// Ordered by prompt id, then manifest order.
    pub records: Vec<ScoreRecord>,
    pub skipped: Vec<SkippedImage>,
}

fn group_images<'a>(
    prompts: &[PromptSpec],
    images: &'a [ImageEntry],
) -> Result<BTreeMap<u64, Vec<&'a ImageEntry>>> {
    let mut grouped: BTreeMap<u64, Vec<&ImageEntry>> =
        prompts.iter().map(|p| (p.prompt_id(), Vec::new())).collect();
    for img in images {
        grouped
            .get_mut(&img.prompt_id)
            .ok_or_else(|| {
                Error::ProtocolError(format!(
                    "image {} refers to unknown prompt {}",
                    img.image_id, img.prompt_id
                ))
            })?
            .push(img);
    }
    Ok(grouped)
}

fn cached_texts(
    backend: &dyn EmbeddingBackend,
    cache: &EmbeddingCache,
    queries: &[TextQuery<'_>],
) -> Result<Vec<Vec<f32>>> {
    let keys: Vec<String> = queries
        .iter()
        .map(|q| format!("{}:{}", backend.backend_id(), backend.text_key(q)))
        .collect();
    let mut out: Vec<Option<Vec<f32>>> = keys.iter().map(|k| cache.get(k).map(|v| v.to_vec())).collect();
    let misses: Vec<usize> = (0..queries.len()).filter(|&i| out[i].is_none()).collect();
    if !misses.is_empty() {
        let batch: Vec<TextQuery<'_>> = misses.iter().map(|&i| queries[i]).collect();
        for (&i, v) in misses.iter().zip(backend.embed_texts(&batch)?) {
            cache.insert(keys[i].clone(), v.clone());
            out[i] = Some(v);
        }
    }
    Ok(out.into_iter().map(|v| v.expect("filled")).collect())
}

fn cached_image(backend: &dyn EmbeddingBackend, cache: &EmbeddingCache, input: &ImageInput) -> Result<Vec<f32>> {
    let key = format!("{}:{}", backend.backend_id(), backend.image_key(input)?);
    if let Some(v) = cache.get(&key) {
        return Ok(v.to_vec());
    }
    let v = backend
        .embed_images(std::slice::from_ref(input))?
        .pop()
        .ok_or_else(|| Error::Backend("backend returned no embedding".into()))?;
    cache.insert(key, v.clone());
    Ok(v)
}

fn is_image_failure(e: &Error) -> bool {
    matches!(e, Error::ImageLoadError { .. })
}

type PromptOutcome = (Vec<ScoreRecord>, Vec<SkippedImage>);

fn evaluate_prompt(
    prompt: &PromptSpec,
    images: &[&ImageEntry],
    backend: &dyn EmbeddingBackend,
    cache: &EmbeddingCache,
    options: &EvalOptions,
) -> Result<PromptOutcome> {
    let table = build_lookup(prompt, options.lookup)?;
    let members: Vec<Vec<usize>> = table.entries().iter().map(|e| table.members(e.mask)).collect();
    let queries: Vec<TextQuery<'_>> = table
        .entries()
        .iter()
        .zip(&members)
        .map(|(e, m)| TextQuery {
            text: &e.text,
            components: Some(m),
        })
        .collect();
    let texts = cached_texts(backend, cache, &queries)?;
    let mut records = Vec::with_capacity(images.len());
    let mut skipped = Vec::new();
    for img in images {
        let embedding = match cached_image(backend, cache, &img.input()) {
            Ok(v) => v,
            Err(e) if options.skip_broken && is_image_failure(&e) => {
                log::warn!("skipping image {} of prompt {}: {e}", img.image_id, img.prompt_id);
                skipped.push(SkippedImage {
                    prompt_id: img.prompt_id,
                    image_id: img.image_id.clone(),
                    image_path: img.image_path.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let c = classify_subsets(&embedding, &texts, options.scale)?;
        records.push(score_image(prompt, &table, c.argmax_entry, &img.image_id, &img.image_path)?);
    }
    Ok((records, skipped))
}

/// Scores every image against its prompt's subset lattice and aggregates
/// CIS_K. All prompts must share one K. Prompts are processed in parallel;
/// output order and the aggregate are independent of scheduling.
pub fn evaluate(
    prompts: &[PromptSpec],
    images: &[ImageEntry],
    backend: &dyn EmbeddingBackend,
    cache: &EmbeddingCache,
    options: &EvalOptions,
) -> Result<EvalRun> {
    let grouped = group_images(prompts, images)?;
    let n = options
        .images_per_prompt
        .unwrap_or_else(|| grouped.values().map(Vec::len).max().unwrap_or(0));
    if n == 0 {
        return Err(Error::InvalidParameter("no images to evaluate".into()));
    }
    let outcomes: Vec<PromptOutcome> = prompts
        .par_iter()
        .map(|p| evaluate_prompt(p, &grouped[&p.prompt_id()], backend, cache, options))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (r, s) in outcomes {
        records.extend(r);
        skipped.extend(s);
    }
    let result = aggregate_cis(&records, prompts, n, options.skip_broken)?;
    Ok(EvalRun {
        result,
        records,
        skipped,
    })
}

/// Class probabilities and features for every manifest image, in manifest
/// order.
pub fn classify_images(
    images: &[ImageEntry],
    backend: &dyn ClassifierBackend,
    batch: usize,
) -> Result<(ProbMatrix, FeatureMatrix)> {
    if images.is_empty() {
        return Err(Error::InvalidParameter("no images to classify".into()));
    }
    let inputs: Vec<ImageInput> = images.iter().map(ImageEntry::input).collect();
    let parts: Vec<(ProbMatrix, FeatureMatrix)> = inputs
        .par_chunks(batch.max(1))
        .map(|chunk| backend.classify(chunk))
        .collect::<Result<_>>()?;
    let probs: Vec<f64> = parts
        .iter()
        .flat_map(|(p, _)| p.matrix().transpose().iter().copied().collect::<Vec<_>>())
        .collect();
    let feats: Vec<f64> = parts
        .iter()
        .flat_map(|(_, f)| f.matrix().transpose().iter().copied().collect::<Vec<_>>())
        .collect();
    let n = images.len();
    Ok((
        ProbMatrix::from_rows(n, backend.class_count(), &probs)?,
        FeatureMatrix::from_rows(n, backend.feature_dim(), &feats)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockWorldConfig};
    use crate::promptgen::{sample_prompts, Grammar};
    use crate::vocabulary::Vocabulary;

    fn setup(k: usize, m: usize) -> (Vocabulary, Vec<PromptSpec>) {
        let v = Vocabulary::from_names((0..12).map(|i| format!("thing{i}"))).unwrap();
        let p = sample_prompts(&v, k, m, 5, Grammar::default()).unwrap();
        (v, p)
    }

    #[test]
    fn adversarial_images_score_zero() {
        let (v, prompts) = setup(3, 4);
        let images: Vec<ImageEntry> = prompts
            .iter()
            .flat_map(|p| (0..2).map(move |i| ImageEntry::planted(p.prompt_id(), format!("{i}"), vec![])))
            .collect();
        let backend = MockBackend::new(MockWorldConfig::perfect(v.len())).unwrap();
        let run = evaluate(&prompts, &images, &backend, &EmbeddingCache::in_memory(), &EvalOptions::default()).unwrap();
        assert_eq!(run.result.cis, 0.0);
        assert!(run.records.iter().all(|r| r.argmax_mask == 0));
    }

    #[test]
    fn unknown_prompt_is_a_protocol_error() {
        let (v, prompts) = setup(2, 2);
        let images = vec![ImageEntry::planted(99, "x", vec![])];
        let backend = MockBackend::new(MockWorldConfig::perfect(v.len())).unwrap();
        assert!(matches!(
            evaluate(&prompts, &images, &backend, &EmbeddingCache::in_memory(), &EvalOptions::default()),
            Err(Error::ProtocolError(_))
        ));
    }

    #[test]
    fn broken_images_abort_or_are_skipped() {
        let (v, prompts) = setup(2, 1);
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.png");
        image::RgbImage::new(4, 4).save(&good).unwrap();
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"not a png").unwrap();
        let p = &prompts[0];
        let entry = |id: &str, path: &Path| ImageEntry {
            prompt_id: p.prompt_id(),
            image_id: id.into(),
            image_path: path.display().to_string(),
            planted: Some(p.component_indices()),
        };
        let images = vec![entry("good", &good), entry("bad", &bad)];
        let cfg = MockWorldConfig {
            verify_files: true,
            ..MockWorldConfig::perfect(v.len())
        };
        let backend = MockBackend::new(cfg).unwrap();
        let cache = EmbeddingCache::in_memory();
        assert!(matches!(
            evaluate(&prompts, &images, &backend, &cache, &EvalOptions::default()),
            Err(Error::ImageLoadError { .. })
        ));
        let opts = EvalOptions {
            skip_broken: true,
            ..Default::default()
        };
        let run = evaluate(&prompts, &images, &backend, &cache, &opts).unwrap();
        assert_eq!(run.skipped.len(), 1);
        assert_eq!(run.skipped[0].image_id, "bad");
        assert_eq!(run.result.records, 1);
        assert_eq!(run.result.cis, 1.0);
    }

    #[test]
    fn cache_is_populated_and_reused() {
        let (v, prompts) = setup(2, 3);
        let images: Vec<ImageEntry> = prompts
            .iter()
            .map(|p| ImageEntry::planted(p.prompt_id(), "0", p.component_indices()))
            .collect();
        let backend = MockBackend::new(MockWorldConfig::perfect(v.len())).unwrap();
        let cache = EmbeddingCache::in_memory();
        let a = evaluate(&prompts, &images, &backend, &cache, &EvalOptions::default()).unwrap();
        let filled = cache.len();
        assert!(filled > 0);
        let b = evaluate(&prompts, &images, &backend, &cache, &EvalOptions::default()).unwrap();
        assert_eq!(cache.len(), filled);
        assert_eq!(a, b);
    }

    #[test]
    fn composite_manifest_lines_deserialize() {
        let line = r#"{"composite_path":"p000001_000.png","prompt_id":1,"k":2,"component_indices":[3,4],
            "source_paths":["a","b"],"layout":{"rows":[2],"canvas_w":10,"canvas_h":5},"seed":0}"#;
        let e: ImageEntry = serde_json::from_str(line).unwrap();
        assert_eq!(e.image_path, "p000001_000.png");
        assert_eq!(e.planted, Some(vec![3, 4]));
    }
}
