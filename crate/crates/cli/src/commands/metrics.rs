use std::path::Path;

use compo_core::backend::ClassifierBackend;
use compo_core::io::{read_matrix, write_matrix, CachedMatrix, MatrixKind};
use compo_core::metrics::{fit_gaussian, frechet_distance, inception_score, FeatureMatrix, ProbMatrix};
use compo_core::pipeline::{classify_images, load_image_manifest, ImageEntry};
use compo_core::report::{format_fid, format_is, MetricsSummary};
use compo_core::vocabulary::Vocabulary;
use compo_core::Error;

use super::{apply_backend, apply_vocab, args_value, classifier_backend, load_optional_vocab, out_dir, require};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::{FidArgs, IsArgs};

const BATCH: usize = 32;

fn infer_k(explicit: Option<usize>, images: Option<&[ImageEntry]>) -> CliResult<usize> {
    explicit
        .or_else(|| images.and_then(|i| i.first()).and_then(|e| e.planted.as_ref()).map(Vec::len))
        .ok_or_else(|| CliError::Config("cannot tell the component count of these images; pass --k".into()))
}

fn read_cached(path: &Path, kind: MatrixKind) -> CliResult<CachedMatrix> {
    require(path, "metrics is / metrics fid")?;
    let m = read_matrix(path)?;
    if m.kind != kind {
        return Err(Error::ProtocolError(format!("{} holds the wrong kind of matrix", path.display())).into());
    }
    Ok(m)
}

struct Classified {
    entries: Vec<ImageEntry>,
    probs: ProbMatrix,
    features: FeatureMatrix,
}

fn classify(
    run: &mut Run,
    manifest: &Path,
    backend: &dyn ClassifierBackend,
    prefix: &str,
) -> CliResult<Classified> {
    require(manifest, "mcid build")?;
    run.input(manifest)?;
    let entries = load_image_manifest(manifest)?;
    let (probs, features) = classify_images(&entries, backend, BATCH)?;
    for (name, m, kind) in [
        (format!("{prefix}probs.f32"), probs.matrix(), MatrixKind::Probabilities),
        (format!("{prefix}features.f32"), features.matrix(), MatrixKind::Features),
    ] {
        write_matrix(&run.path(&name), &CachedMatrix::from_dmatrix(m, kind, backend.backend_id()))?;
        run.output(&name)?;
        run.output(&format!("{name}.json"))?;
    }
    Ok(Classified {
        entries,
        probs,
        features,
    })
}

fn setup(cfg: &mut RunConfig, vocab_args: &crate::VocabArgs, backend: &crate::BackendArgs) -> CliResult<Option<Vocabulary>> {
    apply_vocab(cfg, vocab_args);
    apply_backend(cfg, backend);
    cfg.validate()?;
    Ok(load_optional_vocab(cfg, vocab_args)?.map(|v| v.1))
}

pub fn inception(mut cfg: RunConfig, a: &IsArgs) -> CliResult<()> {
    if let Some(s) = a.splits {
        cfg.splits = s;
    }
    let out = out_dir(&mut cfg, &a.out)?;
    let vocab = setup(&mut cfg, &a.vocab, &a.backend)?;
    let mut run = Run::new("metrics is", &out, cfg.recorded(), args_value(a))?;
    if let Some(p) = &cfg.vocabulary {
        run.input(p)?;
    }
    let (probs, k, backend_id) = match (&a.images, &a.probs) {
        (Some(manifest), _) => {
            let backend = classifier_backend(&cfg, vocab.as_ref())?;
            let c = classify(&mut run, manifest, backend.as_ref(), "")?;
            (c.probs, infer_k(a.k, Some(&c.entries))?, backend.backend_id().to_string())
        }
        (None, Some(path)) => {
            run.input(path)?;
            let m = read_cached(path, MatrixKind::Probabilities)?;
            (ProbMatrix::new(m.to_dmatrix())?, infer_k(a.k, None)?, m.backend_id)
        }
        (None, None) => return Err(CliError::Config("pass --images or --probs".into())),
    };
    let is = inception_score(&probs, cfg.splits)?;
    let summary = MetricsSummary {
        model: a.model.clone(),
        k,
        is_mean: Some(is.mean),
        is_std: Some(is.std),
        fid: None,
        splits: Some(cfg.splits),
        n_images: probs.nrows(),
        backend_id,
        vocab_hash: vocab.map(|v| v.content_hash()).unwrap_or_default(),
    };
    run.write_json("metrics.json", &summary)?;
    println!("{} K={k}: IS = {}", a.model, format_is(is.mean, is.std));
    run.finish()
}

pub fn frechet(mut cfg: RunConfig, a: &FidArgs) -> CliResult<()> {
    let out = out_dir(&mut cfg, &a.out)?;
    let vocab = setup(&mut cfg, &a.vocab, &a.backend)?;
    let mut run = Run::new("metrics fid", &out, cfg.recorded(), args_value(a))?;
    if let Some(p) = &cfg.vocabulary {
        run.input(p)?;
    }
    let needs_backend = a.generated.is_some() || a.reference.is_some();
    let backend = if needs_backend {
        Some(classifier_backend(&cfg, vocab.as_ref())?)
    } else {
        None
    };
    let mut k_hint = None;
    let mut backend_id = backend.as_ref().map(|b| b.backend_id().to_string());
    let mut side = |manifest: &Option<std::path::PathBuf>,
                    cached: &Option<std::path::PathBuf>,
                    prefix: &str,
                    run: &mut Run|
     -> CliResult<FeatureMatrix> {
        match (manifest, cached) {
            (Some(m), _) => {
                let c = classify(run, m, backend.as_deref().expect("backend loaded"), prefix)?;
                if prefix == "generated_" {
                    k_hint = Some(infer_k(a.k, Some(&c.entries))?);
                }
                Ok(c.features)
            }
            (None, Some(path)) => {
                run.input(path)?;
                let m = read_cached(path, MatrixKind::Features)?;
                backend_id.get_or_insert(m.backend_id.clone());
                Ok(FeatureMatrix::new(m.to_dmatrix())?)
            }
            (None, None) => Err(CliError::Config(format!("pass --{0} or --{0}-features", prefix.trim_end_matches('_')))),
        }
    };
    let generated = side(&a.generated, &a.generated_features, "generated_", &mut run)?;
    let reference = side(&a.reference, &a.reference_features, "reference_", &mut run)?;
    let k = match k_hint {
        Some(k) => k,
        None => infer_k(a.k, None)?,
    };
    let fid = frechet_distance(&fit_gaussian(&generated)?, &fit_gaussian(&reference)?)?;
    let summary = MetricsSummary {
        model: a.model.clone(),
        k,
        is_mean: None,
        is_std: None,
        fid: Some(fid),
        splits: None,
        n_images: generated.nrows(),
        backend_id: backend_id.unwrap_or_default(),
        vocab_hash: vocab.map(|v| v.content_hash()).unwrap_or_default(),
    };
    run.write_json("metrics.json", &summary)?;
    println!("{} K={k}: FID = {}", a.model, format_fid(fid));
    run.finish()
}
