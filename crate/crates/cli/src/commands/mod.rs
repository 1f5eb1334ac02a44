pub mod analyze;
pub mod cis;
pub mod mcid;
pub mod metrics;
pub mod prompts;
pub mod report;

use std::path::{Path, PathBuf};

use compo_core::backend::{ClassifierBackend, EmbeddingBackend, EmbeddingCache, MockBackend, MockWorldConfig};
use compo_core::promptgen::Grammar;
use compo_core::vocabulary::{VocabFormat, Vocabulary};
use compo_core::Error;
use serde::Serialize;
use walkdir::WalkDir;

use crate::config::{BackendKind, RunConfig, FULL_M, FULL_N};
use crate::error::{CliError, CliResult};
use crate::{BackendArgs, OutArg, SizeArgs, VocabArgs, VocabFormatArg};

pub fn args_value<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

pub fn require(path: &Path, producer: &'static str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            path: path.to_path_buf(),
            producer,
        })
    }
}

pub fn out_dir(cfg: &mut RunConfig, out: &OutArg) -> CliResult<PathBuf> {
    if let Some(o) = &out.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.output_dir
        .clone()
        .ok_or_else(|| CliError::Config("config field `output_dir`: required (or pass --out)".into()))
}

pub fn apply_vocab(cfg: &mut RunConfig, a: &VocabArgs) {
    if let Some(v) = &a.vocab {
        cfg.vocabulary = Some(v.clone());
    }
}

fn vocab_format(a: &VocabArgs) -> Option<VocabFormat> {
    a.vocab_format.map(|f| match f {
        VocabFormatArg::Lines => VocabFormat::PlainLines,
        VocabFormatArg::Tsv => VocabFormat::IdTabName,
    })
}

pub fn load_vocab(cfg: &RunConfig, a: &VocabArgs) -> CliResult<(PathBuf, Vocabulary)> {
    let path = cfg
        .vocabulary
        .clone()
        .ok_or_else(|| CliError::Config("config field `vocabulary`: required (or pass --vocab)".into()))?;
    let vocab = Vocabulary::load(&path, vocab_format(a))?;
    Ok((path, vocab))
}

pub fn load_optional_vocab(cfg: &RunConfig, a: &VocabArgs) -> CliResult<Option<(PathBuf, Vocabulary)>> {
    match cfg.vocabulary {
        Some(_) => load_vocab(cfg, a).map(Some),
        None => Ok(None),
    }
}

pub fn apply_size(cfg: &mut RunConfig, a: &SizeArgs) {
    if a.full_scale {
        cfg.m = FULL_M;
        cfg.n = FULL_N;
    }
    if let Some(k) = &a.k {
        cfg.k_values = k.clone();
    }
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
}

pub fn apply_backend(cfg: &mut RunConfig, a: &BackendArgs) {
    if let Some(b) = a.backend {
        cfg.backend = b;
    }
    if let Some(b) = &a.bundle {
        cfg.bundle = Some(b.clone());
    }
    if let Some(x) = a.mock_noise {
        cfg.mock.noise = x;
    }
    if let Some(x) = a.mock_default_detection {
        cfg.mock.default_detection = x;
    }
    for &(label, p) in &a.mock_detection {
        cfg.mock.detection.insert(label, p);
    }
    if let Some(s) = a.mock_seed {
        cfg.mock.seed = s;
    }
}

pub fn grammar(cfg: &RunConfig) -> Grammar {
    Grammar {
        oxford_comma: cfg.oxford_comma,
        trailing_period: cfg.trailing_period,
    }
}

fn mock_backend(cfg: &RunConfig, vocab: Option<&Vocabulary>) -> CliResult<MockBackend> {
    let vocab = vocab.ok_or_else(|| CliError::Config("the mock backend needs a vocabulary (--vocab)".into()))?;
    Ok(MockBackend::new(MockWorldConfig {
        vocab_size: vocab.len(),
        noise: cfg.mock.noise,
        detection: cfg.mock.detection.clone(),
        default_detection: cfg.mock.default_detection,
        seed: cfg.mock.seed,
        verify_files: false,
    })?)
}

#[cfg(feature = "onnx")]
fn bundle_dir(cfg: &RunConfig) -> CliResult<&Path> {
    cfg.bundle
        .as_deref()
        .ok_or_else(|| CliError::Config("config field `bundle`: required with the onnx backend".into()))
}

#[cfg(not(feature = "onnx"))]
fn no_onnx() -> CliError {
    CliError::Config("this build has no onnx backend; rebuild with `--features onnx`".into())
}

pub fn embedding_backend(cfg: &RunConfig, vocab: Option<&Vocabulary>) -> CliResult<Box<dyn EmbeddingBackend>> {
    match cfg.backend {
        BackendKind::Mock => Ok(Box::new(mock_backend(cfg, vocab)?)),
        #[cfg(feature = "onnx")]
        BackendKind::Onnx => Ok(Box::new(compo_core::backend::OnnxBackend::embedding(bundle_dir(cfg)?)?)),
        #[cfg(not(feature = "onnx"))]
        BackendKind::Onnx => Err(no_onnx()),
    }
}

pub fn classifier_backend(cfg: &RunConfig, vocab: Option<&Vocabulary>) -> CliResult<Box<dyn ClassifierBackend>> {
    match cfg.backend {
        BackendKind::Mock => Ok(Box::new(mock_backend(cfg, vocab)?)),
        #[cfg(feature = "onnx")]
        BackendKind::Onnx => Ok(Box::new(compo_core::backend::OnnxBackend::classifier(bundle_dir(cfg)?)?)),
        #[cfg(not(feature = "onnx"))]
        BackendKind::Onnx => Err(no_onnx()),
    }
}

pub fn open_cache(cfg: &RunConfig, backend_id: &str) -> CliResult<EmbeddingCache> {
    Ok(match &cfg.cache_dir {
        Some(dir) => EmbeddingCache::open(dir, backend_id)?,
        None => EmbeddingCache::in_memory(),
    })
}

/// Every file called `name` under `root`, in sorted path order.
pub fn find_files(root: &Path, name: &str, producer: &'static str) -> CliResult<Vec<PathBuf>> {
    require(root, producer)?;
    let mut found = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::ProtocolError(e.to_string()))?;
        if entry.file_type().is_file() && entry.file_name() == name {
            found.push(entry.into_path());
        }
    }
    if found.is_empty() {
        return Err(CliError::MissingInput {
            path: root.join(name),
            producer,
        });
    }
    Ok(found)
}
