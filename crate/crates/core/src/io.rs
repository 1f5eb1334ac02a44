//! File formats: JSON lines, pretty JSON, and binary matrix caches.
//!
//! A matrix cache is a little-endian `f32` row-major file with a JSON sidecar
//! at `<file>.json` holding `{n, d | c, backend_id, content_hash}`; `d` is
//! used for feature matrices and `c` for class-probability matrices.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::promptgen::{PromptRecord, PromptSpec};
use crate::vocabulary::Vocabulary;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn write_prompts(path: &Path, prompts: &[PromptSpec]) -> Result<()> {
    let records: Vec<PromptRecord> = prompts.iter().map(PromptSpec::to_record).collect();
    write_jsonl(path, &records)
}

pub fn read_prompts(path: &Path, vocab: Option<&Vocabulary>) -> Result<Vec<PromptSpec>> {
    read_jsonl::<PromptRecord>(path)?
        .iter()
        .map(|r| PromptSpec::from_record(r, vocab))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Features,
    Probabilities,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<usize>,
    pub backend_id: String,
    pub content_hash: String,
}

impl MatrixSidecar {
    pub fn cols(&self) -> Option<usize> {
        self.d.or(self.c)
    }

    pub fn kind(&self) -> MatrixKind {
        if self.c.is_some() {
            MatrixKind::Probabilities
        } else {
            MatrixKind::Features
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// A dense row-major matrix read from or written to a cache file.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub backend_id: String,
    pub kind: MatrixKind,
}

impl CachedMatrix {
    pub fn from_dmatrix(m: &DMatrix<f64>, kind: MatrixKind, backend_id: impl Into<String>) -> Self {
        CachedMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.row_iter().flat_map(|r| r.iter().map(|&v| v as f32).collect::<Vec<_>>()).collect(),
            backend_id: backend_id.into(),
            kind,
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.rows, self.cols, self.data.iter().map(|&v| f64::from(v)))
    }
}

pub fn write_matrix(path: &Path, m: &CachedMatrix) -> Result<()> {
    if m.data.len() != m.rows * m.cols {
        return Err(Error::DimensionMismatch {
            expected: m.rows * m.cols,
            actual: m.data.len(),
        });
    }
    let bytes: Vec<u8> = m.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(path, &bytes)?;
    let (d, c) = match m.kind {
        MatrixKind::Features => (Some(m.cols), None),
        MatrixKind::Probabilities => (None, Some(m.cols)),
    };
    write_json(
        &sidecar_path(path),
        &MatrixSidecar {
            n: m.rows,
            d,
            c,
            backend_id: m.backend_id.clone(),
            content_hash: sha256_bytes(&bytes),
        },
    )
}

pub fn read_matrix(path: &Path) -> Result<CachedMatrix> {
    let sidecar: MatrixSidecar = read_json(&sidecar_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if sha256_bytes(&bytes) != sidecar.content_hash {
        return Err(Error::ProtocolError(format!(
            "{} does not match the content hash in its sidecar",
            path.display()
        )));
    }
    let cols = sidecar
        .cols()
        .ok_or_else(|| Error::ProtocolError(format!("{} sidecar has neither d nor c", path.display())))?;
    if bytes.len() != sidecar.n * cols * 4 {
        return Err(Error::DimensionMismatch {
            expected: sidecar.n * cols * 4,
            actual: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(CachedMatrix {
        rows: sidecar.n,
        cols,
        data,
        backend_id: sidecar.backend_id.clone(),
        kind: sidecar.kind(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matrix_cache_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probs.f32");
        let m = CachedMatrix {
            rows: 2,
            cols: 2,
            data: vec![0.25, 0.75, 1.0, 0.0],
            backend_id: "mock".into(),
            kind: MatrixKind::Probabilities,
        };
        write_matrix(&path, &m).unwrap();
        let raw = fs::read(&path).unwrap();
        assert_eq!(&raw[..4], &0.25f32.to_le_bytes());
        let side: serde_json::Value = read_json(&sidecar_path(&path)).unwrap();
        assert_eq!(side["c"], 2);
        assert!(side.get("d").is_none());
        assert_eq!(read_matrix(&path).unwrap(), m);

        fs::write(&path, [0u8; 16]).unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::ProtocolError(_))));
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, "{\"a\":1}\n\nnot json\n").unwrap();
        match read_jsonl::<serde_json::Value>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn feature_matrices_round_trip(rows in 1usize..6, cols in 1usize..6, seed: u64) {
            use rand::Rng;
            let mut rng = crate::rng::child(seed, &[]);
            let data: Vec<f32> = (0..rows * cols).map(|_| rng.random::<f32>() * 100.0 - 50.0).collect();
            let m = CachedMatrix { rows, cols, data, backend_id: "b".into(), kind: MatrixKind::Features };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("f.f32");
            write_matrix(&path, &m).unwrap();
            prop_assert_eq!(read_matrix(&path).unwrap(), m);
        }
    }
}
