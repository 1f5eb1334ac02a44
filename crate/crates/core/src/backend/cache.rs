use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    vector: Vec<f32>,
}

/// Content-addressed embedding cache.
///
/// Keys are namespaced by backend id. With a directory, entries persist as
/// JSON lines in `<dir>/<backend_id>.jsonl`; new entries are appended on
/// [`flush`](Self::flush). Concurrent inserts of one key are last-writer-wins.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: DashMap<String, Arc<Vec<f32>>>,
    pending: Mutex<Vec<String>>,
    file: Option<PathBuf>,
}

fn file_name(backend_id: &str) -> String {
    let safe: String = backend_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.jsonl")
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: &Path, backend_id: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let file = dir.join(file_name(backend_id));
        let entries = DashMap::new();
        if file.exists() {
            let reader = BufReader::new(
                fs::File::open(&file).map_err(|e| Error::io(format!("opening {}", file.display()), e))?,
            );
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io("reading cache", e))?;
                if line.trim().is_empty() {
                    continue;
                }
                // A torn final line from an interrupted run is skipped.
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, Arc::new(entry.vector));
                    }
                    Err(e) => log::warn!("{}:{}: skipping cache line: {e}", file.display(), i + 1),
                }
            }
        }
        Ok(EmbeddingCache {
            entries,
            pending: Mutex::new(Vec::new()),
            file: Some(file),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<Arc<Vec<f32>>> {
        self.entries.get(key).map(|e| Arc::clone(e.value()))
    }

    pub fn insert(&self, key: String, vector: Vec<f32>) -> Arc<Vec<f32>> {
        let value = Arc::new(vector);
        if self.entries.insert(key.clone(), Arc::clone(&value)).is_none() && self.file.is_some() {
            self.pending.lock().expect("cache lock").push(key);
        }
        value
    }

    /// Appends entries added since the last flush to the cache file.
    pub fn flush(&self) -> Result<()> {
        let Some(file) = &self.file else {
            return Ok(());
        };
        let mut pending = self.pending.lock().expect("cache lock");
        if pending.is_empty() {
            return Ok(());
        }
        pending.sort();
        let mut out = String::new();
        for key in pending.iter() {
            if let Some(v) = self.entries.get(key) {
                out.push_str(&serde_json::to_string(&CacheLine {
                    key: key.clone(),
                    vector: v.value().as_ref().clone(),
                })?);
                out.push('\n');
            }
        }
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(file)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(format!("writing {}", file.display()), e))?;
        pending.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_across_opens() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path(), "mock/v1").unwrap();
        assert!(cache.get("a").is_none());
        cache.insert("a".into(), vec![1.0, 0.0]);
        cache.insert("b".into(), vec![0.0, 1.0]);
        cache.flush().unwrap();
        cache.flush().unwrap();
        let again = EmbeddingCache::open(dir.path(), "mock/v1").unwrap();
        assert_eq!(again.len(), 2);
        assert_eq!(*again.get("b").unwrap(), vec![0.0, 1.0]);
        assert!(dir.path().join("mock_v1.jsonl").exists());
    }

    #[test]
    fn torn_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("x.jsonl"),
            "{\"key\":\"a\",\"vector\":[1.0]}\n{\"key\":\"b\",\"vec",
        )
        .unwrap();
        let cache = EmbeddingCache::open(dir.path(), "x").unwrap();
        assert_eq!(cache.len(), 1);
    }
}
