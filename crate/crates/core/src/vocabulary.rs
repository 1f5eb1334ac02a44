//! Component label sets.
//!
//! A vocabulary is the pool components are sampled from. Two on-disk formats
//! are accepted:
//!
//! * plain lines: one class name per line, `#` lines ignored. ImageNet-style
//!   synonym lists (`tench, Tinca tinca`) keep only the first synonym.
//! * id-tab-name: `<source_id>\t<name>` per line.
//!
//! Names are lowercased and whitespace-normalized; uniqueness is checked after
//! normalization.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComponentLabel {
    pub index: usize,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabFormat {
    PlainLines,
    IdTabName,
}

impl VocabFormat {
    /// `.tsv` files are id-tab-name, anything else plain lines.
    pub fn infer(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => VocabFormat::IdTabName,
            _ => VocabFormat::PlainLines,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    labels: Vec<ComponentLabel>,
    by_name: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from already-clean names, in order.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries = names
            .into_iter()
            .enumerate()
            .map(|(i, n)| (i + 1, None, n.as_ref().to_string()))
            .collect();
        Self::build(entries)
    }

    fn build(entries: Vec<(usize, Option<String>, String)>) -> Result<Self> {
        let mut labels = Vec::with_capacity(entries.len());
        let mut by_name = HashMap::with_capacity(entries.len());
        let mut first_line: HashMap<String, usize> = HashMap::new();
        for (line_no, source_id, raw) in entries {
            let name = normalize_name(&raw);
            if name.is_empty() {
                return Err(Error::MalformedLine(line_no));
            }
            if let Some(&first) = first_line.get(&name) {
                return Err(Error::DuplicateLabel {
                    name,
                    first,
                    second: line_no,
                });
            }
            first_line.insert(name.clone(), line_no);
            let index = labels.len();
            by_name.insert(name.clone(), index);
            labels.push(ComponentLabel {
                index,
                name,
                source_id,
            });
        }
        if labels.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        Ok(Vocabulary { labels, by_name })
    }

    pub fn parse(text: &str, format: VocabFormat) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            match format {
                VocabFormat::PlainLines => {
                    entries.push((line_no, None, first_synonym(trimmed).to_string()));
                }
                VocabFormat::IdTabName => {
                    let (id, name) = line
                        .split_once('\t')
                        .ok_or(Error::MalformedLine(line_no))?;
                    let id = id.trim();
                    let name = first_synonym(name.trim());
                    if id.is_empty() || name.is_empty() {
                        return Err(Error::MalformedLine(line_no));
                    }
                    entries.push((line_no, Some(id.to_string()), name.to_string()));
                }
            }
        }
        Self::build(entries)
    }

    pub fn load(path: &Path, format: Option<VocabFormat>) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading vocabulary {}", path.display()), e))?;
        Self::parse(&text, format.unwrap_or_else(|| VocabFormat::infer(path)))
    }

    /// Vocabulary size P.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ComponentLabel] {
        &self.labels
    }

    pub fn get(&self, index: usize) -> Option<&ComponentLabel> {
        self.labels.get(index)
    }

    pub fn by_name(&self, name: &str) -> Option<&ComponentLabel> {
        self.by_name
            .get(&normalize_name(name))
            .map(|&i| &self.labels[i])
    }

    /// Hex SHA-256 over the normalized names, one per line.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for label in &self.labels {
            hasher.update(label.name.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

fn first_synonym(s: &str) -> &str {
    s.split(',').next().unwrap_or("").trim()
}

fn normalize_name(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// English indefinite article for a component phrase.
///
/// Vowel-letter heuristic on the first alphabetic character; phonetic
/// exceptions ("hour", "unicorn") are not special-cased.
pub fn article_for(name: &str) -> &'static str {
    match name.chars().find(|c| c.is_alphabetic()) {
        Some(c) if matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}
