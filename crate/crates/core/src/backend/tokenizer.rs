//! Byte-level BPE tokenizer reading the CLIP `vocab.json` / `merges.txt`
//! formats.
//!
//! Text is whitespace-collapsed and lowercased, split with the CLIP
//! pre-tokenization pattern, mapped through the reversible byte→unicode table,
//! and merged by rank. The last symbol of every word carries the `</w>`
//! end-of-word marker. Encoded sequences are `[start] tokens… [end]`, padded
//! to the context length; overlong sequences keep the end token in the final
//! slot.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use regex::Regex;

use crate::error::{Error, Result};

pub const START_TOKEN: &str = "<|startoftext|>";
pub const END_TOKEN: &str = "<|endoftext|>";
pub const DEFAULT_CONTEXT_LENGTH: usize = 77;
const END_OF_WORD: &str = "</w>";
const PATTERN: &str = r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|\p{L}+|\p{N}|[^\s\p{L}\p{N}]+";

/// GPT-2 style reversible mapping from bytes to printable characters.
pub fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| {
        (u32::from(b'!')..=u32::from(b'~')).contains(&b)
            || (0xA1..=0xAC).contains(&b)
            || (0xAE..=0xFF).contains(&b)
    };
    let mut extra = 0;
    for b in 0..256u32 {
        let code = if printable(b) {
            b
        } else {
            extra += 1;
            255 + extra
        };
        table[b as usize] = char::from_u32(code).expect("valid code point");
    }
    table
}

#[derive(Debug)]
pub struct ClipTokenizer {
    encoder: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    pattern: Regex,
    start: u32,
    end: u32,
    pad: u32,
    context_length: usize,
    cache: Mutex<HashMap<String, Vec<u32>>>,
}

/// An encoded, padded sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    /// Position of the end token.
    pub end_position: usize,
    pub truncated: bool,
}

impl Encoding {
    pub fn attention_mask(&self) -> Vec<u32> {
        (0..self.ids.len())
            .map(|i| u32::from(i <= self.end_position))
            .collect()
    }
}

impl ClipTokenizer {
    pub fn from_strings(vocab_json: &str, merges_txt: &str) -> Result<Self> {
        let encoder: HashMap<String, u32> = serde_json::from_str(vocab_json)?;
        let mut ranks = HashMap::new();
        for line in merges_txt.lines() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::BundleMismatch(format!("bad merge line {line:?}")))?;
            let rank = ranks.len();
            ranks.insert((a.to_string(), b.to_string()), rank);
        }
        let special = |t: &str| {
            encoder
                .get(t)
                .copied()
                .ok_or_else(|| Error::BundleMismatch(format!("vocabulary lacks {t}")))
        };
        let start = special(START_TOKEN)?;
        let end = special(END_TOKEN)?;
        Ok(ClipTokenizer {
            encoder,
            ranks,
            byte_encoder: bytes_to_unicode(),
            pattern: Regex::new(PATTERN).expect("valid pattern"),
            start,
            end,
            pad: 0,
            context_length: DEFAULT_CONTEXT_LENGTH,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_files(vocab: &Path, merges: &Path) -> Result<Self> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e));
        Self::from_strings(&read(vocab)?, &read(merges)?)
    }

    pub fn with_context_length(mut self, n: usize) -> Self {
        self.context_length = n.max(2);
        self
    }

    pub fn with_pad_id(mut self, pad: u32) -> Self {
        self.pad = pad;
        self
    }

    pub fn start_id(&self) -> u32 {
        self.start
    }

    pub fn end_id(&self) -> u32 {
        self.end
    }

    pub fn context_length(&self) -> usize {
        self.context_length
    }

    fn bpe(&self, word: &str) -> Result<Vec<u32>> {
        if let Some(hit) = self.cache.lock().expect("tokenizer cache").get(word) {
            return Ok(hit.clone());
        }
        let chars: Vec<char> = word.chars().collect();
        let mut parts: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
        if let Some(last) = parts.last_mut() {
            last.push_str(END_OF_WORD);
        }
        while parts.len() > 1 {
            let best = parts
                .windows(2)
                .filter_map(|w| {
                    let pair = (w[0].clone(), w[1].clone());
                    self.ranks.get(&pair).map(|&r| (r, pair))
                })
                .min_by_key(|(r, _)| *r);
            let Some((_, (a, b))) = best else { break };
            // Merge every occurrence of the winning pair, left to right.
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len() && parts[i] == a && parts[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(parts[i].clone());
                    i += 1;
                }
            }
            parts = merged;
        }
        let ids = parts
            .iter()
            .map(|p| {
                self.encoder
                    .get(p)
                    .copied()
                    .ok_or_else(|| Error::BundleMismatch(format!("token {p:?} missing from vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.cache
            .lock()
            .expect("tokenizer cache")
            .insert(word.to_string(), ids.clone());
        Ok(ids)
    }

    /// BPE ids of `text` without start/end tokens or padding.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let clean = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let mut ids = Vec::new();
        for m in self.pattern.find_iter(&clean) {
            let token = m.as_str();
            if token == START_TOKEN || token == END_TOKEN {
                ids.push(self.encoder[token]);
                continue;
            }
            let mapped: String = token.bytes().map(|b| self.byte_encoder[b as usize]).collect();
            ids.extend(self.bpe(&mapped)?);
        }
        Ok(ids)
    }

    pub fn encode(&self, text: &str) -> Result<Encoding> {
        let mut ids = Vec::with_capacity(self.context_length);
        ids.push(self.start);
        ids.extend(self.tokenize(text)?);
        ids.push(self.end);
        let truncated = ids.len() > self.context_length;
        if truncated {
            log::warn!("prompt truncated to {} tokens: {text:?}", self.context_length);
            ids.truncate(self.context_length);
            ids[self.context_length - 1] = self.end;
        }
        let end_position = ids.len() - 1;
        ids.resize(self.context_length, self.pad);
        Ok(Encoding {
            ids,
            end_position,
            truncated,
        })
    }
}
