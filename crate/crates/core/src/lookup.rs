//! The subset lattice of a prompt.
//!
//! Entry `i` of a table is the subset whose bitmask is `i`: bit `b` selects
//! the prompt's `b`-th component. Looking up how many components an argmax
//! entry covers is therefore a popcount.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::promptgen::PromptSpec;

pub const DEFAULT_K_MAX: usize = 8;
/// Masks are stored as `u32`; tables beyond this are not representable.
pub const HARD_K_LIMIT: usize = 24;

/// Text used for the empty subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptySubsetText {
    /// The literal empty string.
    #[default]
    Empty,
    /// `"a photo"`, for backends that reject empty input.
    APhoto,
}

impl EmptySubsetText {
    pub fn as_str(self) -> &'static str {
        match self {
            EmptySubsetText::Empty => "",
            EmptySubsetText::APhoto => "a photo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LookupOptions {
    pub k_max: usize,
    pub empty_text: EmptySubsetText,
}

impl Default for LookupOptions {
    fn default() -> Self {
        LookupOptions {
            k_max: DEFAULT_K_MAX,
            empty_text: EmptySubsetText::Empty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupEntry {
    pub mask: u32,
    pub cardinality: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupTable {
    k: usize,
    component_indices: Vec<usize>,
    entries: Vec<LookupEntry>,
}

impl LookupTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LookupEntry] {
        &self.entries
    }

    /// Vocabulary indices of the prompt's components, in bit order.
    pub fn component_indices(&self) -> &[usize] {
        &self.component_indices
    }

    /// Vocabulary indices selected by `mask`.
    pub fn members(&self, mask: u32) -> Vec<usize> {
        self.component_indices
            .iter()
            .enumerate()
            .filter(|(b, _)| mask & (1 << b) != 0)
            .map(|(_, &i)| i)
            .collect()
    }

    /// Number of components covered by entry `entry_index`.
    pub fn count_components(&self, entry_index: usize) -> Result<usize> {
        self.entries
            .get(entry_index)
            .map(|e| e.cardinality as usize)
            .ok_or(Error::IndexOutOfRange {
                index: entry_index,
                len: self.entries.len(),
            })
    }

    /// JSON debug dump: an array of `{mask, cardinality, text}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("entries serialize")
    }
}

pub fn build_lookup(prompt: &PromptSpec, options: LookupOptions) -> Result<LookupTable> {
    let k = prompt.k();
    if k > options.k_max.min(HARD_K_LIMIT) {
        return Err(Error::SubsetExplosion {
            k,
            k_max: options.k_max.min(HARD_K_LIMIT),
        });
    }
    let grammar = prompt.grammar();
    let names: Vec<&str> = prompt.components().iter().map(|c| c.name.as_str()).collect();
    let entries = (0..1u32 << k)
        .map(|mask| {
            let text = if mask == 0 {
                options.empty_text.as_str().to_string()
            } else {
                let subset: Vec<&str> = names
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask & (1 << b) != 0)
                    .map(|(_, n)| *n)
                    .collect();
                grammar.render(&subset)?
            };
            Ok(LookupEntry {
                mask,
                cardinality: mask.count_ones(),
                text,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LookupTable {
        k,
        component_indices: prompt.component_indices(),
        entries,
    })
}
