//! Multi-component prompt sampling and rendering.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::vocabulary::{article_for, ComponentLabel, Vocabulary};

/// Sentence grammar for rendered prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    pub oxford_comma: bool,
    pub trailing_period: bool,
}

impl Default for Grammar {
    fn default() -> Self {
        Grammar {
            oxford_comma: true,
            trailing_period: false,
        }
    }
}

impl Grammar {
    pub const PREFIX: &'static str = "A photo of";

    /// All grammar variants, default first.
    pub fn variants() -> [Grammar; 4] {
        let d = Grammar::default();
        [
            d,
            Grammar {
                oxford_comma: !d.oxford_comma,
                ..d
            },
            Grammar {
                trailing_period: !d.trailing_period,
                ..d
            },
            Grammar {
                oxford_comma: !d.oxford_comma,
                trailing_period: !d.trailing_period,
            },
        ]
    }

    pub fn render<S: AsRef<str>>(&self, names: &[S]) -> Result<String> {
        if names.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot render a prompt with no components".into(),
            ));
        }
        let items: Vec<String> = names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                format!("{} {}", article_for(n), n.to_lowercase())
            })
            .collect();
        let body = match items.len() {
            1 => items[0].clone(),
            2 => format!("{} and {}", items[0], items[1]),
            n => {
                let head = items[..n - 1].join(", ");
                let sep = if self.oxford_comma { ", and " } else { " and " };
                format!("{head}{sep}{}", items[n - 1])
            }
        };
        let mut text = format!("{} {}", Self::PREFIX, body);
        if self.trailing_period {
            text.push('.');
        }
        Ok(text)
    }
}

/// Renders with the default grammar.
pub fn render_prompt(components: &[ComponentLabel]) -> Result<String> {
    let names: Vec<&str> = components.iter().map(|c| c.name.as_str()).collect();
    Grammar::default().render(&names)
}

/// A K-component prompt. The text is always the rendering of the components
/// under the stored grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    prompt_id: u64,
    components: Vec<ComponentLabel>,
    grammar: Grammar,
    text: String,
    seed: u64,
}

impl PromptSpec {
    pub fn new(
        prompt_id: u64,
        components: Vec<ComponentLabel>,
        grammar: Grammar,
        seed: u64,
    ) -> Result<Self> {
        for (i, c) in components.iter().enumerate() {
            if components[..i].iter().any(|o| o.index == c.index) {
                return Err(Error::InvalidParameter(format!(
                    "prompt {prompt_id} repeats component {:?}",
                    c.name
                )));
            }
        }
        let names: Vec<&str> = components.iter().map(|c| c.name.as_str()).collect();
        let text = grammar.render(&names)?;
        Ok(PromptSpec {
            prompt_id,
            components,
            grammar,
            text,
            seed,
        })
    }

    pub fn prompt_id(&self) -> u64 {
        self.prompt_id
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ComponentLabel] {
        &self.components
    }

    pub fn component_indices(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.index).collect()
    }

    pub fn grammar(&self) -> Grammar {
        self.grammar
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn to_record(&self) -> PromptRecord {
        PromptRecord {
            prompt_id: self.prompt_id,
            k: self.k(),
            component_indices: self.component_indices(),
            component_names: self.components.iter().map(|c| c.name.clone()).collect(),
            text: self.text.clone(),
            seed: self.seed,
        }
    }

    /// Rebuilds a prompt from a manifest line, recovering the grammar that
    /// reproduces the stored text.
    pub fn from_record(record: &PromptRecord, vocab: Option<&Vocabulary>) -> Result<Self> {
        if record.component_indices.len() != record.k
            || record.component_names.len() != record.k
        {
            return Err(Error::ProtocolError(format!(
                "prompt {} declares k = {} but lists {} indices and {} names",
                record.prompt_id,
                record.k,
                record.component_indices.len(),
                record.component_names.len()
            )));
        }
        let components: Vec<ComponentLabel> = record
            .component_indices
            .iter()
            .zip(&record.component_names)
            .map(|(&index, name)| match vocab {
                Some(v) => match v.get(index) {
                    Some(l) if l.name == *name => Ok(l.clone()),
                    _ => Err(Error::UnknownLabel(format!("{index}:{name}"))),
                },
                None => Ok(ComponentLabel {
                    index,
                    name: name.clone(),
                    source_id: None,
                }),
            })
            .collect::<Result<_>>()?;
        for grammar in Grammar::variants() {
            let spec = PromptSpec::new(record.prompt_id, components.clone(), grammar, record.seed)?;
            if spec.text == record.text {
                return Ok(spec);
            }
        }
        Err(Error::ProtocolError(format!(
            "prompt {} text {:?} does not match any supported rendering of its components",
            record.prompt_id, record.text
        )))
    }
}

/// One line of the prompt manifest (JSON lines).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: u64,
    pub k: usize,
    pub component_indices: Vec<usize>,
    pub component_names: Vec<String>,
    pub text: String,
    pub seed: u64,
}

/// Draws `m` prompts of `k` distinct components each.
///
/// Prompt `j` uses child stream `j` of `seed`, so the batch can be produced in
/// any order or in parallel with identical results.
pub fn sample_prompts(
    vocab: &Vocabulary,
    k: usize,
    m: usize,
    seed: u64,
    grammar: Grammar,
) -> Result<Vec<PromptSpec>> {
    if k == 0 || m == 0 {
        return Err(Error::InvalidParameter(format!(
            "k and m must be positive (k = {k}, m = {m})"
        )));
    }
    if k > vocab.len() {
        return Err(Error::KTooLarge {
            k,
            vocab_size: vocab.len(),
        });
    }
    (0..m as u64)
        .map(|j| {
            let mut rng = rng::child(seed, &[j]);
            let picks = index::sample(&mut rng, vocab.len(), k);
            let components = picks
                .iter()
                .map(|i| vocab.labels()[i].clone())
                .collect();
            PromptSpec::new(j, components, grammar, seed)
        })
        .collect()
}

/// Uniformly permutes a prompt's components. The permutation for a prompt is
/// drawn from its own stream of `seed`, distinct from the sampling streams.
pub fn shuffle_prompt(prompt: &PromptSpec, seed: u64) -> PromptSpec {
    let mut components = prompt.components.clone();
    let mut rng = rng::child(seed, &[rng::key_id("shuffle"), prompt.prompt_id]);
    components.shuffle(&mut rng);
    PromptSpec::new(prompt.prompt_id, components, prompt.grammar, prompt.seed)
        .expect("permutation of a valid prompt is valid")
}
