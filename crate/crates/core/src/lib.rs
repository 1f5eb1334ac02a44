//! Components Inclusion Score (CIS) evaluation for multi-component
//! text-to-image generation.
//!
//! The crate covers the whole evaluation path:
//!
//! * [`vocabulary`] and [`promptgen`] sample K-component prompts such as
//!   "A photo of a crab, a macaw, a steel drum, and a red butterfly".
//! * [`lookup`] enumerates the 2^K subset prompts of a prompt.
//! * [`scoring`] classifies each image against those subsets and reduces the
//!   per-image scores to CIS_K; [`pipeline`] runs it over image manifests.
//! * [`mcid`] builds ground-truth composites from per-class images.
//! * [`metrics`] computes Inception Score and Fréchet distance.
//! * [`analysis`] holds the chi-squared order-invariance test and
//!   per-component generation rates.
//! * [`backend`] defines the embedding/classifier contracts, an exact mock
//!   oracle, and (feature `onnx`) an ONNX runtime backend.
//!
//! ```
//! use compo_core::backend::{EmbeddingCache, MockBackend, MockWorldConfig};
//! use compo_core::pipeline::{evaluate, EvalOptions, ImageEntry};
//! use compo_core::promptgen::{sample_prompts, Grammar};
//! use compo_core::vocabulary::Vocabulary;
//!
//! let vocab = Vocabulary::from_names(["sock", "vase", "crab", "macaw"]).unwrap();
//! let prompts = sample_prompts(&vocab, 2, 3, 7, Grammar::default()).unwrap();
//! // Every image shows exactly its prompt's components.
//! let images: Vec<ImageEntry> = prompts
//!     .iter()
//!     .map(|p| ImageEntry::planted(p.prompt_id(), format!("img{}", p.prompt_id()), p.component_indices()))
//!     .collect();
//! let backend = MockBackend::new(MockWorldConfig::perfect(vocab.len())).unwrap();
//! let run = evaluate(&prompts, &images, &backend, &EmbeddingCache::in_memory(), &EvalOptions::default()).unwrap();
//! assert_eq!(run.result.cis, 1.0);
//! ```

pub mod analysis;
pub mod backend;
pub mod error;
pub mod io;
pub mod lookup;
pub mod mcid;
pub mod metrics;
pub mod pipeline;
pub mod promptgen;
pub mod report;
pub mod rng;
pub mod scoring;
pub mod special;
pub mod vocabulary;

pub use error::{Error, ErrorClass, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/subsets.md")]
    mod subsets {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/composites.md")]
    mod composites {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
