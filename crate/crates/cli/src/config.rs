//! Run configuration: one JSON file, overridden field by field by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use compo_core::lookup::{EmptySubsetText, DEFAULT_K_MAX, HARD_K_LIMIT};
use compo_core::mcid::DEFAULT_ROW_HEIGHT;
use compo_core::metrics::DEFAULT_SPLITS;
use compo_core::scoring::DEFAULT_SCALE;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DESK_M: usize = 100;
pub const DESK_N: usize = 4;
pub const FULL_M: usize = 10_000;
pub const FULL_N: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Onnx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSettings {
    pub noise: f64,
    pub default_detection: f64,
    pub detection: BTreeMap<usize, f64>,
    pub seed: u64,
}

impl Default for MockSettings {
    fn default() -> Self {
        MockSettings {
            noise: 0.0,
            default_detection: 1.0,
            detection: BTreeMap::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vocabulary: Option<PathBuf>,
    pub backend: BackendKind,
    pub bundle: Option<PathBuf>,
    pub k_values: Vec<usize>,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub oxford_comma: bool,
    pub trailing_period: bool,
    pub scale: f64,
    pub k_max: usize,
    pub empty_text: EmptySubsetText,
    pub splits: usize,
    pub row_height: u32,
    pub skip_broken: bool,
    pub mock: MockSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            vocabulary: None,
            backend: BackendKind::Mock,
            bundle: None,
            k_values: vec![1, 2, 4, 8],
            m: DESK_M,
            n: DESK_N,
            seed: 0,
            cache_dir: None,
            output_dir: None,
            oxford_comma: true,
            trailing_period: false,
            scale: DEFAULT_SCALE,
            k_max: DEFAULT_K_MAX,
            empty_text: EmptySubsetText::Empty,
            splits: DEFAULT_SPLITS,
            row_height: DEFAULT_ROW_HEIGHT,
            skip_broken: false,
            mock: MockSettings::default(),
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("config field `{name}`: {msg}"))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.k_values.is_empty() {
            return Err(field("k_values", "must not be empty"));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| k == 0) {
            return Err(field("k_values", format!("{k} is not >= 1")));
        }
        if self.m == 0 {
            return Err(field("m", "must be >= 1"));
        }
        if self.n == 0 {
            return Err(field("n", "must be >= 1"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(field("scale", "must be a positive number"));
        }
        if self.k_max == 0 || self.k_max > HARD_K_LIMIT {
            return Err(field("k_max", format!("must be in 1..={HARD_K_LIMIT}")));
        }
        if self.splits == 0 {
            return Err(field("splits", "must be >= 1"));
        }
        if self.row_height == 0 {
            return Err(field("row_height", "must be >= 1"));
        }
        if !(self.mock.noise.is_finite() && self.mock.noise >= 0.0) {
            return Err(field("mock.noise", "must be finite and >= 0"));
        }
        for (name, p) in std::iter::once(("mock.default_detection", self.mock.default_detection))
            .chain(self.mock.detection.values().map(|&p| ("mock.detection", p)))
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(field(name, format!("{p} is not a probability")));
            }
        }
        if self.backend == BackendKind::Onnx && self.bundle.is_none() {
            return Err(field("bundle", "required with the onnx backend"));
        }
        Ok(())
    }

    /// The config as recorded in run manifests: location-only fields
    /// (output and cache directories) are dropped so reruns elsewhere match.
    pub fn recorded(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.output_dir = None;
        c.cache_dir = None;
        serde_json::to_value(c).expect("config serializes")
    }
}
