//! Run parameters. Every default lives here; each report echoes the values
//! that produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::caption::TreeParams;
use crate::embedding::DEFAULT_SIMILARITY_THRESHOLD;
use crate::error::{Error, Result};
use crate::metrics::AggregationMode;
use crate::prompt::DEFAULT_MAX_ROUNDS;

pub const DEFAULT_VQA_TOP_K: usize = 5;

/// Tunable parameters. In a TOML config file every key is optional and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Parameters {
    pub similarity_threshold: f64,
    /// Answers kept by VQA rectification.
    pub vqa_top_k: usize,
    /// Caption tree: tokens expanded per step.
    pub branching: usize,
    /// Caption tree: width of each recorded distribution.
    pub top_k: usize,
    pub max_len: usize,
    pub beam_cap: usize,
    pub max_rounds: usize,
    pub aggregation: AggregationMode,
    /// Thresholds swept by the prominence command.
    pub prominence_thresholds: Vec<f64>,
}

impl Default for Parameters {
    fn default() -> Self {
        let tree = TreeParams::default();
        Parameters {
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            vqa_top_k: DEFAULT_VQA_TOP_K,
            branching: tree.branching,
            top_k: tree.top_k,
            max_len: tree.max_len,
            beam_cap: tree.beam_cap,
            max_rounds: DEFAULT_MAX_ROUNDS,
            aggregation: AggregationMode::Macro,
            prominence_thresholds: Vec::new(),
        }
    }
}

impl Parameters {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let params: Parameters =
            toml::from_str(text).map_err(|e| Error::param(format!("config: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Parameters::from_toml_str(&text)
            .map_err(|e| Error::param(format!("{}: {e}", path.display())))
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            branching: self.branching,
            top_k: self.top_k,
            max_len: self.max_len,
            beam_cap: self.beam_cap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(Error::param(format!(
                "similarity threshold {} outside (0, 1]",
                self.similarity_threshold
            )));
        }
        if self.vqa_top_k < 1 {
            return Err(Error::param("vqa top-k must be at least 1"));
        }
        if self.max_rounds < 1 {
            return Err(Error::param("max rounds must be at least 1"));
        }
        for &t in &self.prominence_thresholds {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::param(format!("prominence threshold {t} outside [0, 1]")));
            }
        }
        self.tree_params().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let p = Parameters::default();
        assert_eq!(p.similarity_threshold, 0.5);
        assert_eq!((p.branching, p.top_k, p.max_len, p.beam_cap), (3, 10, 20, 16));
        assert_eq!(p.max_rounds, 3);
        assert_eq!(p.vqa_top_k, 5);
        p.validate().unwrap();
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let p = Parameters::from_toml_str("similarity_threshold = 0.6\naggregation = \"micro\"\n").unwrap();
        assert_eq!(p.similarity_threshold, 0.6);
        assert_eq!(p.aggregation, AggregationMode::Micro);
        assert_eq!(p.beam_cap, 16);
    }

    #[test]
    fn unknown_key_and_range_rejected() {
        assert!(Parameters::from_toml_str("beam_width = 4\n").is_err());
        assert!(Parameters::from_toml_str("similarity_threshold = 1.5\n").is_err());
        assert!(Parameters::from_toml_str("prominence_thresholds = [0.1, 2.0]\n").is_err());
        assert!(Parameters::from_toml_str("branching = 0\n").is_err());
    }
}
