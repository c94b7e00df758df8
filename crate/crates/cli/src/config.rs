//! Pipeline configuration file (TOML). Every field is optional; command-line
//! flags take precedence.

use std::path::{Path, PathBuf};

use anyhow::Context;
use irac_kg::gateway::GatewayConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusSection,
    pub gateway: Option<GatewayConfig>,
    pub extraction: ExtractionSection,
    pub generation: GenerationSection,
    pub split: SplitSection,
    pub review: ReviewSection,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub per_jurisdiction: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub truncation_budget: Option<usize>,
    pub attempt_temperatures: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub sft_system: Option<String>,
    pub dpo_system: Option<String>,
    pub judge_temperatures: Option<Vec<f64>>,
    pub pairwise: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratio: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSection {
    pub listen: Option<String>,
    pub store: Option<PathBuf>,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
