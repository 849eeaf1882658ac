//! TOML run configuration. Every key is optional; command-line flags take
//! precedence over the file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use gtmi::evaluator::Metric;
use gtmi::model::MixtureCounts;
use gtmi::{Mode, WordRule};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub r: Option<usize>,
    pub k: Option<usize>,
    pub w: Option<usize>,
    pub d: Option<usize>,
    pub images: Option<usize>,
    pub queries: Option<usize>,
    pub seed: Option<u64>,
    pub separation: Option<f64>,
    pub xi_concentration: Option<f64>,
    pub word_concentration: Option<f64>,
    pub words_per_image: Option<(usize, usize)>,
    pub patches_per_image: Option<(usize, usize)>,
    pub out_dir: Option<PathBuf>,
}

/// Hyperparameters; region and topic counts are given here or on the
/// command line, the feature dimension always comes from the corpus.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub regions: Option<usize>,
    pub topics: Option<usize>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub epsilon: Option<f64>,
    pub var_floor: Option<f64>,
    pub dof_floor: Option<f64>,
    pub geo_reg: Option<f64>,
    pub word_rule: Option<WordRule>,
    pub mixture_counts: Option<MixtureCounts>,
    /// Use the 1500-region, 100-topic preset unless overridden.
    #[serde(default)]
    pub large_scale: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub stop_words: Option<PathBuf>,
    pub sweeps: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: Option<u64>,
    pub log_every: Option<usize>,
    pub shuffle: Option<bool>,
    pub keep_assignments: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub model: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub neighbors_visual: Option<usize>,
    pub neighbors_text_visual: Option<usize>,
    pub fold_in_sweeps: Option<usize>,
    pub seed: Option<u64>,
    pub mean_location: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub predictions: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub metric: Option<Metric>,
    pub edges: Option<Vec<f64>>,
    pub format: Option<String>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
