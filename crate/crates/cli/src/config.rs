//! Optional TOML configuration. Command-line flags win over the file, and
//! the file wins over the built-in defaults.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub min_count: Option<u64>,
    pub dominance: Option<f64>,
    pub cap: Option<usize>,
    pub vocab_threshold: Option<u64>,
    pub runs: Option<u64>,
    pub factor: Option<usize>,
    pub batch: Option<usize>,
    pub retries: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub distractors_per_name: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flag, then config, then default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}
