//! Run configuration: backend selection, cost constants, head set, stop
//! rules, and reporting knobs. Stored as JSON for bit-exact parsing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::CostModel;
use crate::harness::HarnessError;
use crate::metrics::default_overhead_factor;
use crate::tokens::Head;

/// Which backend drives a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Add-alpha n-gram built from a corpus file.
    Ngram {
        corpus: PathBuf,
        order: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Replay backend from an explicit script file.
    Scripted { script: PathBuf },
    /// Replay backend synthesized from the dataset's ground truth, so
    /// every prediction is exactly right.
    Oracle,
}

fn default_alpha() -> f64 {
    0.1
}

/// Full configuration of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub backend: BackendSpec,
    /// Draft backend for speculative runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft_backend: Option<BackendSpec>,
    #[serde(default)]
    pub cost: CostModel,
    /// Head names; defaults to function plus the six argument heads.
    #[serde(default = "default_heads")]
    pub heads: Vec<String>,
    #[serde(default = "default_max_tokens_per_head")]
    pub max_tokens_per_head: usize,
    #[serde(default = "default_max_baseline_tokens")]
    pub max_baseline_tokens: usize,
    /// Tokens drafted per speculative step; enables speculation when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speculation_depth: Option<usize>,
    /// Multiplier on the parallel decode term in both the simulator and
    /// the closed-form latency model.
    #[serde(default = "default_overhead_factor")]
    pub overhead_factor: f64,
    #[serde(default)]
    pub shuffle_seed: u64,
    #[serde(default = "default_true")]
    pub shuffle_history: bool,
    /// Time with the wall clock (serial execution, 5-request warmup)
    /// instead of simulated units.
    #[serde(default)]
    pub wall_clock: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_heads() -> Vec<String> {
    Head::function_call_heads().iter().map(|h| h.name()).collect()
}

fn default_max_tokens_per_head() -> usize {
    64
}

fn default_max_baseline_tokens() -> usize {
    512
}

fn default_true() -> bool {
    true
}

/// Environment variable that overrides the configured shuffle seed.
pub const SEED_ENV_VAR: &str = "STOOL_SEED";

impl RunConfig {
    /// Loads a JSON config, applies the seed override from the
    /// environment, and validates constants.
    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let text = fs::read_to_string(path)?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Ok(value) = std::env::var(SEED_ENV_VAR) {
            config.shuffle_seed = value
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV_VAR} must be an integer")))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.cost.validate().map_err(HarnessError::Config)?;
        if self.max_tokens_per_head < 1 || self.max_baseline_tokens < 1 {
            return Err(HarnessError::Config("token budgets must be at least 1".into()));
        }
        if self.overhead_factor < 1.0 {
            return Err(HarnessError::Config("overhead_factor must be at least 1.0".into()));
        }
        if let Some(depth) = self.speculation_depth {
            if depth < 1 {
                return Err(HarnessError::Config("speculation_depth must be at least 1".into()));
            }
        }
        self.head_set()?;
        Ok(())
    }

    /// Parses the configured head names.
    pub fn head_set(&self) -> Result<Vec<Head>, HarnessError> {
        if self.heads.is_empty() {
            return Err(HarnessError::Config("head list must be nonempty".into()));
        }
        self.heads
            .iter()
            .map(|name| {
                Head::parse(name)
                    .ok_or_else(|| HarnessError::Config(format!("unknown head name {name:?}")))
            })
            .collect()
    }

    /// A config using the oracle backend and default constants.
    pub fn oracle_default() -> RunConfig {
        RunConfig {
            backend: BackendSpec::Oracle,
            draft_backend: None,
            cost: CostModel::default(),
            heads: default_heads(),
            max_tokens_per_head: default_max_tokens_per_head(),
            max_baseline_tokens: default_max_baseline_tokens(),
            speculation_depth: None,
            overhead_factor: default_overhead_factor(),
            shuffle_seed: 0,
            shuffle_history: true,
            wall_clock: false,
            out: None,
        }
    }
}
