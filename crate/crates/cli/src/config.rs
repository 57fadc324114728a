//! Experiment configuration: TOML files with built-in defaults, overridden
//! field by field from command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use qratio_core::dqn::LossKind;
use qratio_core::envs::EnvKind;
use qratio_core::trainer::{LearnRatio, TrainConfig};

use crate::CliError;

/// Everything one sweep needs: the sweep axes and harness settings, plus the
/// per-run training config under `[train]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Update:step ratios forming the sweep's outer axis.
    pub ratios: Vec<LearnRatio>,
    /// Learning-rate grid exponents; lr = center(ratio) * 2^k.
    pub k_values: Vec<i32>,
    /// Added to a hash of (ratio, k, seed id) to derive each run seed.
    pub base_seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for the sweep; 1 runs serially.
    pub parallelism: usize,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ratios = ["4:1", "1:1", "1:4", "1:8", "1:16"]
            .iter()
            .map(|s| s.parse().expect("default ratios parse"))
            .collect();
        ExperimentConfig {
            ratios,
            k_values: (-2..=2).collect(),
            base_seed: 0,
            output_dir: PathBuf::from("results"),
            parallelism: 1,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(crate::config_err)?;
        if self.ratios.is_empty() {
            return Err(CliError::Config("ratios must not be empty".into()));
        }
        if self.k_values.is_empty() {
            return Err(CliError::Config("k_values must not be empty".into()));
        }
        if self.parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loads a config file, or the built-in defaults when no path is given.
/// Unknown or malformed keys are reported by name.
pub fn load(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| crate::io_err(&format!("reading {}", path.display()), e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Command-line overrides mirroring the config file. Every flag is optional;
/// a set flag wins over both the file and the defaults. Environment
/// internals (grid size, rewards) are file-only.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    /// TOML config file; missing keys fall back to built-in defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory for results.csv, heatmap.csv, summary.csv and curves/.
    #[arg(long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    /// Worker threads for the sweep (1 = serial).
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Comma-separated update:step ratios, e.g. 4:1,1:1,1:4.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<String>>,
    /// Comma-separated learning-rate grid exponents, e.g. -2,-1,0,1,2.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub k_values: Option<Vec<i32>>,
    /// Comma-separated seed ids trained per sweep cell.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Environment with default parameters: healthgrid or chain.
    #[arg(long)]
    pub env: Option<String>,
    /// Environment frames per agent decision.
    #[arg(long)]
    pub frame_skip: Option<usize>,
    #[arg(long)]
    pub total_env_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub buffer_capacity: Option<usize>,
    /// Learning updates between target-network synchronizations.
    #[arg(long)]
    pub target_sync: Option<u64>,
    #[arg(long)]
    pub discount: Option<f64>,
    #[arg(long)]
    pub epsilon_initial: Option<f64>,
    #[arg(long)]
    pub epsilon_final: Option<f64>,
    /// Environment steps to anneal epsilon over (default: first 10% of
    /// total_env_steps).
    #[arg(long)]
    pub epsilon_anneal_steps: Option<u64>,
    /// Fixed learning rate; sweep cells normally derive theirs from (ratio, k).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Transitions collected before the first learning update.
    #[arg(long)]
    pub warmup_transitions: Option<usize>,
    /// Environment steps between evaluation pauses.
    #[arg(long)]
    pub eval_period: Option<u64>,
    /// Greedy episodes per evaluation pause.
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Comma-separated hidden layer widths, e.g. 128,128.
    #[arg(long, value_delimiter = ',')]
    pub hidden_layers: Option<Vec<usize>>,
    /// Loss on the TD error: mse or huber.
    #[arg(long)]
    pub loss: Option<String>,
}

pub fn parse_ratio(text: &str) -> Result<LearnRatio, CliError> {
    text.parse::<LearnRatio>()
        .map_err(|e| CliError::Config(format!("ratio {text:?}: {e}")))
}

fn parse_env(name: &str) -> Result<EnvKind, CliError> {
    match name {
        "healthgrid" => Ok(EnvKind::default()),
        "chain" => Ok(EnvKind::Chain(Default::default())),
        other => Err(CliError::Config(format!(
            "env {other:?}: expected healthgrid or chain"
        ))),
    }
}

fn parse_loss(name: &str) -> Result<LossKind, CliError> {
    match name {
        "mse" => Ok(LossKind::Mse),
        "huber" => Ok(LossKind::Huber),
        other => Err(CliError::Config(format!(
            "loss {other:?}: expected mse or huber"
        ))),
    }
}

/// Defaults, then the config file, then flags; validates the result.
pub fn resolve(overrides: &ConfigOverrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = load(overrides.config.as_deref())?;
    if let Some(v) = &overrides.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = overrides.base_seed {
        cfg.base_seed = v;
    }
    if let Some(v) = overrides.parallelism {
        cfg.parallelism = v;
    }
    if let Some(texts) = &overrides.ratios {
        cfg.ratios = texts
            .iter()
            .map(|t| parse_ratio(t))
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = &overrides.k_values {
        cfg.k_values = v.clone();
    }
    if let Some(v) = &overrides.seeds {
        cfg.train.seeds = v.clone();
    }
    if let Some(name) = &overrides.env {
        cfg.train.env = parse_env(name)?;
    }
    if let Some(v) = overrides.frame_skip {
        cfg.train.frame_skip = v;
    }
    if let Some(v) = overrides.total_env_steps {
        cfg.train.total_env_steps = v;
    }
    if let Some(v) = overrides.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = overrides.buffer_capacity {
        cfg.train.buffer_capacity = v;
    }
    if let Some(v) = overrides.target_sync {
        cfg.train.target_sync = v;
    }
    if let Some(v) = overrides.discount {
        cfg.train.discount = v;
    }
    if let Some(v) = overrides.epsilon_initial {
        cfg.train.epsilon_initial = v;
    }
    if let Some(v) = overrides.epsilon_final {
        cfg.train.epsilon_final = v;
    }
    if let Some(v) = overrides.epsilon_anneal_steps {
        cfg.train.epsilon_anneal_steps = Some(v);
    }
    if let Some(v) = overrides.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = overrides.warmup_transitions {
        cfg.train.warmup_transitions = v;
    }
    if let Some(v) = overrides.eval_period {
        cfg.train.eval_period = v;
    }
    if let Some(v) = overrides.eval_episodes {
        cfg.train.eval_episodes = v;
    }
    if let Some(v) = &overrides.hidden_layers {
        cfg.train.hidden_layers = v.clone();
    }
    if let Some(name) = &overrides.loss {
        cfg.train.loss = parse_loss(name)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
