//! Experiment configuration: a flat text format of dotted keys
//! (`train.lr_pi = 1e-4`, `#` comments), starting from documented defaults.
//! Unknown keys are rejected and every parse error names the offending field.

use std::path::PathBuf;

use usr_core::agent::{PhiIndexing, TrainConfig};
use usr_core::env::LayoutId;
use usr_core::eval::ReferenceMode;
use usr_core::nn::OptimizerKind;

use crate::CliError;

/// Everything a command needs: environment shape, model shape, training
/// hyperparameters, and the experiment sweep definition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub layout: LayoutId,
    pub gamma_base: f64,
    pub max_steps: usize,
    pub d: usize,
    pub hidden: usize,
    pub train: TrainConfig,
    /// source-goal count for `train`
    pub k: usize,
    /// k sweep for `eval` and `transfer`
    pub k_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub reference: ReferenceMode,
    pub target_env_steps: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            layout: LayoutId::FourRoom13,
            gamma_base: 0.95,
            max_steps: 300,
            d: 64,
            hidden: 128,
            train: TrainConfig::default(),
            k: 20,
            k_values: vec![1, 5, 10, 20, 40],
            seeds: vec![1, 2, 3, 4, 5, 6],
            reference: ReferenceMode::Oracle,
            target_env_steps: 60_000,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |what: &str| CliError::Config(format!("config field `{key}`: {what}, got {value:?}"));
        match key {
            "env.layout" => self.layout = LayoutId::parse(value).map_err(|e| CliError::Config(format!("config field `{key}`: {e}")))?,
            "env.gamma_base" => self.gamma_base = value.parse().map_err(|_| bad("expected a real number"))?,
            "env.max_steps" => self.max_steps = value.parse().map_err(|_| bad("expected a positive integer"))?,
            "model.d" => self.d = value.parse().map_err(|_| bad("expected a positive integer"))?,
            "model.hidden" => self.hidden = value.parse().map_err(|_| bad("expected a positive integer"))?,
            "train.lr_w" => self.train.lr_w = value.parse().map_err(|_| bad("expected a real number"))?,
            "train.lr_psi" => self.train.lr_psi = value.parse().map_err(|_| bad("expected a real number"))?,
            "train.lr_pi" => self.train.lr_pi = value.parse().map_err(|_| bad("expected a real number"))?,
            "train.lr_phi" => self.train.lr_phi = value.parse().map_err(|_| bad("expected a real number"))?,
            "train.phase1_samples" => self.train.phase1_samples = value.parse().map_err(|_| bad("expected a positive integer"))?,
            "train.phase1_epochs" => self.train.phase1_epochs = value.parse().map_err(|_| bad("expected a positive integer"))?,
            "train.max_env_steps" => self.train.max_env_steps = value.parse().map_err(|_| bad("expected a positive integer"))?,
            "train.entropy_coef" => self.train.entropy_coef = value.parse().map_err(|_| bad("expected a real number"))?,
            "train.eval_every" => self.train.eval_every = value.parse().map_err(|_| bad("expected a positive integer"))?,
            "train.seed" => self.train.seed = value.parse().map_err(|_| bad("expected an integer"))?,
            "train.optimizer" => {
                self.train.optimizer = match value {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(bad("expected adam or sgd")),
                }
            }
            "train.phi_indexing" => {
                self.train.phi_indexing =
                    PhiIndexing::parse(value).ok_or_else(|| bad("expected current or next"))?
            }
            "train.k" => self.k = value.parse().map_err(|_| bad("expected a positive integer"))?,
            "eval.k_values" => {
                self.k_values = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("expected a comma-separated list of integers"))?
            }
            "eval.seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|v| v.trim().parse::<u64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("expected a comma-separated list of integers"))?
            }
            "eval.reference" => {
                self.reference = ReferenceMode::parse(value).ok_or_else(|| bad("expected oracle or trained"))?
            }
            "eval.target_env_steps" => {
                self.target_env_steps = value.parse().map_err(|_| bad("expected a positive integer"))?
            }
            "out.dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Mirrors the preconditions of the consuming modules with field-level
    /// messages.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.gamma_base > 0.0 && self.gamma_base < 1.0) {
            return Err(CliError::Config(format!(
                "config field `env.gamma_base`: must lie strictly between 0 and 1, got {}",
                self.gamma_base
            )));
        }
        if self.max_steps == 0 {
            return Err(CliError::Config("config field `env.max_steps`: must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(CliError::Config("config field `model.d`: must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(CliError::Config("config field `model.hidden`: must be at least 1".into()));
        }
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("config field `train.*`: {e}")))?;
        if self.k == 0 || self.k > 48 {
            return Err(CliError::Config(format!("config field `train.k`: must lie in 1..=48, got {}", self.k)));
        }
        if self.k_values.is_empty() || self.k_values.iter().any(|k| *k == 0 || *k > 48) {
            return Err(CliError::Config(format!(
                "config field `eval.k_values`: every k must lie in 1..=48, got {:?}",
                self.k_values
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("config field `eval.seeds`: need at least one seed".into()));
        }
        if self.target_env_steps == 0 {
            return Err(CliError::Config("config field `eval.target_env_steps`: must be at least 1".into()));
        }
        Ok(())
    }
}
