//! TOML run and sweep configurations.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use mll_core::trainer::{fig2_specs, ToyDatasetConfig, ToyModelConfig, TrainConfig};
use mll_core::MarginSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "MLL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Toy,
    Paper,
}

impl Profile {
    pub fn train_config(self) -> TrainConfig {
        match self {
            Profile::Toy => TrainConfig::toy(),
            Profile::Paper => TrainConfig::paper(),
        }
    }
}

/// Everything `mll toy` needs. `train.seed` is replaced by `seed` when the
/// config is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: ToyDatasetConfig,
    pub model: ToyModelConfig,
    pub train: TrainConfig,
    pub losses: Vec<MarginSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            dataset: ToyDatasetConfig::default(),
            model: ToyModelConfig::default(),
            train: TrainConfig::toy(),
            losses: fig2_specs(),
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str, origin: &str) -> CliResult<Self> {
        parse_toml(text, origin)
    }
}

/// Configurations ranked against each other by Borda count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGroup {
    pub name: String,
    pub configs: Vec<SweepEntry>,
}

/// Either a row of known accuracies or a loss to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<MarginSpec>,
}

/// A held-out verification benchmark drawn from the toy generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyProtocol {
    /// Multiplier on the training noise.
    pub std_factor: f64,
    pub per_class: usize,
    /// Pair count; genuine and impostor pairs alternate.
    pub pairs: usize,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySweep {
    pub seed: u64,
    pub dataset: ToyDatasetConfig,
    pub model: ToyModelConfig,
    pub train: Option<TrainConfig>,
    /// One per benchmark, in the same order.
    pub protocols: Vec<ToyProtocol>,
}

impl Default for ToySweep {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: ToyDatasetConfig::default(),
            model: ToyModelConfig::default(),
            train: None,
            protocols: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub benchmarks: Vec<String>,
    pub groups: Vec<SweepGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySweep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    Ingest,
    Train,
}

impl SweepGrid {
    pub fn from_toml(text: &str, origin: &str) -> CliResult<Self> {
        let grid: SweepGrid = parse_toml(text, origin)?;
        grid.mode(origin)?;
        Ok(grid)
    }

    pub fn entries(&self) -> impl Iterator<Item = &SweepEntry> {
        self.groups.iter().flat_map(|g| g.configs.iter())
    }

    /// Ingest when every entry carries accuracies; train when every entry
    /// carries a spec and a `[toy]` table is present.
    pub fn mode(&self, origin: &str) -> CliResult<SweepMode> {
        let bad = |message: String| CliError::Config {
            path: origin.to_string(),
            message,
        };
        if self.benchmarks.is_empty() {
            return Err(bad("at least one benchmark is required".into()));
        }
        if let Some(g) = self.groups.iter().find(|g| g.configs.is_empty()) {
            return Err(bad(format!("group {:?} has no configs", g.name)));
        }
        if self.groups.is_empty() {
            return Err(bad("at least one group is required".into()));
        }
        let all_acc = self.entries().all(|e| e.accuracy.is_some() && e.spec.is_none());
        let all_spec = self.entries().all(|e| e.spec.is_some() && e.accuracy.is_none());
        if all_acc {
            if let Some(e) = self.entries().find(|e| e.accuracy.as_ref().unwrap().len() != self.benchmarks.len()) {
                return Err(bad(format!(
                    "{:?} lists {} accuracies for {} benchmarks",
                    e.name,
                    e.accuracy.as_ref().unwrap().len(),
                    self.benchmarks.len()
                )));
            }
            return Ok(SweepMode::Ingest);
        }
        if all_spec {
            let toy = self
                .toy
                .as_ref()
                .ok_or_else(|| bad("configs with `spec` need a [toy] table".into()))?;
            if toy.protocols.len() != self.benchmarks.len() {
                return Err(bad(format!(
                    "{} toy protocols for {} benchmarks",
                    toy.protocols.len(),
                    self.benchmarks.len()
                )));
            }
            return Ok(SweepMode::Train);
        }
        Err(bad("every config needs exactly one of `accuracy` or `spec`, and all configs must agree".into()))
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| mll_core::Error::io(path, e).into())
}

fn parse_toml<T: DeserializeOwned>(text: &str, origin: &str) -> CliResult<T> {
    toml::from_str(text).map_err(|e| CliError::Config {
        path: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })
}

/// Worker count from `MLL_THREADS`; 1 when unset.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}
