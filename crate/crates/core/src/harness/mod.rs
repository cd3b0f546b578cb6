//! Command-line experiment harness.
//!
//! Wires the corpus, trainer, and metrics layers into reproducible
//! experiments: seed sweeps with paired baseline/augmented arms, ablations,
//! memory-size sweeps, and the report generators. Every command reads one
//! JSON [`ExperimentConfig`] and writes results under an archive directory
//! that is self-describing enough to reproduce or re-analyze offline.

mod archive;
mod commands;

pub use archive::{corpus_hash, load_archive, load_logs, write_atomic, RunArchive, RunEntry};
pub use commands::{
    cmd_ablate, cmd_analyze, cmd_gen_synth, cmd_memory_sweep, cmd_rep_dump, cmd_retrieval,
    cmd_run, AnalysisOutput, Overrides, RetrievalSummaryOut,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, SynthConfig};
use crate::metrics::{MetricsError, PrototypeSource, RetrievalConfig};
use crate::trainer::{TrainConfig, TrainError};

/// Errors mapped onto the CLI exit codes: 1 config, 2 data, 3 runtime.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] CorpusError),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<MetricsError> for HarnessError {
    fn from(e: MetricsError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

fn io_runtime(what: &str, e: std::io::Error) -> HarnessError {
    HarnessError::Runtime(format!("{what}: {e}"))
}

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generate from a synthetic config.
    Synth(SynthConfig),
    /// Load `instances.jsonl` / `relations.json` / `splits.json` from a
    /// directory.
    Dir(PathBuf),
}

/// Whether runs carry the augmentation arm, the plain arm, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AcaMode {
    On,
    Off,
    #[default]
    Paired,
}

/// Which analysis blocks `analyze` emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisToggles {
    pub fr_groups: bool,
    pub bad_cases: bool,
    pub retrieval: bool,
    pub ms_groups: bool,
    pub rep_dump: bool,
}

impl Default for AnalysisToggles {
    fn default() -> Self {
        AnalysisToggles {
            fr_groups: true,
            bad_cases: true,
            retrieval: true,
            ms_groups: true,
            rep_dump: false,
        }
    }
}

/// One experiment: dataset, task layout, seeds, training setup, analysis
/// switches. Serialized field names are the config-file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_task_count")]
    pub task_count: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub aca: AcaMode,
    #[serde(default)]
    pub analysis: AnalysisToggles,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default = "default_memory_sizes")]
    pub memory_sizes: Vec<usize>,
    #[serde(default = "default_prototype_source")]
    pub prototype_source: PrototypeSource,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_task_count() -> usize {
    10
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_memory_sizes() -> Vec<usize> {
    vec![5, 10, 20]
}

fn default_prototype_source() -> PrototypeSource {
    PrototypeSource::TrainedEncoder
}

impl ExperimentConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("need at least one seed".into()));
        }
        if self.task_count == 0 {
            return Err(HarnessError::Config("task_count must be positive".into()));
        }
        if let DatasetSource::Synth(s) = &self.dataset {
            s.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Effective training config for one (seed, arm) run. Paired arms share
    /// the derived seed; only the augmentation settings differ.
    pub fn train_for(&self, seed: u64, arm: Arm) -> TrainConfig {
        let mut train = self.train.clone();
        train.seed = crate::seeding::derive(self.train.seed, &[seed]);
        match arm {
            Arm::Baseline => {
                train.aca_enabled = false;
                train.ablate = crate::trainer::Ablate::None;
            }
            Arm::Aca => {
                train.aca_enabled = true;
            }
            Arm::AcaNoHybrid => {
                train.aca_enabled = true;
                train.ablate = crate::trainer::Ablate::NoHybrid;
            }
            Arm::AcaNoReversed => {
                train.aca_enabled = true;
                train.ablate = crate::trainer::Ablate::NoReversed;
            }
        }
        train
    }
}

/// Experiment arms. `Aca` respects the config's own ablate setting; the two
/// explicit ablation arms override it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    Aca,
    AcaNoHybrid,
    AcaNoReversed,
}

impl Arm {
    pub fn label(&self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Aca => "aca",
            Arm::AcaNoHybrid => "aca_no_hybrid",
            Arm::AcaNoReversed => "aca_no_reversed",
        }
    }

    pub fn from_label(s: &str) -> Option<Arm> {
        match s {
            "baseline" => Some(Arm::Baseline),
            "aca" => Some(Arm::Aca),
            "aca_no_hybrid" => Some(Arm::AcaNoHybrid),
            "aca_no_reversed" => Some(Arm::AcaNoReversed),
            _ => None,
        }
    }
}
