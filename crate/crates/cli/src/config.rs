//! Run configuration: one JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail};
use fiberwatch_core::anomaly::AeConfig;
use fiberwatch_core::baselines::{DEFAULT_LOF_K, DEFAULT_SUBSAMPLE, DEFAULT_TREES};
use fiberwatch_core::dataset::DEFAULT_STRIDE;
use fiberwatch_core::diagnoser::DiagConfig;
use fiberwatch_core::generate::{GeneratorConfig, Range};
use fiberwatch_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Classify};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub trees: usize,
    pub subsample: usize,
    pub lof_k: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            trees: DEFAULT_TREES,
            subsample: DEFAULT_SUBSAMPLE,
            lof_k: DEFAULT_LOF_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub stride: usize,
    /// Drop alerts located past a detected fiber cut.
    pub suppress_after_cut: bool,
    /// Length and SNR range of the traces written by `gen --traces`.
    pub trace_length_m: f64,
    pub trace_snr_db: Range,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            suppress_after_cut: true,
            trace_length_m: 150.0,
            trace_snr_db: Range::new(13.0, 30.0),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory, here or via `--seed`.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub generator: GeneratorConfig,
    pub autoencoder: AeConfig,
    pub ae_training: TrainConfig,
    pub diagnoser: DiagConfig,
    pub diag_training: TrainConfig,
    pub baselines: BaselineConfig,
    pub monitor: MonitorConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).validation(format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).validation(format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> CliResult<()> {
        let check = || -> anyhow::Result<()> {
            self.generator.validate()?;
            self.ae_training.validate()?;
            self.diag_training.validate()?;
            self.diagnoser.loss_weights.validate()?;
            if self.monitor.stride == 0 {
                bail!("monitor stride must be at least 1");
            }
            if self.baselines.trees == 0 || self.baselines.subsample == 0 || self.baselines.lof_k == 0 {
                bail!("baseline trees, subsample and lof_k must be positive");
            }
            Ok(())
        };
        check().validation("invalid configuration")
    }
}

/// A validated configuration with its seed and output locations resolved.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: u64,
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(mut config: RunConfig, seed: Option<u64>, out: PathBuf) -> CliResult<Self> {
        if seed.is_some() {
            config.seed = seed;
        }
        let seed = config
            .seed
            .ok_or_else(|| CliError::validation(anyhow!("a seed is required (--seed or \"seed\" in the config)")))?;
        config.validate()?;
        Ok(Self { seed, config, out })
    }

    fn dir(&self, custom: &Option<PathBuf>, default: &str) -> PathBuf {
        custom.clone().unwrap_or_else(|| self.out.join(default))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dir(&self.config.paths.data_dir, "data")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.dir(&self.config.paths.model_dir, "models")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.dir(&self.config.paths.report_dir, "reports")
    }

    pub fn trace_dir(&self) -> PathBuf {
        self.dir(&self.config.paths.trace_dir, "traces")
    }

    pub fn ae_dataset(&self) -> PathBuf {
        self.data_dir().join("ae.jsonl")
    }

    pub fn diag_dataset(&self) -> PathBuf {
        self.data_dir().join("diag.jsonl")
    }

    pub fn ae_model(&self) -> PathBuf {
        self.model_dir().join("gru_ae.params")
    }

    pub fn threshold(&self) -> PathBuf {
        self.model_dir().join("threshold.json")
    }

    pub fn diag_model(&self) -> PathBuf {
        self.model_dir().join("abigru.params")
    }

    pub fn flat_model(&self) -> PathBuf {
        self.model_dir().join("bigru_flat.params")
    }

    /// Seeds for the separate random streams of one run.
    pub fn stream_seed(&self, stream: u64) -> u64 {
        self.seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}
