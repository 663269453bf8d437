//! JSON configuration files and run manifests.
//!
//! Every subcommand resolves its settings from an optional `--config` file
//! and command-line overrides, then records the resolved settings in
//! `run_manifest.json`. Passing that manifest back as `--config` reruns the
//! command with identical settings.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use podnolab_core::datagen::NlsInitLaw;
use podnolab_core::experiment::{ExperimentConfig, GenConfig, ModelSpec, SnapshotSpec};
use podnolab_core::TrainConfig;

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Reads a config file for `command`. A run manifest is accepted as well;
/// its `config` member is used after checking that it belongs to the same
/// command.
pub fn load<C: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(obj) = value.as_object() {
        if obj.contains_key("command") && obj.contains_key("config") {
            let found = obj["command"].as_str().unwrap_or_default();
            if found != command {
                bail!(ConfigError(format!("run manifest belongs to `{found}`, not `{command}`")));
            }
            value = obj["config"].clone();
        }
    }
    serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
}

/// Configuration problems detected by the command-line layer itself.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    tool: &'static str,
    version: &'static str,
    format_version: u32,
    threads: usize,
    config: &'a C,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    notes: serde_json::Map<String, serde_json::Value>,
}

pub fn write_run_manifest<C: Serialize>(
    out: &Path,
    command: &str,
    config: &C,
    notes: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    let m = RunManifest {
        command,
        tool: "podnolab",
        version: env!("CARGO_PKG_VERSION"),
        format_version: podnolab_core::io::FORMAT_VERSION,
        threads: rayon::current_num_threads(),
        config,
        notes,
    };
    write_text(&out.join(RUN_MANIFEST), &serde_json::to_string_pretty(&m)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Train/test split sizes; unset sizes are resolved from the dataset length
/// (a tenth of the samples for testing, the rest for training).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Split {
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
}

impl Split {
    pub fn resolve(&self, len: usize) -> Result<(usize, usize)> {
        let (n_train, n_test) = match (self.n_train, self.n_test) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a, len.saturating_sub(a).min(len / 10)),
            (None, Some(b)) => (len.saturating_sub(b), b),
            (None, None) => (len - len / 10, len / 10),
        };
        if n_train == 0 || n_train + n_test > len {
            bail!(ConfigError(format!(
                "split {n_train} train + {n_test} test does not fit a dataset of {len} samples"
            )));
        }
        Ok((n_train, n_test))
    }

    pub fn resolved(&self, len: usize) -> Result<Split> {
        let (a, b) = self.resolve(len)?;
        Ok(Split {
            n_train: Some(a),
            n_test: Some(b),
        })
    }
}

/// Optimizer settings; the batch is capped at the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lr: d.lr,
            weight_decay: d.weight_decay,
            batch: d.batch,
            epochs: d.epochs,
            seed: d.seed,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, n_train: usize, n_test: usize) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch: self.batch.min(n_train),
            epochs: self.epochs,
            seed: self.seed,
            n_train,
            n_test,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PodBasisConfig {
    pub dataset: PathBuf,
    pub modes: Option<usize>,
    pub split: Split,
    pub snapshots: SnapshotSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub dataset: PathBuf,
    pub model: ModelSpec,
    pub train: TrainSection,
    pub split: Split,
    pub snapshots: SnapshotSpec,
}

/// Samples `[start, end)` of a dataset; unset bounds default to the test
/// split recorded in the checkpoint, or to the whole dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDataConfig {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub start: Option<usize>,
    pub end: Option<usize>,
    /// Band split for spectrum reports.
    pub split_frac: Option<f64>,
}

/// One NLS instance solved by the Fourier or the POD splitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSolveConfig {
    pub n: usize,
    pub seed: u64,
    pub index: u64,
    /// Drawn from the sampling law of the dataset generator when unset.
    pub epsilon: Option<f64>,
    pub t_final: f64,
    pub steps: usize,
    pub law: NlsInitLaw,
    /// Snapshot recipe 1, 2 or 3 (POD splitting only).
    pub basis_type: u8,
    /// Basis sizes of the error curve (POD splitting only).
    pub modes: Vec<usize>,
}

impl Default for SplitSolveConfig {
    fn default() -> Self {
        Self {
            n: 64,
            seed: 0,
            index: 0,
            epsilon: None,
            t_final: 0.5,
            steps: 1000,
            law: NlsInitLaw::default(),
            basis_type: 2,
            modes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub data: GenConfig,
    pub experiment: ExperimentConfig,
    pub axis: podnolab_core::analysis::AblationAxis,
    pub values: Vec<usize>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            data: GenConfig::Darcy(Default::default()),
            experiment: ExperimentConfig {
                model: ModelSpec::default(),
                train: TrainConfig::default(),
                snapshots: SnapshotSpec::default(),
            },
            axis: podnolab_core::analysis::AblationAxis::Modes,
            values: Vec::new(),
        }
    }
}
