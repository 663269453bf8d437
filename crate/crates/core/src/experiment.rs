//! End-to-end runs: dataset settings, model settings, POD basis
//! construction from the training split, and training.
//!
//! This is the pipeline shared by the `train` and `ablate` commands and by
//! the ablation sweeps.

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_darcy, generate_kp, generate_nls, Dataset, DarcyGen, KpGen, NlsGen};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::neuralop::{Gso, GsoConfig, KernelConfig, Normalizer};
use crate::pod::{compute_basis, PodBasis, SnapshotMatrix};
use crate::scalar::Real;
use crate::training::{train_from, AdamState, EpochRecord, TrainConfig};

/// Generator settings of one of the three families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum GenConfig {
    Darcy(DarcyGen),
    Nls(NlsGen),
    Kp(KpGen),
}

impl GenConfig {
    pub fn generate<T: Real>(&self) -> Result<Dataset<T>> {
        match self {
            GenConfig::Darcy(c) => generate_darcy(c),
            GenConfig::Nls(c) => generate_nls(c),
            GenConfig::Kp(c) => generate_kp(c),
        }
    }

    pub fn resolution(&self) -> usize {
        match self {
            GenConfig::Darcy(c) => c.n,
            GenConfig::Nls(c) => c.n,
            GenConfig::Kp(c) => c.n,
        }
    }

    pub fn with_resolution(&self, n: usize) -> Self {
        let mut g = self.clone();
        match &mut g {
            GenConfig::Darcy(c) => c.n = n,
            GenConfig::Nls(c) => c.n = n,
            GenConfig::Kp(c) => c.n = n,
        }
        g
    }

    /// Same settings with another solver step count. Darcy has no time
    /// stepping and is rejected.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        let mut g = self.clone();
        match &mut g {
            GenConfig::Darcy(_) => {
                return Err(Error::InvalidArgument("the Darcy family has no time steps".into()))
            }
            GenConfig::Nls(c) => c.steps = steps,
            GenConfig::Kp(c) => c.steps = steps,
        }
        Ok(g)
    }
}

/// Architecture settings; channel counts come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub width: usize,
    pub layers: usize,
    pub kernel: KernelConfig,
    pub coords: bool,
    /// Embed the dataset's scalar parameter; defaults to "when present".
    pub use_epsilon: Option<bool>,
    /// Standardize inputs and outputs with training-split statistics.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            width: 32,
            layers: 4,
            kernel: KernelConfig::Pod { n_modes: 144 },
            coords: true,
            use_epsilon: None,
            normalize: true,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn gso_config<T: Real>(&self, data: &Dataset<T>) -> GsoConfig {
        GsoConfig {
            width: self.width,
            layers: self.layers,
            kernel: self.kernel,
            in_channels: data.in_channels(),
            out_channels: data.out_channels(),
            coords: self.coords,
            use_epsilon: self.use_epsilon.unwrap_or(data.epsilons.is_some()),
        }
    }
}

/// How the POD snapshot matrix is drawn from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnapshotSpec {
    /// Fraction of the training pairs whose inputs and outputs enter the
    /// snapshot matrix.
    pub fraction: f64,
    /// Explicit pair count; overrides `fraction` when set.
    pub pairs: Option<usize>,
    /// Divide every input and output channel by its training-split
    /// standard deviation before the decomposition, so that inputs and
    /// outputs of very different magnitude both shape the basis.
    pub rescale: bool,
}

impl Default for SnapshotSpec {
    fn default() -> Self {
        Self {
            fraction: 1.0,
            pairs: None,
            rescale: true,
        }
    }
}

impl SnapshotSpec {
    pub fn pair_count(&self, n_train: usize) -> Result<usize> {
        let n = match self.pairs {
            Some(p) => p,
            None => {
                if !(self.fraction > 0.0 && self.fraction <= 1.0) {
                    return Err(Error::InvalidArgument("snapshot fraction must lie in (0, 1]".into()));
                }
                ((self.fraction * n_train as f64).ceil() as usize).max(1)
            }
        };
        if n == 0 || n > n_train {
            return Err(Error::InvalidArgument(format!(
                "snapshot pairs {n} must lie in 1..={n_train}"
            )));
        }
        Ok(n)
    }
}

/// POD basis with `n_modes` columns from the first `pairs` training pairs,
/// every channel of every input and output being one snapshot column.
/// With `scales = Some((input, output))` each channel is divided by the
/// given per-channel scale first.
pub fn training_basis<T: Real>(
    data: &Dataset<T>,
    pairs: usize,
    n_modes: usize,
    scales: Option<(&[f64], &[f64])>,
) -> Result<PodBasis<T>> {
    if pairs == 0 || pairs > data.len() {
        return Err(Error::InvalidArgument(format!("cannot take {pairs} snapshot pairs")));
    }
    let x = match scales {
        None => SnapshotMatrix::from_fields(&data.inputs[..pairs], &data.outputs[..pairs])?,
        Some((si, so)) => {
            let ins = rescaled(&data.inputs[..pairs], si)?;
            let outs = rescaled(&data.outputs[..pairs], so)?;
            SnapshotMatrix::from_fields(&ins, &outs)?
        }
    };
    compute_basis(&x, n_modes)
}

fn rescaled<T: Real>(fields: &[Field<T>], scale: &[f64]) -> Result<Vec<Field<T>>> {
    fields
        .iter()
        .map(|f| {
            if f.channels() != scale.len() {
                return Err(Error::ShapeMismatch("one scale per channel expected".into()));
            }
            let mut g = f.clone();
            for (c, s) in scale.iter().enumerate() {
                let inv = T::lit(1.0 / s);
                g.channel_mut(c).iter_mut().for_each(|v| *v *= inv);
            }
            Ok(g)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub snapshots: SnapshotSpec,
}

/// A trained model with its history and optimizer state.
#[derive(Clone, Debug)]
pub struct ExperimentResult<T: Real> {
    pub model: Gso<T>,
    pub history: Vec<EpochRecord>,
    pub state: AdamState<T>,
    pub epochs_done: usize,
}

impl<T: Real> ExperimentResult<T> {
    pub fn final_test_error(&self) -> Option<f64> {
        self.history.last().and_then(|r| r.test_error)
    }
}

/// Fresh model for `data` following `spec`: basis from the training split
/// for POD kernels and, if requested, normalization fitted on the same
/// split.
pub fn build_model<T: Real>(
    spec: &ModelSpec,
    snapshots: &SnapshotSpec,
    data: &Dataset<T>,
    n_train: usize,
) -> Result<Gso<T>> {
    data.validate()?;
    if n_train == 0 || n_train > data.len() {
        return Err(Error::InvalidArgument(format!(
            "training split {n_train} outside dataset of {} samples",
            data.len()
        )));
    }
    let config = spec.gso_config(data);
    let ins: Vec<_> = data.inputs[..n_train].iter().collect();
    let outs: Vec<_> = data.outputs[..n_train].iter().collect();
    let norm = Normalizer::fit(&ins, &outs)?;
    let basis = match spec.kernel {
        KernelConfig::Pod { n_modes } => {
            let scales = snapshots.rescale.then(|| (norm.in_std.as_slice(), norm.out_std.as_slice()));
            Some(training_basis(data, snapshots.pair_count(n_train)?, n_modes, scales)?)
        }
        KernelConfig::Fourier { .. } => None,
    };
    let mut model = Gso::new(config, &data.grid, basis.as_ref(), spec.seed)?;
    if spec.normalize {
        model.set_normalizer(norm)?;
    }
    Ok(model)
}

/// Builds and trains a model; `on_epoch` sees each history record.
pub fn run_experiment<T: Real>(
    cfg: &ExperimentConfig,
    data: &Dataset<T>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<ExperimentResult<T>> {
    let mut model = build_model(&cfg.model, &cfg.snapshots, data, cfg.train.n_train)?;
    let state = AdamState::new(model.n_params());
    let out = train_from(&mut model, data, &cfg.train, state, 0, on_epoch)?;
    Ok(ExperimentResult {
        model,
        history: out.history,
        state: out.state,
        epochs_done: out.epochs_done,
    })
}
