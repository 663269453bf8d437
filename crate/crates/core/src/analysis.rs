//! Error spectra, band summaries and ablation sweeps.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentConfig, GenConfig};
use crate::grid::Field;
use crate::neuralop::KernelConfig;
use crate::scalar::Real;
use crate::spectral::{sorted_mode_index, Fft2, ModeSet};
use crate::dataset::Dataset;

/// Modes kept in a spectrum report on a 64 x 64 grid.
pub const SPECTRUM_PREFIX_64: usize = 3000;

/// Prefix length for an `n x n` grid: 3000 at `n = 64`, scaled with `n^2`
/// elsewhere.
pub fn spectrum_prefix(n: usize) -> usize {
    let scaled = (n * n) as f64 * SPECTRUM_PREFIX_64 as f64 / 4096.0;
    (scaled.round() as usize).clamp(1, n * n)
}

/// Moduli of the DFT of `pred - truth`, in ascending `|kx| + |ky|` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub labels: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

impl SpectrumReport {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `index,kx,ky,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,kx,ky,value\n");
        for (i, ((kx, ky), v)) in self.labels.iter().zip(&self.values).enumerate() {
            s.push_str(&format!("{i},{kx},{ky},{v:.17e}\n"));
        }
        s
    }
}

/// Per-mode error spectrum of one prediction. One-channel fields are real;
/// two-channel fields are read as `re + i im`. The transform acts on node
/// indices, so non-periodic grids are accepted as well.
pub fn spectrum_error<T: Real>(pred: &Field<T>, truth: &Field<T>) -> Result<SpectrumReport> {
    if !pred.same_shape(truth) {
        return Err(Error::ShapeMismatch("prediction and truth differ in shape".into()));
    }
    let g = pred.grid();
    let n = g.nx();
    if g.ny() != n {
        return Err(Error::ShapeMismatch("spectrum reports need a square grid".into()));
    }
    let d = pred.sub(truth)?;
    let mut buf: Vec<Complex<T>> = match d.channels() {
        1 => d.channel(0).iter().map(|&r| Complex::new(r, T::zero())).collect(),
        2 => d.channel(0).iter().zip(d.channel(1)).map(|(&r, &i)| Complex::new(r, i)).collect(),
        c => {
            return Err(Error::ShapeMismatch(format!(
                "spectrum reports take 1 (real) or 2 (complex) channels, got {c}"
            )))
        }
    };
    Fft2::new(n, n).forward(&mut buf);
    let prefix = spectrum_prefix(n);
    let labels: Vec<(usize, usize)> = sorted_mode_index(n).into_iter().take(prefix).collect();
    let values = labels.iter().map(|&(kx, ky)| buf[ky * n + kx].norm().as_f64()).collect();
    Ok(SpectrumReport { labels, values })
}

/// Elementwise mean of reports with identical labels.
pub fn mean_report(reports: &[SpectrumReport]) -> Result<SpectrumReport> {
    let first = reports.first().ok_or_else(|| Error::Empty("no spectrum reports".into()))?;
    if reports.iter().any(|r| r.labels != first.labels) {
        return Err(Error::ShapeMismatch("reports have different mode labels".into()));
    }
    let k = reports.len() as f64;
    let values = (0..first.len())
        .map(|i| reports.iter().map(|r| r.values[i]).sum::<f64>() / k)
        .collect();
    Ok(SpectrumReport {
        labels: first.labels.clone(),
        values,
    })
}

/// Means of the report values below and above index `floor(split_frac *
/// len)`. An empty band has mean 0.
pub fn band_error_summary(report: &SpectrumReport, split_frac: f64) -> Result<(f64, f64)> {
    if !(split_frac > 0.0 && split_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {split_frac} not in (0, 1)")));
    }
    let split = (split_frac * report.len() as f64).floor() as usize;
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok((mean(&report.values[..split]), mean(&report.values[split..])))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    /// POD mode count, or Fourier modes per axis (`m x m`).
    Modes,
    /// Snapshot pairs in the POD matrix.
    Snapshots,
    /// Grid side of the regenerated dataset.
    Resolution,
    /// Solver steps of the regenerated dataset.
    Timesteps,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Modes => "modes",
            AblationAxis::Snapshots => "snapshots",
            AblationAxis::Resolution => "resolution",
            AblationAxis::Timesteps => "timesteps",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: usize,
    pub test_error: f64,
    pub train_loss: f64,
}

/// Retrains once per axis value with every seed shared. Datasets are
/// regenerated only for the resolution and time step axes.
pub fn ablation_sweep<T: Real>(
    axis: AblationAxis,
    values: &[usize],
    data: &GenConfig,
    base: &ExperimentConfig,
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::Empty("ablation needs at least one value".into()));
    }
    if base.train.n_test == 0 {
        return Err(Error::InvalidArgument("ablation needs a test split".into()));
    }
    let shared: Option<Dataset<T>> = match axis {
        AblationAxis::Modes | AblationAxis::Snapshots => Some(data.generate()?),
        _ => None,
    };
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = base.clone();
        let owned;
        let ds = match axis {
            AblationAxis::Modes => {
                cfg.model.kernel = match cfg.model.kernel {
                    KernelConfig::Pod { .. } => KernelConfig::Pod { n_modes: v },
                    KernelConfig::Fourier { .. } => KernelConfig::Fourier { modes: ModeSet::new(v, v) },
                };
                shared.as_ref().expect("generated above")
            }
            AblationAxis::Snapshots => {
                cfg.snapshots.pairs = Some(v);
                shared.as_ref().expect("generated above")
            }
            AblationAxis::Resolution => {
                owned = data.with_resolution(v).generate()?;
                &owned
            }
            AblationAxis::Timesteps => {
                owned = data.with_steps(v)?.generate()?;
                &owned
            }
        };
        let r = run_experiment(&cfg, ds, |_| {})?;
        let last = r.history.last().ok_or_else(|| Error::InvalidArgument("ablation needs epochs >= 1".into()))?;
        rows.push(AblationRow {
            value: v,
            test_error: last.test_error.expect("test split checked above"),
            train_loss: last.train_loss,
        });
    }
    Ok(rows)
}

/// CSV with header `<axis>,test_error,train_loss`.
pub fn ablation_csv(axis: AblationAxis, rows: &[AblationRow]) -> String {
    let mut s = format!("{},test_error,train_loss\n", axis.name());
    for r in rows {
        s.push_str(&format!("{},{:.17e},{:.17e}\n", r.value, r.test_error, r.train_loss));
    }
    s
}
