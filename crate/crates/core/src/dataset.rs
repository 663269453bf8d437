//! Input/parameter/output triples and the three dataset generators.
//!
//! Generation is parallel over samples. Every sample depends only on
//! `(seed, index)`, so the result does not depend on the thread count.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    epsilon_pool, pick_from_pool, sample_darcy_a, sample_kp_u0, sample_nls_u0, nls_potential, DarcyLaw, KpInitLaw,
    NlsInitLaw,
};
use crate::error::{Error, Result};
use crate::grid::{complex_to_field, ComplexView, Field, Grid2D};
use crate::scalar::Real;
use crate::solvers::darcy::{darcy_grid, solve_darcy, DarcyProblem};
use crate::solvers::kp::{etdrk4_kp, kp_grid, KpProblem};
use crate::solvers::nls::{lie_trotter_nls, NlsProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Darcy,
    Nls,
    Kp,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Darcy => "darcy",
            Family::Nls => "nls",
            Family::Kp => "kp",
        }
    }
}

/// Samples `(a_j, eps_j, u_j)` on one grid plus generation metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub family: Family,
    pub grid: Grid2D<T>,
    pub inputs: Vec<Field<T>>,
    pub outputs: Vec<Field<T>>,
    pub epsilons: Option<Vec<T>>,
    pub seed: u64,
    /// Generator settings, echoed into the manifest.
    pub settings: serde_json::Value,
}

impl<T: Real> Dataset<T> {
    /// Checks that all samples share the grid and channel layout.
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Empty("dataset has no samples".into()));
        }
        if self.inputs.len() != self.outputs.len() {
            return Err(Error::ShapeMismatch("input and output counts differ".into()));
        }
        if let Some(e) = &self.epsilons {
            if e.len() != self.inputs.len() {
                return Err(Error::ShapeMismatch("epsilon count differs from sample count".into()));
            }
        }
        let (ci, co) = (self.inputs[0].channels(), self.outputs[0].channels());
        let same = |f: &Field<T>, c: usize| f.grid() == &self.grid && f.channels() == c;
        if !self.inputs.iter().all(|f| same(f, ci)) || !self.outputs.iter().all(|f| same(f, co)) {
            return Err(Error::ShapeMismatch("samples disagree on grid or channel count".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn in_channels(&self) -> usize {
        self.inputs.first().map_or(0, |f| f.channels())
    }

    pub fn out_channels(&self) -> usize {
        self.outputs.first().map_or(0, |f| f.channels())
    }

    pub fn epsilon(&self, i: usize) -> Option<T> {
        self.epsilons.as_ref().map(|e| e[i])
    }

    /// Copy of samples `range`, keeping metadata.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::InvalidArgument(format!(
                "range {range:?} outside dataset of {} samples",
                self.len()
            )));
        }
        Ok(Self {
            family: self.family,
            grid: self.grid.clone(),
            inputs: self.inputs[range.clone()].to_vec(),
            outputs: self.outputs[range.clone()].to_vec(),
            epsilons: self.epsilons.as_ref().map(|e| e[range].to_vec()),
            seed: self.seed,
            settings: self.settings.clone(),
        })
    }
}

fn need_samples(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("requested zero samples".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DarcyGen {
    /// Grid side (nodes per axis, boundary included).
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub law: DarcyLaw,
}

impl Default for DarcyGen {
    fn default() -> Self {
        Self {
            n: 85,
            samples: 1000,
            seed: 0,
            law: DarcyLaw::default(),
        }
    }
}

/// Permeability in, pressure out, `-div(a grad u) = 1` with `u = 0` on the
/// boundary of the unit square.
pub fn generate_darcy<T: Real>(cfg: &DarcyGen) -> Result<Dataset<T>> {
    need_samples(cfg.samples)?;
    let grid = darcy_grid::<T>(cfg.n)?;
    let pairs: Vec<(Field<T>, Field<T>)> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let a = sample_darcy_a(&grid, &cfg.law, cfg.seed, i)?;
            let u = solve_darcy(&DarcyProblem::unit_forcing(a.clone()))?;
            Ok((a, u))
        })
        .collect::<Result<_>>()?;
    let (inputs, outputs) = pairs.into_iter().unzip();
    Ok(Dataset {
        family: Family::Darcy,
        grid,
        inputs,
        outputs,
        epsilons: None,
        seed: cfg.seed,
        settings: serde_json::to_value(cfg)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlsGen {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub t_final: f64,
    pub steps: usize,
    /// Number of distinct epsilon realizations shared by the samples.
    pub epsilon_pool: usize,
    pub law: NlsInitLaw,
}

impl Default for NlsGen {
    fn default() -> Self {
        Self {
            n: 64,
            samples: 1000,
            seed: 0,
            t_final: 0.5,
            steps: 1000,
            epsilon_pool: 30,
            law: NlsInitLaw::default(),
        }
    }
}

/// Periodic `n x n` grid on `(-1, 1)^2` used by the NLS family.
pub fn nls_grid<T: Real>(n: usize) -> Result<Grid2D<T>> {
    Grid2D::periodic_square(n, -T::one(), T::one())
}

/// Initial state (re, im) and epsilon in, state at `t_final` out.
pub fn generate_nls<T: Real>(cfg: &NlsGen) -> Result<Dataset<T>> {
    need_samples(cfg.samples)?;
    if cfg.epsilon_pool == 0 {
        return Err(Error::InvalidArgument("epsilon pool must be non-empty".into()));
    }
    let grid = nls_grid::<T>(cfg.n)?;
    let potential = nls_potential(&grid, &cfg.law);
    let pool = epsilon_pool(cfg.seed, cfg.epsilon_pool);
    let view = ComplexView::new(0, 1, 2)?;
    let triples: Vec<(Field<T>, T, Field<T>)> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let u0 = sample_nls_u0(&grid, &cfg.law, cfg.seed, i)?;
            let eps = T::lit(pick_from_pool(&pool, cfg.seed, i));
            let p = NlsProblem {
                grid: grid.clone(),
                epsilon: eps,
                potential: potential.clone(),
                t_final: T::lit(cfg.t_final),
                steps: cfg.steps,
            };
            let z0: Vec<Complex<T>> = view.extract(&u0)?;
            let zt = lie_trotter_nls(&p, &z0)?;
            Ok((u0, eps, complex_to_field(&grid, &zt)?))
        })
        .collect::<Result<_>>()?;
    let mut inputs = Vec::with_capacity(triples.len());
    let mut outputs = Vec::with_capacity(triples.len());
    let mut eps = Vec::with_capacity(triples.len());
    for (a, e, u) in triples {
        inputs.push(a);
        eps.push(e);
        outputs.push(u);
    }
    Ok(Dataset {
        family: Family::Nls,
        grid,
        inputs,
        outputs,
        epsilons: Some(eps),
        seed: cfg.seed,
        settings: serde_json::to_value(cfg)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KpGen {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub t_final: f64,
    pub steps: usize,
    pub epsilon: f64,
    pub dealias: bool,
    pub law: KpInitLaw,
}

impl Default for KpGen {
    fn default() -> Self {
        Self {
            n: 64,
            samples: 1000,
            seed: 0,
            t_final: 0.3,
            steps: 1000,
            epsilon: 0.02,
            dealias: true,
            law: KpInitLaw::default(),
        }
    }
}

/// Initial profile in, ETDRK4 solution at `t_final` out.
pub fn generate_kp<T: Real>(cfg: &KpGen) -> Result<Dataset<T>> {
    need_samples(cfg.samples)?;
    let grid = kp_grid::<T>(cfg.n)?;
    let mut p = KpProblem::new(grid.clone(), T::lit(cfg.epsilon), T::lit(cfg.t_final), cfg.steps);
    p.dealias = cfg.dealias;
    p.validate()?;
    let pairs: Vec<(Field<T>, Field<T>)> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let u0 = sample_kp_u0(&grid, &cfg.law, cfg.seed, i)?;
            let u = etdrk4_kp(&p, &u0)?;
            Ok((u0, u))
        })
        .collect::<Result<_>>()?;
    let (inputs, outputs) = pairs.into_iter().unzip();
    Ok(Dataset {
        family: Family::Kp,
        grid,
        inputs,
        outputs,
        epsilons: None,
        seed: cfg.seed,
        settings: serde_json::to_value(cfg)?,
    })
}
