//! Generalized spectral operator with Fourier and POD kernels.
//!
//! The model is the chain `Q . L_{L-1} . gelu . ... . gelu . L_0 . P` where
//! `P` lifts the input channels to `width`, each layer computes
//! `W v + b + K[v] + eps_hat` and `Q` projects back to the output channels.
//! `K` conjugates a mode-wise learned multiplier by either the truncated DFT
//! (FNO) or a POD basis (PODNO).
//!
//! All learnable scalars live in one flat vector described by a named tensor
//! table, which is what the optimizer, the checkpoint format and the
//! gradient buffers share. Hidden states are `[channel, node]` matrices.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex;
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::datagen::{rng_for, tag};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid2D};
use crate::pod::PodBasis;
use crate::scalar::{gelu, gelu_grad, Real};
use crate::spectral::{Fft2, ModeSet};

/// Kernel backend of the spectral layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelConfig {
    /// Truncated DFT with `mx x my` modes per corner block.
    Fourier { modes: ModeSet },
    /// Leading `n_modes` columns of a POD basis.
    Pod { n_modes: usize },
}

impl KernelConfig {
    /// Learned scalars of one layer's multiplier for the given width.
    pub fn spectral_len(&self, width: usize) -> usize {
        match *self {
            KernelConfig::Fourier { modes } => width * width * 2 * modes.my * modes.mx * 2,
            KernelConfig::Pod { n_modes } => width * width * n_modes,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            KernelConfig::Fourier { .. } => "fourier",
            KernelConfig::Pod { .. } => "pod",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsoConfig {
    pub width: usize,
    pub layers: usize,
    pub kernel: KernelConfig,
    /// Data channels of the input function, without coordinates.
    pub in_channels: usize,
    pub out_channels: usize,
    /// Append the node coordinates `x, y` as two extra input channels.
    #[serde(default = "default_true")]
    pub coords: bool,
    /// Enable the per-layer embedding of the scalar parameter.
    #[serde(default)]
    pub use_epsilon: bool,
}

fn default_true() -> bool {
    true
}

impl GsoConfig {
    pub fn lifted_channels(&self) -> usize {
        self.in_channels + if self.coords { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.layers == 0 {
            return Err(Error::InvalidArgument("width and layers must be at least 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        match self.kernel {
            KernelConfig::Fourier { modes } if modes.mx == 0 || modes.my == 0 => {
                Err(Error::InvalidArgument("Fourier modes must be positive".into()))
            }
            KernelConfig::Pod { n_modes: 0 } => Err(Error::InvalidArgument("POD modes must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Checks the kernel against a grid (and basis for POD).
    pub fn validate_for(&self, grid: &Grid2D<impl Real>, basis: Option<&PodBasis<impl Real>>) -> Result<()> {
        self.validate()?;
        match self.kernel {
            KernelConfig::Fourier { modes } => modes.validate(grid.nx(), grid.ny()),
            KernelConfig::Pod { n_modes } => {
                let b = basis.ok_or_else(|| Error::InvalidArgument("POD kernel needs a basis".into()))?;
                if b.grid().nx() != grid.nx() || b.grid().ny() != grid.ny() {
                    return Err(Error::ShapeMismatch("basis grid differs from model grid".into()));
                }
                if n_modes > b.n_modes() {
                    return Err(Error::InvalidArgument(format!(
                        "kernel wants {n_modes} modes, basis has {}",
                        b.n_modes()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Parameter count split by tensor group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub lift: usize,
    pub affine: usize,
    pub spectral: usize,
    pub epsilon: usize,
    pub proj: usize,
    pub total: usize,
}

/// Exact number of learned scalars (complex weights count twice).
/// A zero-layer config counts only the lifting and projection.
pub fn param_count(config: &GsoConfig) -> ParamCount {
    let d = config.width;
    let lift = config.lifted_channels() * d + d;
    let affine = config.layers * (d * d + d);
    let spectral = config.layers * config.kernel.spectral_len(d);
    let epsilon = if config.use_epsilon { config.layers * (d + d + d * d + d) } else { 0 };
    let proj = d * config.out_channels + config.out_channels;
    ParamCount {
        lift,
        affine,
        spectral,
        epsilon,
        proj,
        total: lift + affine + spectral + epsilon + proj,
    }
}

/// One named tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug)]
struct EpsOffsets {
    w1: usize,
    c1: usize,
    w2: usize,
    c2: usize,
}

#[derive(Clone, Copy, Debug)]
struct LayerOffsets {
    w: usize,
    b: usize,
    spectral: usize,
    eps: Option<EpsOffsets>,
}

#[derive(Clone, Debug)]
struct Layout {
    lift_w: usize,
    lift_b: usize,
    layers: Vec<LayerOffsets>,
    proj_w: usize,
    proj_b: usize,
    table: Vec<ParamEntry>,
    total: usize,
}

impl Layout {
    fn new(c: &GsoConfig) -> Self {
        let d = c.width;
        let mut table = Vec::new();
        let mut next = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = next;
            next += shape.iter().product::<usize>();
            table.push(ParamEntry { name, shape, offset });
            offset
        };
        let lift_w = push("lift.weight".into(), vec![d, c.lifted_channels()]);
        let lift_b = push("lift.bias".into(), vec![d]);
        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let w = push(format!("layers.{l}.w"), vec![d, d]);
            let b = push(format!("layers.{l}.b"), vec![d]);
            let shape = match c.kernel {
                KernelConfig::Fourier { modes } => vec![d, d, 2, modes.my, modes.mx, 2],
                KernelConfig::Pod { n_modes } => vec![d, d, n_modes],
            };
            let spectral = push(format!("layers.{l}.spectral"), shape);
            let eps = c.use_epsilon.then(|| EpsOffsets {
                w1: push(format!("layers.{l}.eps1.weight"), vec![d, 1]),
                c1: push(format!("layers.{l}.eps1.bias"), vec![d]),
                w2: push(format!("layers.{l}.eps2.weight"), vec![d, d]),
                c2: push(format!("layers.{l}.eps2.bias"), vec![d]),
            });
            layers.push(LayerOffsets { w, b, spectral, eps });
        }
        let proj_w = push("proj.weight".into(), vec![c.out_channels, d]);
        let proj_b = push("proj.bias".into(), vec![c.out_channels]);
        Self {
            lift_w,
            lift_b,
            layers,
            proj_w,
            proj_b,
            table,
            total: next,
        }
    }
}

/// Fixed per-channel affine normalization around the learned map.
///
/// Inputs are standardized before lifting; outputs are de-standardized
/// after projection. Identity by default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_mean: vec![0.0; in_channels],
            in_std: vec![1.0; in_channels],
            out_mean: vec![0.0; out_channels],
            out_std: vec![1.0; out_channels],
        }
    }

    /// Channel means and standard deviations over a set of fields.
    /// Channels with (near) zero spread keep unit scale.
    pub fn fit<T: Real>(inputs: &[&Field<T>], outputs: &[&Field<T>]) -> Result<Self> {
        let (in_mean, in_std) = channel_stats(inputs)?;
        let (out_mean, out_std) = channel_stats(outputs)?;
        Ok(Self {
            in_mean,
            in_std,
            out_mean,
            out_std,
        })
    }

    fn validate(&self, c: &GsoConfig) -> Result<()> {
        let ok = self.in_mean.len() == c.in_channels
            && self.in_std.len() == c.in_channels
            && self.out_mean.len() == c.out_channels
            && self.out_std.len() == c.out_channels;
        if !ok {
            return Err(Error::ShapeMismatch("normalizer channel counts differ from config".into()));
        }
        let finite = self.in_mean.iter().chain(&self.out_mean).all(|v| v.is_finite());
        let positive = self.in_std.iter().chain(&self.out_std).all(|v| v.is_finite() && *v > 0.0);
        if !finite || !positive {
            return Err(Error::InvalidArgument("normalizer needs finite means and positive scales".into()));
        }
        Ok(())
    }
}

fn channel_stats<T: Real>(fields: &[&Field<T>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = fields.first().ok_or_else(|| Error::Empty("no fields to normalize".into()))?;
    let channels = first.channels();
    let mut mean = vec![0.0; channels];
    let mut sq = vec![0.0; channels];
    let mut count = 0.0;
    for f in fields {
        if f.channels() != channels {
            return Err(Error::ShapeMismatch("fields disagree on channel count".into()));
        }
        for (c, (m, q)) in mean.iter_mut().zip(sq.iter_mut()).enumerate() {
            for v in f.channel(c) {
                let v = v.as_f64();
                *m += v;
                *q += v * v;
            }
        }
        count += first.grid().len() as f64;
    }
    let std = mean
        .iter_mut()
        .zip(&sq)
        .map(|(m, q)| {
            *m /= count;
            let var = (q / count - *m * *m).max(0.0);
            let s = var.sqrt();
            if s > 1e-12 * m.abs().max(1.0) {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok((mean, std))
}

/// Retained DFT slots of the half-spectrum parameterization.
///
/// Slot `q = (b my + t) mx + s` sits at `kx = s` and `ky = t` (`b = 0`) or
/// `ky = ny - my + t` (`b = 1`). The `ky` Nyquist row is inactive. Columns
/// with `kx > 0` stand for themselves and their mirror `-kx`, hence weight 2
/// when resynthesizing a real field.
#[derive(Clone, Debug)]
struct Slots {
    index: Vec<usize>,
    weight: Vec<f64>,
    active: Vec<bool>,
}

impl Slots {
    fn new(modes: ModeSet, nx: usize, ny: usize) -> Self {
        let n = 2 * modes.my * modes.mx;
        let mut index = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        let mut active = Vec::with_capacity(n);
        for b in 0..2 {
            for t in 0..modes.my {
                let ky = if b == 0 { t } else { ny - modes.my + t };
                for s in 0..modes.mx {
                    index.push(ky * nx + s);
                    weight.push(if s == 0 { 1.0 } else { 2.0 });
                    active.push(2 * ky != ny && 2 * s != nx);
                }
            }
        }
        Self { index, weight, active }
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}

/// Transform resources tied to one grid resolution.
#[derive(Clone, Debug)]
struct FourierPlan<T: Real> {
    nx: usize,
    ny: usize,
    fft: Fft2<T>,
    slots: Slots,
}

impl<T: Real> FourierPlan<T> {
    fn new(modes: ModeSet, nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            fft: Fft2::new(nx, ny),
            slots: Slots::new(modes, nx, ny),
        }
    }
}

fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Forward Fourier kernel. Returns the output and the retained input
/// coefficients `[channel, slot]` needed by the adjoint.
fn fourier_apply<T: Real>(plan: &FourierPlan<T>, r: &[T], v: ArrayView2<'_, T>) -> (Array2<T>, Vec<Complex<T>>) {
    let d = v.nrows();
    let nq = plan.slots.len();
    let n = plan.nx * plan.ny;
    let mut vs = vec![czero::<T>(); d * nq];
    let mut buf = vec![czero::<T>(); n];
    for i in 0..d {
        for (z, &x) in buf.iter_mut().zip(v.row(i)) {
            *z = Complex::new(x, T::zero());
        }
        plan.fft.forward(&mut buf);
        for q in 0..nq {
            if plan.slots.active[q] {
                vs[i * nq + q] = buf[plan.slots.index[q]];
            }
        }
    }
    let mut out = Array2::zeros((d, n));
    let scale = T::one() / T::lit(n as f64);
    for j in 0..d {
        buf.iter_mut().for_each(|z| *z = czero());
        for q in 0..nq {
            if !plan.slots.active[q] {
                continue;
            }
            let mut y = czero::<T>();
            for i in 0..d {
                let o = ((i * d + j) * nq + q) * 2;
                y = y + Complex::new(r[o], r[o + 1]) * vs[i * nq + q];
            }
            buf[plan.slots.index[q]] = y * T::lit(plan.slots.weight[q]);
        }
        plan.fft.backward_unscaled(&mut buf);
        for (o, z) in out.row_mut(j).iter_mut().zip(&buf) {
            *o = z.re * scale;
        }
    }
    (out, vs)
}

/// Adjoint of [`fourier_apply`]: accumulates the multiplier gradient into
/// `gr` and returns the gradient with respect to the kernel input.
fn fourier_adjoint<T: Real>(
    plan: &FourierPlan<T>,
    r: &[T],
    vs: &[Complex<T>],
    g: ArrayView2<'_, T>,
    gr: &mut [T],
) -> Array2<T> {
    let d = g.nrows();
    let nq = plan.slots.len();
    let n = plan.nx * plan.ny;
    let scale = T::one() / T::lit(n as f64);
    let mut gy = vec![czero::<T>(); d * nq];
    let mut buf = vec![czero::<T>(); n];
    for j in 0..d {
        for (z, &x) in buf.iter_mut().zip(g.row(j)) {
            *z = Complex::new(x, T::zero());
        }
        plan.fft.forward(&mut buf);
        for q in 0..nq {
            if plan.slots.active[q] {
                gy[j * nq + q] = buf[plan.slots.index[q]] * (T::lit(plan.slots.weight[q]) * scale);
            }
        }
    }
    let mut gv = Array2::zeros((d, n));
    for i in 0..d {
        buf.iter_mut().for_each(|z| *z = czero());
        for q in 0..nq {
            if !plan.slots.active[q] {
                continue;
            }
            let vi = vs[i * nq + q];
            let mut acc = czero::<T>();
            for j in 0..d {
                let o = ((i * d + j) * nq + q) * 2;
                let gyj = gy[j * nq + q];
                let prod = gyj * vi.conj();
                gr[o] += prod.re;
                gr[o + 1] += prod.im;
                acc = acc + Complex::new(r[o], r[o + 1]).conj() * gyj;
            }
            buf[plan.slots.index[q]] = acc;
        }
        plan.fft.backward_unscaled(&mut buf);
        for (o, z) in gv.row_mut(i).iter_mut().zip(&buf) {
            *o = z.re;
        }
    }
    gv
}

/// Forward POD kernel. Returns the output and the coefficients `V Phi`.
fn pod_apply<T: Real>(phi: ArrayView2<'_, T>, r: &[T], v: ArrayView2<'_, T>) -> (Array2<T>, Array2<T>) {
    let d = v.nrows();
    let nm = phi.ncols();
    let c = v.dot(&phi);
    let mut ch = Array2::zeros((d, nm));
    for i in 0..d {
        for j in 0..d {
            let rij = &r[(i * d + j) * nm..(i * d + j + 1) * nm];
            let mut row = ch.row_mut(j);
            for k in 0..nm {
                row[k] += rij[k] * c[[i, k]];
            }
        }
    }
    (ch.dot(&phi.t()), c)
}

fn pod_adjoint<T: Real>(
    phi: ArrayView2<'_, T>,
    r: &[T],
    c: &Array2<T>,
    g: ArrayView2<'_, T>,
    gr: &mut [T],
) -> Array2<T> {
    let d = g.nrows();
    let nm = phi.ncols();
    let gch = g.dot(&phi);
    let mut gc = Array2::zeros((d, nm));
    for i in 0..d {
        for j in 0..d {
            let o = (i * d + j) * nm;
            for k in 0..nm {
                gr[o + k] += gch[[j, k]] * c[[i, k]];
                gc[[i, k]] += r[o + k] * gch[[j, k]];
            }
        }
    }
    gc.dot(&phi.t())
}

fn as_matrix<T: Real>(p: &[T], offset: usize, rows: usize, cols: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((rows, cols), &p[offset..offset + rows * cols]).expect("parameter slice shape")
}

fn as_vector<T: Real>(p: &[T], offset: usize, len: usize) -> ArrayView1<'_, T> {
    ArrayView1::from(&p[offset..offset + len])
}

fn add_bias<T: Real>(m: &mut Array2<T>, b: ArrayView1<'_, T>) {
    for (mut row, &bi) in m.rows_mut().into_iter().zip(b) {
        row.mapv_inplace(|x| x + bi);
    }
}

fn accumulate<T: Real>(dst: &mut [T], src: impl IntoIterator<Item = T>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Intermediate values of one forward pass, consumed by [`Gso::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T: Real> {
    grid: Grid2D<T>,
    input: Array2<T>,
    layers: Vec<LayerCache<T>>,
    last: Array2<T>,
    eps: Option<T>,
}

#[derive(Clone, Debug)]
struct LayerCache<T: Real> {
    v: Array2<T>,
    z: Array2<T>,
    spectral: SpectralCache<T>,
    eps_hidden: Option<Array1<T>>,
}

#[derive(Clone, Debug)]
enum SpectralCache<T: Real> {
    Fourier(Vec<Complex<T>>),
    Pod(Array2<T>),
}

/// A GSO instance: config, flat parameters, optional POD basis and the
/// fixed normalization.
#[derive(Clone, Debug)]
pub struct Gso<T: Real> {
    config: GsoConfig,
    grid: Grid2D<T>,
    layout: Layout,
    params: Vec<T>,
    basis: Option<Arc<PodBasis<T>>>,
    norm: Normalizer,
    plan: Option<FourierPlan<T>>,
}

impl<T: Real> Gso<T> {
    /// Model with zero parameters. The basis is truncated to the kernel's
    /// mode count.
    pub fn zeros(config: GsoConfig, grid: &Grid2D<T>, basis: Option<&PodBasis<T>>) -> Result<Self> {
        config.validate_for(grid, basis)?;
        let basis = match config.kernel {
            KernelConfig::Pod { n_modes } => Some(Arc::new(basis.expect("checked above").truncated(n_modes)?)),
            KernelConfig::Fourier { .. } => None,
        };
        let plan = match config.kernel {
            KernelConfig::Fourier { modes } => Some(FourierPlan::new(modes, grid.nx(), grid.ny())),
            KernelConfig::Pod { .. } => None,
        };
        let layout = Layout::new(&config);
        Ok(Self {
            norm: Normalizer::identity(config.in_channels, config.out_channels),
            params: vec![T::zero(); layout.total],
            config,
            grid: grid.clone(),
            layout,
            basis,
            plan,
        })
    }

    /// Seeded initialization: affine maps uniform in `+-1/fan_in`, spectral
    /// multipliers uniform in `[0, 1/width^2)`.
    pub fn new(config: GsoConfig, grid: &Grid2D<T>, basis: Option<&PodBasis<T>>, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config, grid, basis)?;
        let mut rng = rng_for(seed, 0, tag::INIT);
        let d = m.config.width as f64;
        let mut fan_in = 1.0;
        for e in &m.layout.table {
            let (lo, hi) = if e.name.ends_with(".spectral") {
                (0.0, 1.0 / (d * d))
            } else {
                // biases reuse the fan-in of the weight stored just before them
                if let [_, f] = e.shape.as_slice() {
                    fan_in = *f as f64;
                }
                (-1.0 / fan_in, 1.0 / fan_in)
            };
            let dist = Uniform::new(lo, hi);
            for p in &mut m.params[e.range()] {
                *p = T::lit(rng.sample(dist));
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &GsoConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    pub fn basis(&self) -> Option<&PodBasis<T>> {
        self.basis.as_deref()
    }

    pub fn table(&self) -> &[ParamEntry] {
        &self.layout.table
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        let e = self.layout.table.iter().find(|e| e.name == name)?;
        Some(&self.params[e.range()])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.layout.table.iter().find(|e| e.name == name)?.range();
        Some(&mut self.params[r])
    }

    /// Replaces the whole parameter vector; rejects wrong lengths and
    /// non-finite values.
    pub fn set_params(&mut self, p: Vec<T>) -> Result<()> {
        if p.len() != self.layout.total {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.layout.total,
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("parameters must be finite".into()));
        }
        self.params = p;
        Ok(())
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn set_normalizer(&mut self, norm: Normalizer) -> Result<()> {
        norm.validate(&self.config)?;
        self.norm = norm;
        Ok(())
    }

    fn plan_for(&self, grid: &Grid2D<T>) -> Result<std::borrow::Cow<'_, FourierPlan<T>>> {
        let KernelConfig::Fourier { modes } = self.config.kernel else {
            unreachable!("Fourier plan requested for a POD kernel")
        };
        match &self.plan {
            Some(p) if p.nx == grid.nx() && p.ny == grid.ny() => Ok(std::borrow::Cow::Borrowed(p)),
            _ => {
                modes.validate(grid.nx(), grid.ny())?;
                Ok(std::borrow::Cow::Owned(FourierPlan::new(modes, grid.nx(), grid.ny())))
            }
        }
    }

    fn check_input(&self, a: &Field<T>, eps: Option<T>) -> Result<()> {
        if a.channels() != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input channels, got {}",
                self.config.in_channels,
                a.channels()
            )));
        }
        if let KernelConfig::Pod { .. } = self.config.kernel {
            let g = a.grid();
            if g.nx() != self.grid.nx() || g.ny() != self.grid.ny() {
                return Err(Error::ShapeMismatch("POD kernel is tied to the basis grid".into()));
            }
        }
        if self.config.use_epsilon && eps.is_none() {
            return Err(Error::InvalidArgument("model embeds epsilon but none was given".into()));
        }
        if let Some(e) = eps {
            if !e.is_finite() {
                return Err(Error::InvalidArgument("epsilon must be finite".into()));
            }
        }
        Ok(())
    }

    /// Normalized input channels followed by the coordinate channels.
    fn assemble_input(&self, a: &Field<T>) -> Array2<T> {
        let g = a.grid();
        let n = g.len();
        let mut m = Array2::zeros((self.config.lifted_channels(), n));
        for c in 0..self.config.in_channels {
            let mean = T::lit(self.norm.in_mean[c]);
            let inv = T::one() / T::lit(self.norm.in_std[c]);
            for (o, &x) in m.row_mut(c).iter_mut().zip(a.channel(c)) {
                *o = (x - mean) * inv;
            }
        }
        if self.config.coords {
            let c = self.config.in_channels;
            for j in 0..g.ny() {
                for i in 0..g.nx() {
                    m[[c, j * g.nx() + i]] = g.x(i);
                    m[[c + 1, j * g.nx() + i]] = g.y(j);
                }
            }
        }
        m
    }

    /// Pointwise lifting `P1 a + P2` of an already assembled input.
    pub fn lift(&self, input: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let d = self.config.width;
        let din = self.config.lifted_channels();
        if input.nrows() != din {
            return Err(Error::ShapeMismatch(format!("lift expects {din} channels, got {}", input.nrows())));
        }
        let mut v = as_matrix(&self.params, self.layout.lift_w, d, din).dot(&input);
        add_bias(&mut v, as_vector(&self.params, self.layout.lift_b, d));
        Ok(v)
    }

    /// Pointwise projection `Q1 v + Q2` (before de-normalization).
    pub fn reduce(&self, v: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let d = self.config.width;
        let du = self.config.out_channels;
        if v.nrows() != d {
            return Err(Error::ShapeMismatch(format!("reduce expects {d} channels, got {}", v.nrows())));
        }
        let mut u = as_matrix(&self.params, self.layout.proj_w, du, d).dot(&v);
        add_bias(&mut u, as_vector(&self.params, self.layout.proj_b, du));
        Ok(u)
    }

    /// Layer `l`'s constant embedding `W2 gelu(W1 eps + c1) + c2`, zero when
    /// the embedding is disabled or no parameter is given.
    pub fn embed_epsilon(&self, l: usize, eps: Option<T>) -> Array1<T> {
        self.embed_with_hidden(l, eps).0
    }

    fn embed_with_hidden(&self, l: usize, eps: Option<T>) -> (Array1<T>, Option<Array1<T>>) {
        let d = self.config.width;
        match (self.layout.layers[l].eps, eps) {
            (Some(o), Some(e)) => {
                let h = &as_vector(&self.params, o.w1, d) * e + as_vector(&self.params, o.c1, d);
                let s = h.mapv(gelu);
                let out = as_matrix(&self.params, o.w2, d, d).dot(&s) + as_vector(&self.params, o.c2, d);
                (out, Some(h))
            }
            _ => (Array1::zeros(d), None),
        }
    }

    /// Kernel integration of layer `l` on a hidden state over `grid`.
    pub fn kernel(&self, l: usize, v: ArrayView2<'_, T>, grid: &Grid2D<T>) -> Result<Array2<T>> {
        Ok(self.kernel_cached(l, v, grid)?.0)
    }

    fn kernel_cached(&self, l: usize, v: ArrayView2<'_, T>, grid: &Grid2D<T>) -> Result<(Array2<T>, SpectralCache<T>)> {
        let d = self.config.width;
        if v.nrows() != d || v.ncols() != grid.len() {
            return Err(Error::ShapeMismatch("hidden state does not match width and grid".into()));
        }
        let len = self.config.kernel.spectral_len(d);
        let off = self.layout.layers[l].spectral;
        let r = &self.params[off..off + len];
        match self.config.kernel {
            KernelConfig::Fourier { .. } => {
                let plan = self.plan_for(grid)?;
                let (out, vs) = fourier_apply(&plan, r, v);
                Ok((out, SpectralCache::Fourier(vs)))
            }
            KernelConfig::Pod { .. } => {
                let b = self.basis.as_ref().expect("POD model carries a basis");
                let (out, c) = pod_apply(b.modes(), r, v);
                Ok((out, SpectralCache::Pod(c)))
            }
        }
    }

    /// Pre-activation of layer `l`: `W v + b + K[v] + eps_hat`.
    pub fn layer(&self, l: usize, v: ArrayView2<'_, T>, grid: &Grid2D<T>, eps: Option<T>) -> Result<Array2<T>> {
        Ok(self.layer_cached(l, v, grid, eps)?.0)
    }

    fn layer_cached(
        &self,
        l: usize,
        v: ArrayView2<'_, T>,
        grid: &Grid2D<T>,
        eps: Option<T>,
    ) -> Result<(Array2<T>, SpectralCache<T>, Option<Array1<T>>)> {
        let d = self.config.width;
        let o = self.layout.layers[l];
        let (k, sc) = self.kernel_cached(l, v, grid)?;
        let mut z = as_matrix(&self.params, o.w, d, d).dot(&v) + k;
        let (e, hidden) = self.embed_with_hidden(l, eps);
        let bias = as_vector(&self.params, o.b, d).to_owned() + e;
        add_bias(&mut z, bias.view());
        Ok((z, sc, hidden))
    }

    /// Full evaluation on one input.
    pub fn forward(&self, a: &Field<T>, eps: Option<T>) -> Result<Field<T>> {
        Ok(self.forward_cached(a, eps)?.0)
    }

    /// Forward pass that also records what the adjoint needs.
    pub fn forward_cached(&self, a: &Field<T>, eps: Option<T>) -> Result<(Field<T>, ForwardCache<T>)> {
        self.check_input(a, eps)?;
        let grid = a.grid();
        let input = self.assemble_input(a);
        let mut v = self.lift(input.view())?;
        let nl = self.config.layers;
        let mut caches = Vec::with_capacity(nl);
        for l in 0..nl {
            let (z, spectral, eps_hidden) = self.layer_cached(l, v.view(), grid, eps)?;
            let next = if l + 1 < nl { z.mapv(gelu) } else { z.clone() };
            caches.push(LayerCache {
                v,
                z,
                spectral,
                eps_hidden,
            });
            v = next;
        }
        let mut u = self.reduce(v.view())?;
        for (c, mut row) in u.rows_mut().into_iter().enumerate() {
            let (m, s) = (T::lit(self.norm.out_mean[c]), T::lit(self.norm.out_std[c]));
            row.mapv_inplace(|x| x * s + m);
        }
        let data = u.into_raw_vec_and_offset().0;
        let out = Field::from_vec(grid, self.config.out_channels, data)?;
        let cache = ForwardCache {
            grid: grid.clone(),
            input,
            layers: caches,
            last: v,
            eps,
        };
        Ok((out, cache))
    }

    /// Reverse-mode gradient of a scalar loss given `dloss/dpred`.
    /// Returns a vector aligned with [`Gso::params`].
    pub fn backward(&self, cache: &ForwardCache<T>, g_pred: &Field<T>) -> Result<Vec<T>> {
        let mut grad = vec![T::zero(); self.layout.total];
        self.backward_into(cache, g_pred, &mut grad)?;
        Ok(grad)
    }

    /// Like [`Gso::backward`] but adds into an existing buffer.
    pub fn backward_into(&self, cache: &ForwardCache<T>, g_pred: &Field<T>, grad: &mut [T]) -> Result<()> {
        if cache.layers.len() != self.config.layers {
            return Err(Error::MissingCache);
        }
        if grad.len() != self.layout.total {
            return Err(Error::ShapeMismatch("gradient buffer does not match parameters".into()));
        }
        let n = cache.grid.len();
        if g_pred.channels() != self.config.out_channels || g_pred.grid().len() != n {
            return Err(Error::ShapeMismatch("output gradient does not match the cached pass".into()));
        }
        let d = self.config.width;
        let du = self.config.out_channels;
        let p = &self.params;

        let mut gu = Array2::zeros((du, n));
        for c in 0..du {
            let s = T::lit(self.norm.out_std[c]);
            for (o, &g) in gu.row_mut(c).iter_mut().zip(g_pred.channel(c)) {
                *o = g * s;
            }
        }
        let lo = self.layout.proj_w;
        accumulate(&mut grad[lo..lo + du * d], gu.dot(&cache.last.t()));
        let lb = self.layout.proj_b;
        accumulate(&mut grad[lb..lb + du], gu.sum_axis(Axis(1)));
        let mut gv = as_matrix(p, lo, du, d).t().dot(&gu);

        for l in (0..self.config.layers).rev() {
            let lc = &cache.layers[l];
            let o = self.layout.layers[l];
            let gz = if l + 1 < self.config.layers {
                gv.zip_mut_with(&lc.z, |g, &z| *g *= gelu_grad(z));
                gv
            } else {
                gv
            };
            accumulate(&mut grad[o.w..o.w + d * d], gz.dot(&lc.v.t()));
            let gb = gz.sum_axis(Axis(1));
            accumulate(&mut grad[o.b..o.b + d], gb.iter().copied());
            if let (Some(eo), Some(h), Some(e)) = (o.eps, lc.eps_hidden.as_ref(), cache.eps) {
                let s = h.mapv(gelu);
                for j in 0..d {
                    for k in 0..d {
                        grad[eo.w2 + j * d + k] += gb[j] * s[k];
                    }
                    grad[eo.c2 + j] += gb[j];
                }
                let gs = as_matrix(p, eo.w2, d, d).t().dot(&gb);
                for k in 0..d {
                    let gh = gs[k] * gelu_grad(h[k]);
                    grad[eo.w1 + k] += gh * e;
                    grad[eo.c1 + k] += gh;
                }
            }
            let len = self.config.kernel.spectral_len(d);
            let r = &p[o.spectral..o.spectral + len];
            let gr = &mut grad[o.spectral..o.spectral + len];
            let gk = match &lc.spectral {
                SpectralCache::Fourier(vs) => {
                    let plan = self.plan_for(&cache.grid)?;
                    fourier_adjoint(&plan, r, vs, gz.view(), gr)
                }
                SpectralCache::Pod(c) => {
                    let b = self.basis.as_ref().expect("POD model carries a basis");
                    pod_adjoint(b.modes(), r, c, gz.view(), gr)
                }
            };
            gv = as_matrix(p, o.w, d, d).t().dot(&gz) + gk;
        }

        let din = self.config.lifted_channels();
        let lw = self.layout.lift_w;
        accumulate(&mut grad[lw..lw + d * din], gv.dot(&cache.input.t()));
        let lb = self.layout.lift_b;
        accumulate(&mut grad[lb..lb + d], gv.sum_axis(Axis(1)));
        Ok(())
    }

    /// Total scalar count (same as `param_count(config).total`).
    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    /// Reassembles a model from persisted parts.
    pub fn from_parts(
        config: GsoConfig,
        grid: &Grid2D<T>,
        basis: Option<&PodBasis<T>>,
        params: Vec<T>,
        norm: Normalizer,
    ) -> Result<Self> {
        let mut m = Self::zeros(config, grid, basis)?;
        m.set_params(params)?;
        m.set_normalizer(norm)?;
        Ok(m)
    }
}

/// Fourier kernel on a field with a multiplier laid out
/// `[in, out, block, my, mx, re/im]`. Grid need not be periodic: the
/// transform acts on node indices.
pub fn kernel_fourier<T: Real>(r: &[T], v: &Field<T>, modes: ModeSet) -> Result<Field<T>> {
    let g = v.grid();
    modes.validate(g.nx(), g.ny())?;
    let d = v.channels();
    let expect = KernelConfig::Fourier { modes }.spectral_len(d);
    if r.len() != expect {
        return Err(Error::ShapeMismatch(format!("multiplier has {} values, expected {expect}", r.len())));
    }
    let plan = FourierPlan::new(modes, g.nx(), g.ny());
    let (out, _) = fourier_apply(&plan, r, v.view());
    Field::from_vec(g, d, out.into_raw_vec_and_offset().0)
}

/// POD kernel on a field with a real multiplier laid out `[in, out, mode]`.
pub fn kernel_pod<T: Real>(r: &[T], v: &Field<T>, basis: &PodBasis<T>) -> Result<Field<T>> {
    let g = v.grid();
    if g.nx() != basis.grid().nx() || g.ny() != basis.grid().ny() {
        return Err(Error::ShapeMismatch("field and basis grids differ".into()));
    }
    let d = v.channels();
    let expect = d * d * basis.n_modes();
    if r.len() != expect {
        return Err(Error::ShapeMismatch(format!("multiplier has {} values, expected {expect}", r.len())));
    }
    let (out, _) = pod_apply(basis.modes(), r, v.view());
    Field::from_vec(g, d, out.into_raw_vec_and_offset().0)
}

/// Slot offsets of the Fourier multiplier, for building test multipliers:
/// returns `(kx, ky)` for every slot in storage order.
pub fn fourier_slots(modes: ModeSet, nx: usize, ny: usize) -> Vec<(usize, usize)> {
    let s = Slots::new(modes, nx, ny);
    s.index.iter().map(|&i| (i % nx, i / nx)).collect()
}
