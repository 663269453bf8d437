//! Random problem instances for the Darcy, NLS and KP families.
//!
//! Every sampler takes a seed and a sample index; the random stream is a
//! ChaCha generator keyed by the seed with the stream id derived from the
//! index and a purpose tag, so samples can be produced in any order (or in
//! parallel) and still be bit-identical.

use num_complex::Complex;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{complex_to_field, Field, Grid2D};
use crate::scalar::Real;

/// Purpose tags mixed into the RNG stream id.
pub mod tag {
    pub const DARCY: u64 = 1;
    pub const NLS: u64 = 2;
    pub const KP: u64 = 3;
    pub const EPSILON: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const EPSILON_POOL: u64 = 7;
}

/// Deterministic generator for `(seed, index, tag)`.
pub fn rng_for(seed: u64, index: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index << 8) | (tag & 0xff));
    rng
}

/// Law of the Darcy permeability: `psi(z)` with `z ~ N(0, (-Lap + tau2 I)^-power)`
/// under zero Neumann conditions on the unit square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DarcyLaw {
    pub tau2: f64,
    pub power: f64,
    pub hi: f64,
    pub lo: f64,
    /// KL cutoff as a multiple of the grid side.
    pub cutoff_factor: usize,
}

impl Default for DarcyLaw {
    fn default() -> Self {
        Self {
            tau2: 9.0,
            power: 2.0,
            hi: 12.0,
            lo: 3.0,
            cutoff_factor: 4,
        }
    }
}

impl DarcyLaw {
    pub fn validate(&self) -> Result<()> {
        if !(self.hi > self.lo && self.lo > 0.0) || self.tau2 <= 0.0 || self.power <= 0.0 {
            return Err(Error::InvalidArgument("Darcy law needs hi > lo > 0 and positive tau2, power".into()));
        }
        Ok(())
    }

    pub fn psi(&self, z: f64) -> f64 {
        if z >= 0.0 {
            self.hi
        } else {
            self.lo
        }
    }

    /// Standard deviation of the KL coefficient of cosine mode `(k1, k2)`.
    pub fn coefficient_std(&self, k1: usize, k2: usize) -> f64 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        (pi2 * (k1 * k1 + k2 * k2) as f64 + self.tau2).powf(-self.power / 2.0)
    }
}

fn check_unit_square<T: Real>(grid: &Grid2D<T>) -> Result<()> {
    let b = grid.bounds();
    let unit = |lo: T, hi: T| lo.as_f64() == 0.0 && hi.as_f64() == 1.0;
    if grid.is_periodic() || !unit(b.x_min, b.x_max) || !unit(b.y_min, b.y_max) {
        return Err(Error::InvalidArgument("Darcy sampling needs a non-periodic (0,1)^2 grid".into()));
    }
    Ok(())
}

/// Visits cosine modes `(k1, k2)` with `max(k1, k2) <= cutoff` shell by shell,
/// so a larger cutoff extends (never reorders) the draw sequence.
fn shell_order(cutoff: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity((cutoff + 1) * (cutoff + 1));
    for s in 0..=cutoff {
        for k in 0..s {
            out.push((s, k));
            out.push((k, s));
        }
        out.push((s, s));
    }
    out
}

/// Gaussian pre-image `z` of the Darcy permeability, with an explicit KL cutoff.
pub fn sample_darcy_latent_with_cutoff<T: Real>(
    grid: &Grid2D<T>,
    law: &DarcyLaw,
    seed: u64,
    index: u64,
    cutoff: usize,
) -> Result<Field<T>> {
    check_unit_square(grid)?;
    law.validate()?;
    let mut rng = rng_for(seed, index, tag::DARCY);
    let k = cutoff + 1;
    let mut xi = vec![0.0_f64; k * k];
    for (k1, k2) in shell_order(cutoff) {
        let g: f64 = rng.sample(StandardNormal);
        xi[k1 * k + k2] = g * law.coefficient_std(k1, k2);
    }
    let pi = std::f64::consts::PI;
    let basis = |n: usize, coord: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut m = vec![0.0; n * k];
        for i in 0..n {
            let x = coord(i);
            for kk in 0..k {
                let w = if kk == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
                m[i * k + kk] = w * (pi * kk as f64 * x).cos();
            }
        }
        m
    };
    let cx = basis(grid.nx(), &|i| grid.x(i).as_f64());
    let cy = basis(grid.ny(), &|j| grid.y(j).as_f64());
    // t[k1][j] = sum_k2 xi[k1][k2] cy[j][k2]
    let ny = grid.ny();
    let mut t = vec![0.0; k * ny];
    for k1 in 0..k {
        for j in 0..ny {
            let row = &cy[j * k..(j + 1) * k];
            t[k1 * ny + j] = xi[k1 * k..(k1 + 1) * k].iter().zip(row).map(|(a, b)| a * b).sum();
        }
    }
    let nx = grid.nx();
    let mut data = vec![T::zero(); nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for k1 in 0..k {
                acc += cx[i * k + k1] * t[k1 * ny + j];
            }
            data[j * nx + i] = T::lit(acc);
        }
    }
    Field::from_vec(grid, 1, data)
}

/// Gaussian pre-image with the default cutoff `cutoff_factor * max(nx, ny)`.
pub fn sample_darcy_latent<T: Real>(grid: &Grid2D<T>, law: &DarcyLaw, seed: u64, index: u64) -> Result<Field<T>> {
    let cutoff = law.cutoff_factor * grid.nx().max(grid.ny());
    sample_darcy_latent_with_cutoff(grid, law, seed, index, cutoff)
}

/// Applies the two-valued threshold map pointwise.
pub fn apply_psi<T: Real>(z: &Field<T>, law: &DarcyLaw) -> Field<T> {
    let data = z.data().iter().map(|v| T::lit(law.psi(v.as_f64()))).collect();
    Field::from_vec(z.grid(), z.channels(), data).expect("psi values are finite")
}

/// Piecewise-constant permeability with values in `{lo, hi}`.
pub fn sample_darcy_a<T: Real>(grid: &Grid2D<T>, law: &DarcyLaw, seed: u64, index: u64) -> Result<Field<T>> {
    Ok(apply_psi(&sample_darcy_latent(grid, law, seed, index)?, law))
}

/// Gaussian wave packet initial law for the NLS problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlsInitLaw {
    pub alpha: f64,
    /// Interval of each packet centre offset `beta[l] = (beta_l1, beta_l2)`.
    pub beta_ranges: Vec<[(f64, f64); 2]>,
    pub gammas: Vec<[f64; 2]>,
    pub v0: f64,
    pub zeta: (f64, f64),
}

impl Default for NlsInitLaw {
    fn default() -> Self {
        let neg = (-0.6, -0.4);
        let pos = (0.4, 0.6);
        Self {
            alpha: 120.0,
            beta_ranges: vec![[neg, neg], [pos, neg], [neg, pos], [pos, pos]],
            gammas: vec![[-2.0, -2.0], [2.0, 2.0], [-2.0, -2.0], [2.0, 2.0]],
            v0: 120.0,
            zeta: (60.0, 60.0),
        }
    }
}

/// Centre offsets and phase slopes of one packet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Packet {
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
}

/// `exp(-(alpha/2) [(x+b1)^2 + (y+b2)^2 + i g1 x + i g2 y])`.
pub fn packet_value(alpha: f64, p: &Packet, x: f64, y: f64) -> Complex<f64> {
    let re = (x + p.beta[0]).powi(2) + (y + p.beta[1]).powi(2);
    let im = p.gamma[0] * x + p.gamma[1] * y;
    (Complex::new(re, im) * (-alpha / 2.0)).exp()
}

impl NlsInitLaw {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.beta_ranges.len() != self.gammas.len() || self.beta_ranges.is_empty() {
            return Err(Error::InvalidArgument("NLS law needs alpha > 0 and one gamma per packet".into()));
        }
        if self.beta_ranges.iter().flatten().any(|(lo, hi)| lo > hi) {
            return Err(Error::InvalidArgument("beta intervals must be ordered".into()));
        }
        Ok(())
    }

    /// Draws packet centres uniformly and independently from their intervals.
    pub fn draw_packets(&self, seed: u64, index: u64) -> Vec<Packet> {
        let mut rng = rng_for(seed, index, tag::NLS);
        self.beta_ranges
            .iter()
            .zip(&self.gammas)
            .map(|(r, g)| {
                let mut beta = [0.0; 2];
                for (b, (lo, hi)) in beta.iter_mut().zip(r) {
                    *b = lo + (hi - lo) * rng.gen::<f64>();
                }
                Packet { beta, gamma: *g }
            })
            .collect()
    }
}

/// Superposition of packets sampled on the grid as a complex nodal array.
pub fn nls_packets_state<T: Real>(grid: &Grid2D<T>, alpha: f64, packets: &[Packet]) -> Vec<Complex<T>> {
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..grid.ny() {
        let y = grid.y(j).as_f64();
        for i in 0..grid.nx() {
            let x = grid.x(i).as_f64();
            let z: Complex<f64> = packets.iter().map(|p| packet_value(alpha, p, x, y)).sum();
            out.push(Complex::new(T::lit(z.re), T::lit(z.im)));
        }
    }
    out
}

/// Four-packet initial state as a 2-channel `(re, im)` field.
pub fn sample_nls_u0<T: Real>(grid: &Grid2D<T>, law: &NlsInitLaw, seed: u64, index: u64) -> Result<Field<T>> {
    law.validate()?;
    if !grid.is_periodic() {
        return Err(Error::NonPeriodicGrid);
    }
    let packets = law.draw_packets(seed, index);
    complex_to_field(grid, &nls_packets_state(grid, law.alpha, &packets))
}

/// `V(x, y) = V0 cos(zeta1 x) cos(zeta2 y)`.
pub fn nls_potential<T: Real>(grid: &Grid2D<T>, law: &NlsInitLaw) -> Field<T> {
    let (z1, z2) = law.zeta;
    Field::from_fn(grid, 1, |_, x, y| {
        T::lit(law.v0 * (z1 * x.as_f64()).cos() * (z2 * y.as_f64()).cos())
    })
}

/// Law of the KP initial condition `8x tanh(t1 r) / (r + delta) sech^2(t2 r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpInitLaw {
    pub theta_range: (f64, f64),
    pub delta: f64,
}

impl Default for KpInitLaw {
    fn default() -> Self {
        Self {
            theta_range: (1.5, 2.5),
            delta: 1e-10,
        }
    }
}

/// Pointwise KP initial profile.
pub fn kp_profile(theta1: f64, theta2: f64, delta: f64, x: f64, y: f64) -> f64 {
    let r = (x * x + y * y).sqrt();
    let sech = 1.0 / (theta2 * r).cosh();
    8.0 * x * (theta1 * r).tanh() / (r + delta) * sech * sech
}

impl KpInitLaw {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.theta_range;
        if !(lo > 0.0 && hi >= lo) || self.delta <= 0.0 {
            return Err(Error::InvalidArgument("KP law needs 0 < lo <= hi and delta > 0".into()));
        }
        Ok(())
    }

    pub fn draw_thetas(&self, seed: u64, index: u64) -> (f64, f64) {
        let mut rng = rng_for(seed, index, tag::KP);
        let (lo, hi) = self.theta_range;
        let t1 = lo + (hi - lo) * rng.gen::<f64>();
        let t2 = lo + (hi - lo) * rng.gen::<f64>();
        (t1, t2)
    }
}

pub fn sample_kp_u0<T: Real>(grid: &Grid2D<T>, law: &KpInitLaw, seed: u64, index: u64) -> Result<Field<T>> {
    law.validate()?;
    if !grid.is_periodic() {
        return Err(Error::NonPeriodicGrid);
    }
    let (t1, t2) = law.draw_thetas(seed, index);
    Ok(Field::from_fn(grid, 1, |_, x, y| {
        T::lit(kp_profile(t1, t2, law.delta, x.as_f64(), y.as_f64()))
    }))
}

/// Uniform draw on `(-1, 0) U (0, 1/2)`, never exactly zero.
pub fn sample_epsilon(seed: u64, index: u64) -> f64 {
    let mut rng = rng_for(seed, index, tag::EPSILON);
    loop {
        let e = -1.0 + 1.5 * rng.gen::<f64>();
        if e != 0.0 && e > -1.0 {
            return e;
        }
    }
}

/// A fixed pool of `size` epsilon realizations; dataset samples pick from it.
pub fn epsilon_pool(seed: u64, size: usize) -> Vec<f64> {
    (0..size as u64).map(|i| sample_epsilon(seed, i)).collect()
}

/// Picks the epsilon of sample `index` uniformly from `pool`.
pub fn pick_from_pool(pool: &[f64], seed: u64, index: u64) -> f64 {
    let mut rng = rng_for(seed, index, tag::EPSILON_POOL);
    pool[rng.gen_range(0..pool.len())]
}
