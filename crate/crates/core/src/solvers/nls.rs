//! Lie-Trotter splitting for `i u_t + Lap u + V u = (2/eps)(|u|^eps - 1) u`.
//!
//! One step applies the pointwise phase flow
//! `B: w -> exp(-i dt ((2/eps)(|w|^eps - 1) - V)) w` first and then the
//! linear flow `A: z -> exp(i dt Lap) z`, the latter as multiplication of DFT
//! coefficients by `exp(-i dt |k|^2)` with physical wavenumbers `2 pi k / L`.
//! The POD variant replaces the Fourier representation of `A` by its
//! Galerkin projection `Phi^T exp(i dt Lap) Phi` onto a real basis.

use ndarray::Array2;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid2D};
use crate::pod::{compute_basis, PodBasis, SnapshotMatrix, SnapshotRole, SnapshotTag};
use crate::scalar::Real;
use crate::spectral::Fft2;

/// One NLS instance.
#[derive(Clone, Debug)]
pub struct NlsProblem<T> {
    pub grid: Grid2D<T>,
    pub epsilon: T,
    pub potential: Field<T>,
    pub t_final: T,
    pub steps: usize,
}

impl<T: Real> NlsProblem<T> {
    pub fn validate(&self) -> Result<()> {
        if !self.grid.is_periodic() {
            return Err(Error::NonPeriodicGrid);
        }
        if self.epsilon == T::zero() || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument("epsilon must be finite and nonzero".into()));
        }
        if self.steps == 0 || self.t_final <= T::zero() {
            return Err(Error::InvalidArgument("need steps >= 1 and T > 0".into()));
        }
        if self.potential.grid() != &self.grid || self.potential.channels() != 1 {
            return Err(Error::ShapeMismatch("potential must be a 1-channel field on the problem grid".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> T {
        self.t_final / T::lit(self.steps as f64)
    }
}

/// `(2/eps)(r^eps - 1)` for a modulus `r > 0`.
pub fn power_nonlinearity<T: Real>(epsilon: T, r: T) -> T {
    T::lit(2.0) / epsilon * (r.powf(epsilon) - T::one())
}

/// Applies the pointwise phase flow in place. Nodes with zero modulus stay zero;
/// where `|w|^eps` overflows (tiny modulus, negative eps) the phase is left
/// unchanged, since the amplitude there is below double precision resolution.
pub fn phase_flow<T: Real>(w: &mut [Complex<T>], potential: &[T], epsilon: T, dt: T) {
    for (z, v) in w.iter_mut().zip(potential) {
        let r = z.norm();
        if r == T::zero() {
            continue;
        }
        let theta = -dt * (power_nonlinearity(epsilon, r) - *v);
        if theta.is_finite() {
            *z = *z * Complex::from_polar(T::one(), theta);
        }
    }
}

/// Precomputed `exp(-i dt |k|^2)` multipliers and the FFT plan.
pub struct LinearFlow<T: Real> {
    plan: Fft2<T>,
    multiplier: Vec<Complex<T>>,
}

impl<T: Real> LinearFlow<T> {
    pub fn new(grid: &Grid2D<T>, dt: T) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut multiplier = Vec::with_capacity(nx * ny);
        for ky in 0..ny {
            let wy = grid.wavenumber_y(ky);
            for kx in 0..nx {
                let wx = grid.wavenumber_x(kx);
                multiplier.push(Complex::from_polar(T::one(), -dt * (wx * wx + wy * wy)));
            }
        }
        Self {
            plan: Fft2::new(nx, ny),
            multiplier,
        }
    }

    pub fn apply(&self, z: &mut [Complex<T>]) {
        self.plan.forward(z);
        for (c, m) in z.iter_mut().zip(&self.multiplier) {
            *c = *c * *m;
        }
        self.plan.inverse(z);
    }
}

fn check_state<T: Real>(p: &NlsProblem<T>, u0: &[Complex<T>]) -> Result<()> {
    p.validate()?;
    if u0.len() != p.grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "state has {} nodes, grid has {}",
            u0.len(),
            p.grid.len()
        )));
    }
    Ok(())
}

fn check_finite<T: Real>(u: &[Complex<T>], step: usize) -> Result<()> {
    if u.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite {
            step,
            context: "NLS state".into(),
        });
    }
    Ok(())
}

/// Runs the splitting and calls `observe(step, state)` after every step.
pub fn lie_trotter_nls_observed<T: Real>(
    p: &NlsProblem<T>,
    u0: &[Complex<T>],
    mut observe: impl FnMut(usize, &[Complex<T>]),
) -> Result<Vec<Complex<T>>> {
    check_state(p, u0)?;
    let dt = p.dt();
    let flow = LinearFlow::new(&p.grid, dt);
    let v = p.potential.channel(0);
    let mut u = u0.to_vec();
    for step in 1..=p.steps {
        phase_flow(&mut u, v, p.epsilon, dt);
        flow.apply(&mut u);
        check_finite(&u, step)?;
        observe(step, &u);
    }
    Ok(u)
}

/// Final state after `steps` Lie-Trotter steps.
pub fn lie_trotter_nls<T: Real>(p: &NlsProblem<T>, u0: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    lie_trotter_nls_observed(p, u0, |_, _| {})
}

/// All states `u_0, ..., u_{N_T}`.
pub fn lie_trotter_trajectory<T: Real>(p: &NlsProblem<T>, u0: &[Complex<T>]) -> Result<Vec<Vec<Complex<T>>>> {
    let mut states = vec![u0.to_vec()];
    lie_trotter_nls_observed(p, u0, |_, u| states.push(u.to_vec()))?;
    Ok(states)
}

/// Snapshot recipes for the POD-accelerated splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BasisType {
    /// Initial and final state.
    EndPoints,
    /// Every state of the trajectory.
    States,
    /// Every state plus every increment between consecutive states.
    StatesAndIncrements,
}

impl BasisType {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Self::EndPoints),
            2 => Ok(Self::States),
            3 => Ok(Self::StatesAndIncrements),
            _ => Err(Error::InvalidArgument(format!("basis type {i} not in 1..=3"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Self::EndPoints => 1,
            Self::States => 2,
            Self::StatesAndIncrements => 3,
        }
    }
}

/// Snapshot matrix of a trajectory; each complex state gives a real and an
/// imaginary column.
pub fn trajectory_snapshots<T: Real>(
    grid: &Grid2D<T>,
    states: &[Vec<Complex<T>>],
    kind: BasisType,
) -> Result<SnapshotMatrix<T>> {
    if states.is_empty() {
        return Err(Error::Empty("trajectory has no states".into()));
    }
    let mut cols = Vec::new();
    let mut tags = Vec::new();
    let mut push = |z: &[Complex<T>], role: SnapshotRole, index: usize| {
        cols.push(z.iter().map(|c| c.re).collect::<Vec<T>>());
        tags.push(SnapshotTag { role, index, channel: 0 });
        cols.push(z.iter().map(|c| c.im).collect::<Vec<T>>());
        tags.push(SnapshotTag { role, index, channel: 1 });
    };
    let last = states.len() - 1;
    match kind {
        BasisType::EndPoints => {
            push(&states[0], SnapshotRole::State, 0);
            push(&states[last], SnapshotRole::State, last);
        }
        BasisType::States | BasisType::StatesAndIncrements => {
            for (i, s) in states.iter().enumerate() {
                push(s, SnapshotRole::State, i);
            }
            if kind == BasisType::StatesAndIncrements {
                for i in 1..states.len() {
                    let d: Vec<Complex<T>> = states[i].iter().zip(&states[i - 1]).map(|(a, b)| *a - *b).collect();
                    push(&d, SnapshotRole::Increment, i);
                }
            }
        }
    }
    SnapshotMatrix::from_columns(grid, &cols, tags)
}

/// Real basis applied to a complex state: `Phi^T re + i Phi^T im`.
fn project<T: Real>(phi: &Array2<T>, u: &[Complex<T>]) -> Vec<Complex<T>> {
    let n = phi.ncols();
    let mut c = vec![Complex::new(T::zero(), T::zero()); n];
    for (i, z) in u.iter().enumerate() {
        let row = phi.row(i);
        for (ck, p) in c.iter_mut().zip(row.iter()) {
            ck.re += *p * z.re;
            ck.im += *p * z.im;
        }
    }
    c
}

fn reconstruct<T: Real>(phi: &Array2<T>, c: &[Complex<T>], out: &mut [Complex<T>]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = phi.row(i);
        let mut acc = Complex::new(T::zero(), T::zero());
        for (ck, p) in c.iter().zip(row.iter()) {
            acc.re += *p * ck.re;
            acc.im += *p * ck.im;
        }
        *o = acc;
    }
}

/// Galerkin matrix `Phi^T exp(i dt Lap) Phi` (row-major `N x N`).
pub fn projected_linear_flow<T: Real>(basis: &PodBasis<T>, dt: T) -> Vec<Complex<T>> {
    let phi = basis.modes().to_owned();
    let n = phi.ncols();
    let flow = LinearFlow::new(basis.grid(), dt);
    let mut a = vec![Complex::new(T::zero(), T::zero()); n * n];
    for k in 0..n {
        let mut col: Vec<Complex<T>> = phi.column(k).iter().map(|v| Complex::new(*v, T::zero())).collect();
        flow.apply(&mut col);
        let c = project(&phi, &col);
        for (j, cj) in c.into_iter().enumerate() {
            a[j * n + k] = cj;
        }
    }
    a
}

/// POD-accelerated splitting: the phase flow acts on the reconstructed state,
/// the linear flow acts in coefficient space.
pub fn pod_lie_trotter_nls<T: Real>(
    p: &NlsProblem<T>,
    u0: &[Complex<T>],
    basis: &PodBasis<T>,
) -> Result<Vec<Complex<T>>> {
    check_state(p, u0)?;
    if basis.grid() != &p.grid {
        return Err(Error::ShapeMismatch("basis and problem grids differ".into()));
    }
    let dt = p.dt();
    let phi = basis.modes().to_owned();
    let n = phi.ncols();
    let a = projected_linear_flow(basis, dt);
    let v = p.potential.channel(0);
    let mut u = u0.to_vec();
    for step in 1..=p.steps {
        phase_flow(&mut u, v, p.epsilon, dt);
        let c = project(&phi, &u);
        let mut c2 = vec![Complex::new(T::zero(), T::zero()); n];
        for (j, out) in c2.iter_mut().enumerate() {
            let row = &a[j * n..(j + 1) * n];
            *out = row.iter().zip(&c).map(|(x, y)| *x * *y).sum();
        }
        reconstruct(&phi, &c2, &mut u);
        check_finite(&u, step)?;
    }
    Ok(u)
}

/// Relative final-state error of the POD splitting against the Fourier
/// splitting for every basis size in `sizes`. The basis is built from the
/// Fourier trajectory of the same instance with the given recipe.
pub fn pod_split_error_curve<T: Real>(
    p: &NlsProblem<T>,
    u0: &[Complex<T>],
    kind: BasisType,
    sizes: &[usize],
) -> Result<Vec<(usize, T)>> {
    let states = lie_trotter_trajectory(p, u0)?;
    let x = trajectory_snapshots(&p.grid, &states, kind)?;
    let largest = sizes.iter().copied().max().ok_or_else(|| Error::Empty("no basis sizes".into()))?;
    let basis = compute_basis(&x, largest)?;
    let reference = states.last().expect("trajectory holds u0");
    sizes
        .iter()
        .map(|&n| {
            let u = pod_lie_trotter_nls(p, u0, &basis.truncated(n)?)?;
            Ok((n, complex_relative_error(&u, reference)))
        })
        .collect()
}

/// Discrete L2 norm of a complex nodal state.
pub fn complex_l2<T: Real>(grid: &Grid2D<T>, u: &[Complex<T>]) -> T {
    (u.iter().map(|z| z.norm_sqr()).sum::<T>() * grid.cell_area()).sqrt()
}

/// `|a - b| / |b|` for complex nodal states.
pub fn complex_relative_error<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> T {
    let num: T = a.iter().zip(b).map(|(x, y)| (*x - *y).norm_sqr()).sum();
    let den: T = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{nls_potential, sample_nls_u0, NlsInitLaw};
    use crate::grid::ComplexView;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid2D<f64> {
        Grid2D::periodic_square(n, -1.0, 1.0).unwrap()
    }

    fn problem(n: usize, eps: f64, steps: usize, t: f64) -> NlsProblem<f64> {
        let g = grid(n);
        NlsProblem {
            potential: nls_potential(&g, &NlsInitLaw::default()),
            grid: g,
            epsilon: eps,
            t_final: t,
            steps,
        }
    }

    #[test]
    fn plane_wave_is_exact() {
        let mut p = problem(32, 0.3, 7, 0.05);
        p.potential = Field::zeros(&p.grid, 1);
        let (m1, m2) = (3.0, -2.0);
        let (k1, k2) = (2.0 * PI * m1 / 2.0, 2.0 * PI * m2 / 2.0);
        let g = p.grid.clone();
        let wave = |t: f64| -> Vec<Complex<f64>> {
            let mut out = Vec::new();
            for j in 0..32 {
                for i in 0..32 {
                    let (x, y) = (g.x(i), g.y(j));
                    out.push(Complex::from_polar(1.0, k1 * x + k2 * y - (k1 * k1 + k2 * k2) * t));
                }
            }
            out
        };
        let u = lie_trotter_nls(&p, &wave(0.0)).unwrap();
        let exact = wave(0.05);
        let err = u.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn mass_is_conserved_every_step() {
        let p = problem(32, -0.4, 20, 0.01);
        let u0f = sample_nls_u0(&p.grid, &NlsInitLaw::default(), 1, 0).unwrap();
        let u0 = ComplexView::STANDARD.extract(&u0f).unwrap();
        let m0 = complex_l2(&p.grid, &u0);
        let mut worst: f64 = 0.0;
        lie_trotter_nls_observed(&p, &u0, |_, u| {
            worst = worst.max((complex_l2(&p.grid, u) - m0).abs() / m0);
        })
        .unwrap();
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn phase_flow_preserves_modulus_pointwise() {
        let mut w: Vec<Complex<f64>> = (0..50).map(|k| Complex::new(k as f64 * 0.1 - 2.0, 0.3 * k as f64)).collect();
        w[7] = Complex::new(0.0, 0.0);
        let before: Vec<f64> = w.iter().map(|z| z.norm()).collect();
        let v = vec![3.0; 50];
        phase_flow(&mut w, &v, -0.7, 0.01);
        for (z, r) in w.iter().zip(before) {
            assert!((z.norm() - r).abs() <= 1e-15 * r.max(1.0));
        }
    }

    #[test]
    fn small_epsilon_limit_is_log_modulus_squared() {
        for r in [0.2, 0.7, 1.0, 3.5] {
            let lhs = power_nonlinearity(1e-6, r);
            let rhs = (r * r as f64).ln();
            assert!((lhs - rhs).abs() < 1e-5);
        }
    }

    #[test]
    fn linear_flow_is_unitary() {
        let g = grid(16);
        let flow = LinearFlow::new(&g, 0.37);
        let mut z: Vec<Complex<f64>> = (0..256).map(|k| Complex::new((k as f64).sin(), (k as f64 * 0.3).cos())).collect();
        let before = complex_l2(&g, &z);
        flow.apply(&mut z);
        assert!((complex_l2(&g, &z) - before).abs() < 1e-12 * before);
    }

    #[test]
    fn full_rank_pod_splitting_matches_fourier() {
        let p = problem(16, 0.35, 150, 0.05);
        let u0f = sample_nls_u0(&p.grid, &NlsInitLaw::default(), 2, 0).unwrap();
        let u0 = ComplexView::STANDARD.extract(&u0f).unwrap();
        let states = lie_trotter_trajectory(&p, &u0).unwrap();
        let x = trajectory_snapshots(&p.grid, &states, BasisType::States).unwrap();
        assert!(x.columns() >= 256);
        let basis = compute_basis(&x, 256).unwrap();
        let pod = pod_lie_trotter_nls(&p, &u0, &basis).unwrap();
        let err = complex_relative_error(&pod, states.last().unwrap());
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rank_one_basis_confines_evolution() {
        let p = problem(16, 0.2, 5, 0.01);
        let u0f = sample_nls_u0(&p.grid, &NlsInitLaw::default(), 3, 0).unwrap();
        let u0 = ComplexView::STANDARD.extract(&u0f).unwrap();
        let re: Vec<f64> = u0.iter().map(|z| z.re).collect();
        let x = SnapshotMatrix::from_columns(
            &p.grid,
            &[re.clone(), re.clone()],
            vec![SnapshotTag { role: SnapshotRole::State, index: 0, channel: 0 }; 2],
        )
        .unwrap();
        let basis = compute_basis(&x, 1).unwrap();
        let u = pod_lie_trotter_nls(&p, &u0, &basis).unwrap();
        let phi = basis.modes();
        // every node is a complex multiple of phi_1
        let c = project(&phi.to_owned(), &u)[0];
        for (i, z) in u.iter().enumerate() {
            assert!((z - c * phi[(i, 0)]).norm() < 1e-12);
        }
    }

    #[test]
    fn snapshot_counts_per_basis_type() {
        let g = grid(4);
        let states: Vec<Vec<Complex<f64>>> = (0..5).map(|k| vec![Complex::new(k as f64, 1.0); 16]).collect();
        assert_eq!(trajectory_snapshots(&g, &states, BasisType::EndPoints).unwrap().columns(), 4);
        assert_eq!(trajectory_snapshots(&g, &states, BasisType::States).unwrap().columns(), 10);
        assert_eq!(trajectory_snapshots(&g, &states, BasisType::StatesAndIncrements).unwrap().columns(), 18);
    }

    #[test]
    fn invalid_problems_rejected() {
        let mut p = problem(8, 0.0, 4, 0.1);
        let u0 = vec![Complex::new(1.0, 0.0); 64];
        assert!(lie_trotter_nls(&p, &u0).is_err());
        p.epsilon = 0.1;
        p.steps = 0;
        assert!(lie_trotter_nls(&p, &u0).is_err());
        p.steps = 2;
        assert!(lie_trotter_nls(&p, &u0[..10]).is_err());
    }
}
