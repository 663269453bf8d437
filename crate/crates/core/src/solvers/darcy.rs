//! Second-order finite differences for `-div(a grad u) = f` on the unit
//! square with zero Dirichlet data.
//!
//! The discrete operator on interior node `(i, j)` is
//!
//! ```text
//! [a_{i+1/2,j}(u_ij - u_{i+1,j}) + a_{i-1/2,j}(u_ij - u_{i-1,j})] / hx^2
//!   + [a_{i,j+1/2}(u_ij - u_{i,j+1}) + a_{i,j-1/2}(u_ij - u_{i,j-1})] / hy^2
//! ```
//!
//! with harmonic-mean face coefficients. It is symmetric positive definite and
//! is solved matrix-free by Jacobi-preconditioned conjugate gradients.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid2D};
use crate::scalar::Real;

/// Permeability, forcing and grid of one Darcy instance.
#[derive(Clone, Debug)]
pub struct DarcyProblem<T> {
    pub a: Field<T>,
    pub f: Field<T>,
    /// Relative residual target of the linear solve.
    pub tol: T,
}

impl<T: Real> DarcyProblem<T> {
    /// Constant forcing `f = 1`.
    pub fn unit_forcing(a: Field<T>) -> Self {
        let f = Field::from_fn(a.grid(), 1, |_, _, _| T::one());
        Self { a, f, tol: T::lit(1e-12) }
    }
}

/// Matrix-free operator with harmonic-mean face coefficients.
pub struct DarcyOperator<T> {
    nx: usize,
    ny: usize,
    // face coefficients already divided by h^2; east[j*nx+i] couples (i,j)-(i+1,j)
    east: Vec<T>,
    north: Vec<T>,
    diag: Vec<T>,
}

fn harmonic<T: Real>(a: T, b: T) -> T {
    T::lit(2.0) * a * b / (a + b)
}

impl<T: Real> DarcyOperator<T> {
    pub fn new(a: &Field<T>) -> Result<Self> {
        let g = a.grid();
        if g.is_periodic() {
            return Err(Error::InvalidArgument("Darcy problem needs a non-periodic grid".into()));
        }
        if a.channels() != 1 {
            return Err(Error::ShapeMismatch("permeability must have one channel".into()));
        }
        if let Some(pos) = a.data().iter().position(|v| *v <= T::zero()) {
            return Err(Error::InvalidArgument(format!("permeability not positive at node {pos}")));
        }
        let (nx, ny) = (g.nx(), g.ny());
        let (ihx2, ihy2) = (T::one() / (g.dx() * g.dx()), T::one() / (g.dy() * g.dy()));
        let av = a.channel(0);
        let mut east = vec![T::zero(); nx * ny];
        let mut north = vec![T::zero(); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                if i + 1 < nx {
                    east[k] = harmonic(av[k], av[k + 1]) * ihx2;
                }
                if j + 1 < ny {
                    north[k] = harmonic(av[k], av[k + nx]) * ihy2;
                }
            }
        }
        let mut diag = vec![T::zero(); nx * ny];
        for j in 1..ny.saturating_sub(1) {
            for i in 1..nx - 1 {
                let k = j * nx + i;
                diag[k] = east[k] + east[k - 1] + north[k] + north[k - nx];
            }
        }
        Ok(Self { nx, ny, east, north, diag })
    }

    fn is_interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i + 1 < self.nx && j + 1 < self.ny
    }

    /// Applies the operator to a full nodal vector; boundary entries of the
    /// input are treated as zero and boundary entries of the output are zero.
    pub fn apply(&self, u: &[T], out: &mut [T]) {
        let nx = self.nx;
        for j in 0..self.ny {
            for i in 0..nx {
                let k = j * nx + i;
                if !self.is_interior(i, j) {
                    out[k] = T::zero();
                    continue;
                }
                let nb = |kk: usize| {
                    let (ii, jj) = (kk % nx, kk / nx);
                    if self.is_interior(ii, jj) {
                        u[kk]
                    } else {
                        T::zero()
                    }
                };
                out[k] = self.diag[k] * u[k]
                    - self.east[k] * nb(k + 1)
                    - self.east[k - 1] * nb(k - 1)
                    - self.north[k] * nb(k + nx)
                    - self.north[k - nx] * nb(k - nx);
            }
        }
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        (0..self.nx * self.ny)
            .map(|k| self.is_interior(k % self.nx, k / self.nx))
            .collect()
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// Solution of the problem with the iteration count and final relative residual.
#[derive(Clone, Debug)]
pub struct DarcySolution<T> {
    pub u: Field<T>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `-div(a grad u) = f`, `u = 0` on the boundary.
pub fn solve_darcy_detailed<T: Real>(p: &DarcyProblem<T>) -> Result<DarcySolution<T>> {
    let op = DarcyOperator::new(&p.a)?;
    let g = p.a.grid();
    if p.f.grid() != g || p.f.channels() != 1 {
        return Err(Error::ShapeMismatch("forcing must be a 1-channel field on the permeability grid".into()));
    }
    let n = g.len();
    let mask = op.interior_mask();
    let b: Vec<T> = p
        .f
        .channel(0)
        .iter()
        .zip(&mask)
        .map(|(f, &m)| if m { *f } else { T::zero() })
        .collect();
    let bnorm = dot(&b, &b).sqrt();
    let mut u = vec![T::zero(); n];
    if bnorm == T::zero() {
        return Ok(DarcySolution {
            u: Field::from_vec(g, 1, u)?,
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv_diag: Vec<T> = op
        .diag
        .iter()
        .map(|d| if *d > T::zero() { T::one() / *d } else { T::zero() })
        .collect();
    let mut r = b.clone();
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(r, d)| *r * *d).collect();
    let mut d = z.clone();
    let mut q = vec![T::zero(); n];
    let mut rz = dot(&r, &z);
    let cap = 10 * n;
    let mut res = T::one();
    for it in 0..cap {
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= p.tol {
            return Ok(DarcySolution {
                u: Field::from_vec(g, 1, u)?,
                iterations: it,
                residual: res.as_f64(),
            });
        }
        op.apply(&d, &mut q);
        let alpha = rz / dot(&d, &q);
        for k in 0..n {
            u[k] += alpha * d[k];
            r[k] -= alpha * q[k];
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            d[k] = z[k] + beta * d[k];
        }
        if !res.is_finite() {
            return Err(Error::NonFinite {
                step: it,
                context: "conjugate gradient residual".into(),
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: cap,
        residual: res.as_f64(),
    })
}

/// Solution field only.
pub fn solve_darcy<T: Real>(p: &DarcyProblem<T>) -> Result<Field<T>> {
    solve_darcy_detailed(p).map(|s| s.u)
}

/// Relative residual `|f - A u| / |f|` over interior nodes.
pub fn darcy_residual<T: Real>(p: &DarcyProblem<T>, u: &Field<T>) -> Result<T> {
    let op = DarcyOperator::new(&p.a)?;
    let mask = op.interior_mask();
    let mut au = vec![T::zero(); u.grid().len()];
    op.apply(u.channel(0), &mut au);
    let mut num = T::zero();
    let mut den = T::zero();
    for ((f, a), m) in p.f.channel(0).iter().zip(&au).zip(&mask) {
        if *m {
            num += (*f - *a) * (*f - *a);
            den += *f * *f;
        }
    }
    Ok((num / den).sqrt())
}

/// Unit-square grid used by the Darcy family.
pub fn darcy_grid<T: Real>(n: usize) -> Result<Grid2D<T>> {
    Grid2D::new(n, n, crate::grid::Bounds::square(T::zero(), T::one()), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn manufactured_error(n: usize) -> f64 {
        let g = darcy_grid::<f64>(n).unwrap();
        let a = Field::from_fn(&g, 1, |_, _, _| 1.0);
        let f = Field::from_fn(&g, 1, |_, x, y| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin());
        let u = solve_darcy(&DarcyProblem { a, f, tol: 1e-13 }).unwrap();
        let exact = Field::from_fn(&g, 1, |_, x, y| (PI * x).sin() * (PI * y).sin());
        u.data().iter().zip(exact.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let e1 = manufactured_error(17);
        let e2 = manufactured_error(33);
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
    }

    fn random_a(n: usize, seed: u64) -> Field<f64> {
        let g = darcy_grid::<f64>(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(&g, 1, |_, _, _| if rng.gen::<bool>() { 12.0 } else { 3.0 })
    }

    #[test]
    fn symmetric_coefficient_gives_symmetric_solution() {
        let g = darcy_grid::<f64>(21).unwrap();
        let base = random_a(21, 4);
        let a = Field::from_fn(&g, 1, |_, _, _| 0.0);
        let mut data = a.into_data();
        for j in 0..21 {
            for i in 0..21 {
                data[j * 21 + i] = base.at(0, i.min(j), i.max(j));
            }
        }
        let a = Field::from_vec(&g, 1, data).unwrap();
        let u = solve_darcy(&DarcyProblem::unit_forcing(a)).unwrap();
        for j in 0..21 {
            for i in 0..21 {
                assert!((u.at(0, j, i) - u.at(0, i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn maximum_principle_and_boundary_values() {
        let a = random_a(24, 9);
        let p = DarcyProblem::unit_forcing(a);
        let s = solve_darcy_detailed(&p).unwrap();
        assert!(s.u.data().iter().all(|v| *v >= 0.0));
        for k in 0..24 {
            assert_eq!(s.u.at(0, 0, k), 0.0);
            assert_eq!(s.u.at(0, 23, k), 0.0);
            assert_eq!(s.u.at(0, k, 0), 0.0);
            assert_eq!(s.u.at(0, k, 23), 0.0);
        }
        assert!(darcy_residual(&p, &s.u).unwrap() < 1e-10);
    }

    #[test]
    fn rejects_nonpositive_permeability_and_periodic_grids() {
        let g = darcy_grid::<f64>(8).unwrap();
        let a = Field::from_fn(&g, 1, |_, x, _| if x > 0.5 { 0.0 } else { 1.0 });
        assert!(solve_darcy(&DarcyProblem::unit_forcing(a)).is_err());
        let gp = Grid2D::periodic_square(8, 0.0, 1.0).unwrap();
        assert!(solve_darcy(&DarcyProblem::unit_forcing(Field::from_fn(&gp, 1, |_, _, _| 1.0))).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn operator_is_symmetric_positive_definite(seed in 0u64..1000) {
            let a = random_a(9, seed);
            let op = DarcyOperator::new(&a).unwrap();
            let mask = op.interior_mask();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let mut rv = |_: usize| -> Vec<f64> {
                mask.iter().map(|m| if *m { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect()
            };
            let (u, v) = (rv(0), rv(1));
            let (mut au, mut av) = (vec![0.0; 81], vec![0.0; 81]);
            op.apply(&u, &mut au);
            op.apply(&v, &mut av);
            let uav: f64 = u.iter().zip(&av).map(|(a, b)| a * b).sum();
            let vau: f64 = v.iter().zip(&au).map(|(a, b)| a * b).sum();
            prop_assert!((uav - vau).abs() <= 1e-12 * uav.abs().max(1.0));
            let uau: f64 = u.iter().zip(&au).map(|(a, b)| a * b).sum();
            prop_assert!(uau > 0.0);
        }
    }
}
