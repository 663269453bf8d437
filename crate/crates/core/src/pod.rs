//! Proper orthogonal decomposition of snapshot matrices.
//!
//! The pairing used by the forward/inverse transforms is the plain Euclidean
//! dot product over grid nodes: the cell-area weight would appear once in the
//! forward map and once (inverted) in the inverse, so it cancels and is left
//! out. Orthonormality of the modes is therefore `Phi^T Phi = I`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid2D};
use crate::scalar::Real;

/// Relative threshold below which a singular value counts as numerically zero.
pub const NEAR_ZERO_SIGMA: f64 = 1e-12;

/// Where a snapshot column came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotRole {
    Input,
    Output,
    /// State of a time trajectory.
    State,
    /// Difference of consecutive trajectory states.
    Increment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SnapshotTag {
    pub role: SnapshotRole,
    pub index: usize,
    pub channel: usize,
}

/// Column-per-snapshot matrix `[nmesh x M]`.
#[derive(Clone, Debug)]
pub struct SnapshotMatrix<T> {
    grid: Grid2D<T>,
    data: Array2<T>,
    tags: Vec<SnapshotTag>,
}

impl<T: Real> SnapshotMatrix<T> {
    /// Every channel of every field becomes one column: inputs first, then
    /// outputs. A two-channel complex field therefore contributes its real and
    /// imaginary parts as separate columns.
    pub fn from_fields(inputs: &[Field<T>], outputs: &[Field<T>]) -> Result<Self> {
        let first = inputs
            .first()
            .or(outputs.first())
            .ok_or_else(|| Error::Empty("snapshot lists are empty".into()))?;
        let grid = first.grid().clone();
        let mut cols: Vec<&[T]> = Vec::new();
        let mut tags = Vec::new();
        for (role, list) in [(SnapshotRole::Input, inputs), (SnapshotRole::Output, outputs)] {
            for (index, f) in list.iter().enumerate() {
                if f.grid() != &grid {
                    return Err(Error::ShapeMismatch(format!(
                        "snapshot {index} ({role:?}) lives on a different grid"
                    )));
                }
                for channel in 0..f.channels() {
                    cols.push(f.channel(channel));
                    tags.push(SnapshotTag { role, index, channel });
                }
            }
        }
        Self::assemble(&grid, &cols, tags)
    }

    /// Builds a matrix from raw nodal columns.
    pub fn from_columns(grid: &Grid2D<T>, columns: &[Vec<T>], tags: Vec<SnapshotTag>) -> Result<Self> {
        let cols: Vec<&[T]> = columns.iter().map(|c| c.as_slice()).collect();
        Self::assemble(grid, &cols, tags)
    }

    fn assemble(grid: &Grid2D<T>, cols: &[&[T]], tags: Vec<SnapshotTag>) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::Empty("snapshot matrix needs at least one column".into()));
        }
        if tags.len() != cols.len() {
            return Err(Error::ShapeMismatch("one tag per column required".into()));
        }
        let n = grid.len();
        let mut data = Array2::zeros((n, cols.len()));
        for (k, col) in cols.iter().enumerate() {
            if col.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "column {k} has {} entries, grid has {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step: 0,
                    context: format!("snapshot column {k}"),
                });
            }
            data.column_mut(k).assign(&ndarray::ArrayView1::from(*col));
        }
        Ok(Self {
            grid: grid.clone(),
            data,
            tags,
        })
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    pub fn data(&self) -> ArrayView2<'_, T> {
        self.data.view()
    }

    pub fn tags(&self) -> &[SnapshotTag] {
        &self.tags
    }

    pub fn nmesh(&self) -> usize {
        self.data.nrows()
    }

    pub fn columns(&self) -> usize {
        self.data.ncols()
    }
}

/// Orthonormal POD modes with the full singular value list of the snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct PodBasis<T> {
    grid: Grid2D<T>,
    modes: Array2<T>,
    sigma: Vec<T>,
    near_zero: Vec<usize>,
}

impl<T: Real> PodBasis<T> {
    /// Reassembles a basis from stored parts. `sigma` may be longer than the
    /// number of modes; it must be nonincreasing and nonnegative.
    pub fn from_parts(grid: &Grid2D<T>, modes: Array2<T>, sigma: Vec<T>) -> Result<Self> {
        if modes.nrows() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "basis has {} rows, grid has {} nodes",
                modes.nrows(),
                grid.len()
            )));
        }
        if modes.ncols() == 0 || sigma.len() < modes.ncols() {
            return Err(Error::ShapeMismatch("need at least one mode and one sigma per mode".into()));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s >= T::zero())) || sigma.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("singular values must be finite, nonnegative, nonincreasing".into()));
        }
        if modes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: 0,
                context: "basis modes".into(),
            });
        }
        let near_zero = flag_near_zero(&sigma, modes.ncols());
        Ok(Self {
            grid: grid.clone(),
            modes,
            sigma,
            near_zero,
        })
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    /// `[nmesh x N]` column matrix.
    pub fn modes(&self) -> ArrayView2<'_, T> {
        self.modes.view()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    /// Sum of all squared singular values.
    pub fn total_energy(&self) -> T {
        self.sigma.iter().map(|s| *s * *s).sum()
    }

    /// Indices of retained modes whose singular value is numerically zero.
    pub fn near_zero(&self) -> &[usize] {
        &self.near_zero
    }

    /// Keeps the leading `n` modes.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_modes() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {n} of {} modes",
                self.n_modes()
            )));
        }
        let modes = self.modes.slice(ndarray::s![.., ..n]).to_owned();
        Self::from_parts(&self.grid, modes, self.sigma.clone())
    }
}

fn flag_near_zero<T: Real>(sigma: &[T], n: usize) -> Vec<usize> {
    let s1 = sigma.first().map(|s| s.as_f64()).unwrap_or(0.0);
    (0..n)
        .filter(|&k| sigma[k].as_f64() <= NEAR_ZERO_SIGMA * s1)
        .collect()
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Classical Gram-Schmidt with one reorthogonalization pass against `basis`.
/// Returns the norm left after projection.
fn cgs2(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        let coeffs: Vec<f64> = basis.iter().map(|q| dot(q, v)).collect();
        for (q, c) in basis.iter().zip(coeffs) {
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
    }
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Flips a column so that its first entry of non-negligible magnitude is positive.
fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() >= 1e-10 * scale).copied() {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Leading `n` left singular vectors of the snapshot matrix.
///
/// Uses the `M x M` Gram matrix `X^T X` (method of snapshots) when there are
/// fewer snapshots than nodes, otherwise the `nmesh x nmesh` matrix `X X^T`.
/// Modes whose singular value is below `1e-12 * sigma_1` are flagged; in the
/// Gram route they are replaced by orthonormal completion vectors so the
/// returned columns stay orthonormal.
pub fn compute_basis<T: Real>(x: &SnapshotMatrix<T>, n: usize) -> Result<PodBasis<T>> {
    let (nmesh, m) = (x.nmesh(), x.columns());
    let max = nmesh.min(m);
    if n == 0 || n > max {
        return Err(Error::InvalidArgument(format!(
            "requested {n} modes, snapshot matrix supports 1..={max}"
        )));
    }
    let xf = DMatrix::from_fn(nmesh, m, |i, j| x.data[(i, j)].as_f64());
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let sigma: Vec<f64>;
    if m < nmesh {
        let gram = xf.tr_mul(&xf);
        let (_, vectors) = sorted_eigen(gram);
        // sigma_k = |X w_k| resolves small singular values far below the
        // sqrt(eps) floor of the Gram eigenvalues
        let xw = &xf * &vectors;
        let mut s: Vec<f64> = (0..m).map(|k| xw.column(k).norm()).collect();
        for k in 1..m {
            s[k] = s[k].min(s[k - 1]);
        }
        sigma = s;
        let s1 = sigma[0];
        for k in 0..n {
            let mut v = vec![0.0; nmesh];
            if sigma[k] > NEAR_ZERO_SIGMA * s1 {
                v.copy_from_slice(xw.column(k).as_slice());
            }
            let mut norm = cgs2(&mut v, &cols);
            let mut e = 0;
            while norm < 1e-3 {
                // completion: the first unit vector not yet (nearly) spanned
                v = vec![0.0; nmesh];
                v[e] = 1.0;
                e += 1;
                norm = cgs2(&mut v, &cols);
            }
            fix_sign(&mut v);
            cols.push(v);
        }
    } else {
        let cov = &xf * xf.transpose();
        let (values, vectors) = sorted_eigen(cov);
        sigma = values.iter().map(|l| l.max(0.0).sqrt()).collect();
        for k in 0..n {
            let mut v: Vec<f64> = vectors.column(k).iter().copied().collect();
            fix_sign(&mut v);
            cols.push(v);
        }
    }
    let mut modes = Array2::zeros((nmesh, n));
    for (k, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            modes[(i, k)] = T::lit(*v);
        }
    }
    let sigma: Vec<T> = sigma.into_iter().map(T::lit).collect();
    PodBasis::from_parts(x.grid(), modes, sigma)
}

/// Captured energy fraction `sum_{k<n} sigma_k^2 / sum_k sigma_k^2`.
///
/// `n` is clamped to the number of available singular values, so the full
/// spectrum gives exactly 1.
pub fn energy_ratio<T: Real>(b: &PodBasis<T>, n: usize) -> f64 {
    let mut prefix = vec![0.0_f64];
    for s in &b.sigma {
        let s = s.as_f64();
        prefix.push(prefix.last().unwrap() + s * s);
    }
    let total = *prefix.last().unwrap();
    if total == 0.0 {
        return 0.0;
    }
    prefix[n.min(b.sigma.len())] / total
}

/// Smallest `n` with `energy_ratio >= target`, if any.
pub fn modes_for_energy<T: Real>(b: &PodBasis<T>, target: f64) -> Option<usize> {
    (1..=b.sigma.len()).find(|&n| energy_ratio(b, n) >= target)
}

/// Per-channel coefficients `c = f Phi`, shape `[channels x N]`.
pub fn pod_forward<T: Real>(b: &PodBasis<T>, f: &Field<T>) -> Result<Array2<T>> {
    if f.grid() != &b.grid {
        return Err(Error::ShapeMismatch("field and basis grids differ".into()));
    }
    Ok(f.view().dot(&b.modes))
}

/// Field `sum_k c_k phi_k` per channel from coefficients `[channels x N]`.
pub fn pod_inverse<T: Real>(b: &PodBasis<T>, c: ArrayView2<'_, T>) -> Result<Field<T>> {
    if c.ncols() != b.n_modes() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficients per channel, basis has {} modes",
            c.ncols(),
            b.n_modes()
        )));
    }
    let out = c.dot(&b.modes.t());
    Field::from_vec(&b.grid, c.nrows(), out.into_raw_vec_and_offset().0)
}

/// `||X - Phi Phi^T X||_F^2` for the retained modes.
pub fn truncation_residual<T: Real>(b: &PodBasis<T>, x: &SnapshotMatrix<T>) -> T {
    let coeffs = b.modes.t().dot(&x.data);
    let recon = b.modes.dot(&coeffs);
    (&x.data - &recon).iter().map(|v| *v * *v).sum()
}

/// Sum of squares of every column, useful for energy bookkeeping.
pub fn frobenius_sq<T: Real>(x: &SnapshotMatrix<T>) -> T {
    x.data.iter().map(|v| *v * *v).sum()
}

/// Orthonormality defect `max |Phi^T Phi - I|`.
pub fn orthonormality_defect<T: Real>(b: &PodBasis<T>) -> T {
    let g = b.modes.t().dot(&b.modes);
    let mut worst = T::zero();
    for ((i, j), v) in g.indexed_iter() {
        let target = if i == j { T::one() } else { T::zero() };
        worst = worst.max((*v - target).abs());
    }
    worst
}

/// Column means of the squared coefficients, handy for diagnostics.
pub fn coefficient_energy<T: Real>(c: ArrayView2<'_, T>) -> Vec<T> {
    c.map(|v| *v * *v).sum_axis(Axis(0)).to_vec()
}
