//! Uniform rectangular grids, multi-channel fields and the discrete L2 pairing.
//!
//! Field data is stored channel-major as `[channel, y, x]`, so a channel is a
//! contiguous row-major `ny x nx` block and a whole field can be viewed as a
//! `channels x nmesh` matrix without copying.

use ndarray::{ArrayView2, ArrayViewMut2};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform tensor-product discretization of a rectangle.
///
/// Periodic grids exclude the duplicate endpoint (`spacing = length / n`),
/// non-periodic grids include both endpoints (`spacing = length / (n - 1)`).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D<T> {
    nx: usize,
    ny: usize,
    x_min: T,
    x_max: T,
    y_min: T,
    y_max: T,
    periodic: bool,
}

/// Axis-aligned bounds `(x_min, x_max, y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds<T> {
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
}

impl<T: Real> Bounds<T> {
    pub fn new(x_min: T, x_max: T, y_min: T, y_max: T) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    /// The square `(lo, hi)^2`.
    pub fn square(lo: T, hi: T) -> Self {
        Self::new(lo, hi, lo, hi)
    }
}

/// Serializable grid description (always stored as `f64`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub periodic: bool,
}

impl<T: Real> Grid2D<T> {
    /// Builds a grid; counts must be at least 2 and bounds strictly ordered.
    pub fn new(nx: usize, ny: usize, bounds: Bounds<T>, periodic: bool) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 points per axis, got {nx}x{ny}"
            )));
        }
        let finite = [bounds.x_min, bounds.x_max, bounds.y_min, bounds.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || bounds.x_max <= bounds.x_min || bounds.y_max <= bounds.y_min {
            return Err(Error::InvalidArgument(
                "grid bounds must be finite and strictly ordered".into(),
            ));
        }
        Ok(Self {
            nx,
            ny,
            x_min: bounds.x_min,
            x_max: bounds.x_max,
            y_min: bounds.y_min,
            y_max: bounds.y_max,
            periodic,
        })
    }

    /// Periodic `n x n` grid on `(lo, hi)^2`.
    pub fn periodic_square(n: usize, lo: T, hi: T) -> Result<Self> {
        Self::new(n, n, Bounds::square(lo, hi), true)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Number of grid nodes, `nx * ny`.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bounds(&self) -> Bounds<T> {
        Bounds::new(self.x_min, self.x_max, self.y_min, self.y_max)
    }

    pub fn length_x(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn length_y(&self) -> T {
        self.y_max - self.y_min
    }

    fn intervals(&self, n: usize) -> usize {
        if self.periodic {
            n
        } else {
            n - 1
        }
    }

    pub fn dx(&self) -> T {
        self.length_x() / T::lit(self.intervals(self.nx) as f64)
    }

    pub fn dy(&self) -> T {
        self.length_y() / T::lit(self.intervals(self.ny) as f64)
    }

    /// x coordinate of column `i`.
    pub fn x(&self, i: usize) -> T {
        self.x_min + self.dx() * T::lit(i as f64)
    }

    /// y coordinate of row `j`.
    pub fn y(&self, j: usize) -> T {
        self.y_min + self.dy() * T::lit(j as f64)
    }

    /// Quadrature weight attached to every node: `|domain| / (nx * ny)`.
    ///
    /// On periodic grids this is the cell area `dx * dy`. On non-periodic
    /// grids it is the uniform rule that integrates constants exactly.
    pub fn cell_area(&self) -> T {
        self.length_x() * self.length_y() / T::lit(self.len() as f64)
    }

    /// Continuous angular wavenumber `2 pi k / L` for DFT index `k` along x.
    pub fn wavenumber_x(&self, k: usize) -> T {
        T::lit(2.0) * T::PI() * T::lit(signed_index(k, self.nx) as f64) / self.length_x()
    }

    pub fn wavenumber_y(&self, k: usize) -> T {
        T::lit(2.0) * T::PI() * T::lit(signed_index(k, self.ny) as f64) / self.length_y()
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor {
            nx: self.nx,
            ny: self.ny,
            x_min: self.x_min.as_f64(),
            x_max: self.x_max.as_f64(),
            y_min: self.y_min.as_f64(),
            y_max: self.y_max.as_f64(),
            periodic: self.periodic,
        }
    }

    pub fn from_descriptor(d: &GridDescriptor) -> Result<Self> {
        Self::new(
            d.nx,
            d.ny,
            Bounds::new(T::lit(d.x_min), T::lit(d.x_max), T::lit(d.y_min), T::lit(d.y_max)),
            d.periodic,
        )
    }

    /// Same grid with a different resolution.
    pub fn with_resolution(&self, nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, self.bounds(), self.periodic)
    }
}

/// Signed frequency of DFT index `k` for an `n`-point transform, in `[-n/2, n/2)`.
/// The Nyquist index of an even transform maps to `-n/2`.
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Real multi-channel sample on a grid, laid out `[channel, y, x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    grid: Grid2D<T>,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn zeros(grid: &Grid2D<T>, channels: usize) -> Self {
        Self {
            grid: grid.clone(),
            channels,
            data: vec![T::zero(); channels * grid.len()],
        }
    }

    /// Wraps raw data; rejects wrong lengths and non-finite entries.
    pub fn from_vec(grid: &Grid2D<T>, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("field needs at least one channel".into()));
        }
        if data.len() != channels * grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for {} channels on {}x{}, got {}",
                channels * grid.len(),
                channels,
                grid.nx(),
                grid.ny(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: 0,
                context: format!("field entry {pos}"),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            channels,
            data,
        })
    }

    /// Evaluates `f(channel, x, y)` at every node.
    pub fn from_fn(grid: &Grid2D<T>, channels: usize, mut f: impl FnMut(usize, T, T) -> T) -> Self {
        let mut data = Vec::with_capacity(channels * grid.len());
        for c in 0..channels {
            for j in 0..grid.ny() {
                let y = grid.y(j);
                for i in 0..grid.nx() {
                    data.push(f(c, grid.x(i), y));
                }
            }
        }
        Self {
            grid: grid.clone(),
            channels,
            data,
        }
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Value of channel `c` at row `j` (y) and column `i` (x).
    pub fn at(&self, c: usize, j: usize, i: usize) -> T {
        self.data[(c * self.grid.ny() + j) * self.grid.nx() + i]
    }

    /// `channels x nmesh` matrix view.
    pub fn view(&self) -> ArrayView2<'_, T> {
        ArrayView2::from_shape((self.channels, self.grid.len()), &self.data)
            .expect("field data length is an invariant")
    }

    pub fn view_mut(&mut self) -> ArrayViewMut2<'_, T> {
        ArrayViewMut2::from_shape((self.channels, self.grid.len()), &mut self.data)
            .expect("field data length is an invariant")
    }

    /// Extracts a subset of channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(channels.len() * self.grid.len());
        for &c in channels {
            if c >= self.channels {
                return Err(Error::ShapeMismatch(format!(
                    "channel {c} out of range for a {}-channel field",
                    self.channels
                )));
            }
            data.extend_from_slice(self.channel(c));
        }
        Ok(Self {
            grid: self.grid.clone(),
            channels: channels.len(),
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.grid == other.grid
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same_shape(self, other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a - *b).collect();
        Ok(Self {
            grid: self.grid.clone(),
            channels: self.channels,
            data,
        })
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            grid: self.grid.clone(),
            channels: self.channels,
            data: self.data.iter().map(|v| *v * s).collect(),
        }
    }
}

pub(crate) fn check_same_shape<T: Real>(f: &Field<T>, g: &Field<T>) -> Result<()> {
    if f.grid != g.grid {
        return Err(Error::ShapeMismatch("fields live on different grids".into()));
    }
    if f.channels != g.channels {
        return Err(Error::ShapeMismatch(format!(
            "channel counts differ ({} vs {})",
            f.channels, g.channels
        )));
    }
    Ok(())
}

/// Discrete L2 pairing summed over channels: `sum f * g * cell_area`.
pub fn inner_product<T: Real>(f: &Field<T>, g: &Field<T>) -> Result<T> {
    check_same_shape(f, g)?;
    let s: T = f.data.iter().zip(&g.data).map(|(a, b)| *a * *b).sum();
    Ok(s * f.grid.cell_area())
}

pub fn l2_norm<T: Real>(f: &Field<T>) -> T {
    let s: T = f.data.iter().map(|a| *a * *a).sum();
    (s * f.grid.cell_area()).sqrt()
}

/// Interprets two channels of a real field as one complex function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexView {
    pub re_channel: usize,
    pub im_channel: usize,
}

impl ComplexView {
    /// Channels 0 and 1.
    pub const STANDARD: ComplexView = ComplexView {
        re_channel: 0,
        im_channel: 1,
    };

    pub fn new(re_channel: usize, im_channel: usize, channels: usize) -> Result<Self> {
        if re_channel == im_channel || re_channel >= channels || im_channel >= channels {
            return Err(Error::InvalidArgument(format!(
                "complex view ({re_channel}, {im_channel}) invalid for {channels} channels"
            )));
        }
        Ok(Self {
            re_channel,
            im_channel,
        })
    }

    pub fn extract<T: Real>(&self, f: &Field<T>) -> Result<Vec<Complex<T>>> {
        Self::new(self.re_channel, self.im_channel, f.channels())?;
        Ok(f.channel(self.re_channel)
            .iter()
            .zip(f.channel(self.im_channel))
            .map(|(&re, &im)| Complex::new(re, im))
            .collect())
    }
}

/// Packs a complex nodal array into a 2-channel `(re, im)` field.
pub fn complex_to_field<T: Real>(grid: &Grid2D<T>, values: &[Complex<T>]) -> Result<Field<T>> {
    if values.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "complex state has {} nodes, grid has {}",
            values.len(),
            grid.len()
        )));
    }
    let mut data = Vec::with_capacity(2 * values.len());
    data.extend(values.iter().map(|z| z.re));
    data.extend(values.iter().map(|z| z.im));
    Field::from_vec(grid, 2, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_periodic(n: usize) -> Grid2D<f64> {
        Grid2D::periodic_square(n, 0.0, 1.0).unwrap()
    }

    #[test]
    fn periodic_spacing_excludes_endpoint() {
        let g = Grid2D::periodic_square(64, -1.0, 1.0).unwrap();
        assert_eq!(g.dx(), 2.0 / 64.0);
        assert_eq!(g.dy(), 2.0 / 64.0);
    }

    #[test]
    fn non_periodic_spacing_includes_endpoint() {
        let g: Grid2D<f64> = Grid2D::new(85, 85, Bounds::square(0.0, 1.0), false).unwrap();
        assert_eq!(g.dx(), 1.0 / 84.0);
        assert!((g.x(84) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_grid_hits_corners() {
        let g = Grid2D::new(2, 2, Bounds::square(0.0, 1.0), false).unwrap();
        assert_eq!((g.x(0), g.x(1), g.y(0), g.y(1)), (0.0, 1.0, 0.0, 1.0));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(Grid2D::new(1, 4, Bounds::square(0.0, 1.0), true).is_err());
        assert!(Grid2D::new(4, 4, Bounds::new(1.0, 0.0, 0.0, 1.0), true).is_err());
        assert!(Grid2D::new(4, 4, Bounds::new(0.0, 1.0, 2.0, 2.0), false).is_err());
    }

    #[test]
    fn spacing_reconstructs_length() {
        for &(n, periodic) in &[(7usize, true), (7, false), (64, true), (85, false)] {
            let g = Grid2D::new(n, n + 3, Bounds::new(-1.3, 2.9, 0.25, 4.0), periodic).unwrap();
            let ix = if periodic { n } else { n - 1 };
            let iy = if periodic { n + 3 } else { n + 2 };
            assert!((g.dx() * ix as f64 - g.length_x()).abs() < 1e-14);
            assert!((g.dy() * iy as f64 - g.length_y()).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_field_has_unit_norm_on_unit_square() {
        for n in [4, 9, 32] {
            let g = unit_periodic(n);
            let one = Field::from_fn(&g, 1, |_, _, _| 1.0);
            assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-14);
            assert!((l2_norm(&one) - 1.0).abs() < 1e-14);
        }
        let g: Grid2D<f64> = Grid2D::new(9, 5, Bounds::square(0.0, 1.0), false).unwrap();
        let one = Field::from_fn(&g, 1, |_, _, _| 1.0);
        assert!((l2_norm(&one) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let g = unit_periodic(8);
        assert_eq!(l2_norm(&Field::zeros(&g, 3)), 0.0);
    }

    #[test]
    fn distinct_dft_modes_are_orthogonal() {
        let g = unit_periodic(16);
        let two_pi = 2.0 * std::f64::consts::PI;
        let f = Field::from_fn(&g, 1, |_, x, y| (two_pi * (3.0 * x + y)).cos());
        let h = Field::from_fn(&g, 1, |_, x, y| (two_pi * (2.0 * x - 5.0 * y)).sin());
        assert!(inner_product(&f, &h).unwrap().abs() < 1e-12);
    }

    #[test]
    fn inner_product_matches_double_loop() {
        let g = unit_periodic(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Field::from_fn(&g, 2, |_, _, _| rng.gen_range(-1.0..1.0));
        let h = Field::from_fn(&g, 2, |_, _, _| rng.gen_range(-1.0..1.0));
        let mut naive = 0.0;
        for c in 0..2 {
            for j in 0..8 {
                for i in 0..8 {
                    naive += f.at(c, j, i) * h.at(c, j, i) * g.dx() * g.dy();
                }
            }
        }
        assert!((inner_product(&f, &h).unwrap() - naive).abs() < 1e-13);
    }

    #[test]
    fn norm_is_sqrt_of_self_pairing() {
        let g = unit_periodic(8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Field::from_fn(&g, 1, |_, _, _| rng.gen_range(-1.0..1.0));
        assert_eq!(l2_norm(&f), inner_product(&f, &f).unwrap().sqrt());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Field::<f64>::zeros(&unit_periodic(8), 1);
        let b = Field::<f64>::zeros(&unit_periodic(8), 2);
        let c = Field::<f64>::zeros(&unit_periodic(4), 1);
        assert!(matches!(inner_product(&a, &b), Err(Error::ShapeMismatch(_))));
        assert!(matches!(inner_product(&a, &c), Err(Error::ShapeMismatch(_))));
        assert!(Field::from_vec(&unit_periodic(4), 1, vec![0.0; 15]).is_err());
        assert!(Field::from_vec(&unit_periodic(2), 1, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn complex_view_validation() {
        assert!(ComplexView::new(0, 0, 2).is_err());
        assert!(ComplexView::new(0, 2, 2).is_err());
        let g = unit_periodic(4);
        let z: Vec<Complex<f64>> = (0..16).map(|k| Complex::new(k as f64, -(k as f64))).collect();
        let f = complex_to_field(&g, &z).unwrap();
        assert_eq!(ComplexView::STANDARD.extract(&f).unwrap(), z);
    }

    #[test]
    fn single_precision_norm() {
        let g: Grid2D<f32> = Grid2D::periodic_square(16, 0.0, 1.0).unwrap();
        let one = Field::from_fn(&g, 1, |_, _, _| 1.0f32);
        assert!((l2_norm(&one) - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn cauchy_schwarz(seed in any::<u64>(), n in 2usize..10) {
            let g = unit_periodic(n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Field::from_fn(&g, 2, |_, _, _| rng.gen_range(-5.0..5.0));
            let h = Field::from_fn(&g, 2, |_, _, _| rng.gen_range(-5.0..5.0));
            let lhs = inner_product(&f, &h).unwrap().abs();
            prop_assert!(lhs <= l2_norm(&f) * l2_norm(&h) * (1.0 + 1e-12));
        }

        #[test]
        fn pairing_invariant_under_channel_permutation(seed in any::<u64>()) {
            let g = unit_periodic(5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Field::from_fn(&g, 3, |_, _, _| rng.gen_range(-1.0..1.0));
            let h = Field::from_fn(&g, 3, |_, _, _| rng.gen_range(-1.0..1.0));
            let perm = [2, 0, 1];
            let fp = f.select_channels(&perm).unwrap();
            let hp = h.select_channels(&perm).unwrap();
            let a = inner_product(&f, &h).unwrap();
            let b = inner_product(&fp, &hp).unwrap();
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
    }
}
