//! Cell-centered finite-volume toolkit shared by the two PDE models.
//!
//! Fields store one value per cell of a [`Mesh`]. Fluxes live on faces: a
//! line of `n` cells has `n + 1` faces, of which the first and the last are
//! boundary faces and always carry zero flux. Every update built from these
//! stencils therefore conserves total mass up to the reaction term.

use crate::error::{Error, Result};

/// Total masses at or below this value are treated as extinct.
pub const ZERO_MASS: f64 = 1e-30;

/// Uniform partition of `[lo, hi]` into `n_cells` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1 {
    n_cells: usize,
    lo: f64,
    hi: f64,
}

impl Grid1 {
    pub fn new(n_cells: usize, lo: f64, hi: f64) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::InvalidParameter(
                "grid needs at least one cell".into(),
            ));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { n_cells, lo, hi })
    }

    /// `n_cells` cells on `[0, 1]`.
    pub fn unit(n_cells: usize) -> Result<Self> {
        Self::new(n_cells, 0.0, 1.0)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.cell_width()
    }

    /// Position of face `f`, `0 <= f <= n_cells`.
    pub fn face(&self, f: usize) -> f64 {
        self.lo + f as f64 * self.cell_width()
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(move |i| self.center(i))
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn locate(&self, x: f64) -> usize {
        let i = ((x - self.lo) / self.cell_width()).floor();
        (i.max(0.0) as usize).min(self.n_cells - 1)
    }
}

/// Tensor grid over `(x, y, theta)` with a cell-inclusion mask that depends
/// only on the `(x, y)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGrid3 {
    axes: [Grid1; 3],
    // row-major over (i, j)
    mask: Vec<bool>,
}

impl MaskedGrid3 {
    /// Grid with the trade-off domain `(x - 1)^2 + (y - 1)^2 > 1`.
    pub fn new(axes: [Grid1; 3]) -> Self {
        Self::with_mask(axes, |x, y| (x - 1.0).powi(2) + (y - 1.0).powi(2) > 1.0)
    }

    /// Unit cube `[0, 1]^3` with `nx * ny * ntheta` cells and the default mask.
    pub fn unit(nx: usize, ny: usize, ntheta: usize) -> Result<Self> {
        Ok(Self::new([
            Grid1::unit(nx)?,
            Grid1::unit(ny)?,
            Grid1::unit(ntheta)?,
        ]))
    }

    /// Grid whose `(x, y)` cells are kept iff `inside(x_center, y_center)`.
    pub fn with_mask(axes: [Grid1; 3], inside: impl Fn(f64, f64) -> bool) -> Self {
        let [gx, gy, _] = axes;
        let mut mask = Vec::with_capacity(gx.n_cells() * gy.n_cells());
        for i in 0..gx.n_cells() {
            for j in 0..gy.n_cells() {
                mask.push(inside(gx.center(i), gy.center(j)));
            }
        }
        Self { axes, mask }
    }

    /// Grid without any masked cell.
    pub fn full(axes: [Grid1; 3]) -> Self {
        Self::with_mask(axes, |_, _| true)
    }

    pub fn axes(&self) -> &[Grid1; 3] {
        &self.axes
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.axes[0].n_cells(),
            self.axes[1].n_cells(),
            self.axes[2].n_cells(),
        ]
    }

    pub fn widths(&self) -> [f64; 3] {
        [
            self.axes[0].cell_width(),
            self.axes[1].cell_width(),
            self.axes[2].cell_width(),
        ]
    }

    /// Linear index of cell `(i, j, k)`; theta is the fastest axis.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [_, ny, nt] = self.dims();
        (i * ny + j) * nt + k
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let [_, ny, nt] = self.dims();
        [idx / (ny * nt), (idx / nt) % ny, idx % nt]
    }

    /// Index distance between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        let [_, ny, nt] = self.dims();
        match axis {
            0 => ny * nt,
            1 => nt,
            _ => 1,
        }
    }

    pub fn xy_active(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.axes[1].n_cells() + j]
    }

    pub fn n_active(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count() * self.axes[2].n_cells()
    }

    /// Cell containing `z`, clamped to the grid.
    pub fn locate(&self, z: [f64; 3]) -> usize {
        self.index(
            self.axes[0].locate(z[0]),
            self.axes[1].locate(z[1]),
            self.axes[2].locate(z[2]),
        )
    }
}

/// A cell decomposition a [`DensityField`] can live on.
pub trait Mesh {
    type Point: Copy;

    /// Number of cells, masked ones included.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell_volume(&self) -> f64;

    fn is_active(&self, idx: usize) -> bool;

    fn center(&self, idx: usize) -> Self::Point;
}

impl Mesh for Grid1 {
    type Point = f64;

    fn len(&self) -> usize {
        self.n_cells
    }

    fn cell_volume(&self) -> f64 {
        self.cell_width()
    }

    fn is_active(&self, _idx: usize) -> bool {
        true
    }

    fn center(&self, idx: usize) -> f64 {
        Grid1::center(self, idx)
    }
}

impl Mesh for MaskedGrid3 {
    type Point = [f64; 3];

    fn len(&self) -> usize {
        self.mask.len() * self.axes[2].n_cells()
    }

    fn cell_volume(&self) -> f64 {
        self.widths().iter().product()
    }

    fn is_active(&self, idx: usize) -> bool {
        self.mask[idx / self.axes[2].n_cells()]
    }

    fn center(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.unravel(idx);
        [
            self.axes[0].center(i),
            self.axes[1].center(j),
            self.axes[2].center(k),
        ]
    }
}

/// Cell-averaged density over a mesh. Masked cells hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField<M> {
    pub grid: M,
    pub values: Vec<f64>,
}

impl<M: Mesh> DensityField<M> {
    pub fn zeros(grid: M) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    /// Samples `f` at every active cell center.
    pub fn from_fn(grid: M, f: impl Fn(M::Point) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|idx| {
                if grid.is_active(idx) {
                    f(grid.center(idx))
                } else {
                    0.0
                }
            })
            .collect();
        Self { grid, values }
    }

    /// Midpoint-rule integral over the active cells.
    pub fn integrate(&self) -> f64 {
        self.weighted_sum(|_| 1.0)
    }

    /// `sum(weight(center) * n) * cell_volume` over the active cells.
    pub fn weighted_sum(&self, weight: impl Fn(M::Point) -> f64) -> f64 {
        let sum: f64 = self
            .values
            .iter()
            .enumerate()
            .filter(|(idx, _)| self.grid.is_active(*idx))
            .map(|(idx, v)| weight(self.grid.center(idx)) * v)
            .sum();
        sum * self.grid.cell_volume()
    }

    /// Density-weighted average of `weight`.
    pub fn weighted_mean(&self, weight: impl Fn(M::Point) -> f64) -> Result<f64> {
        let mass = self.integrate();
        if mass <= ZERO_MASS {
            return Err(Error::ZeroMass { mass });
        }
        Ok(self.weighted_sum(weight) / mass)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// First-order upwind fluxes on the `n + 1` faces of a line of `n` cells.
///
/// `velocity[f]` is the velocity on interior face `f + 1`, i.e. between cells
/// `f` and `f + 1`. Boundary faces carry zero flux.
pub fn advective_flux_1d(values: &[f64], velocity: &[f64]) -> Vec<f64> {
    let mut flux = vec![0.0; values.len() + 1];
    advective_flux_into(values, velocity, &mut flux);
    flux
}

/// In-place form of [`advective_flux_1d`]; `flux.len()` must be `values.len() + 1`.
pub fn advective_flux_into(values: &[f64], velocity: &[f64], flux: &mut [f64]) {
    let n = values.len();
    assert_eq!(
        velocity.len() + 1,
        n.max(1),
        "one velocity per interior face"
    );
    assert_eq!(flux.len(), n + 1);
    flux[0] = 0.0;
    flux[n] = 0.0;
    for (f, &v) in velocity.iter().enumerate() {
        let upwind = if v >= 0.0 { values[f] } else { values[f + 1] };
        flux[f + 1] = v * upwind;
    }
}

/// Central-difference diffusive fluxes `-a * (u_right - u_left) / width`.
///
/// `coefficient[f]` is the diffusivity on interior face `f + 1`; a zero
/// coefficient closes the face. Boundary faces carry zero flux.
pub fn diffusive_flux_1d(values: &[f64], coefficient: &[f64], width: f64) -> Vec<f64> {
    let mut flux = vec![0.0; values.len() + 1];
    diffusive_flux_into(values, coefficient, width, &mut flux);
    flux
}

/// In-place form of [`diffusive_flux_1d`].
pub fn diffusive_flux_into(values: &[f64], coefficient: &[f64], width: f64, flux: &mut [f64]) {
    let n = values.len();
    assert_eq!(
        coefficient.len() + 1,
        n.max(1),
        "one coefficient per interior face"
    );
    assert_eq!(flux.len(), n + 1);
    flux[0] = 0.0;
    flux[n] = 0.0;
    for (f, &a) in coefficient.iter().enumerate() {
        flux[f + 1] = -a * (values[f + 1] - values[f]) / width;
    }
}

/// Per-cell divergence `(F[i+1] - F[i]) / width` of a face flux array.
pub fn flux_divergence(flux: &[f64], width: f64) -> Vec<f64> {
    flux.windows(2).map(|w| (w[1] - w[0]) / width).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn constant_field_integrates_exactly_on_full_cube() {
        for n in [1, 3, 8] {
            let axes = [Grid1::unit(n).unwrap(); 3];
            let field = DensityField::from_fn(MaskedGrid3::full(axes), |_| 1.0);
            assert_relative_eq!(field.integrate(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn linear_field_integrates_exactly() {
        let field = DensityField::from_fn(Grid1::unit(1000).unwrap(), |p| p);
        assert!((field.integrate() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn quadratic_error_is_second_order() {
        // exact midpoint error for p^2 is h^2 / 12
        let err = |n| {
            let f = DensityField::from_fn(Grid1::unit(n).unwrap(), |p| p * p);
            (f.integrate() - 1.0 / 3.0).abs()
        };
        for n in [10, 20, 40, 80] {
            let ratio = err(n) / err(2 * n);
            assert!((3.6..=4.4).contains(&ratio), "n = {n}: ratio {ratio}");
        }
    }

    #[test]
    fn empty_mask_has_zero_mass() {
        let axes = [Grid1::unit(4).unwrap(); 3];
        let grid = MaskedGrid3::with_mask(axes, |_, _| false);
        let field = DensityField::from_fn(grid, |_| 5.0);
        assert_eq!(field.integrate(), 0.0);
        assert!(matches!(
            field.weighted_mean(|z| z[0]),
            Err(Error::ZeroMass { .. })
        ));
    }

    #[test]
    fn weighted_mean_of_symmetric_field() {
        let field = DensityField::from_fn(Grid1::unit(101).unwrap(), |p| 1.0 + (p - 0.5).powi(2));
        assert!((field.weighted_mean(|p| p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_of_exponential_tilt_is_one_half() {
        let grid = Grid1::unit(400).unwrap();
        for t in [0.0, 1.0, 10.0, 100.0] {
            let field = DensityField::from_fn(grid, |p| ((p * (1.0 - p) - 0.5) * t).exp());
            assert!((field.weighted_mean(|p| p).unwrap() - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn weighted_mean_of_indicator() {
        let field =
            DensityField::from_fn(
                Grid1::unit(1000).unwrap(),
                |p| {
                    if p > 0.8 {
                        1.0
                    } else {
                        0.0
                    }
                },
            );
        assert!((field.weighted_mean(|p| p).unwrap() - 0.9).abs() < 1e-3);
    }

    #[test]
    fn mask_is_circle_complement_and_keeps_initial_center() {
        let grid = MaskedGrid3::unit(40, 40, 20).unwrap();
        let idx = grid.locate([0.25, 0.25, 0.5]);
        assert!(grid.is_active(idx));
        // (0.9875, 0.9875) lies inside the removed disc
        assert!(!grid.xy_active(39, 39));
        // constant along theta
        for i in 0..40 {
            for j in 0..40 {
                let first = grid.is_active(grid.index(i, j, 0));
                assert!((0..20).all(|k| grid.is_active(grid.index(i, j, k)) == first));
            }
        }
    }

    #[test]
    fn index_roundtrip() {
        let grid = MaskedGrid3::unit(5, 6, 7).unwrap();
        for idx in 0..grid.len() {
            let [i, j, k] = grid.unravel(idx);
            assert_eq!(grid.index(i, j, k), idx);
        }
    }

    #[test]
    fn zero_velocity_gives_zero_flux() {
        let flux = advective_flux_1d(&[1.0, 2.0, 3.0], &[0.0, 0.0]);
        assert_eq!(flux, vec![0.0; 4]);
    }

    #[test]
    fn upwind_of_constant() {
        let flux = advective_flux_1d(&[1.0; 5], &[0.3; 4]);
        assert_eq!(flux, vec![0.0, 0.3, 0.3, 0.3, 0.3, 0.0]);
        let flux = advective_flux_1d(&[1.0, 2.0], &[-0.5]);
        assert_eq!(flux, vec![0.0, -1.0, 0.0]);
    }

    #[test]
    fn diffusive_flux_of_constant_and_linear() {
        let flux = diffusive_flux_1d(&[2.0; 4], &[0.1; 3], 0.25);
        assert!(flux.iter().all(|&f| f == 0.0));
        let values: Vec<f64> = (0..6).map(|i| 3.0 * i as f64).collect();
        let flux = diffusive_flux_1d(&values, &[0.5; 5], 1.0);
        assert_eq!(flux[0], 0.0);
        assert_eq!(flux[6], 0.0);
        for f in &flux[1..6] {
            assert_relative_eq!(*f, -1.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn closed_face_blocks_diffusion() {
        let flux = diffusive_flux_1d(&[1.0, 0.0, 0.0], &[0.0, 1.0], 1.0);
        assert_eq!(flux, vec![0.0; 4]);
    }

    #[test]
    fn diffusion_step_conserves_mass() {
        let values: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.37).sin().abs()).collect();
        let width = 0.02;
        let coeff: Vec<f64> = (0..49).map(|f| 1e-5 * (1.0 + f as f64)).collect();
        let div = flux_divergence(&diffusive_flux_1d(&values, &coeff, width), width);
        let dt = 1.0;
        let before: f64 = values.iter().sum();
        let after: f64 = values.iter().zip(&div).map(|(u, d)| u - dt * d).sum();
        assert!(((after - before) / before).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn flux_divergence_telescopes(
            values in prop::collection::vec(0.0f64..10.0, 2..64),
            seed in prop::collection::vec(-1.0f64..1.0, 64),
            coeff_seed in prop::collection::vec(0.0f64..1.0, 64),
        ) {
            let n = values.len();
            let width = 1.0 / n as f64;
            let velocity = &seed[..n - 1];
            let coeff = &coeff_seed[..n - 1];
            let adv = flux_divergence(&advective_flux_1d(&values, velocity), width);
            let dif = flux_divergence(&diffusive_flux_1d(&values, coeff, width), width);
            let scale: f64 = values.iter().sum::<f64>().max(1.0) / width;
            let total: f64 = adv.iter().chain(&dif).sum();
            prop_assert!(total.abs() <= 1e-12 * scale);
        }
    }
}
