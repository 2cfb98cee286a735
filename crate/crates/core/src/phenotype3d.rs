//! Cell population structured by viability `x`, fecundity `y` and
//! plasticity `theta`:
//!
//! ```text
//! d/dt n + div(V n - A(theta) grad n) = (r(z) - d(z) rho(t)) n,   z in D
//! (V n - A(theta) grad n) . normal = 0                             on dD
//! ```
//!
//! with `rho(t)` the total mass and `D = Omega x [0, 1]`, `Omega` the part of
//! the unit square outside the disc of radius 1 around `(1, 1)`.
//!
//! The solver is a cell-centered finite-volume scheme: upwind advection,
//! central diffusion, explicit Euler in time with the reaction evaluated at
//! the start-of-step mass. Boundary and masked faces carry no flux, so mass
//! changes only through the reaction term.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{
    advective_flux_into, diffusive_flux_into, DensityField, MaskedGrid3, Mesh, ZERO_MASS,
};

pub type Point = [f64; 3];
pub type RateFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync>;
pub type VelocityFn = Arc<dyn Fn(f64, Point) -> [f64; 3] + Send + Sync>;

/// Two equally fit optima at `(0.1, 0.9)` and `(0.9, 0.1)`, one per side of
/// the diagonal.
pub fn default_growth(z: Point) -> f64 {
    let [x, y, _] = z;
    if y > x {
        (-(0.1 - x).powi(2) - (0.9 - y).powi(2)).exp()
    } else {
        (-(0.1 - y).powi(2) - (0.9 - x).powi(2)).exp()
    }
}

/// Plasticity speeds up the diffusion of the two competing traits.
pub fn default_diffusion(theta: f64) -> [f64; 3] {
    [(theta + 1.0) * 1e-6, (theta + 1.0) * 1e-6, 1e-6]
}

/// Which drift field tears the population apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Advection {
    /// `1e-3 (-y, -x, -(x + y))`.
    Plain,
    /// `1e-3 theta (-y, -x, -(x + y))`.
    ThetaScaled,
}

impl Advection {
    pub fn velocity(self, z: Point) -> [f64; 3] {
        let [x, y, theta] = z;
        let scale = match self {
            Advection::Plain => 1e-3,
            Advection::ThetaScaled => 1e-3 * theta,
        };
        [-scale * y, -scale * x, -scale * (x + y)]
    }
}

#[derive(Clone)]
pub struct PhenotypeModel {
    pub growth: RateFn,
    pub death: RateFn,
    pub diffusion: DiffusionFn,
    pub advection: VelocityFn,
    pub initial_center: Point,
    pub initial_radius: f64,
    pub initial_mass: f64,
}

impl fmt::Debug for PhenotypeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhenotypeModel")
            .field("initial_center", &self.initial_center)
            .field("initial_radius", &self.initial_radius)
            .field("initial_mass", &self.initial_mass)
            .finish_non_exhaustive()
    }
}

impl Default for PhenotypeModel {
    fn default() -> Self {
        Self::with_advection(Advection::Plain)
    }
}

impl PhenotypeModel {
    pub fn with_advection(kind: Advection) -> Self {
        Self {
            growth: Arc::new(default_growth),
            death: Arc::new(|_| 0.5),
            diffusion: Arc::new(default_diffusion),
            advection: Arc::new(move |_, z| kind.velocity(z)),
            initial_center: [0.25, 0.25, 0.5],
            initial_radius: 0.025,
            initial_mass: 1.0,
        }
    }

    pub fn initial_radius(mut self, radius: f64) -> Self {
        self.initial_radius = radius;
        self
    }

    pub fn growth(mut self, f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        self.growth = Arc::new(f);
        self
    }

    pub fn death(mut self, f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        self.death = Arc::new(f);
        self
    }

    pub fn diffusion(mut self, f: impl Fn(f64) -> [f64; 3] + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn advection(mut self, f: impl Fn(f64, Point) -> [f64; 3] + Send + Sync + 'static) -> Self {
        self.advection = Arc::new(f);
        self
    }

    /// Compactly supported bump `exp(-1 / (1 - f))`, `f = |z - z0|^2 / R^2`,
    /// before normalization.
    pub fn bump(&self, z: Point) -> f64 {
        let dist2: f64 = z
            .iter()
            .zip(&self.initial_center)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let f = dist2 / self.initial_radius.powi(2);
        if f < 1.0 {
            (-1.0 / (1.0 - f)).exp()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeSimState {
    pub field: DensityField<MaskedGrid3>,
    pub time: f64,
    pub rho: f64,
}

impl PhenotypeSimState {
    pub fn grid(&self) -> &MaskedGrid3 {
        &self.field.grid
    }
}

/// Samples the bump at the cell centers and rescales it to the model's
/// initial mass on the discrete grid.
pub fn init_density(grid: MaskedGrid3, model: &PhenotypeModel) -> Result<PhenotypeSimState> {
    let mut field = DensityField::from_fn(grid, |z| model.bump(z));
    let raw = field.integrate();
    if !(raw > 0.0) {
        return Err(Error::EmptySupport);
    }
    let scale = model.initial_mass / raw;
    field.values.iter_mut().for_each(|v| *v *= scale);
    let rho = field.integrate();
    Ok(PhenotypeSimState {
        field,
        time: 0.0,
        rho,
    })
}

/// Time-independent pieces of the discrete operator for one model and grid.
pub struct PhenotypeSolver {
    model: PhenotypeModel,
    grid: MaskedGrid3,
    growth: Vec<f64>,
    death: Vec<f64>,
    // per axis, diffusivity on the face between idx and idx + stride
    diffusion_faces: [Vec<f64>; 3],
}

impl PhenotypeSolver {
    pub fn new(model: PhenotypeModel, grid: MaskedGrid3) -> Self {
        let n = grid.len();
        let centers: Vec<Point> = (0..n).map(|i| grid.center(i)).collect();
        let growth = centers.iter().map(|&z| (model.growth)(z)).collect();
        let death = centers.iter().map(|&z| (model.death)(z)).collect();
        let diff_at: Vec<[f64; 3]> = centers.iter().map(|z| (model.diffusion)(z[2])).collect();
        let diffusion_faces = std::array::from_fn(|axis| {
            face_values(&grid, axis, |lo, hi| {
                0.5 * (diff_at[lo][axis] + diff_at[hi][axis])
            })
        });
        Self {
            model,
            grid,
            growth,
            death,
            diffusion_faces,
        }
    }

    pub fn model(&self) -> &PhenotypeModel {
        &self.model
    }

    pub fn grid(&self) -> &MaskedGrid3 {
        &self.grid
    }

    pub fn init(&self) -> Result<PhenotypeSimState> {
        init_density(self.grid.clone(), &self.model)
    }

    fn velocity_faces(&self, t: f64) -> [Vec<f64>; 3] {
        let v: Vec<[f64; 3]> = (0..self.grid.len())
            .map(|i| {
                if self.grid.is_active(i) {
                    (self.model.advection)(t, self.grid.center(i))
                } else {
                    [0.0; 3]
                }
            })
            .collect();
        std::array::from_fn(|axis| {
            face_values(&self.grid, axis, |lo, hi| 0.5 * (v[lo][axis] + v[hi][axis]))
        })
    }

    fn bound_with(&self, state: &PhenotypeSimState, velocity: &[Vec<f64>; 3]) -> f64 {
        let widths = self.grid.widths();
        let mut rate = vec![0.0; self.grid.len()];
        for axis in 0..3 {
            let stride = self.grid.stride(axis);
            let (w, w2) = (widths[axis], widths[axis] * widths[axis]);
            for lo in 0..self.grid.len() {
                let (v, a) = (velocity[axis][lo], self.diffusion_faces[axis][lo]);
                if v == 0.0 && a == 0.0 {
                    continue;
                }
                let hi = lo + stride;
                rate[lo] += v.max(0.0) / w + a / w2;
                rate[hi] += (-v).max(0.0) / w + a / w2;
            }
        }
        (0..self.grid.len())
            .filter(|&i| self.grid.is_active(i))
            .map(|i| {
                let r = rate[i] + (self.growth[i] - self.death[i] * state.rho).abs();
                1.0 / r
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest admissible explicit step from `state`.
    pub fn stability_bound(&self, state: &PhenotypeSimState) -> f64 {
        self.bound_with(state, &self.velocity_faces(state.time))
    }

    /// One explicit finite-volume step.
    pub fn step(&self, state: &PhenotypeSimState, dt: f64) -> Result<PhenotypeSimState> {
        let velocity = self.velocity_faces(state.time);
        let bound = self.bound_with(state, &velocity);
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, bound });
        }
        let u = &state.field.values;
        let mut next = u.clone();
        let widths = self.grid.widths();
        let dims = self.grid.dims();
        let mut line = LineBuffers::new(*dims.iter().max().unwrap_or(&1));
        for axis in 0..3 {
            let stride = self.grid.stride(axis);
            let n = dims[axis];
            let w = widths[axis];
            for start in line_starts(&self.grid, axis) {
                line.load(n, |m| {
                    let idx = start + m * stride;
                    (u[idx], velocity[axis][idx], self.diffusion_faces[axis][idx])
                });
                for (m, d) in line.divergence(n, w).enumerate() {
                    next[start + m * stride] -= dt * d;
                }
            }
        }
        for (i, v) in next.iter_mut().enumerate() {
            *v += dt * (self.growth[i] - self.death[i] * state.rho) * u[i];
            *v = v.max(0.0);
        }
        let time = state.time + dt;
        let field = DensityField {
            grid: self.grid.clone(),
            values: next,
        };
        if !field.is_finite() {
            return Err(Error::NonFiniteState { time });
        }
        let rho = field.integrate();
        Ok(PhenotypeSimState { field, time, rho })
    }

    /// Reaction-only mass increment `dt * sum((r - d rho) n) * cell_volume`.
    pub fn reaction_mass_increment(&self, state: &PhenotypeSimState, dt: f64) -> f64 {
        let total: f64 = state
            .field
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.is_active(*i))
            .map(|(i, n)| (self.growth[i] - self.death[i] * state.rho) * n)
            .sum();
        dt * total * self.grid.cell_volume()
    }

    /// Repeated [`step`](Self::step) from the initial density up to `t_end`.
    pub fn run(&self, opts: &PhenotypeRunOptions) -> Result<Vec<PhenotypeSimState>> {
        let mut state = self.init()?;
        let mut snapshots = vec![state.clone()];
        let every = opts.snapshot_every;
        let mut next_snapshot = if every > 0.0 { every } else { f64::INFINITY };
        let t_end = opts.t_end.max(0.0);
        // fixed steps may straddle a snapshot time
        let slack = opts.dt.map_or(1e-9, |dt| 0.5 * dt);
        while state.time < t_end - 1e-9 {
            let dt = match opts.dt {
                Some(dt) => dt.min(t_end - state.time),
                None => (opts.safety * self.stability_bound(&state))
                    .min(opts.max_dt)
                    .min(t_end - state.time)
                    .min(next_snapshot - state.time),
            };
            state = self.step(&state, dt)?;
            if state.time >= next_snapshot - slack {
                snapshots.push(state.clone());
                while next_snapshot <= state.time + slack {
                    next_snapshot += every;
                }
            }
        }
        if snapshots.last().map(|s| s.time) != Some(state.time) {
            snapshots.push(state);
        }
        Ok(snapshots)
    }
}

/// Per-axis face array: entry `lo` holds `value(lo, lo + stride)` for the
/// face between two active neighbours, zero otherwise (last cell along the
/// axis, or a masked side).
fn face_values(grid: &MaskedGrid3, axis: usize, value: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let stride = grid.stride(axis);
    let n_axis = grid.dims()[axis];
    (0..grid.len())
        .map(|lo| {
            let pos = grid.unravel(lo)[axis];
            if pos + 1 >= n_axis {
                return 0.0;
            }
            let hi = lo + stride;
            if grid.is_active(lo) && grid.is_active(hi) {
                value(lo, hi)
            } else {
                0.0
            }
        })
        .collect()
}

/// First cell of every grid line along `axis`.
fn line_starts(grid: &MaskedGrid3, axis: usize) -> impl Iterator<Item = usize> + '_ {
    (0..grid.len()).filter(move |&idx| grid.unravel(idx)[axis] == 0)
}

struct LineBuffers {
    values: Vec<f64>,
    velocity: Vec<f64>,
    diffusion: Vec<f64>,
    adv_flux: Vec<f64>,
    dif_flux: Vec<f64>,
}

impl LineBuffers {
    fn new(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            velocity: vec![0.0; n],
            diffusion: vec![0.0; n],
            adv_flux: vec![0.0; n + 1],
            dif_flux: vec![0.0; n + 1],
        }
    }

    fn load(&mut self, n: usize, cell: impl Fn(usize) -> (f64, f64, f64)) {
        for m in 0..n {
            let (u, v, a) = cell(m);
            self.values[m] = u;
            self.velocity[m] = v;
            self.diffusion[m] = a;
        }
    }

    fn divergence(&mut self, n: usize, width: f64) -> impl Iterator<Item = f64> + '_ {
        let faces = n.saturating_sub(1);
        advective_flux_into(
            &self.values[..n],
            &self.velocity[..faces],
            &mut self.adv_flux[..n + 1],
        );
        diffusive_flux_into(
            &self.values[..n],
            &self.diffusion[..faces],
            width,
            &mut self.dif_flux[..n + 1],
        );
        (0..n).map(move |m| {
            let hi = self.adv_flux[m + 1] + self.dif_flux[m + 1];
            let lo = self.adv_flux[m] + self.dif_flux[m];
            (hi - lo) / width
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhenotypeRunOptions {
    pub t_end: f64,
    pub snapshot_every: f64,
    /// Fixed step, checked against the stability bound every step.
    pub dt: Option<f64>,
    /// Accuracy cap on the automatic step.
    pub max_dt: f64,
    pub safety: f64,
}

impl Default for PhenotypeRunOptions {
    fn default() -> Self {
        Self {
            t_end: 200.0,
            snapshot_every: 20.0,
            dt: None,
            max_dt: 0.1,
            safety: 0.9,
        }
    }
}

/// Local maximum of the `(x, y)` marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub t: f64,
    pub rho: f64,
    pub mean: [f64; 3],
    pub variance: [f64; 3],
    /// Distinct local maxima of the marginal above 10% of its maximum.
    pub n_modes: usize,
    /// The two highest of those maxima.
    pub top_modes: Vec<Mode>,
}

/// Density integrated over `theta`, one value per `(x, y)` cell.
pub fn xy_marginal(state: &PhenotypeSimState) -> Vec<f64> {
    let grid = state.grid();
    let [nx, ny, nt] = grid.dims();
    let dt = grid.widths()[2];
    let mut out = vec![0.0; nx * ny];
    for (col, chunk) in state.field.values.chunks(nt).enumerate() {
        out[col] = chunk.iter().sum::<f64>() * dt;
    }
    out
}

/// Groups of 8-connected local maxima of `values` on an `nx * ny` grid that
/// exceed `rel_threshold` times the global maximum, best first.
pub fn marginal_modes(
    values: &[f64],
    nx: usize,
    ny: usize,
    active: impl Fn(usize, usize) -> bool,
    rel_threshold: f64,
) -> Vec<(usize, usize, f64)> {
    let at = |i: usize, j: usize| values[i * ny + j];
    let global = values.iter().cloned().fold(0.0, f64::max);
    if !(global > 0.0) {
        return Vec::new();
    }
    let neighbours = |i: usize, j: usize| {
        let mut out = Vec::with_capacity(8);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny {
                    out.push((a as usize, b as usize));
                }
            }
        }
        out
    };
    let mut is_peak = vec![false; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let v = at(i, j);
            if active(i, j)
                && v > rel_threshold * global
                && neighbours(i, j)
                    .iter()
                    .all(|&(a, b)| !active(a, b) || at(a, b) <= v)
            {
                is_peak[i * ny + j] = true;
            }
        }
    }
    let mut seen = vec![false; nx * ny];
    let mut groups = Vec::new();
    for start in 0..nx * ny {
        if !is_peak[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut best = (start / ny, start % ny, values[start]);
        while let Some(cur) = stack.pop() {
            let (i, j) = (cur / ny, cur % ny);
            if values[cur] > best.2 {
                best = (i, j, values[cur]);
            }
            for (a, b) in neighbours(i, j) {
                let k = a * ny + b;
                if is_peak[k] && !seen[k] {
                    seen[k] = true;
                    stack.push(k);
                }
            }
        }
        groups.push(best);
    }
    groups.sort_by(|x, y| y.2.total_cmp(&x.2));
    groups
}

/// Mass, trait moments and marginal modes of a state.
pub fn summarize(state: &PhenotypeSimState) -> Result<Summary> {
    let field = &state.field;
    let grid = state.grid();
    let rho = field.integrate();
    if rho <= ZERO_MASS {
        return Err(Error::ZeroMass { mass: rho });
    }
    let mean: [f64; 3] = std::array::from_fn(|a| field.weighted_sum(|z| z[a]) / rho);
    let variance: [f64; 3] =
        std::array::from_fn(|a| field.weighted_sum(|z| (z[a] - mean[a]).powi(2)) / rho);
    let [nx, ny, _] = grid.dims();
    let marginal = xy_marginal(state);
    let groups = marginal_modes(&marginal, nx, ny, |i, j| grid.xy_active(i, j), 0.1);
    let axes = grid.axes();
    let top_modes = groups
        .iter()
        .take(2)
        .map(|&(i, j, value)| Mode {
            x: axes[0].center(i),
            y: axes[1].center(j),
            value,
        })
        .collect();
    Ok(Summary {
        t: state.time,
        rho,
        mean,
        variance,
        n_modes: groups.len(),
        top_modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Grid1;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn still(model: PhenotypeModel) -> PhenotypeModel {
        model.advection(|_, _| [0.0; 3]).diffusion(|_| [0.0; 3])
    }

    #[test]
    fn default_growth_is_bounded_and_continuous_on_diagonal() {
        for k in 0..=100 {
            let x = k as f64 / 100.0;
            let on = default_growth([x, x, 0.3]);
            let expect = (-(0.1 - x).powi(2) - (0.9 - x).powi(2)).exp();
            assert_abs_diff_eq!(on, expect, epsilon = 1e-15);
            let above = default_growth([x, x + 1e-12, 0.3]);
            assert_abs_diff_eq!(on, above, epsilon = 1e-10);
            assert!((0.0..=1.0).contains(&on));
        }
        assert_abs_diff_eq!(default_growth([0.1, 0.9, 0.0]), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(default_growth([0.9, 0.1, 0.0]), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn default_diffusion_is_monotone_in_theta() {
        let mut last = default_diffusion(0.0);
        for k in 1..=10 {
            let a = default_diffusion(k as f64 / 10.0);
            assert!(a.iter().all(|&v| v >= 0.0));
            assert!(a[0] >= last[0] && a[1] >= last[1]);
            last = a;
        }
    }

    #[test]
    fn initial_density_has_unit_mass_and_compact_support() {
        let grid = MaskedGrid3::unit(40, 40, 20).unwrap();
        let model = PhenotypeModel::default().initial_radius(0.075);
        let state = init_density(grid.clone(), &model).unwrap();
        assert_abs_diff_eq!(state.rho, 1.0, epsilon = 1e-12);
        let mut best = (0, 0.0);
        for i in 0..grid.len() {
            let v = state.field.values[i];
            if model.bump(grid.center(i)) == 0.0 {
                assert_eq!(v, 0.0);
            }
            if v > best.1 {
                best = (i, v);
            }
        }
        // brute force: the peak sits in a cell nearest to z0
        let dist = |i: usize| {
            let z = grid.center(i);
            (0..3)
                .map(|a| (z[a] - model.initial_center[a]).powi(2))
                .sum::<f64>()
        };
        let nearest = (0..grid.len())
            .filter(|&i| grid.is_active(i))
            .map(dist)
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(dist(best.0), nearest, epsilon = 1e-15);
    }

    #[test]
    fn default_radius_is_too_small_for_default_grid() {
        let grid = MaskedGrid3::unit(40, 40, 20).unwrap();
        assert_eq!(
            init_density(grid, &PhenotypeModel::default()),
            Err(Error::EmptySupport)
        );
        let fine = MaskedGrid3::unit(80, 80, 40).unwrap();
        let state = init_density(fine, &PhenotypeModel::default()).unwrap();
        assert_abs_diff_eq!(state.rho, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn frozen_model_leaves_field_unchanged() {
        let model = still(PhenotypeModel::default().initial_radius(0.2))
            .growth(|_| 0.0)
            .death(|_| 0.0);
        let solver = PhenotypeSolver::new(model, MaskedGrid3::unit(10, 10, 6).unwrap());
        let s0 = solver.init().unwrap();
        let s1 = solver.step(&s0, 5.0).unwrap();
        assert_eq!(s0.field.values, s1.field.values);
    }

    #[test]
    fn transport_conserves_mass() {
        let model = PhenotypeModel::default()
            .initial_radius(0.2)
            .growth(|_| 0.0)
            .death(|_| 0.0)
            .diffusion(|t| [1e-3 * (1.0 + t), 2e-3, 5e-4])
            .advection(|_, z| [0.2 * (0.5 - z[1]), -0.1 * z[0], 0.05 - 0.1 * z[2]]);
        let solver = PhenotypeSolver::new(model, MaskedGrid3::unit(12, 12, 8).unwrap());
        let mut s = solver.init().unwrap();
        let m0 = s.rho;
        for _ in 0..200 {
            let dt = 0.9 * solver.stability_bound(&s);
            s = solver.step(&s, dt).unwrap();
        }
        assert!(((s.rho - m0) / m0).abs() < 1e-12);
        // masked cells never receive mass
        for i in 0..solver.grid().len() {
            if !solver.grid().is_active(i) {
                assert_eq!(s.field.values[i], 0.0);
            }
        }
    }

    #[test]
    fn uniform_logistic_growth() {
        let axes = [Grid1::unit(4).unwrap(); 3];
        let grid = MaskedGrid3::full(axes);
        let model = still(PhenotypeModel::default().initial_radius(10.0))
            .growth(|_| 1.0)
            .death(|_| 0.5);
        let solver = PhenotypeSolver::new(model, grid);
        let mut s = solver.init().unwrap();
        // flatten the bump: the reaction-only dynamics only see rho
        let v = s.rho;
        s.field.values.iter_mut().for_each(|x| *x = v);
        s.rho = s.field.integrate();
        let dt = 1e-3;
        for _ in 0..20_000 {
            s = solver.step(&s, dt).unwrap();
        }
        // rho' = rho (1 - rho / 2), rho(0) = 1
        let exact = 2.0 / (1.0 + (-20.0f64).exp());
        assert_abs_diff_eq!(s.rho, exact, epsilon = 1e-3);
    }

    #[test]
    fn step_rejects_unstable_dt() {
        let solver = PhenotypeSolver::new(
            PhenotypeModel::default().initial_radius(0.075),
            MaskedGrid3::unit(40, 40, 20).unwrap(),
        );
        let s = solver.init().unwrap();
        let bound = solver.stability_bound(&s);
        assert!(matches!(
            solver.step(&s, 1.5 * bound),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn mass_identity_with_reaction() {
        let solver = PhenotypeSolver::new(
            PhenotypeModel::default()
                .initial_radius(0.2)
                .diffusion(|t| [1e-3 * (1.0 + t), 1e-3 * (1.0 + t), 1e-3]),
            MaskedGrid3::unit(10, 10, 5).unwrap(),
        );
        let mut s = solver.init().unwrap();
        for _ in 0..100 {
            let dt = 0.9 * solver.stability_bound(&s);
            let expected = s.rho + solver.reaction_mass_increment(&s, dt);
            s = solver.step(&s, dt).unwrap();
            assert!(((s.rho - expected) / expected).abs() < 1e-12);
            // upper bound max(rho0, max r / min d) = 2
            assert!(s.rho <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn run_with_zero_horizon_is_initial_state() {
        let solver = PhenotypeSolver::new(
            PhenotypeModel::default().initial_radius(0.075),
            MaskedGrid3::unit(40, 40, 20).unwrap(),
        );
        let opts = PhenotypeRunOptions {
            t_end: 0.0,
            ..Default::default()
        };
        let snaps = solver.run(&opts).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0], solver.init().unwrap());
    }

    #[test]
    fn summary_of_initial_state() {
        let grid = MaskedGrid3::unit(40, 40, 20).unwrap();
        let state = init_density(grid, &PhenotypeModel::default().initial_radius(0.075)).unwrap();
        let s = summarize(&state).unwrap();
        assert_abs_diff_eq!(s.rho, 1.0, epsilon = 1e-12);
        assert!((s.mean[0] - 0.25).abs() < 0.025);
        assert!((s.mean[1] - 0.25).abs() < 0.025);
        assert!((s.mean[2] - 0.5).abs() < 0.05);
        assert_eq!(s.n_modes, 1);
    }

    #[test]
    fn summary_of_point_mass_and_twin_bumps() {
        let grid = MaskedGrid3::unit(20, 20, 10).unwrap();
        let mut field = DensityField::zeros(grid.clone());
        let idx = grid.locate([0.3, 0.1, 0.5]);
        field.values[idx] = 1.0;
        let state = PhenotypeSimState {
            rho: field.integrate(),
            field,
            time: 0.0,
        };
        let s = summarize(&state).unwrap();
        assert!(s.variance.iter().all(|&v| v <= 0.05f64.powi(2) / 12.0));

        let bump = |z: Point, c: [f64; 2]| {
            (-((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2)) / 0.002).exp()
        };
        let field = DensityField::from_fn(grid, |z| bump(z, [0.1, 0.5]) + bump(z, [0.5, 0.1]));
        let state = PhenotypeSimState {
            rho: field.integrate(),
            field,
            time: 0.0,
        };
        let s = summarize(&state).unwrap();
        assert_abs_diff_eq!(s.mean[0], s.mean[1], epsilon = 1e-12);
        assert_abs_diff_eq!(s.mean[0], 0.3, epsilon = 0.02);
        assert_eq!(s.n_modes, 2);
    }

    #[test]
    fn summarize_rejects_empty_field() {
        let grid = MaskedGrid3::unit(4, 4, 4).unwrap();
        let state = PhenotypeSimState {
            field: DensityField::zeros(grid),
            time: 0.0,
            rho: 0.0,
        };
        assert!(matches!(summarize(&state), Err(Error::ZeroMass { .. })));
    }

    #[test]
    fn plateau_counts_as_one_mode() {
        let values = vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let modes = marginal_modes(&values, 3, 3, |_, _| true, 0.1);
        assert_eq!(modes.len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn explicit_step_stays_non_negative(
            vx in -1.0f64..1.0,
            vy in -1.0f64..1.0,
            vt in -1.0f64..1.0,
            diff in 0.0f64..1e-2,
            growth in 0.0f64..2.0,
            death in 0.0f64..2.0,
            safety in 0.1f64..1.0,
        ) {
            let model = PhenotypeModel::default()
                .initial_radius(0.25)
                .growth(move |z| growth * (1.0 - z[0]))
                .death(move |_| death)
                .diffusion(move |t| [diff * (1.0 + t), diff, 0.5 * diff])
                .advection(move |_, z| [vx * z[1], vy * z[0], vt * (z[0] + z[1])]);
            let solver = PhenotypeSolver::new(model, MaskedGrid3::unit(8, 8, 6).unwrap());
            let mut s = solver.init().unwrap();
            for _ in 0..30 {
                let dt = safety * solver.stability_bound(&s);
                s = solver.step(&s, dt).unwrap();
                prop_assert!(s.field.values.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
