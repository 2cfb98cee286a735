//! Two populations structured by their probability of cooperation.
//!
//! ```text
//! d/dt n_A + eps_A d/dp((pt_B(t) - p) n_A) = g_A(p, t) n_A
//! d/dt n_B + eps_B d/dp((pt_A(t) - p) n_B) = g_B(p, t) n_B
//! g_A(p, t) = r_A(p) + gamma_A(p) (b pt_B(t) - c pt_A(t))
//! ```
//!
//! where `pt_X` is the density-weighted mean of `p` in population `X`. Each
//! population drifts towards the other's mean cooperation and grows with
//! its expected prisoner's-dilemma gain. The advection-free case has an
//! explicit solution, which [`analytic_solution_no_advection`] evaluates and
//! [`classify_fate`] turns into an extinction / blow-up verdict.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{advective_flux_1d, flux_divergence, DensityField, Grid1, ZERO_MASS};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A coefficient that is either a constant or a function of `p`.
#[derive(Clone)]
pub enum Profile {
    Constant(f64),
    Function(ScalarFn),
}

impl Profile {
    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Profile::Function(Arc::new(f))
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Function(f) => f(p),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Profile::Constant(v) => Some(*v),
            Profile::Function(_) => None,
        }
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Constant(v) => write!(f, "Constant({v})"),
            Profile::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl From<f64> for Profile {
    fn from(v: f64) -> Self {
        Profile::Constant(v)
    }
}

#[derive(Debug, Clone)]
pub struct Population {
    /// Reciprocity (advection) coefficient, `>= 0`.
    pub reciprocity: f64,
    /// Intrinsic growth rate `r(p)`, any sign.
    pub growth: Profile,
    /// Gain sensitivity `gamma(p) >= 0`.
    pub gain_sensitivity: Profile,
    /// Initial density `n0(p) >= 0`.
    pub initial: Profile,
}

#[derive(Debug, Clone)]
pub struct CoopModel {
    pub benefit: Profile,
    pub cost: Profile,
    pub a: Population,
    pub b: Population,
}

impl CoopModel {
    /// Checks the sign constraints on the cell centers of `grid`.
    pub fn validate(&self, grid: &Grid1) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        for p in grid.centers() {
            let (b, c) = (self.benefit.eval(p), self.cost.eval(p));
            if !(b > c && c > 0.0) {
                return bad(format!("need b > c > 0, got b = {b}, c = {c} at p = {p}"));
            }
        }
        for (name, pop) in [('A', &self.a), ('B', &self.b)] {
            if !(pop.reciprocity >= 0.0 && pop.reciprocity.is_finite()) {
                return bad(format!("eps_{name} must be >= 0"));
            }
            let mut mass = 0.0;
            for p in grid.centers() {
                if !(pop.gain_sensitivity.eval(p) >= 0.0) {
                    return bad(format!("gamma_{name} must be >= 0 on [0, 1]"));
                }
                if !pop.growth.eval(p).is_finite() {
                    return bad(format!("r_{name} is not finite at p = {p}"));
                }
                let n0 = pop.initial.eval(p);
                if !(n0 >= 0.0 && n0.is_finite()) {
                    return bad(format!("n0_{name} must be finite and >= 0"));
                }
                mass += n0;
            }
            if mass <= 0.0 {
                return bad(format!("n0_{name} vanishes on the grid"));
            }
        }
        Ok(())
    }

    /// Same model with the labels A and B exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            benefit: self.benefit.clone(),
            cost: self.cost.clone(),
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }

    fn no_advection_constants(&self) -> Result<(f64, f64, f64, f64)> {
        match (
            self.a.reciprocity,
            self.b.reciprocity,
            self.benefit.as_constant(),
            self.cost.as_constant(),
            self.a.gain_sensitivity.as_constant(),
            self.b.gain_sensitivity.as_constant(),
        ) {
            (ea, eb, Some(b), Some(c), Some(ga), Some(gb)) if ea == 0.0 && eb == 0.0 => {
                Ok((b, c, ga, gb))
            }
            _ => Err(Error::RequiresNoAdvection),
        }
    }
}

/// Population-level scalars derived from the two densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Means {
    pub rho_a: f64,
    pub rho_b: f64,
    pub ptilde_a: f64,
    pub ptilde_b: f64,
    /// Global expected gains `b pt_B - c pt_A` and `b pt_A - c pt_B`,
    /// averaged over the own density when `b`, `c` depend on `p`.
    pub gain_a: f64,
    pub gain_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoopState {
    pub n_a: DensityField<Grid1>,
    pub n_b: DensityField<Grid1>,
    pub time: f64,
    pub means: Means,
}

fn mean_p(field: &DensityField<Grid1>, population: char) -> Result<(f64, f64)> {
    let mass = field.integrate();
    if !(mass > ZERO_MASS) {
        return Err(Error::ExtinctPopulation { population, mass });
    }
    Ok((mass, field.weighted_sum(|p| p) / mass))
}

fn means(model: &CoopModel, n_a: &DensityField<Grid1>, n_b: &DensityField<Grid1>) -> Result<Means> {
    let (rho_a, ptilde_a) = mean_p(n_a, 'A')?;
    let (rho_b, ptilde_b) = mean_p(n_b, 'B')?;
    let gain = |field: &DensityField<Grid1>, mass: f64, own: f64, other: f64| match (
        model.benefit.as_constant(),
        model.cost.as_constant(),
    ) {
        (Some(b), Some(c)) => b * other - c * own,
        _ => {
            field.weighted_sum(|p| model.benefit.eval(p) * other - model.cost.eval(p) * own) / mass
        }
    };
    Ok(Means {
        rho_a,
        rho_b,
        ptilde_a,
        ptilde_b,
        gain_a: gain(n_a, rho_a, ptilde_a, ptilde_b),
        gain_b: gain(n_b, rho_b, ptilde_b, ptilde_a),
    })
}

impl CoopState {
    /// Samples the initial densities on `grid`.
    pub fn initial(model: &CoopModel, grid: Grid1) -> Result<Self> {
        model.validate(&grid)?;
        let n_a = DensityField::from_fn(grid, |p| model.a.initial.eval(p));
        let n_b = DensityField::from_fn(grid, |p| model.b.initial.eval(p));
        let means = means(model, &n_a, &n_b)?;
        Ok(Self {
            n_a,
            n_b,
            time: 0.0,
            means,
        })
    }

    pub fn grid(&self) -> &Grid1 {
        &self.n_a.grid
    }
}

/// Per-population ingredients of one explicit step.
struct Tendency {
    velocity: Vec<f64>,
    growth: Vec<f64>,
}

fn tendency(pop: &Population, model: &CoopModel, grid: &Grid1, own: f64, other: f64) -> Tendency {
    let velocity = (1..grid.n_cells())
        .map(|f| pop.reciprocity * (other - grid.face(f)))
        .collect();
    let growth = grid
        .centers()
        .map(|p| {
            let gain = model.benefit.eval(p) * other - model.cost.eval(p) * own;
            pop.growth.eval(p) + pop.gain_sensitivity.eval(p) * gain
        })
        .collect();
    Tendency { velocity, growth }
}

impl Tendency {
    /// Largest `dt` keeping the upwind + reaction update positive.
    fn bound(&self, width: f64) -> f64 {
        let n = self.growth.len();
        (0..n)
            .map(|i| {
                let right = if i + 1 < n {
                    self.velocity[i].max(0.0)
                } else {
                    0.0
                };
                let left = if i > 0 {
                    (-self.velocity[i - 1]).max(0.0)
                } else {
                    0.0
                };
                1.0 / ((left + right) / width + self.growth[i].abs())
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn apply(&self, values: &[f64], width: f64, dt: f64) -> Vec<f64> {
        let div = flux_divergence(&advective_flux_1d(values, &self.velocity), width);
        values
            .iter()
            .zip(&div)
            .zip(&self.growth)
            .map(|((&u, &d), &g)| (u - dt * d + dt * g * u).max(0.0))
            .collect()
    }
}

fn tendencies(state: &CoopState, model: &CoopModel) -> (Tendency, Tendency) {
    let m = state.means;
    let grid = state.grid();
    (
        tendency(&model.a, model, grid, m.ptilde_a, m.ptilde_b),
        tendency(&model.b, model, grid, m.ptilde_b, m.ptilde_a),
    )
}

/// Largest admissible explicit time step from `state`.
pub fn stability_bound(state: &CoopState, model: &CoopModel) -> f64 {
    let (ta, tb) = tendencies(state, model);
    let w = state.grid().cell_width();
    ta.bound(w).min(tb.bound(w))
}

/// One forward-Euler step of both populations from the same start-of-step
/// means.
pub fn step(state: &CoopState, model: &CoopModel, dt: f64) -> Result<CoopState> {
    let (ta, tb) = tendencies(state, model);
    let w = state.grid().cell_width();
    let bound = ta.bound(w).min(tb.bound(w));
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, bound });
    }
    let n_a = DensityField {
        grid: *state.grid(),
        values: ta.apply(&state.n_a.values, w, dt),
    };
    let n_b = DensityField {
        grid: *state.grid(),
        values: tb.apply(&state.n_b.values, w, dt),
    };
    let time = state.time + dt;
    if !(n_a.is_finite() && n_b.is_finite()) {
        return Err(Error::NonFiniteState { time });
    }
    let means = means(model, &n_a, &n_b)?;
    Ok(CoopState {
        n_a,
        n_b,
        time,
        means,
    })
}

/// Closed-form evaluation of the advection-free system at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSolution {
    pub n_a: Vec<f64>,
    pub n_b: Vec<f64>,
    pub ptilde_a: f64,
    pub ptilde_b: f64,
    /// `int_0^t E(s) ds` for each population.
    pub gain_integral_a: f64,
    pub gain_integral_b: f64,
}

/// Mean of `p` under `n0(p) exp(r(p) t)` by midpoint quadrature on `grid`.
///
/// The gain factor is uniform in `p` and cancels, so this is the exact mean
/// cooperation of the advection-free solution.
pub fn tilted_mean(pop: &Population, grid: &Grid1, t: f64) -> f64 {
    let logs: Vec<(f64, f64)> = grid
        .centers()
        .map(|p| (p, pop.initial.eval(p).ln() + pop.growth.eval(p) * t))
        .collect();
    let top = logs
        .iter()
        .map(|&(_, l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let (num, den) = logs.iter().fold((0.0, 0.0), |(num, den), &(p, l)| {
        let w = (l - top).exp();
        (num + p * w, den + w)
    });
    num / den
}

/// Evaluates the advection-free solution
/// `n(t, p) = n0(p) exp(r(p) t + gamma int_0^t E)` on the cell centers of
/// `grid`, with `int E` accumulated by the trapezoid rule on `substeps`
/// uniform intervals.
pub fn analytic_solution_no_advection(
    model: &CoopModel,
    t: f64,
    grid: &Grid1,
    substeps: usize,
) -> Result<AnalyticSolution> {
    let (b, c, gamma_a, gamma_b) = model.no_advection_constants()?;
    let substeps = substeps.max(1);
    let gains = |s: f64| {
        let pa = tilted_mean(&model.a, grid, s);
        let pb = tilted_mean(&model.b, grid, s);
        (b * pb - c * pa, b * pa - c * pb)
    };
    let h = t / substeps as f64;
    let (mut ia, mut ib) = (0.0, 0.0);
    let mut prev = gains(0.0);
    for k in 1..=substeps {
        let next = gains(k as f64 * h);
        ia += 0.5 * h * (prev.0 + next.0);
        ib += 0.5 * h * (prev.1 + next.1);
        prev = next;
    }
    let density = |pop: &Population, gamma: f64, integral: f64| -> Vec<f64> {
        grid.centers()
            .map(|p| pop.initial.eval(p) * (pop.growth.eval(p) * t + gamma * integral).exp())
            .collect()
    };
    Ok(AnalyticSolution {
        n_a: density(&model.a, gamma_a, ia),
        n_b: density(&model.b, gamma_b, ib),
        ptilde_a: tilted_mean(&model.a, grid, t),
        ptilde_b: tilted_mean(&model.b, grid, t),
        gain_integral_a: ia,
        gain_integral_b: ib,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Extinction,
    BlowUp,
    Critical,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Extinction => "Extinction",
            Verdict::BlowUp => "BlowUp",
            Verdict::Critical => "Critical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationFate {
    pub verdict: Verdict,
    /// `r(p*) + gamma (b p*_other - c p*_own)`.
    pub fitness: f64,
    /// Maximizer of the growth rate over the initial support.
    pub p_star: f64,
    /// Component of `{p : r(p) > r(p*) - fitness / 2}` containing `p*`,
    /// present for [`Verdict::BlowUp`].
    pub interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FateReport {
    pub a: PopulationFate,
    pub b: PopulationFate,
}

impl FateReport {
    /// Flat `key = value` block.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (name, fate) in [("A", &self.a), ("B", &self.b)] {
            out.push_str(&format!("{name}.verdict = {}\n", fate.verdict));
            out.push_str(&format!("{name}.fitness = {}\n", fate.fitness));
            out.push_str(&format!("{name}.p_star = {}\n", fate.p_star));
            if let Some((lo, hi)) = fate.interval {
                out.push_str(&format!("{name}.interval_lo = {lo}\n"));
                out.push_str(&format!("{name}.interval_hi = {hi}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FateOptions {
    /// Scan points on `[0, 1]`, endpoints included.
    pub scan_points: usize,
    /// `|fitness|` at or below this is [`Verdict::Critical`].
    pub crit_tol: f64,
    /// Competing maxima closer than this violate the uniqueness hypothesis.
    pub uniqueness_tol: f64,
}

impl Default for FateOptions {
    fn default() -> Self {
        Self {
            scan_points: 4097,
            crit_tol: 1e-10,
            uniqueness_tol: 1e-8,
        }
    }
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo < 1e-15 {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Locates the unique maximizer of `r` over the support of `n0`.
pub fn growth_maximizer(pop: &Population, name: char, opts: &FateOptions) -> Result<f64> {
    let m = opts.scan_points.max(3) - 1;
    let pts: Vec<f64> = (0..=m).map(|j| j as f64 / m as f64).collect();
    let support: Vec<bool> = pts.iter().map(|&p| pop.initial.eval(p) > 0.0).collect();
    let r: Vec<f64> = pts.iter().map(|&p| pop.growth.eval(p)).collect();
    if !support.iter().any(|&s| s) {
        return Err(Error::InvalidParameter(format!(
            "n0_{name} has empty support"
        )));
    }

    // local maxima over the support; runs of exactly equal values merge
    let in_support = |j: isize| j >= 0 && (j as usize) <= m && support[j as usize];
    let mut peaks: Vec<(usize, usize)> = Vec::new(); // (first, last) index of a run
    let mut j = 0;
    while j <= m {
        if !support[j] {
            j += 1;
            continue;
        }
        let mut end = j;
        while end < m && support[end + 1] && r[end + 1] == r[j] {
            end += 1;
        }
        let left_ok = !in_support(j as isize - 1) || r[j - 1] <= r[j];
        let right_ok = !in_support(end as isize + 1) || r[end + 1] <= r[j];
        if left_ok && right_ok {
            peaks.push((j, end));
        }
        j = end + 1;
    }
    peaks.sort_by(|x, y| r[y.0].total_cmp(&r[x.0]));
    let (first, last) = peaks[0];
    if last - first > 1 {
        return Err(Error::NonUniqueMaximizer {
            population: name,
            first: pts[first],
            second: pts[last],
        });
    }
    if let Some(&(second, _)) = peaks.get(1) {
        if r[first] - r[second] <= opts.uniqueness_tol {
            return Err(Error::NonUniqueMaximizer {
                population: name,
                first: pts[first],
                second: pts[second],
            });
        }
    }

    let lo = if in_support(first as isize - 1) {
        pts[first - 1]
    } else {
        pts[first]
    };
    let hi = if in_support(last as isize + 1) {
        pts[last + 1]
    } else {
        pts[last]
    };
    let growth = |p: f64| pop.growth.eval(p);
    let refined = refine_max(&growth, lo, hi);
    let best_grid = pts[first];
    Ok(if growth(refined) >= growth(best_grid) {
        refined
    } else {
        best_grid
    })
}

/// Maximizer of `f` on `[lo, hi]`.
///
/// Golden-section search alone stalls at `sqrt(machine eps)` relative
/// precision because `f` is flat at the peak, so the bracket is finished by
/// bisection on the sign of a central difference, which resolves the peak
/// to roughly `1e-10`.
fn refine_max(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    const H: f64 = 1e-6;
    let slope = |p: f64| f((p + H).min(hi)) - f((p - H).max(lo));
    let (mut a, mut b) = (lo, hi);
    if slope(a) > 0.0 && slope(b) < 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let s = slope(mid);
            if s == 0.0 || b - a < 1e-15 {
                return mid;
            }
            if s > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        return 0.5 * (a + b);
    }
    let candidate = golden_max(f, lo, hi);
    [lo, candidate, hi]
        .into_iter()
        .fold(candidate, |best, p| if f(p) > f(best) { p } else { best })
}

/// Connected component of `{p in [0, 1] : r(p) > level}` containing `p_star`.
fn level_interval(growth: &Profile, p_star: f64, level: f64, scan_points: usize) -> (f64, f64) {
    let h = 1.0 / (scan_points.max(3) - 1) as f64;
    let edge = |dir: f64| {
        let mut inside = p_star;
        loop {
            let next = (inside + dir * h).clamp(0.0, 1.0);
            if next == inside {
                return inside;
            }
            if growth.eval(next) <= level {
                // bisect between the last inside point and `next`
                let (mut a, mut b) = (inside, next);
                for _ in 0..60 {
                    let mid = 0.5 * (a + b);
                    if growth.eval(mid) > level {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                return a;
            }
            inside = next;
        }
    };
    (edge(-1.0), edge(1.0))
}

/// Extinction / blow-up verdict for the advection-free model with constant
/// gain sensitivity.
pub fn classify_fate(model: &CoopModel, opts: &FateOptions) -> Result<FateReport> {
    let (b, c, gamma_a, gamma_b) = model.no_advection_constants()?;
    let pa = growth_maximizer(&model.a, 'A', opts)?;
    let pb = growth_maximizer(&model.b, 'B', opts)?;
    let fate = |pop: &Population, gamma: f64, own: f64, other: f64| {
        let peak = pop.growth.eval(own);
        let fitness = peak + gamma * (b * other - c * own);
        let verdict = if fitness.abs() <= opts.crit_tol {
            Verdict::Critical
        } else if fitness < 0.0 {
            Verdict::Extinction
        } else {
            Verdict::BlowUp
        };
        let interval = (verdict == Verdict::BlowUp)
            .then(|| level_interval(&pop.growth, own, peak - fitness / 2.0, opts.scan_points));
        PopulationFate {
            verdict,
            fitness,
            p_star: own,
            interval,
        }
    };
    Ok(FateReport {
        a: fate(&model.a, gamma_a, pa, pb),
        b: fate(&model.b, gamma_b, pb, pa),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoopRunOptions {
    pub t_end: f64,
    pub snapshot_every: f64,
    /// Fixed step; `None` picks `min(safety * bound, max_dt)` every step.
    pub dt: Option<f64>,
    pub max_dt: f64,
    pub safety: f64,
    /// Total mass above which a population counts as blown up.
    pub overflow: f64,
    /// Trailing time window for the log-mass slope fit.
    pub slope_window: f64,
}

impl Default for CoopRunOptions {
    fn default() -> Self {
        Self {
            t_end: 100.0,
            snapshot_every: 10.0,
            dt: None,
            max_dt: 0.01,
            safety: 0.9,
            overflow: 1e15,
            slope_window: 10.0,
        }
    }
}

/// Why a run stopped before `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Halt {
    Extinct { population: char, time: f64 },
    BlowUpObserved { population: char, time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub means: Means,
}

/// Observed asymptotics next to the analytic prediction for one population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consistency {
    pub predicted: Verdict,
    pub log_slope: f64,
    pub ptilde_final: f64,
    pub p_star: f64,
    pub agrees: bool,
}

#[derive(Debug, Clone)]
pub struct CoopRun {
    pub snapshots: Vec<CoopState>,
    pub series: Vec<SeriesRow>,
    pub halt: Option<Halt>,
    pub fate: Option<FateReport>,
    pub consistency: Option<(Consistency, Consistency)>,
}

/// Least-squares slope of `ln rho` against `t` over the trailing `window`.
pub fn log_mass_slope(series: &[SeriesRow], window: f64, pick: impl Fn(&Means) -> f64) -> f64 {
    let Some(last) = series.last() else {
        return f64::NAN;
    };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|row| row.t >= last.t - window)
        .map(|row| (row.t, pick(&row.means).ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    num / den
}

/// Time loop over [`step`] with snapshots at (nearest-step) multiples of
/// `snapshot_every`, the initial and the final state included.
pub fn run(model: &CoopModel, grid: Grid1, opts: &CoopRunOptions) -> Result<CoopRun> {
    let mut state = CoopState::initial(model, grid)?;
    let mut snapshots = vec![state.clone()];
    let mut series = vec![SeriesRow {
        t: 0.0,
        means: state.means,
    }];
    let mut halt = None;
    let mut next_snapshot = opts.snapshot_every;
    let t_end = opts.t_end.max(0.0);

    while state.time < t_end - 1e-12 {
        let dt = match opts.dt {
            Some(dt) => dt.min(t_end - state.time),
            None => (opts.safety * stability_bound(&state, model))
                .min(opts.max_dt)
                .min(t_end - state.time),
        };
        match step(&state, model, dt) {
            Ok(next) => state = next,
            Err(Error::ExtinctPopulation { population, .. }) => {
                halt = Some(Halt::Extinct {
                    population,
                    time: state.time + dt,
                });
                break;
            }
            Err(e) => return Err(e),
        }
        series.push(SeriesRow {
            t: state.time,
            means: state.means,
        });
        if opts.snapshot_every > 0.0 && state.time >= next_snapshot - 0.5 * dt {
            snapshots.push(state.clone());
            while next_snapshot <= state.time + 0.5 * dt {
                next_snapshot += opts.snapshot_every;
            }
        }
        let m = state.means;
        if m.rho_a > opts.overflow || m.rho_b > opts.overflow {
            halt = Some(Halt::BlowUpObserved {
                population: if m.rho_a > opts.overflow { 'A' } else { 'B' },
                time: state.time,
            });
            break;
        }
    }
    if snapshots.last().map(|s| s.time) != Some(state.time) {
        snapshots.push(state.clone());
    }

    let fate = classify_fate(model, &FateOptions::default()).ok();
    let consistency = fate.map(|report| {
        let check = |fate: &PopulationFate, slope: f64, ptilde: f64| Consistency {
            predicted: fate.verdict,
            log_slope: slope,
            ptilde_final: ptilde,
            p_star: fate.p_star,
            agrees: match fate.verdict {
                Verdict::Extinction => slope < 0.0,
                Verdict::BlowUp => slope > 0.0,
                Verdict::Critical => slope.abs() < 0.05,
            },
        };
        let sa = log_mass_slope(&series, opts.slope_window, |m| m.rho_a);
        let sb = log_mass_slope(&series, opts.slope_window, |m| m.rho_b);
        (
            check(&report.a, sa, state.means.ptilde_a),
            check(&report.b, sb, state.means.ptilde_b),
        )
    });

    Ok(CoopRun {
        snapshots,
        series,
        halt,
        fate,
        consistency,
    })
}

/// The worked example: `r(p) = p (1 - p) - 1/2`, uniform unit initial
/// densities, no advection, constant `gamma`.
pub fn quadratic_example(gamma: f64, b: f64, c: f64) -> CoopModel {
    let pop = Population {
        reciprocity: 0.0,
        growth: Profile::function(|p| p * (1.0 - p) - 0.5),
        gain_sensitivity: Profile::Constant(gamma),
        initial: Profile::Constant(1.0),
    };
    CoopModel {
        benefit: b.into(),
        cost: c.into(),
        a: pop.clone(),
        b: pop,
    }
}
