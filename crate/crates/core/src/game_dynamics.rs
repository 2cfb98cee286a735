//! Repeated prisoner's dilemma with reciprocity learning.
//!
//! Player A cooperates with probability `p`, player B with `q`. After each
//! turn A moves `p` towards 1 at rate `eps11` if B cooperated and scales it
//! by `1 - eps12` if B defected; B does the same with `eps21`, `eps22`.
//! Averaging over the four outcomes gives the deterministic map
//!
//! ```text
//! f1(p, q) = (1 - eps12) p + eps11 q + (eps12 - eps11) p q
//! f2(p, q) = (1 - eps22) q + eps21 p + (eps22 - eps21) p q
//! ```
//!
//! whose long-run behaviour is decided by the sign of
//! `e = eps11 eps21 - eps12 eps22`.

use crate::error::{Error, Result};

/// Default tolerance on `|e|` below which the reciprocity is balanced.
pub const BALANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameParams {
    /// Benefit of being cooperated with.
    pub b: f64,
    /// Cost of cooperating.
    pub c: f64,
    /// `[eps11, eps12, eps21, eps22]`.
    pub eps: [f64; 4],
}

impl GameParams {
    pub fn new(b: f64, c: f64, eps: [f64; 4]) -> Result<Self> {
        if !(b.is_finite() && c.is_finite() && b > c && c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "payoff needs b > c > 0, got b = {b}, c = {c}"
            )));
        }
        if let Some(bad) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "reciprocity coefficients must lie in (0, 1), got {bad}"
            )));
        }
        Ok(Self { b, c, eps })
    }

    pub fn eps11(&self) -> f64 {
        self.eps[0]
    }
    pub fn eps12(&self) -> f64 {
        self.eps[1]
    }
    pub fn eps21(&self) -> f64 {
        self.eps[2]
    }
    pub fn eps22(&self) -> f64 {
        self.eps[3]
    }

    /// `e = eps11 eps21 - eps12 eps22`.
    pub fn imbalance(&self) -> f64 {
        self.eps11() * self.eps21() - self.eps12() * self.eps22()
    }

    pub fn f1(&self, p: f64, q: f64) -> f64 {
        let [e11, e12, _, _] = self.eps;
        reciprocate(p, q, e11, e12)
    }

    pub fn f2(&self, p: f64, q: f64) -> f64 {
        let [_, _, e21, e22] = self.eps;
        reciprocate(q, p, e21, e22)
    }

    /// Jacobian of `(f1, f2)` at `(p, q)`.
    pub fn jacobian(&self, p: f64, q: f64) -> [[f64; 2]; 2] {
        let [e11, e12, e21, e22] = self.eps;
        [
            [1.0 - e12 + (e12 - e11) * q, e11 + (e12 - e11) * p],
            [e21 + (e22 - e21) * q, 1.0 - e22 + (e22 - e21) * p],
        ]
    }

    /// The curve `q = eps12 p / (eps11 + (eps12 - eps11) p)` on which every
    /// balanced limit lies (it is the solution set of `f1(p, q) = p`).
    pub fn limit_curve(&self, p: f64) -> f64 {
        let (e11, e12) = (self.eps11(), self.eps12());
        e12 * p / (e11 + (e12 - e11) * p)
    }

    /// The quantity `eps22 p + eps11 q`, conserved when `e = 0`.
    pub fn balance_invariant(&self, p: f64, q: f64) -> f64 {
        self.eps22() * p + self.eps11() * q
    }
}

/// Expected next cooperation probability of a player at `own` facing an
/// opponent at `other`, written as the total-probability mixture so that the
/// corners 0 and 1 are reproduced exactly in floating point.
fn reciprocate(own: f64, other: f64, up: f64, down: f64) -> f64 {
    other * (own + up * (1.0 - own)) + (1.0 - other) * own * (1.0 - down)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameState {
    pub p: f64,
    pub q: f64,
    pub k: u64,
}

impl GameState {
    pub fn new(p: f64, q: f64) -> Self {
        Self { p, q, k: 0 }
    }
}

/// One reciprocity turn.
pub fn step(state: &GameState, params: &GameParams) -> GameState {
    GameState {
        p: params.f1(state.p, state.q).clamp(0.0, 1.0),
        q: params.f2(state.p, state.q).clamp(0.0, 1.0),
        k: state.k + 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub a: f64,
    pub b: f64,
    pub avg: f64,
}

/// Expected per-turn payoffs from the matrix `[[b - c, -c], [b, 0]]`.
pub fn expected_gains(state: &GameState, params: &GameParams) -> Gains {
    let (b, c) = (params.b, params.c);
    let a = b * state.q - c * state.p;
    let bb = b * state.p - c * state.q;
    Gains {
        a,
        b: bb,
        avg: 0.5 * (b - c) * (state.p + state.q),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `e < 0`: both players end up defecting.
    CollapseStable,
    /// `e > 0`: both players end up cooperating.
    FullCoopStable,
    /// `e = 0`: a line of interior limits selected by the initial state.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub p: f64,
    pub q: f64,
    /// Jacobian eigenvalues, smaller first.
    pub eigenvalues: (f64, f64),
    pub stability: Stability,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub e: f64,
    pub regime: Regime,
    pub fixed_points: Vec<FixedPoint>,
}

fn label(l1: f64, l2: f64) -> Stability {
    if l1.abs() < 1.0 && l2.abs() < 1.0 {
        Stability::Stable
    } else {
        Stability::Unstable
    }
}

/// Closed-form eigenvalues of `J(0, 0)`.
pub fn eigenvalues_at_origin(params: &GameParams) -> (f64, f64) {
    let s = params.eps12() + params.eps22();
    let root = (s * s + 4.0 * params.imbalance()).max(0.0).sqrt();
    ((2.0 - s - root) / 2.0, (2.0 - s + root) / 2.0)
}

/// Closed-form eigenvalues of `J(1, 1)`.
pub fn eigenvalues_at_full_coop(params: &GameParams) -> (f64, f64) {
    let s = params.eps11() + params.eps21();
    let root = (s * s - 4.0 * params.imbalance()).max(0.0).sqrt();
    ((2.0 - s - root) / 2.0, (2.0 - s + root) / 2.0)
}

/// Classifies the regime from the sign of `e`.
///
/// Outside the balanced band the report lists `(0, 0)` and `(1, 1)` with
/// their eigenvalues. Balanced limits depend on the initial state and come
/// from [`balanced_fixed_point`] instead.
pub fn classify(params: &GameParams, balance_tol: f64) -> RegimeReport {
    let e = params.imbalance();
    if e.abs() <= balance_tol {
        return RegimeReport {
            e,
            regime: Regime::Balanced,
            fixed_points: Vec::new(),
        };
    }
    let (a1, a2) = eigenvalues_at_origin(params);
    let (b1, b2) = eigenvalues_at_full_coop(params);
    RegimeReport {
        e,
        regime: if e < 0.0 {
            Regime::CollapseStable
        } else {
            Regime::FullCoopStable
        },
        fixed_points: vec![
            FixedPoint {
                p: 0.0,
                q: 0.0,
                eigenvalues: (a1, a2),
                stability: label(a1, a2),
            },
            FixedPoint {
                p: 1.0,
                q: 1.0,
                eigenvalues: (b1, b2),
                stability: label(b1, b2),
            },
        ],
    }
}

/// Limit of the balanced dynamics started at `(p0, q0)`.
///
/// Along trajectories `eps22 p + eps11 q = r0` is conserved, and the limit
/// satisfies `f1(p, q) = p`. Eliminating `q` leaves
/// `(eps22 - eps21) p^2 + ((eps12 - eps11) r0 / eps11 - eps12 - eps22) p + r0 = 0`,
/// which has exactly one root in `[0, 1]`.
pub fn balanced_fixed_point(
    p0: f64,
    q0: f64,
    params: &GameParams,
    balance_tol: f64,
) -> Result<(f64, f64)> {
    let e = params.imbalance();
    if e.abs() > balance_tol {
        return Err(Error::NotBalanced {
            e,
            tol: balance_tol,
        });
    }
    let [e11, e12, e21, e22] = params.eps;
    let r0 = params.balance_invariant(p0, q0);
    let a = e22 - e21;
    let b = (e12 - e11) * r0 / e11 - e12 - e22;
    let c = r0;

    let candidates: Vec<f64> = if a.abs() <= 1e-14 {
        vec![-c / b]
    } else {
        let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
        // cancellation-free pair of roots
        let t = -0.5 * (b + b.signum() * disc);
        if t == 0.0 {
            vec![0.0]
        } else {
            vec![t / a, c / t]
        }
    };

    const SLACK: f64 = 1e-9;
    candidates
        .into_iter()
        .filter(|p| p.is_finite() && (-SLACK..=1.0 + SLACK).contains(p))
        .map(|p| {
            let p = p.clamp(0.0, 1.0);
            (p, (r0 - e22 * p) / e11)
        })
        .find(|(_, q)| (-SLACK..=1.0 + SLACK).contains(q))
        .map(|(p, q)| (p, q.clamp(0.0, 1.0)))
        .ok_or(Error::NoRootInRange)
}

/// Eigenvalues of the Jacobian at an interior balanced limit:
/// `1 - (eps11 q/p + eps21 p/q)` and `1`.
pub fn balanced_eigenvalues(p_star: f64, q_star: f64, params: &GameParams) -> (f64, f64) {
    (1.0 - stability_margin(p_star, q_star, params), 1.0)
}

/// `g = eps11 q/p + eps21 p/q`; the balanced limit is stable iff `g < 2`.
pub fn stability_margin(p_star: f64, q_star: f64, params: &GameParams) -> f64 {
    params.eps11() * q_star / p_star + params.eps21() * p_star / q_star
}

/// Balanced limit paired with its eigenvalues. The unit eigenvalue points
/// along the line of limits, so stability is read from the other one.
pub fn balanced_report(
    p0: f64,
    q0: f64,
    params: &GameParams,
    balance_tol: f64,
) -> Result<FixedPoint> {
    let (p, q) = balanced_fixed_point(p0, q0, params, balance_tol)?;
    let eigenvalues = if p > 0.0 && q > 0.0 {
        balanced_eigenvalues(p, q, params)
    } else {
        eigenvalues_at_origin(params)
    };
    let stability = if eigenvalues.0.abs() < 1.0 {
        Stability::Stable
    } else {
        Stability::Unstable
    };
    Ok(FixedPoint {
        p,
        q,
        eigenvalues,
        stability,
    })
}

/// Whether the average expected gain at the balanced limit exceeds the
/// initial one.
///
/// The limit sits where the conserved line meets the limit curve. Moving
/// along the line changes `p + q` by `dp (eps11 - eps22) / eps11`, and the
/// limit has `p* > p0` exactly when `(p0, q0)` lies above the curve. The
/// gain therefore grows iff `(eps11 - eps22) (q0 - curve(p0)) > 0`.
pub fn gain_increase_predicate(
    p0: f64,
    q0: f64,
    params: &GameParams,
    balance_tol: f64,
) -> Result<bool> {
    let e = params.imbalance();
    if e.abs() > balance_tol {
        return Err(Error::NotBalanced {
            e,
            tol: balance_tol,
        });
    }
    let side = q0 - params.limit_curve(p0);
    Ok((params.eps11() - params.eps22()) * side > 0.0)
}

/// One synchronous turn of the mean-field `n`-player game.
///
/// Player `i` reacts to the mean cooperation `q_i` of the other `n - 1`
/// players with its own pair `(eps_i1, eps_i2)`.
pub fn n_player_step(probs: &[f64], eps_pairs: &[(f64, f64)]) -> Result<Vec<f64>> {
    let n = probs.len();
    if n < 2 {
        return Err(Error::TooFewPlayers { n });
    }
    if eps_pairs.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{n} players but {} reciprocity pairs",
            eps_pairs.len()
        )));
    }
    Ok(probs
        .iter()
        .zip(eps_pairs)
        .enumerate()
        .map(|(i, (&p, &(e1, e2)))| {
            let others: f64 = probs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &x)| x)
                .sum();
            let q = others / (n - 1) as f64;
            reciprocate(p, q, e1, e2).clamp(0.0, 1.0)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    /// Visited states, thinned; always starts with the initial state and
    /// ends with the final one.
    pub trajectory: Vec<GameState>,
    pub last: GameState,
    pub converged: bool,
}

/// Iterates [`step`] until successive states differ by less than
/// `convergence_tol` in max-norm, or `k_max` turns have been played.
/// `thin` keeps every `thin`-th state in the trajectory.
pub fn iterate(
    start: GameState,
    params: &GameParams,
    k_max: u64,
    convergence_tol: f64,
    thin: u64,
) -> Iteration {
    let thin = thin.max(1);
    let mut trajectory = vec![start];
    let mut state = start;
    let mut converged = false;
    for _ in 0..k_max {
        let next = step(&state, params);
        let delta = (next.p - state.p).abs().max((next.q - state.q).abs());
        state = next;
        if delta < convergence_tol {
            converged = true;
            break;
        }
        if state.k.is_multiple_of(thin) {
            trajectory.push(state);
        }
    }
    if trajectory.last() != Some(&state) {
        trajectory.push(state);
    }
    Iteration {
        trajectory,
        last: state,
        converged,
    }
}

/// Real eigenvalues of a 2x2 matrix with non-negative discriminant, smaller
/// first. The Jacobians of this map always qualify since their
/// off-diagonal entries are positive.
pub fn eigenvalues_2x2(m: [[f64; 2]; 2]) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let root = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - root, tr / 2.0 + root)
}
