//! Run configurations and artifact writers behind the command-line tool.
//!
//! A configuration is a flat `key = value` file; `#` starts a comment.
//! Every model reads its own set of keys, rejects keys it does not know,
//! and reports all problems at once.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::batch;
use crate::coop_structured::{
    self as coop, CoopModel, CoopRunOptions, FateOptions, Halt, Population, Profile,
};
use crate::error::Error;
use crate::game_dynamics::{self as game, GameParams, GameState, Regime, Stability};
use crate::lcg::Lcg;
use crate::numerics::{Grid1, MaskedGrid3, Mesh};
use crate::phenotype3d::{
    self as pheno, Advection, PhenotypeModel, PhenotypeRunOptions, PhenotypeSolver,
};

/// Environment variable capping batch parallelism.
pub const THREADS_ENV: &str = "COOPDYN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Game,
    GameSweep,
    NPlayer,
    Pde3d,
    Coop,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Game => "game",
            ModelKind::GameSweep => "game-sweep",
            ModelKind::NPlayer => "nplayer",
            ModelKind::Pde3d => "pde3d",
            ModelKind::Coop => "coop",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "game" => ModelKind::Game,
            "game-sweep" => ModelKind::GameSweep,
            "nplayer" => ModelKind::NPlayer,
            "pde3d" => ModelKind::Pde3d,
            "coop" => ModelKind::Coop,
            other => return Err(format!("unknown model '{other}'")),
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One problem found while reading a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigIssue {
    MissingKey {
        key: String,
    },
    BadValue {
        key: String,
        line: usize,
        reason: String,
    },
    UnknownKey {
        key: String,
        line: usize,
    },
    Syntax {
        line: usize,
        text: String,
    },
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigIssue::MissingKey { key } => write!(f, "MissingKey: '{key}' is required"),
            ConfigIssue::BadValue { key, line, reason } => {
                write!(f, "BadValue: '{key}' on line {line}: {reason}")
            }
            ConfigIssue::UnknownKey { key, line } => {
                write!(f, "UnknownKey: '{key}' on line {line}")
            }
            ConfigIssue::Syntax { line, text } => {
                write!(f, "BadValue: line {line} is not 'key = value': {text}")
            }
        }
    }
}

#[derive(Debug)]
pub enum HarnessError {
    Config(Vec<ConfigIssue>),
    Model(Error),
    Io(io::Error),
}

impl HarnessError {
    /// Process exit status: 1 for configuration and I/O problems, 2 for
    /// errors reported by a model.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) => 1,
            HarnessError::Model(_) => 2,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(issues) => {
                for (i, issue) in issues.iter().enumerate() {
                    if i > 0 {
                        writeln!(f)?;
                    }
                    write!(f, "{issue}")?;
                }
                Ok(())
            }
            HarnessError::Model(e) => write!(f, "{e}"),
            HarnessError::Io(e) => write!(f, "I/O error: {e}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        HarnessError::Model(e)
    }
}

impl From<io::Error> for HarnessError {
    fn from(e: io::Error) -> Self {
        HarnessError::Io(e)
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq)]
pub struct GameConfig {
    pub params: GameParams,
    pub p0: f64,
    pub q0: f64,
    pub k_max: u64,
    pub tol: f64,
    pub thin: u64,
    pub balance_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub params: GameParams,
    pub n_points: usize,
    /// Sample starts from the seeded generator, or on a regular grid.
    pub random: bool,
    pub lo: f64,
    pub hi: f64,
    pub k_max: u64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NPlayerConfig {
    pub p0: Vec<f64>,
    pub eps_pairs: Vec<(f64, f64)>,
    pub k_max: u64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pde3dConfig {
    pub dims: [usize; 3],
    pub advection: Advection,
    pub initial_radius: f64,
    pub run: PhenotypeRunOptions,
}

/// Ascending-power coefficients of a polynomial in `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn eval(&self, p: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * p + c)
    }

    fn profile(&self) -> Profile {
        match self.0.as_slice() {
            [] => Profile::Constant(0.0),
            [c] => Profile::Constant(*c),
            _ => {
                let poly = self.clone();
                Profile::function(move |p| poly.eval(p))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoopPopulationConfig {
    pub reciprocity: f64,
    pub growth: Polynomial,
    pub gamma: f64,
    pub initial: Polynomial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoopConfig {
    pub b: f64,
    pub c: f64,
    pub a: CoopPopulationConfig,
    pub b_pop: CoopPopulationConfig,
    pub n_cells: usize,
    pub run: CoopRunOptions,
}

impl CoopConfig {
    pub fn model(&self) -> CoopModel {
        let pop = |c: &CoopPopulationConfig| Population {
            reciprocity: c.reciprocity,
            growth: c.growth.profile(),
            gain_sensitivity: Profile::Constant(c.gamma),
            initial: c.initial.profile(),
        };
        CoopModel {
            benefit: self.b.into(),
            cost: self.c.into(),
            a: pop(&self.a),
            b: pop(&self.b_pop),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Game(GameConfig),
    GameSweep(SweepConfig),
    NPlayer(NPlayerConfig),
    Pde3d(Pde3dConfig),
    Coop(CoopConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Game(_) => ModelKind::Game,
            ModelConfig::GameSweep(_) => ModelKind::GameSweep,
            ModelConfig::NPlayer(_) => ModelKind::NPlayer,
            ModelConfig::Pde3d(_) => ModelKind::Pde3d,
            ModelConfig::Coop(_) => ModelKind::Coop,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// Key lookup that records every problem instead of stopping at the first.
struct Fields {
    entries: BTreeMap<String, Entry>,
    issues: Vec<ConfigIssue>,
}

impl Fields {
    fn parse(text: &str) -> Self {
        let mut entries = BTreeMap::new();
        let mut issues = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                issues.push(ConfigIssue::Syntax {
                    line,
                    text: body.to_string(),
                });
                continue;
            };
            let key = key.trim().to_string();
            if let Some(prev) = entries.get(&key) {
                let prev: &Entry = prev;
                issues.push(ConfigIssue::BadValue {
                    key,
                    line,
                    reason: format!("duplicate of line {}", prev.line),
                });
                continue;
            }
            entries.insert(
                key,
                Entry {
                    value: value.trim().to_string(),
                    line,
                    used: false,
                },
            );
        }
        Self { entries, issues }
    }

    fn bad(&mut self, key: &str, reason: impl Into<String>) {
        let line = self.entries.get(key).map_or(0, |e| e.line);
        self.issues.push(ConfigIssue::BadValue {
            key: key.to_string(),
            line,
            reason: reason.into(),
        });
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            e.value.clone()
        })
    }

    fn parsed<T: FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let raw = self.raw(key)?;
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.bad(key, format!("expected {what}, got '{raw}'"));
                None
            }
        }
    }

    fn real(&mut self, key: &str) -> Option<f64> {
        let v: f64 = self.parsed(key, "a real number")?;
        if v.is_finite() {
            Some(v)
        } else {
            self.bad(key, "must be finite");
            None
        }
    }

    fn require<T>(&mut self, key: &str, v: Option<T>) -> Option<T> {
        if v.is_none() && !self.entries.contains_key(key) {
            self.issues.push(ConfigIssue::MissingKey {
                key: key.to_string(),
            });
        }
        v
    }

    fn req_real(&mut self, key: &str) -> Option<f64> {
        let v = self.real(key);
        self.require(key, v)
    }

    fn opt_real(&mut self, key: &str, default: f64) -> Option<f64> {
        if self.entries.contains_key(key) {
            self.real(key)
        } else {
            Some(default)
        }
    }

    fn opt_real_maybe(&mut self, key: &str) -> Option<Option<f64>> {
        if self.entries.contains_key(key) {
            self.real(key).map(Some)
        } else {
            Some(None)
        }
    }

    fn req_count(&mut self, key: &str) -> Option<u64> {
        let v = self.parsed(key, "a non-negative integer");
        self.require(key, v)
    }

    fn opt_count(&mut self, key: &str, default: u64) -> Option<u64> {
        if self.entries.contains_key(key) {
            self.parsed(key, "a non-negative integer")
        } else {
            Some(default)
        }
    }

    fn list(&mut self, key: &str) -> Option<Vec<f64>> {
        let raw = self.raw(key)?;
        let parts: Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parts {
            Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Some(v),
            _ => {
                self.bad(key, format!("expected comma-separated reals, got '{raw}'"));
                None
            }
        }
    }

    /// Checks `pred` on a value that parsed, reporting `reason` otherwise.
    fn check<T: Copy>(
        &mut self,
        key: &str,
        v: Option<T>,
        pred: impl Fn(T) -> bool,
        reason: &str,
    ) -> Option<T> {
        match v {
            Some(x) if !pred(x) => {
                self.bad(key, reason);
                None
            }
            other => other,
        }
    }

    fn finish<T>(mut self, value: Option<T>) -> std::result::Result<T, Vec<ConfigIssue>> {
        let unknown: Vec<ConfigIssue> = self
            .entries
            .iter()
            .filter(|(_, e)| !e.used)
            .map(|(k, e)| ConfigIssue::UnknownKey {
                key: k.clone(),
                line: e.line,
            })
            .collect();
        self.issues.extend(unknown);
        self.issues.sort_by_key(|issue| match issue {
            ConfigIssue::MissingKey { .. } => usize::MAX,
            ConfigIssue::BadValue { line, .. }
            | ConfigIssue::UnknownKey { line, .. }
            | ConfigIssue::Syntax { line, .. } => *line,
        });
        match value {
            Some(v) if self.issues.is_empty() => Ok(v),
            _ => Err(self.issues),
        }
    }
}

fn game_params(f: &mut Fields) -> Option<GameParams> {
    let b = f.req_real("b");
    let c = f.req_real("c");
    let c = f.check("c", c, |c| c > 0.0, "requires c > 0");
    let (b, c) = match (b, c) {
        (Some(b), Some(c)) if b <= c => {
            f.bad("b", format!("requires b > c (b = {b}, c = {c})"));
            (None, None)
        }
        pair => pair,
    };
    let mut eps = [0.0; 4];
    let mut ok = true;
    for (slot, key) in eps.iter_mut().zip(["eps11", "eps12", "eps21", "eps22"]) {
        let v = f.req_real(key);
        match f.check(key, v, |e| e > 0.0 && e < 1.0, "requires 0 < eps < 1") {
            Some(v) => *slot = v,
            None => ok = false,
        }
    }
    match (b, c, ok) {
        (Some(b), Some(c), true) => GameParams::new(b, c, eps).ok(),
        _ => None,
    }
}

fn probability(f: &mut Fields, key: &str, v: Option<f64>) -> Option<f64> {
    f.check(
        key,
        v,
        |p| (0.0..=1.0).contains(&p),
        "requires a value in [0, 1]",
    )
}

fn positive(f: &mut Fields, key: &str, v: Option<f64>) -> Option<f64> {
    f.check(key, v, |x| x > 0.0, "must be > 0")
}

fn non_negative(f: &mut Fields, key: &str, v: Option<f64>) -> Option<f64> {
    f.check(key, v, |x| x >= 0.0, "must be >= 0")
}

fn parse_game(f: &mut Fields) -> Option<GameConfig> {
    let params = game_params(f);
    let p0 = f.req_real("p0");
    let p0 = probability(f, "p0", p0);
    let q0 = f.req_real("q0");
    let q0 = probability(f, "q0", q0);
    let k_max = f.req_count("k_max");
    let k_max = f.check("k_max", k_max, |k| k >= 1, "requires k_max >= 1");
    let tol = f.opt_real("tol", 1e-12);
    let tol = positive(f, "tol", tol);
    let thin = f.opt_count("thin", 1);
    let balance_tol = f.opt_real("balance_tol", game::BALANCE_TOL);
    let balance_tol = non_negative(f, "balance_tol", balance_tol);
    Some(GameConfig {
        params: params?,
        p0: p0?,
        q0: q0?,
        k_max: k_max?,
        tol: tol?,
        thin: thin?,
        balance_tol: balance_tol?,
    })
}

fn parse_sweep(f: &mut Fields) -> Option<SweepConfig> {
    let params = game_params(f);
    let n_points = f.req_count("n_points");
    let random = match f.raw("sampling").as_deref() {
        None | Some("random") => Some(true),
        Some("grid") => Some(false),
        Some(other) => {
            f.bad(
                "sampling",
                format!("expected 'random' or 'grid', got '{other}'"),
            );
            None
        }
    };
    let lo = f.opt_real("lo", 0.01);
    let lo = probability(f, "lo", lo);
    let hi = f.opt_real("hi", 0.99);
    let hi = probability(f, "hi", hi);
    if let (Some(l), Some(h)) = (lo, hi) {
        if l > h {
            f.bad("hi", "requires lo <= hi");
        }
    }
    let k_max = f.req_count("k_max");
    let k_max = f.check("k_max", k_max, |k| k >= 1, "requires k_max >= 1");
    let tol = f.opt_real("tol", 1e-12);
    let tol = positive(f, "tol", tol);
    Some(SweepConfig {
        params: params?,
        n_points: n_points? as usize,
        random: random?,
        lo: lo?,
        hi: hi?,
        k_max: k_max?,
        tol: tol?,
    })
}

fn parse_nplayer(f: &mut Fields) -> Option<NPlayerConfig> {
    let p0 = f.list("p0");
    let p0 = f.require("p0", p0);
    let n = p0.as_ref().map_or(0, Vec::len);
    if p0.is_some() && n < 2 {
        f.bad("p0", "need at least 2 players");
    }
    if p0
        .as_ref()
        .is_some_and(|p| p.iter().any(|x| !(0.0..=1.0).contains(x)))
    {
        f.bad("p0", "requires every value in [0, 1]");
    }
    let per_player = |f: &mut Fields, key: &str| -> Option<Vec<f64>> {
        let v = f.list(key);
        let v = f.require(key, v)?;
        let v = if v.len() == 1 { vec![v[0]; n] } else { v };
        if v.len() != n {
            f.bad(key, format!("expected 1 or {n} values, got {}", v.len()));
            return None;
        }
        if v.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            f.bad(key, "requires 0 < eps < 1");
            return None;
        }
        Some(v)
    };
    let e1 = per_player(f, "eps1");
    let e2 = per_player(f, "eps2");
    let k_max = f.req_count("k_max");
    let tol = f.opt_real("tol", 1e-12);
    let tol = positive(f, "tol", tol);
    let (e1, e2) = (e1?, e2?);
    if n < 2 {
        return None;
    }
    Some(NPlayerConfig {
        p0: p0?,
        eps_pairs: e1.into_iter().zip(e2).collect(),
        k_max: k_max?,
        tol: tol?,
    })
}

fn parse_pde3d(f: &mut Fields) -> Option<Pde3dConfig> {
    let mut dims = [40usize, 40, 20];
    let mut dims_ok = true;
    for (slot, key) in dims.iter_mut().zip(["nx", "ny", "ntheta"]) {
        let v = f.opt_count(key, *slot as u64);
        match f.check(key, v, |n| n >= 1, "requires at least one cell") {
            Some(v) => *slot = v as usize,
            None => dims_ok = false,
        }
    }
    let advection = match f.raw("advection").as_deref() {
        None | Some("plain") => Some(Advection::Plain),
        Some("theta") => Some(Advection::ThetaScaled),
        Some(other) => {
            f.bad(
                "advection",
                format!("expected 'plain' or 'theta', got '{other}'"),
            );
            None
        }
    };
    let defaults = PhenotypeRunOptions::default();
    let radius = f.opt_real("initial_radius", PhenotypeModel::default().initial_radius);
    let radius = positive(f, "initial_radius", radius);
    let t_end = f.req_real("t_end");
    let t_end = non_negative(f, "t_end", t_end);
    let every = f.opt_real("snapshot_every", defaults.snapshot_every);
    let every = non_negative(f, "snapshot_every", every);
    let dt = f.opt_real_maybe("dt");
    let dt = dt.and_then(|d| match d {
        Some(v) if v <= 0.0 => {
            f.bad("dt", "must be > 0");
            None
        }
        other => Some(other),
    });
    let max_dt = f.opt_real("max_dt", defaults.max_dt);
    let max_dt = positive(f, "max_dt", max_dt);
    let safety = f.opt_real("safety", defaults.safety);
    let safety = f.check(
        "safety",
        safety,
        |s| s > 0.0 && s <= 1.0,
        "requires 0 < safety <= 1",
    );
    if !dims_ok {
        return None;
    }
    Some(Pde3dConfig {
        dims,
        advection: advection?,
        initial_radius: radius?,
        run: PhenotypeRunOptions {
            t_end: t_end?,
            snapshot_every: every?,
            dt: dt?,
            max_dt: max_dt?,
            safety: safety?,
        },
    })
}

fn parse_coop_population(f: &mut Fields, tag: &str) -> Option<CoopPopulationConfig> {
    let key = |name: &str| format!("{name}_{tag}");
    let eps = f.opt_real(&key("eps"), 0.0);
    let eps = non_negative(f, &key("eps"), eps);
    let growth = f.list(&key("r"));
    let growth = f.require(&key("r"), growth);
    let gamma = f.opt_real(&key("gamma"), 0.0);
    let gamma = non_negative(f, &key("gamma"), gamma);
    let initial = if f.entries.contains_key(&key("n0")) {
        f.list(&key("n0"))
    } else {
        Some(vec![1.0])
    };
    Some(CoopPopulationConfig {
        reciprocity: eps?,
        growth: Polynomial(growth?),
        gamma: gamma?,
        initial: Polynomial(initial?),
    })
}

fn parse_coop(f: &mut Fields) -> Option<CoopConfig> {
    let b = f.req_real("b");
    let c = f.req_real("c");
    let c = positive(f, "c", c);
    if let (Some(b), Some(c)) = (b, c) {
        if b <= c {
            f.bad("b", format!("requires b > c (b = {b}, c = {c})"));
        }
    }
    let a = parse_coop_population(f, "A");
    let b_pop = parse_coop_population(f, "B");
    let n_cells = f.opt_count("n_cells", 400);
    let n_cells = f.check("n_cells", n_cells, |n| n >= 1, "requires at least one cell");
    let d = CoopRunOptions::default();
    let t_end = f.req_real("t_end");
    let t_end = non_negative(f, "t_end", t_end);
    let every = f.opt_real("snapshot_every", d.snapshot_every);
    let every = non_negative(f, "snapshot_every", every);
    let dt = f.opt_real_maybe("dt");
    let dt = dt.and_then(|d| match d {
        Some(v) if v <= 0.0 => {
            f.bad("dt", "must be > 0");
            None
        }
        other => Some(other),
    });
    let max_dt = f.opt_real("max_dt", d.max_dt);
    let max_dt = positive(f, "max_dt", max_dt);
    let safety = f.opt_real("safety", d.safety);
    let safety = f.check(
        "safety",
        safety,
        |s| s > 0.0 && s <= 1.0,
        "requires 0 < safety <= 1",
    );
    let overflow = f.opt_real("overflow", d.overflow);
    let overflow = positive(f, "overflow", overflow);
    let window = f.opt_real("slope_window", d.slope_window);
    let window = positive(f, "slope_window", window);
    if b.is_some_and(|b| c.is_some_and(|c| b <= c)) {
        return None;
    }
    Some(CoopConfig {
        b: b?,
        c: c?,
        a: a?,
        b_pop: b_pop?,
        n_cells: n_cells? as usize,
        run: CoopRunOptions {
            t_end: t_end?,
            snapshot_every: every?,
            dt: dt?,
            max_dt: max_dt?,
            safety: safety?,
            overflow: overflow?,
            slope_window: window?,
        },
    })
}

fn parse_fields(kind: ModelKind, f: &mut Fields) -> Option<ModelConfig> {
    match kind {
        ModelKind::Game => parse_game(f).map(ModelConfig::Game),
        ModelKind::GameSweep => parse_sweep(f).map(ModelConfig::GameSweep),
        ModelKind::NPlayer => parse_nplayer(f).map(ModelConfig::NPlayer),
        ModelKind::Pde3d => parse_pde3d(f).map(ModelConfig::Pde3d),
        ModelKind::Coop => parse_coop(f).map(ModelConfig::Coop),
    }
}

/// Reads a configuration whose `model` key names the model.
pub fn parse_config(text: &str) -> std::result::Result<RunConfig, Vec<ConfigIssue>> {
    parse_config_as(text, None)
}

/// Reads a configuration for `kind`; a `model` key, if present, must agree.
/// With `kind = None` the `model` key is required.
pub fn parse_config_as(
    text: &str,
    kind: Option<ModelKind>,
) -> std::result::Result<RunConfig, Vec<ConfigIssue>> {
    let mut f = Fields::parse(text);
    let declared = match f.raw("model") {
        None => None,
        Some(name) => match name.parse::<ModelKind>() {
            Ok(k) => Some(k),
            Err(reason) => {
                f.bad("model", reason);
                f.entries.values_mut().for_each(|e| e.used = true);
                return f.finish(None);
            }
        },
    };
    let kind = match (kind, declared) {
        (Some(k), Some(d)) if k != d => {
            f.bad(
                "model",
                format!("config is for '{d}' but '{k}' was requested"),
            );
            f.entries.values_mut().for_each(|e| e.used = true);
            return f.finish(None);
        }
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => {
            f.issues.push(ConfigIssue::MissingKey {
                key: "model".into(),
            });
            // without a model there is no key set to check against
            f.entries.values_mut().for_each(|e| e.used = true);
            return f.finish(None);
        }
    };
    let model = parse_fields(kind, &mut f);
    f.finish(model).map(|model| RunConfig {
        model,
        output_dir: PathBuf::from("."),
        seed: 0,
    })
}

/// Output file and number of data rows (header excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut out = String::from("file,rows\n");
        for a in &self.artifacts {
            let _ = writeln!(out, "{},{}", a.file, a.rows);
        }
        out
    }
}

/// CSV buffer that counts data rows.
struct Csv {
    writer: csv::Writer<Vec<u8>>,
    rows: usize,
}

impl Csv {
    fn new(header: &str) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(header.split(','))
            .expect("writing to memory");
        Self { writer, rows: 0 }
    }

    fn row(&mut self, fields: &[String]) {
        self.writer.write_record(fields).expect("writing to memory");
        self.rows += 1;
    }

    fn into_text(self) -> (String, usize) {
        let bytes = self.writer.into_inner().expect("flushing to memory");
        (
            String::from_utf8(bytes).expect("CSV of ASCII numbers"),
            self.rows,
        )
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

struct Writer<'a> {
    dir: &'a Path,
    manifest: Manifest,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir,
            manifest: Manifest::default(),
        })
    }

    fn csv(&mut self, name: &str, csv: Csv) -> io::Result<()> {
        let (text, rows) = csv.into_text();
        self.text(name, &text, rows)
    }

    fn text(&mut self, name: &str, text: &str, rows: usize) -> io::Result<()> {
        let mut file = fs::File::create(self.dir.join(name))?;
        file.write_all(text.as_bytes())?;
        self.manifest.artifacts.push(Artifact {
            file: name.to_string(),
            rows,
        });
        Ok(())
    }

    fn finish(self) -> io::Result<Manifest> {
        fs::write(self.dir.join("manifest.txt"), self.manifest.render())?;
        Ok(self.manifest)
    }
}

pub const GAME_HEADER: &str = "k,p,q,E_A,E_B,E_avg";
pub const SWEEP_HEADER: &str = "p0,q0,p_star,q_star,converged";
pub const PDE3D_SNAPSHOT_HEADER: &str = "t,x,y,theta,n";
pub const PDE3D_SUMMARY_HEADER: &str =
    "t,rho,mean_x,mean_y,mean_theta,var_x,var_y,var_theta,n_modes";
pub const COOP_SNAPSHOT_HEADER: &str = "t,p,n_A,n_B";
pub const COOP_SERIES_HEADER: &str = "t,rho_A,rho_B,ptilde_A,ptilde_B,E_A,E_B";

fn game_rows(trajectory: &[GameState], params: &GameParams) -> Csv {
    let mut csv = Csv::new(GAME_HEADER);
    for s in trajectory {
        let g = game::expected_gains(s, params);
        csv.row(&[
            s.k.to_string(),
            num(s.p),
            num(s.q),
            num(g.a),
            num(g.b),
            num(g.avg),
        ]);
    }
    csv
}

/// Starting points of a sweep, in output order.
pub fn sweep_points(cfg: &SweepConfig, seed: u64) -> Vec<(f64, f64)> {
    if cfg.random {
        let mut rng = Lcg::new(seed);
        (0..cfg.n_points)
            .map(|_| {
                let p = rng.uniform(cfg.lo, cfg.hi);
                let q = rng.uniform(cfg.lo, cfg.hi);
                (p, q)
            })
            .collect()
    } else {
        let n = cfg.n_points;
        let at = |i: usize| {
            if n == 1 {
                0.5 * (cfg.lo + cfg.hi)
            } else {
                cfg.lo + (cfg.hi - cfg.lo) * i as f64 / (n - 1) as f64
            }
        };
        (0..n * n).map(|idx| (at(idx / n), at(idx % n))).collect()
    }
}

fn run_game(cfg: &GameConfig, w: &mut Writer) -> HarnessResult<()> {
    let it = game::iterate(
        GameState::new(cfg.p0, cfg.q0),
        &cfg.params,
        cfg.k_max,
        cfg.tol,
        cfg.thin,
    );
    w.csv("trajectory.csv", game_rows(&it.trajectory, &cfg.params))?;
    Ok(())
}

fn run_sweep(cfg: &SweepConfig, seed: u64, w: &mut Writer) -> HarnessResult<()> {
    let points = sweep_points(cfg, seed);
    let limits = batch::map_indexed(points.len(), |i| {
        let (p, q) = points[i];
        game::iterate(
            GameState::new(p, q),
            &cfg.params,
            cfg.k_max,
            cfg.tol,
            u64::MAX,
        )
    });
    let mut csv = Csv::new(SWEEP_HEADER);
    for ((p0, q0), it) in points.iter().zip(&limits) {
        csv.row(&[
            num(*p0),
            num(*q0),
            num(it.last.p),
            num(it.last.q),
            u8::from(it.converged).to_string(),
        ]);
    }
    w.csv("sweep.csv", csv)?;
    Ok(())
}

fn run_nplayer(cfg: &NPlayerConfig, w: &mut Writer) -> HarnessResult<()> {
    let n = cfg.p0.len();
    let header: Vec<String> = std::iter::once("k".to_string())
        .chain((1..=n).map(|i| format!("p_{i}")))
        .collect();
    let mut csv = Csv::new(&header.join(","));
    let row = |k: u64, probs: &[f64]| -> Vec<String> {
        std::iter::once(k.to_string())
            .chain(probs.iter().map(|&p| num(p)))
            .collect()
    };
    let mut probs = cfg.p0.clone();
    csv.row(&row(0, &probs));
    for k in 1..=cfg.k_max {
        let next = game::n_player_step(&probs, &cfg.eps_pairs)?;
        let delta = next
            .iter()
            .zip(&probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        probs = next;
        csv.row(&row(k, &probs));
        if delta < cfg.tol {
            break;
        }
    }
    w.csv("trajectory.csv", csv)?;
    Ok(())
}

fn run_pde3d(cfg: &Pde3dConfig, w: &mut Writer) -> HarnessResult<()> {
    let [nx, ny, nt] = cfg.dims;
    let grid = MaskedGrid3::unit(nx, ny, nt)?;
    let model = PhenotypeModel::with_advection(cfg.advection).initial_radius(cfg.initial_radius);
    let solver = PhenotypeSolver::new(model, grid);
    let snapshots = solver.run(&cfg.run)?;
    let mut cells = Csv::new(PDE3D_SNAPSHOT_HEADER);
    let mut summary = Csv::new(PDE3D_SUMMARY_HEADER);
    for s in &snapshots {
        let grid = s.grid();
        for idx in 0..grid.len() {
            if grid.is_active(idx) {
                let [x, y, th] = grid.center(idx);
                cells.row(&[
                    num(s.time),
                    num(x),
                    num(y),
                    num(th),
                    num(s.field.values[idx]),
                ]);
            }
        }
        let m = pheno::summarize(s)?;
        summary.row(&[
            num(m.t),
            num(m.rho),
            num(m.mean[0]),
            num(m.mean[1]),
            num(m.mean[2]),
            num(m.variance[0]),
            num(m.variance[1]),
            num(m.variance[2]),
            m.n_modes.to_string(),
        ]);
    }
    w.csv("snapshots.csv", cells)?;
    w.csv("summary.csv", summary)?;
    Ok(())
}

fn run_coop(cfg: &CoopConfig, w: &mut Writer) -> HarnessResult<()> {
    let model = cfg.model();
    let grid = Grid1::unit(cfg.n_cells)?;
    let out = coop::run(&model, grid, &cfg.run)?;
    let mut snaps = Csv::new(COOP_SNAPSHOT_HEADER);
    for s in &out.snapshots {
        for (i, p) in s.grid().centers().enumerate() {
            snaps.row(&[
                num(s.time),
                num(p),
                num(s.n_a.values[i]),
                num(s.n_b.values[i]),
            ]);
        }
    }
    let mut series = Csv::new(COOP_SERIES_HEADER);
    for r in &out.series {
        let m = r.means;
        series.row(&[
            num(r.t),
            num(m.rho_a),
            num(m.rho_b),
            num(m.ptilde_a),
            num(m.ptilde_b),
            num(m.gain_a),
            num(m.gain_b),
        ]);
    }
    w.csv("snapshots.csv", snaps)?;
    w.csv("series.csv", series)?;

    let mut report = String::new();
    match out.halt {
        None => report.push_str("halt = none\n"),
        Some(Halt::Extinct { population, time }) => {
            let _ = writeln!(
                report,
                "halt = Extinct\nhalt.population = {population}\nhalt.time = {time}"
            );
        }
        Some(Halt::BlowUpObserved { population, time }) => {
            let _ = writeln!(
                report,
                "halt = BlowUpObserved\nhalt.population = {population}\nhalt.time = {time}"
            );
        }
    }
    match (&out.fate, &out.consistency) {
        (Some(fate), Some((ca, cb))) => {
            report.push_str(&fate.to_kv());
            for (name, c) in [("A", ca), ("B", cb)] {
                let _ = writeln!(report, "{name}.observed_log_slope = {}", c.log_slope);
                let _ = writeln!(report, "{name}.observed_ptilde = {}", c.ptilde_final);
                let _ = writeln!(report, "{name}.agrees = {}", c.agrees);
            }
        }
        _ => {
            let reason = coop::classify_fate(&model, &FateOptions::default())
                .err()
                .map_or_else(|| "unavailable".to_string(), |e| e.to_string());
            let _ = writeln!(report, "fate = unavailable\nfate.reason = {reason}");
        }
    }
    let lines = report.lines().count();
    w.text("fate.txt", &report, lines)?;
    Ok(())
}

/// Runs the configured model and writes its artifacts plus `manifest.txt`
/// into the output directory.
pub fn dispatch(config: &RunConfig) -> HarnessResult<Manifest> {
    let mut w = Writer::new(&config.output_dir)?;
    match &config.model {
        ModelConfig::Game(c) => run_game(c, &mut w)?,
        ModelConfig::GameSweep(c) => run_sweep(c, config.seed, &mut w)?,
        ModelConfig::NPlayer(c) => run_nplayer(c, &mut w)?,
        ModelConfig::Pde3d(c) => run_pde3d(c, &mut w)?,
        ModelConfig::Coop(c) => run_coop(c, &mut w)?,
    }
    Ok(w.finish()?)
}

fn stability_name(s: Stability) -> &'static str {
    match s {
        Stability::Stable => "stable",
        Stability::Unstable => "unstable",
    }
}

/// Regime or fate report for a `game` or `coop` configuration, as a flat
/// `key = value` block. Nothing is simulated.
pub fn classify_report(config: &RunConfig) -> HarnessResult<String> {
    let mut out = String::new();
    match &config.model {
        ModelConfig::Game(c) => {
            let report = game::classify(&c.params, c.balance_tol);
            let regime = match report.regime {
                Regime::CollapseStable => "CollapseStable",
                Regime::FullCoopStable => "FullCoopStable",
                Regime::Balanced => "Balanced",
            };
            let _ = writeln!(out, "e = {}\nregime = {regime}", report.e);
            let mut points = report.fixed_points.clone();
            if report.regime == Regime::Balanced {
                points.push(game::balanced_report(c.p0, c.q0, &c.params, c.balance_tol)?);
                let grows = game::gain_increase_predicate(c.p0, c.q0, &c.params, c.balance_tol)?;
                let _ = writeln!(out, "gain_increases = {grows}");
            }
            for (i, fp) in points.iter().enumerate() {
                let _ = writeln!(out, "fixed_point.{i}.p = {}", fp.p);
                let _ = writeln!(out, "fixed_point.{i}.q = {}", fp.q);
                let _ = writeln!(out, "fixed_point.{i}.lambda1 = {}", fp.eigenvalues.0);
                let _ = writeln!(out, "fixed_point.{i}.lambda2 = {}", fp.eigenvalues.1);
                let _ = writeln!(
                    out,
                    "fixed_point.{i}.stability = {}",
                    stability_name(fp.stability)
                );
            }
        }
        ModelConfig::Coop(c) => {
            let fate = coop::classify_fate(&c.model(), &FateOptions::default())?;
            out.push_str(&fate.to_kv());
        }
        other => {
            return Err(HarnessError::Config(vec![ConfigIssue::BadValue {
                key: "model".into(),
                line: 0,
                reason: format!(
                    "classify supports 'game' and 'coop', not '{}'",
                    other.kind()
                ),
            }]))
        }
    }
    Ok(out)
}

/// Worker cap from [`THREADS_ENV`]; unset, empty or unparsable means no cap.
pub fn thread_cap_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAME: &str = "
        # minimal game
        b = 3
        c = 1
        eps11 = 0.2
        eps12 = 0.1
        eps21 = 0.3
        eps22 = 0.4
        p0 = 0.5
        q0 = 0.5
        k_max = 100
    ";

    fn issues(text: &str, kind: ModelKind) -> Vec<ConfigIssue> {
        parse_config_as(text, Some(kind)).unwrap_err()
    }

    #[test]
    fn minimal_game_config_parses() {
        let cfg = parse_config_as(GAME, Some(ModelKind::Game)).unwrap();
        let ModelConfig::Game(g) = cfg.model else {
            panic!("wrong model")
        };
        assert_eq!(g.params.eps, [0.2, 0.1, 0.3, 0.4]);
        assert_eq!((g.p0, g.q0, g.k_max), (0.5, 0.5, 100));
        assert_eq!(g.tol, 1e-12);
    }

    #[test]
    fn model_key_selects_the_model() {
        let cfg = parse_config(&format!("model = game\n{GAME}")).unwrap();
        assert_eq!(cfg.model.kind(), ModelKind::Game);
        assert!(matches!(
            parse_config(GAME).unwrap_err().as_slice(),
            [ConfigIssue::MissingKey { key }] if key == "model"
        ));
        let clash = issues(&format!("model = coop\n{GAME}"), ModelKind::Game);
        assert!(matches!(&clash[0], ConfigIssue::BadValue { key, .. } if key == "model"));
    }

    #[test]
    fn benefit_must_exceed_cost() {
        let text = GAME.replace("b = 3", "b = 1").replace("c = 1", "c = 3");
        let errs = issues(&text, ModelKind::Game);
        assert!(errs
            .iter()
            .any(|e| matches!(e, ConfigIssue::BadValue { key, line: 3, .. } if key == "b")));
    }

    #[test]
    fn reciprocity_must_lie_in_unit_interval() {
        let errs = issues(&GAME.replace("eps11 = 0.2", "eps11 = 1.5"), ModelKind::Game);
        assert_eq!(errs.len(), 1);
        assert!(matches!(&errs[0], ConfigIssue::BadValue { key, line: 5, .. } if key == "eps11"));
    }

    #[test]
    fn all_problems_are_reported() {
        let text = GAME
            .replace("eps11 = 0.2", "eps11 = abc")
            .replace("k_max = 100", "colour = blue")
            + "p0 = 0.3\nthis line is junk\n";
        let errs = issues(&text, ModelKind::Game);
        let has = |f: &dyn Fn(&ConfigIssue) -> bool| errs.iter().any(f);
        assert!(has(
            &|e| matches!(e, ConfigIssue::BadValue { key, .. } if key == "eps11")
        ));
        assert!(has(
            &|e| matches!(e, ConfigIssue::UnknownKey { key, line: 11 } if key == "colour")
        ));
        assert!(has(
            &|e| matches!(e, ConfigIssue::MissingKey { key } if key == "k_max")
        ));
        assert!(has(
            &|e| matches!(e, ConfigIssue::BadValue { key, .. } if key == "p0")
        ));
        assert!(has(&|e| matches!(e, ConfigIssue::Syntax { .. })));
        assert!(errs.len() >= 5);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let errs = issues(&GAME.replace("q0 = 0.5", "q0 = NaN"), ModelKind::Game);
        assert!(matches!(&errs[0], ConfigIssue::BadValue { key, .. } if key == "q0"));
    }

    #[test]
    fn coop_polynomials_and_defaults() {
        let text = "b = 3\nc = 1\nr_A = -0.5, 1, -1\nr_B = -0.5, 1, -1\ngamma_A = 1\ngamma_B = 1\nt_end = 0\n";
        let cfg = parse_config_as(text, Some(ModelKind::Coop)).unwrap();
        let ModelConfig::Coop(c) = cfg.model else {
            panic!("wrong model")
        };
        assert_eq!(c.a.growth.eval(0.5), -0.25);
        assert_eq!(c.a.initial, Polynomial(vec![1.0]));
        assert_eq!(c.n_cells, 400);
        let fate = coop::classify_fate(&c.model(), &FateOptions::default()).unwrap();
        assert!((fate.a.fitness - 0.75).abs() < 1e-10);
    }

    #[test]
    fn sweep_points_are_seeded() {
        let text = "b = 3\nc = 1\neps11 = 0.2\neps12 = 0.1\neps21 = 0.3\neps22 = 0.4\nn_points = 5\nk_max = 10\n";
        let ModelConfig::GameSweep(cfg) = parse_config_as(text, Some(ModelKind::GameSweep))
            .unwrap()
            .model
        else {
            panic!("wrong model")
        };
        assert_eq!(sweep_points(&cfg, 7), sweep_points(&cfg, 7));
        assert_ne!(sweep_points(&cfg, 7), sweep_points(&cfg, 8));
        assert!(sweep_points(&cfg, 7)
            .iter()
            .all(|&(p, q)| (0.01..0.99).contains(&p) && (0.01..0.99).contains(&q)));
        let grid = SweepConfig {
            random: false,
            ..cfg
        };
        assert_eq!(sweep_points(&grid, 0).len(), 25);
    }

    #[test]
    fn nplayer_broadcasts_scalar_reciprocity() {
        let text = "p0 = 0.1, 0.5, 0.9\neps1 = 0.3\neps2 = 0.2, 0.4, 0.6\nk_max = 5\n";
        let ModelConfig::NPlayer(cfg) = parse_config_as(text, Some(ModelKind::NPlayer))
            .unwrap()
            .model
        else {
            panic!("wrong model")
        };
        assert_eq!(cfg.eps_pairs, vec![(0.3, 0.2), (0.3, 0.4), (0.3, 0.6)]);
        let errs = issues(
            "p0 = 0.5\neps1 = 0.3\neps2 = 0.2\nk_max = 5\n",
            ModelKind::NPlayer,
        );
        assert!(matches!(&errs[0], ConfigIssue::BadValue { key, .. } if key == "p0"));
    }

    #[test]
    fn pde3d_defaults_and_forced_dt() {
        let cfg = parse_config_as("t_end = 1\ndt = 0.5\n", Some(ModelKind::Pde3d)).unwrap();
        let ModelConfig::Pde3d(c) = cfg.model else {
            panic!("wrong model")
        };
        assert_eq!(c.dims, [40, 40, 20]);
        assert_eq!(c.run.dt, Some(0.5));
        assert_eq!(c.advection, Advection::Plain);
    }

    #[test]
    fn polynomial_eval() {
        let p = Polynomial(vec![1.0, -2.0, 3.0]);
        assert_eq!(p.eval(0.0), 1.0);
        assert_eq!(p.eval(2.0), 1.0 - 4.0 + 12.0);
    }
}
