use thiserror::Error;

/// Errors reported by the simulation modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("ZeroMass: total mass {mass:e} is below the extinction threshold")]
    ZeroMass { mass: f64 },

    #[error("ExtinctPopulation: population {population} lost all mass (total {mass:e})")]
    ExtinctPopulation { population: char, mass: f64 },

    #[error("EmptySupport: no cell center lies inside the initial bump (grid too coarse)")]
    EmptySupport,

    #[error("CflViolation: dt = {dt} exceeds the stability bound {bound}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("NonFiniteState: non-finite density at time {time}")]
    NonFiniteState { time: f64 },

    #[error("NotBalanced: e = {e:e} exceeds the balance tolerance {tol:e}")]
    NotBalanced { e: f64, tol: f64 },

    #[error("NoRootInRange: balanced fixed-point equation has no root in [0, 1]")]
    NoRootInRange,

    #[error("TooFewPlayers: need at least 2 players, got {n}")]
    TooFewPlayers { n: usize },

    #[error("NonUniqueMaximizer: growth rate of population {population} has competing maxima {first} and {second}")]
    NonUniqueMaximizer {
        population: char,
        first: f64,
        second: f64,
    },

    #[error(
        "RequiresNoAdvection: fate classification needs eps_A = eps_B = 0 and constant gamma, b, c"
    )]
    RequiresNoAdvection,

    #[error("InvalidParameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
