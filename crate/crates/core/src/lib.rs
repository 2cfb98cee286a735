//! Phenotype divergence and evolution of cooperation.
//!
//! Three models share one finite-volume toolkit:
//!
//! * [`phenotype3d`]: a population structured by viability, fecundity and
//!   plasticity, evolving under advection, anisotropic diffusion and a
//!   logistic reaction with nonlocal (total-mass) competition.
//! * [`game_dynamics`]: a repeated prisoner's dilemma where both players
//!   update their cooperation probability by reciprocity, with the complete
//!   fixed-point and stability analysis.
//! * [`coop_structured`]: two populations structured by cooperation
//!   probability, coupled through their mean cooperation levels, plus the
//!   analytic extinction / blow-up classification for the advection-free case.
//!
//! [`harness`] turns flat `key = value` configs into CSV artifacts; the
//! `coopdyn` binary in the sibling crate is a thin wrapper over it.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod coop_structured;
pub mod error;
pub mod game_dynamics;
pub mod harness;
pub mod lcg;
pub mod numerics;
pub mod phenotype3d;

pub use error::{Error, Result};
