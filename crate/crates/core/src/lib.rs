//! Optimal switching of a Lévy-driven diffusion with interconnected obstacles.
//!
//! The value functions solve a coupled system of integro-PDE obstacle
//! problems. [`solver`] discretizes that system on a grid, and [`oracle`]
//! solves a Markov chain surrogate by dynamic programming for cross-checks.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64` for the common case.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficient;
pub mod error;
pub mod expr;
pub mod levy;
pub mod oracle;
pub mod path;
pub mod quadrature;
pub mod scalar;
pub mod solver;
pub mod switching;
pub mod teugels;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Coefficient64 = coefficient::Coefficient<f64>;
pub type JumpMeasure64 = levy::JumpMeasure<f64>;
pub type LevyTriplet64 = levy::LevyTriplet<f64>;
pub type OrthonormalBasis64 = teugels::OrthonormalBasis<f64>;
pub type Dynamics64 = path::Dynamics<f64>;
pub type SimPath64 = path::SimPath<f64>;
pub type SwitchingSpec64 = switching::SwitchingSpec<f64>;
pub type Strategy64 = switching::Strategy<f64>;
pub type Grid64 = solver::Grid<f64>;
pub type ValueFields64 = solver::ValueFields<f64>;
pub type Discretization64 = solver::Discretization<f64>;
pub type ChainModel64 = oracle::ChainModel<f64>;

pub type LevyTriplet32 = levy::LevyTriplet<f32>;
pub type SwitchingSpec32 = switching::SwitchingSpec<f32>;
pub type ValueFields32 = solver::ValueFields<f32>;
