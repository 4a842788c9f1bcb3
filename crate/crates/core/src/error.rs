use thiserror::Error;

use crate::expr::EvalError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid jump measure: {field}: {reason}")]
    InvalidMeasure { field: String, reason: String },

    #[error("quadrature for {what} did not stabilise under node doubling (last {value:e}, previous {previous:e})")]
    Quadrature {
        what: String,
        value: f64,
        previous: f64,
    },

    #[error("jump measure has infinite activity; set a small-jump cutoff so jumps below it are absorbed into the Gaussian coefficient")]
    InfiniteActivity,

    #[error("degenerate Levy process: varpi = 0 and the jump measure is zero")]
    DegenerateLevy,

    #[error("moment matrix ill-conditioned at column {column} (condition estimate {condition:e})")]
    IllConditioned { column: usize, condition: f64 },

    #[error("index {index} out of range (maximum {max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    Mismatch(String),

    #[error("|sigma({t}, {x})| = {value} exceeds the declared bound {bound}")]
    SigmaBound { t: f64, x: f64, value: f64, bound: f64 },

    #[error("non-finite value in {what} at t = {t}, x = {x}")]
    NonFinite { what: String, t: f64, x: f64 },

    #[error("expression evaluation failed: {0}")]
    Expr(#[from] EvalError),

    #[error("switching event at time {time} lies outside the path horizon [{start}, {end}]")]
    EventOutsideHorizon { time: f64, start: f64, end: f64 },

    #[error("switch count exceeded cap {cap} on path {path} (seed {seed})")]
    SwitchCap { path: usize, seed: u64, cap: usize },

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("obstacle projection did not converge within {sweeps} sweeps (non-free-loop violated numerically)")]
    ProjectionNoConvergence { sweeps: usize },

    #[error("explicit nonlocal step unstable: dt * jump intensity = {ratio} > 1; use at least {min_nt} time steps")]
    NonlocalCfl { ratio: f64, min_nt: usize },

    #[error("implicit solve failed at time index {step}: {reason}")]
    LinearSolve { step: usize, reason: String },

    #[error("monotone iterates decreased by {violation:e} at iteration {iteration} (mode {mode}, t = {t}, x = {x})")]
    MonotoneOrdering {
        iteration: usize,
        mode: usize,
        t: f64,
        x: f64,
        violation: f64,
    },

    #[error("{scheme} iteration did not converge in {iterations} iterations (last change {last_change:e})")]
    NoConvergence {
        scheme: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("Picard contraction factor >= 1 for 3 consecutive iterations ({factors:?}); refine the grid or check the declared Lipschitz constants")]
    ContractionFailure { factors: Vec<f64> },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("chain step from state {state} leaks mass {leak:e} outside the state range (tolerance {tolerance:e})")]
    ChainLeak {
        state: usize,
        leak: f64,
        tolerance: f64,
    },

    #[error("transition row {row} of step {step} is not stochastic: {reason}")]
    NotStochastic {
        step: usize,
        row: usize,
        reason: String,
    },

    #[error("DP fixed point not reached in {sweeps} sweeps at step {step}, state {state}")]
    DpNoConvergence {
        step: usize,
        state: usize,
        sweeps: usize,
    },

    #[error("policy enumeration needs {leaves:e} leaves, above the guard {guard:e}")]
    EnumerationGuard { leaves: f64, guard: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error("lambda search exceeded cap {cap} without the perturbed field becoming a supersolution")]
    LambdaSearch { cap: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
