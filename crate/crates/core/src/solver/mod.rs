//! Backward time stepping for the interconnected obstacle system on a
//! space-time grid.

pub mod grid;
pub mod operators;
pub mod quad;
pub mod residual;
pub mod schemes;
pub mod step;

pub use grid::{Diagnostics, Grid, ValueFields};
pub use operators::{apply_local, apply_nonlocal, Discretization, StepOperator};
pub use quad::{build_quadrature, default_delta, QuadTables};
pub use residual::{
    lambda_search, perturb_fields, perturb_subsolution, perturb_supersolution, residual_check, residual_tolerance,
    LambdaReport, LambdaSearch, ResidualReport, Side,
};
pub use schemes::{solve, solve_direct, solve_on, solve_monotone, solve_picard, transform_lambda, Scheme};
pub use step::{obstacle_project, step_backward};

/// Tolerances and limits shared by the schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Slack of the nodewise obstacle projection.
    pub proj_tol: f64,
    /// Relative stopping tolerance of the mode sweeps within one time step.
    pub inner_tol: f64,
    /// Relative sup-norm stopping tolerance of the outer iteration.
    pub outer_tol: f64,
    pub max_outer: usize,
    pub max_mode_sweeps: usize,
    /// Largest jump mass allowed to leave the domain from the central half;
    /// `None` only records it.
    pub leak_tol: Option<f64>,
    /// Run the structural validators on a probe lattice before solving.
    pub validate: bool,
    /// Overrides the exponential weight used for nonincreasing coupling.
    pub lambda: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            proj_tol: step::PROJ_TOL,
            inner_tol: 1e-12,
            outer_tol: 1e-8,
            max_outer: 500,
            max_mode_sweeps: 10_000,
            leak_tol: Some(1e-3),
            validate: true,
            lambda: None,
        }
    }
}
