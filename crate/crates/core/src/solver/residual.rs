use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::switching::SwitchingSpec;

use super::grid::ValueFields;
use super::operators::Discretization;
use super::step::{obstacle_of, Problem};
use super::SolverOptions;

/// Worst node of a residual scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRef {
    pub mode: usize,
    pub k: usize,
    pub n: usize,
    pub t: f64,
    pub x: f64,
}

/// Discrete residuals of the obstacle system at interior nodes (`0 < n < nx`,
/// `k < nt`).
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// `max |min(r₁, r₂)|`.
    pub max_residual: f64,
    pub max_at: Option<NodeRef>,
    /// `min min(r₁, r₂)`; the supersolution side.
    pub min_value: f64,
    /// `max min(r₁, r₂)`; the subsolution side.
    pub max_value: f64,
    /// `min r₁`; negative values are obstacle violations.
    pub min_r1: f64,
    pub min_r1_at: Option<NodeRef>,
    /// `max |r₂|` over nodes where `r₁ > 10·proj_tol·scale`.
    pub complementarity: f64,
    /// `10(Δx² + Δt)·max(1, ‖u‖∞)`.
    pub residual_tol: f64,
    /// Nodes where `r₁ ≤ 10·proj_tol·scale`, per mode, `[k·(nx+1) + n]` with
    /// `k < nt`.
    pub on_obstacle: Vec<Vec<bool>>,
    pub interior_nodes: usize,
}

impl ResidualReport {
    pub fn within_tolerance(&self) -> bool {
        self.max_residual <= self.residual_tol
    }

    pub fn complementarity_holds(&self) -> bool {
        self.complementarity <= self.residual_tol
    }
}

/// `10(Δx² + Δt)·max(1, ‖u‖∞)`.
pub fn residual_tolerance<S: Scalar>(fields: &ValueFields<S>) -> f64 {
    let g = &fields.grid;
    let (dx, dt) = (g.dx().as_f64(), g.dt().as_f64());
    10.0 * (dx * dx + dt) * fields.sup_norm().as_f64().max(1.0)
}

/// Evaluates `r₁ = u_i − max_{j≠i}(u_j − g_ij)` and
/// `r₂ = [(M u^k)_n − u^{k+1}_n − Δt(J u^{k+1} + f_i(t_k, x_n, u(t_{k+1})))]/Δt`
/// with the operators of the time stepping.
pub fn residual_check<S: Scalar>(
    fields: &ValueFields<S>,
    spec: &SwitchingSpec<S>,
    disc: &Discretization<S>,
    opts: &SolverOptions,
) -> Result<ResidualReport> {
    let g = disc.grid;
    if fields.grid.nx != g.nx || fields.grid.nt != g.nt || fields.m != spec.m {
        return Err(Error::Mismatch("fields do not match the grid or the number of modes".into()));
    }
    let (m, w) = (spec.m, g.nx + 1);
    let problem = Problem::plain(spec);
    let dt = g.dt();
    let scale = fields.sup_norm().as_f64().max(1.0);
    let active_tol = 10.0 * opts.proj_tol * scale;
    let mut report = ResidualReport {
        max_residual: 0.0,
        max_at: None,
        min_value: f64::INFINITY,
        max_value: f64::NEG_INFINITY,
        min_r1: f64::INFINITY,
        min_r1_at: None,
        complementarity: 0.0,
        residual_tol: residual_tolerance(fields),
        on_obstacle: vec![vec![false; g.nt * w]; m],
        interior_nodes: 0,
    };
    let mut costs = Vec::new();
    let mut phi = vec![S::zero(); w];
    let mut f = vec![S::zero(); w];
    let mut rhs = vec![S::zero(); w];
    let mut y = vec![S::zero(); m];
    for k in 0..g.nt {
        let op = disc.operator(k)?;
        let here: Vec<&[S]> = (0..m).map(|i| fields.slice(i, k)).collect();
        let next: Vec<&[S]> = (0..m).map(|i| fields.slice(i, k + 1)).collect();
        if m > 1 {
            problem.cost_slices(disc, k, &mut costs)?;
        }
        for i in 0..m {
            if m > 1 {
                obstacle_of(i, &here, &costs, &mut phi);
            }
            problem.driver_slice(disc, i, k, &next, &mut y, &mut f)?;
            op.rhs(next[i], &f, &mut rhs);
            for n in 1..g.nx {
                let node = NodeRef {
                    mode: i,
                    k,
                    n,
                    t: g.t(k).as_f64(),
                    x: g.x(n).as_f64(),
                };
                let r1 = if m > 1 { (here[i][n] - phi[n]).as_f64() } else { f64::INFINITY };
                let r2 = ((op.apply_m(here[i], n) - rhs[n]) / dt).as_f64();
                if !r2.is_finite() {
                    return Err(Error::NonFinite {
                        what: "residual".into(),
                        t: node.t,
                        x: node.x,
                    });
                }
                let r = r1.min(r2);
                report.interior_nodes += 1;
                report.min_value = report.min_value.min(r);
                report.max_value = report.max_value.max(r);
                if r.abs() > report.max_residual || report.max_at.is_none() {
                    report.max_residual = report.max_residual.max(r.abs());
                    report.max_at = Some(node);
                }
                if r1 < report.min_r1 {
                    report.min_r1 = r1;
                    report.min_r1_at = Some(node);
                }
                if r1 > active_tol {
                    report.complementarity = report.complementarity.max(r2.abs());
                } else {
                    report.on_obstacle[i][k * w + n] = true;
                }
            }
        }
    }
    Ok(report)
}

/// Which comparison face a perturbation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `u + θe^{−λt}(1 + |x|^{2γ+2})`, checked by `min min(r₁, r₂) ≥ −tol`.
    Super,
    /// `u − θe^{−λt}(1 + |x|^{2γ+2})`, checked by `max min(r₁, r₂) ≤ tol`.
    Sub,
}

/// Adds `±θe^{−λt}(1 + |x|^{2γ+2})` to every mode.
pub fn perturb_fields<S: Scalar>(fields: &ValueFields<S>, theta: f64, lambda: f64, gamma: f64, side: Side) -> ValueFields<S> {
    let mut out = fields.clone();
    if theta == 0.0 {
        return out;
    }
    let g = fields.grid;
    let sign = match side {
        Side::Super => 1.0,
        Side::Sub => -1.0,
    };
    for k in 0..=g.nt {
        let decay = (-lambda * g.t(k).as_f64()).exp();
        for n in 0..=g.nx {
            let x = g.x(n).as_f64();
            let bump = S::lit(sign * theta * decay * (1.0 + x.abs().powf(2.0 * gamma + 2.0)));
            for i in 0..fields.m {
                let s = out.slice_mut(i, k);
                s[n] += bump;
            }
        }
    }
    out
}

pub fn perturb_supersolution<S: Scalar>(fields: &ValueFields<S>, theta: f64, lambda: f64, gamma: f64) -> ValueFields<S> {
    perturb_fields(fields, theta, lambda, gamma, Side::Super)
}

pub fn perturb_subsolution<S: Scalar>(fields: &ValueFields<S>, theta: f64, lambda: f64, gamma: f64) -> ValueFields<S> {
    perturb_fields(fields, theta, lambda, gamma, Side::Sub)
}

/// Doubling search for the smallest tried `λ` at which the perturbed field has
/// the residual sign of its side.
#[derive(Debug, Clone, Copy)]
pub struct LambdaSearch {
    pub theta: f64,
    pub gamma: f64,
    pub lambda_start: f64,
    /// Largest `λ` tried before giving up.
    pub cap: f64,
    pub side: Side,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        Self {
            theta: 0.1,
            gamma: 0.0,
            lambda_start: 1.0,
            cap: (1u64 << 20) as f64,
            side: Side::Super,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LambdaReport {
    pub lambda0: f64,
    /// Residual tolerance of the unperturbed field.
    pub check_tol: f64,
    /// `(λ, bound)` for every trial: the minimum of `min(r₁, r₂)` on the
    /// supersolution side, the maximum on the subsolution side.
    pub trials: Vec<(f64, f64)>,
}

pub fn lambda_search<S: Scalar>(
    fields: &ValueFields<S>,
    spec: &SwitchingSpec<S>,
    disc: &Discretization<S>,
    opts: &SolverOptions,
    search: &LambdaSearch,
) -> Result<LambdaReport> {
    if !(search.theta > 0.0 && search.lambda_start > 0.0) {
        return Err(Error::InvalidInput("θ and the starting λ must be positive".into()));
    }
    let check_tol = residual_tolerance(fields);
    let mut trials = Vec::new();
    let mut lambda = search.lambda_start;
    while lambda <= search.cap {
        let v = perturb_fields(fields, search.theta, lambda, search.gamma, search.side);
        let r = residual_check(&v, spec, disc, opts)?;
        let (bound, ok) = match search.side {
            Side::Super => (r.min_value, r.min_value >= -check_tol),
            Side::Sub => (r.max_value, r.max_value <= check_tol),
        };
        trials.push((lambda, bound));
        if ok {
            return Ok(LambdaReport {
                lambda0: lambda,
                check_tol,
                trials,
            });
        }
        lambda *= 2.0;
    }
    Err(Error::LambdaSearch { cap: search.cap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::schemes::tests::{brownian_disc, spec};
    use crate::solver::{solve_direct, solve_picard};

    #[test]
    fn zero_solution_has_zero_residual() {
        let disc = brownian_disc(1.0, 10, 20);
        let s = spec(1.0, &["0", "0"], 0.5, &["0", "0"]);
        let u = solve_direct(&s, &disc, &SolverOptions::default()).unwrap();
        assert!(u.u.iter().flatten().all(|&v| v == 0.0));
        let r = residual_check(&u, &s, &disc, &SolverOptions::default()).unwrap();
        assert_eq!(r.max_residual, 0.0);
        assert_eq!(r.min_r1, 0.5);
        assert_eq!(r.interior_nodes, 2 * 10 * 19);
    }

    #[test]
    fn linear_solution_has_tiny_residual() {
        let disc = brownian_disc(1.0, 20, 80);
        let s = spec(1.0, &["0"], 0.0, &["x"]);
        let u = solve_direct(&s, &disc, &SolverOptions::default()).unwrap();
        let r = residual_check(&u, &s, &disc, &SolverOptions::default()).unwrap();
        assert!(r.max_residual <= 1e-6, "{}", r.max_residual);
    }

    #[test]
    fn constructed_violation_is_located() {
        let disc = brownian_disc(1.0, 10, 20);
        let s = spec(1.0, &["1", "1"], 0.5, &["0", "0"]);
        let mut u = solve_direct(&s, &disc, &SolverOptions::default()).unwrap();
        u.slice_mut(0, 3)[7] -= 1.0;
        let r = residual_check(&u, &s, &disc, &SolverOptions::default()).unwrap();
        assert!(r.min_r1 < 0.0);
        let at = r.min_r1_at.unwrap();
        assert_eq!((at.mode, at.k, at.n), (0, 3, 7));
    }

    #[test]
    fn converged_coupled_solution_is_complementary() {
        let disc = brownian_disc(1.0, 40, 80);
        let s = spec(1.0, &["1", "x"], 0.2, &["0", "0.05 * x"]);
        let opts = SolverOptions::default();
        let u = solve_picard(&s, &disc, &opts).unwrap();
        let r = residual_check(&u, &s, &disc, &opts).unwrap();
        assert!(r.min_r1 >= -1e-12);
        assert!(r.complementarity_holds(), "{} > {}", r.complementarity, r.residual_tol);
        assert!(r.within_tolerance());
        assert!(r.on_obstacle.iter().flatten().any(|&a| a));
    }

    #[test]
    fn perturbation_needs_a_finite_lambda() {
        let disc = brownian_disc(1.0, 20, 80);
        let s = spec(1.0, &["0"], 0.0, &["min(x^2, 4)"]);
        let opts = SolverOptions::default();
        let u = solve_direct(&s, &disc, &opts).unwrap();
        assert_eq!(perturb_supersolution(&u, 0.0, 3.0, 0.0).u, u.u);
        for side in [Side::Super, Side::Sub] {
            let search = LambdaSearch { side, ..LambdaSearch::default() };
            let rep = lambda_search(&u, &s, &disc, &opts, &search).unwrap();
            assert!(rep.lambda0 <= search.cap);
            let (_, bound) = *rep.trials.last().unwrap();
            match side {
                Side::Super => assert!(bound >= -rep.check_tol),
                Side::Sub => assert!(bound <= rep.check_tol),
            }
        }
    }
}
