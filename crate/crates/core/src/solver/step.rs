use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::switching::SwitchingSpec;

use super::operators::{solve_obstacle, Discretization, StepOperator, Workspace};
use super::SolverOptions;

/// Default tolerance of [`obstacle_project`].
pub const PROJ_TOL: f64 = 1e-12;

/// Smallest vector `≥ values` with `v_i ≥ max_{j≠i}(v_j − g_ij)`, by
/// Gauss–Seidel sweeps. `g` is the row-major `m × m` cost matrix at the node.
pub fn obstacle_project<S: Scalar>(values: &[S], g: &[S]) -> Result<Vec<S>> {
    let mut v = values.to_vec();
    obstacle_project_in_place(&mut v, g, S::lit(PROJ_TOL))?;
    Ok(v)
}

/// In-place [`obstacle_project`]; returns the number of sweeps.
pub fn obstacle_project_in_place<S: Scalar>(v: &mut [S], g: &[S], proj_tol: S) -> Result<usize> {
    let m = v.len();
    if g.len() != m * m {
        return Err(Error::Mismatch(format!("{m} values need an {m}x{m} cost matrix")));
    }
    for sweep in 1..=m + 1 {
        let mut changed = false;
        for i in 0..m {
            let mut best = v[i];
            for j in (0..m).filter(|&j| j != i) {
                best = best.max(v[j] - g[i * m + j]);
            }
            if best > v[i] {
                changed |= best - v[i] > proj_tol;
                v[i] = best;
            }
        }
        if !changed {
            return Ok(sweep);
        }
    }
    Err(Error::ProjectionNoConvergence { sweeps: m + 1 })
}

/// Switching data as seen by the scheme, optionally under the exponential
/// change of variables `û = e^{λt}u` used for nonincreasing coupling:
/// `F_j(t,x,ȳ) = e^{λt} f_j(t, x, e^{−λt}ȳ) − λy_j`, `ĝ = e^{λt}g`, `ĥ = e^{λT}h`.
#[derive(Clone, Copy)]
pub struct Problem<'a, S> {
    pub spec: &'a SwitchingSpec<S>,
    pub lambda: Option<S>,
}

impl<'a, S: Scalar> Problem<'a, S> {
    pub fn plain(spec: &'a SwitchingSpec<S>) -> Self {
        Self { spec, lambda: None }
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    fn weight(&self, t: S) -> S {
        self.lambda.map_or(S::one(), |l| (l * t).exp())
    }

    /// `y` is scratch space of length `m` holding the coupling argument; it is
    /// rescaled in place under the transform.
    pub fn driver(&self, i: usize, t: S, x: S, y: &mut [S]) -> Result<S> {
        match self.lambda {
            None => self.spec.driver(i, t, x, y),
            Some(l) => {
                let yi = y[i];
                let w = (l * t).exp();
                y.iter_mut().for_each(|v| *v /= w);
                Ok(w * self.spec.driver(i, t, x, y)? - l * yi)
            }
        }
    }

    pub fn cost(&self, i: usize, j: usize, t: S, x: S) -> Result<S> {
        Ok(self.weight(t) * self.spec.cost(i, j, t, x)?)
    }

    pub fn terminal(&self, i: usize, x: S) -> Result<S> {
        Ok(self.weight(self.spec.horizon) * self.spec.terminal(i, x)?)
    }

    /// Costs at every node of time level `k`, laid out `[(i·m + j)·(nx+1) + n]`.
    pub fn cost_slices(&self, disc: &Discretization<S>, k: usize, out: &mut Vec<S>) -> Result<()> {
        let (m, w) = (self.m(), disc.grid.nx + 1);
        let t = disc.grid.t(k);
        out.clear();
        out.resize(m * m * w, S::zero());
        for i in 0..m {
            for j in (0..m).filter(|&j| j != i) {
                for n in 0..w {
                    out[(i * m + j) * w + n] = self.cost(i, j, t, disc.grid.x(n))?;
                }
            }
        }
        Ok(())
    }

    /// `f_i(t_k, x_n, ȳ_n)` with `ȳ_n` read from `coupling[l][n]`.
    pub fn driver_slice(&self, disc: &Discretization<S>, i: usize, k: usize, coupling: &[&[S]], y: &mut [S], out: &mut [S]) -> Result<()> {
        let t = disc.grid.t(k);
        let coupled = self.spec.is_coupled();
        for (n, o) in out.iter_mut().enumerate() {
            if coupled {
                for (l, yl) in y.iter_mut().enumerate() {
                    *yl = coupling[l][n];
                }
            }
            *o = self.driver(i, t, disc.grid.x(n), y)?;
        }
        Ok(())
    }
}

/// `max_{j≠i}(u_j − g_ij)` at every node.
pub fn obstacle_of<S: Scalar>(i: usize, u: &[&[S]], costs: &[S], out: &mut [S]) {
    let m = u.len();
    let w = out.len();
    out.iter_mut().for_each(|v| *v = S::neg_infinity());
    for j in (0..m).filter(|&j| j != i) {
        let g = &costs[(i * m + j) * w..(i * m + j + 1) * w];
        for n in 0..w {
            out[n] = out[n].max(u[j][n] - g[n]);
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub mode_sweeps: usize,
    pub active_set_iterations: usize,
}

/// Reusable buffers for time stepping.
#[derive(Debug, Clone)]
pub struct StepState<S> {
    pub ws: Workspace<S>,
    pub rhs: Vec<Vec<S>>,
    pub f: Vec<S>,
    pub phi: Vec<S>,
    pub costs: Vec<S>,
    pub active: Vec<Vec<bool>>,
    pub y: Vec<S>,
    pub node: Vec<S>,
    pub node_g: Vec<S>,
}

impl<S: Scalar> StepState<S> {
    pub fn new(m: usize, width: usize) -> Self {
        Self {
            ws: Workspace::default(),
            rhs: vec![vec![S::zero(); width]; m],
            f: vec![S::zero(); width],
            phi: vec![S::zero(); width],
            costs: Vec::new(),
            active: vec![vec![false; width]; m],
            y: vec![S::zero(); m],
            node: vec![S::zero(); m],
            node_g: vec![S::zero(); m * m],
        }
    }
}

/// One backward step of the interconnected system at time index `k`:
/// `out[i]` receives `u_i(t_k)` from `next[i] = u_i(t_{k+1})`, with drivers
/// evaluated at `ȳ = coupling(t_{k+1})`. Modes are swept Gauss–Seidel style,
/// each solving its obstacle problem exactly, then projected nodewise.
#[allow(clippy::too_many_arguments)]
pub fn interconnected_step<S: Scalar>(
    problem: &Problem<'_, S>,
    disc: &Discretization<S>,
    op: &StepOperator<S>,
    k: usize,
    next: &[&[S]],
    coupling: &[&[S]],
    out: &mut [Vec<S>],
    st: &mut StepState<S>,
    opts: &SolverOptions,
) -> Result<StepStats> {
    let m = problem.m();
    let width = disc.grid.nx + 1;
    let mut stats = StepStats::default();
    for i in 0..m {
        problem.driver_slice(disc, i, k, coupling, &mut st.y, &mut st.f)?;
        op.rhs(next[i], &st.f, &mut st.rhs[i]);
        let it = solve_obstacle(op, &st.rhs[i], None, &mut out[i], &mut st.active[i], &mut st.ws, k)?;
        stats.active_set_iterations = stats.active_set_iterations.max(it);
    }
    if m == 1 {
        stats.mode_sweeps = 1;
        return Ok(stats);
    }
    problem.cost_slices(disc, k, &mut st.costs)?;
    let scale = out.iter().flatten().fold(S::one(), |acc, v| acc.max(v.abs()));
    let tol = S::lit(opts.inner_tol) * scale;
    let mut prev = vec![S::zero(); width];
    let mut converged = false;
    for sweep in 1..=opts.max_mode_sweeps {
        let mut change = S::zero();
        for i in 0..m {
            {
                let views: Vec<&[S]> = out.iter().map(|v| v.as_slice()).collect();
                obstacle_of(i, &views, &st.costs, &mut st.phi);
            }
            for n in 0..width {
                st.active[i][n] = st.phi[n] > out[i][n];
            }
            prev.copy_from_slice(&out[i]);
            let it = solve_obstacle(op, &st.rhs[i], Some(&st.phi), &mut out[i], &mut st.active[i], &mut st.ws, k)?;
            stats.active_set_iterations = stats.active_set_iterations.max(it);
            change = change.max(crate::scalar::max_abs_diff(&prev, &out[i]));
        }
        stats.mode_sweeps = sweep;
        if change <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            scheme: "mode sweep",
            iterations: opts.max_mode_sweeps,
            last_change: f64::NAN,
        });
    }
    let proj_tol = S::lit(opts.proj_tol);
    for n in 0..width {
        for i in 0..m {
            st.node[i] = out[i][n];
            for j in 0..m {
                st.node_g[i * m + j] = st.costs[(i * m + j) * width + n];
            }
        }
        obstacle_project_in_place(&mut st.node, &st.node_g, proj_tol)?;
        for i in 0..m {
            out[i][n] = st.node[i];
        }
    }
    Ok(stats)
}

/// Fields at `t_k` from fields at `t_{k+1}`; drivers see `coupling` (values at
/// `t_{k+1}` chosen by the outer scheme).
pub fn step_backward<S: Scalar>(
    fields_next: &[Vec<S>],
    coupling: &[Vec<S>],
    spec: &SwitchingSpec<S>,
    disc: &Discretization<S>,
    k: usize,
    opts: &SolverOptions,
) -> Result<Vec<Vec<S>>> {
    let m = spec.m;
    let width = disc.grid.nx + 1;
    if fields_next.len() != m || coupling.len() != m || fields_next.iter().chain(coupling).any(|f| f.len() != width) {
        return Err(Error::Mismatch(format!("expected {m} slices of {width} values")));
    }
    if k >= disc.grid.nt {
        return Err(Error::IndexOutOfRange {
            index: k,
            max: disc.grid.nt - 1,
        });
    }
    let problem = Problem::plain(spec);
    let op = disc.operator(k)?;
    let next: Vec<&[S]> = fields_next.iter().map(|v| v.as_slice()).collect();
    let coup: Vec<&[S]> = coupling.iter().map(|v| v.as_slice()).collect();
    let mut out = vec![vec![S::zero(); width]; m];
    let mut st = StepState::new(m, width);
    interconnected_step(&problem, disc, &op, k, &next, &coup, &mut out, &mut st, opts)?;
    Ok(out)
}
