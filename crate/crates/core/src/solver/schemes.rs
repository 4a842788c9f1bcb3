use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::switching::{ensure_valid, probe_lattice, validate_spec, CouplingMonotonicity, SwitchingSpec};

use super::grid::{Diagnostics, ValueFields};
use super::operators::{solve_obstacle, Discretization};
use super::step::{interconnected_step, obstacle_of, obstacle_project_in_place, Problem, StepState, StepStats};
use super::SolverOptions;

/// Outer iteration used to resolve the coupling through `ȳ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Single backward sweep with the coupling argument taken from the
    /// solution itself at `t_{k+1}`.
    Direct,
    /// Increasing iteration from the lower envelope (nondecreasing coupling).
    Monotone,
    /// Fixed-point iteration of the frozen-coupling map.
    Picard,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Direct => "direct",
            Scheme::Monotone => "monotone",
            Scheme::Picard => "picard",
        }
    }
}

/// Builds the discretization and runs `scheme`.
pub fn solve<S: Scalar>(
    scheme: Scheme,
    spec: &SwitchingSpec<S>,
    dynamics: &crate::path::Dynamics<S>,
    levy: &crate::levy::LevyTriplet<S>,
    grid: super::Grid<S>,
    opts: &SolverOptions,
) -> Result<ValueFields<S>> {
    let disc = Discretization::new(dynamics, levy, grid, opts)?;
    solve_on(scheme, spec, &disc, opts)
}

/// As [`solve`] on an existing discretization.
pub fn solve_on<S: Scalar>(scheme: Scheme, spec: &SwitchingSpec<S>, disc: &Discretization<S>, opts: &SolverOptions) -> Result<ValueFields<S>> {
    match scheme {
        Scheme::Direct => solve_direct(spec, disc, opts),
        Scheme::Monotone => solve_monotone(spec, disc, opts),
        Scheme::Picard => solve_picard(spec, disc, opts),
    }
}

/// Structural checks on a lattice of grid points; failures block the solve.
pub fn preflight<S: Scalar>(spec: &SwitchingSpec<S>, disc: &Discretization<S>, opts: &SolverOptions) -> Result<()> {
    let g = &disc.grid;
    if (spec.horizon - g.t_end).abs() > S::lit(1e-12) * g.t_end {
        return Err(Error::Mismatch(format!("spec horizon {} differs from grid horizon {}", spec.horizon, g.t_end)));
    }
    if opts.validate {
        let points = probe_lattice(S::zero(), g.t_end, g.x_min, g.x_max, g.nt.min(8), g.nx.min(32));
        ensure_valid(&validate_spec(spec, &points)?)?;
    }
    Ok(())
}

fn terminal_fields<S: Scalar>(problem: &Problem<'_, S>, disc: &Discretization<S>) -> Result<ValueFields<S>> {
    let g = disc.grid;
    let mut fields = ValueFields::zeros(g, problem.m());
    for i in 0..problem.m() {
        for n in 0..=g.nx {
            fields.slice_mut(i, g.nt)[n] = problem.terminal(i, g.x(n))?;
        }
    }
    Ok(fields)
}

#[derive(Debug, Clone, Copy, Default)]
struct MarchStats {
    mode_sweeps: usize,
    active_set_iterations: usize,
}

impl MarchStats {
    fn absorb(&mut self, s: StepStats) {
        self.mode_sweeps = self.mode_sweeps.max(s.mode_sweeps);
        self.active_set_iterations = self.active_set_iterations.max(s.active_set_iterations);
    }
}

/// Backward sweep of the interconnected system. Drivers read `ȳ` from
/// `frozen` at `t_{k+1}`, or from the solution itself when `frozen` is `None`.
fn march<S: Scalar>(
    problem: &Problem<'_, S>,
    disc: &Discretization<S>,
    frozen: Option<&ValueFields<S>>,
    opts: &SolverOptions,
    stats: &mut MarchStats,
) -> Result<ValueFields<S>> {
    let m = problem.m();
    let g = disc.grid;
    let w = g.nx + 1;
    let mut fields = terminal_fields(problem, disc)?;
    let mut st = StepState::new(m, w);
    let mut next: Vec<Vec<S>> = (0..m).map(|i| fields.slice(i, g.nt).to_vec()).collect();
    let mut out = vec![vec![S::zero(); w]; m];
    for k in (0..g.nt).rev() {
        let op = disc.operator(k)?;
        let next_views: Vec<&[S]> = next.iter().map(|v| v.as_slice()).collect();
        let coupling: Vec<&[S]> = match frozen {
            Some(f) => (0..m).map(|i| f.slice(i, k + 1)).collect(),
            None => next_views.clone(),
        };
        let s = interconnected_step(problem, disc, &op, k, &next_views, &coupling, &mut out, &mut st, opts)?;
        stats.absorb(s);
        for i in 0..m {
            fields.slice_mut(i, k).copy_from_slice(&out[i]);
        }
        std::mem::swap(&mut next, &mut out);
    }
    Ok(fields)
}

/// One backward sweep; coupled drivers see the solution at `t_{k+1}`.
pub fn solve_direct<S: Scalar>(spec: &SwitchingSpec<S>, disc: &Discretization<S>, opts: &SolverOptions) -> Result<ValueFields<S>> {
    preflight(spec, disc, opts)?;
    let problem = Problem::plain(spec);
    let mut stats = MarchStats::default();
    let mut fields = march(&problem, disc, None, opts, &mut stats)?;
    fields.diagnostics = Diagnostics {
        scheme: Scheme::Direct.name().into(),
        outer_iterations: 1,
        ..Diagnostics::default()
    };
    finalize(&mut fields, spec, disc, opts, stats)?;
    Ok(fields)
}

#[derive(Clone, Copy)]
enum Envelope {
    Lower,
    Upper,
}

/// Obstacle-free single field with driver `min_j f_j(·, ū·1)` (or `max_j`) and
/// terminal `min_j h_j` (or `max_j`).
fn envelope<S: Scalar>(spec: &SwitchingSpec<S>, disc: &Discretization<S>, which: Envelope) -> Result<Vec<S>> {
    let g = disc.grid;
    let (m, w) = (spec.m, g.nx + 1);
    let pick = |a: S, b: S| match which {
        Envelope::Lower => a.min(b),
        Envelope::Upper => a.max(b),
    };
    let mut field = vec![S::zero(); (g.nt + 1) * w];
    for n in 0..w {
        let x = g.x(n);
        let mut v = spec.terminal(0, x)?;
        for i in 1..m {
            v = pick(v, spec.terminal(i, x)?);
        }
        field[g.nt * w + n] = v;
    }
    let mut f = vec![S::zero(); w];
    let mut rhs = vec![S::zero(); w];
    let mut out = vec![S::zero(); w];
    let mut active = vec![false; w];
    let mut ws = Default::default();
    let mut y = vec![S::zero(); m];
    for k in (0..g.nt).rev() {
        let op = disc.operator(k)?;
        let t = g.t(k);
        let next = field[(k + 1) * w..(k + 2) * w].to_vec();
        for n in 0..w {
            y.iter_mut().for_each(|v| *v = next[n]);
            let x = g.x(n);
            let mut v = spec.driver(0, t, x, &y)?;
            for i in 1..m {
                v = pick(v, spec.driver(i, t, x, &y)?);
            }
            f[n] = v;
        }
        op.rhs(&next, &f, &mut rhs);
        solve_obstacle(&op, &rhs, None, &mut out, &mut active, &mut ws, k)?;
        field[k * w..(k + 1) * w].copy_from_slice(&out);
    }
    Ok(field)
}

/// Increasing scheme: `u⁰` is the lower envelope; `u^n_j` solves the
/// single-obstacle problem with obstacle `max_k(u^{n−1}_k − g_jk)` and driver
/// `f_j(·, u^{n−1}` with the own slot taken from `u^n_j)`.
pub fn solve_monotone<S: Scalar>(spec: &SwitchingSpec<S>, disc: &Discretization<S>, opts: &SolverOptions) -> Result<ValueFields<S>> {
    preflight(spec, disc, opts)?;
    if spec.is_coupled() && spec.coupling != CouplingMonotonicity::Nondecreasing {
        return Err(Error::Unsupported(
            "the monotone scheme needs drivers declared nondecreasing in the other modes' values".into(),
        ));
    }
    let g = disc.grid;
    let (m, w) = (spec.m, g.nx + 1);
    let problem = Problem::plain(spec);
    let lower = envelope(spec, disc, Envelope::Lower)?;
    let upper = envelope(spec, disc, Envelope::Upper)?;
    let mut prev = ValueFields::zeros(g, m);
    for u in prev.u.iter_mut() {
        u.copy_from_slice(&lower);
    }

    let mut diag = Diagnostics {
        scheme: Scheme::Monotone.name().into(),
        ..Diagnostics::default()
    };
    let mut min_increase = f64::INFINITY;
    let mut upper_excess = f64::NEG_INFINITY;
    let mut stats = MarchStats::default();
    let mut f = vec![S::zero(); w];
    let mut rhs = vec![S::zero(); w];
    let mut phi = vec![S::zero(); w];
    let mut out = vec![S::zero(); w];
    let mut active = vec![false; w];
    let mut ws = Default::default();
    let mut y = vec![S::zero(); m];
    let mut costs = Vec::new();

    for iteration in 1..=opts.max_outer {
        let mut next = terminal_fields(&problem, disc)?;
        for j in 0..m {
            for k in (0..g.nt).rev() {
                let op = disc.operator(k)?;
                let own_next = next.slice(j, k + 1).to_vec();
                let coupling: Vec<&[S]> = (0..m)
                    .map(|l| if l == j { own_next.as_slice() } else { prev.slice(l, k + 1) })
                    .collect();
                problem.driver_slice(disc, j, k, &coupling, &mut y, &mut f)?;
                op.rhs(&own_next, &f, &mut rhs);
                let obstacle = if m > 1 {
                    problem.cost_slices(disc, k, &mut costs)?;
                    let views: Vec<&[S]> = (0..m).map(|l| prev.slice(l, k)).collect();
                    obstacle_of(j, &views, &costs, &mut phi);
                    for n in 0..w {
                        active[n] = phi[n] > out[n];
                    }
                    Some(phi.as_slice())
                } else {
                    None
                };
                let it = solve_obstacle(&op, &rhs, obstacle, &mut out, &mut active, &mut ws, k)?;
                stats.active_set_iterations = stats.active_set_iterations.max(it);
                next.slice_mut(j, k).copy_from_slice(&out);
            }
        }

        let scale = next.sup_norm().max(S::one()).as_f64();
        let order_tol = (opts.outer_tol * g.dt().as_f64()).max(1e-12) * scale;
        for j in 0..m {
            for (idx, (&a, &b)) in next.u[j].iter().zip(&prev.u[j]).enumerate() {
                let inc = (a - b).as_f64();
                min_increase = min_increase.min(inc);
                let excess = (a - upper[idx]).as_f64();
                upper_excess = upper_excess.max(excess);
                if inc < -order_tol || excess > order_tol {
                    let (k, n) = (idx / w, idx % w);
                    return Err(Error::MonotoneOrdering {
                        iteration,
                        mode: j,
                        t: g.t(k).as_f64(),
                        x: g.x(n).as_f64(),
                        violation: if inc < -order_tol { -inc } else { excess },
                    });
                }
            }
        }
        let change = next.distance(&prev).as_f64();
        diag.outer_changes.push(change);
        diag.outer_iterations = iteration;
        prev = next;
        if change <= opts.outer_tol * scale {
            // each mode saw the previous iterate's obstacle, so the stopped
            // iterate can sit below it by up to the last change
            project_fields(&mut prev, &problem, disc, opts)?;
            prev.diagnostics = Diagnostics {
                monotone_min_increase: Some(min_increase),
                monotone_upper_excess: Some(upper_excess),
                ..diag
            };
            finalize(&mut prev, spec, disc, opts, stats)?;
            return Ok(prev);
        }
    }
    Err(Error::NoConvergence {
        scheme: "monotone",
        iterations: opts.max_outer,
        last_change: diag.outer_changes.last().copied().unwrap_or(f64::NAN),
    })
}

/// Nodewise obstacle projection of every slice before `T`.
fn project_fields<S: Scalar>(fields: &mut ValueFields<S>, problem: &Problem<'_, S>, disc: &Discretization<S>, opts: &SolverOptions) -> Result<()> {
    let g = disc.grid;
    let (m, w) = (problem.m(), g.nx + 1);
    if m < 2 {
        return Ok(());
    }
    let mut costs = Vec::new();
    let mut node = vec![S::zero(); m];
    let mut node_g = vec![S::zero(); m * m];
    for k in 0..g.nt {
        problem.cost_slices(disc, k, &mut costs)?;
        for n in 0..w {
            for i in 0..m {
                node[i] = fields.slice(i, k)[n];
                for j in 0..m {
                    node_g[i * m + j] = costs[(i * m + j) * w + n];
                }
            }
            obstacle_project_in_place(&mut node, &node_g, S::lit(opts.proj_tol))?;
            for i in 0..m {
                fields.slice_mut(i, k)[n] = node[i];
            }
        }
    }
    Ok(())
}

/// `λ = m(1 + max_i C_i)`.
pub fn transform_lambda<S: Scalar>(spec: &SwitchingSpec<S>) -> S {
    let c = spec.lipschitz_y.iter().fold(S::zero(), |a, &b| a.max(b));
    S::of_usize(spec.m) * (S::one() + c)
}

/// Picard iteration `Γ^{n+1} = Θ(Γ^n)` from `Γ⁰ = 0`, where `Θ(Γ)` solves the
/// interconnected system with drivers frozen at `f(·, Γ(t_{k+1}))`.
/// Nonincreasing coupling is solved in the variables `e^{λt}u`.
pub fn solve_picard<S: Scalar>(spec: &SwitchingSpec<S>, disc: &Discretization<S>, opts: &SolverOptions) -> Result<ValueFields<S>> {
    preflight(spec, disc, opts)?;
    let g = disc.grid;
    let lambda = match spec.coupling {
        CouplingMonotonicity::Nonincreasing => Some(opts.lambda.map(S::lit).unwrap_or_else(|| transform_lambda(spec))),
        _ => None,
    };
    let problem = Problem { spec, lambda };
    let mut diag = Diagnostics {
        scheme: Scheme::Picard.name().into(),
        transform_lambda: lambda.map(|l| l.as_f64()),
        ..Diagnostics::default()
    };
    let mut stats = MarchStats::default();
    let mut gamma = ValueFields::zeros(g, spec.m);
    let mut above_one = 0;
    for iteration in 1..=opts.max_outer {
        let next = march(&problem, disc, Some(&gamma), opts, &mut stats)?;
        let change = next.distance(&gamma).as_f64();
        if let Some(&prev) = diag.outer_changes.last() {
            let rho = if prev > 0.0 { change / prev } else { 0.0 };
            diag.contraction_factors.push(rho);
            above_one = if rho >= 1.0 { above_one + 1 } else { 0 };
            if above_one >= 3 {
                return Err(Error::ContractionFailure {
                    factors: diag.contraction_factors.clone(),
                });
            }
        }
        diag.outer_changes.push(change);
        diag.outer_iterations = iteration;
        let scale = next.sup_norm().max(S::one()).as_f64();
        gamma = next;
        if change <= opts.outer_tol * scale {
            if let Some(l) = lambda {
                for k in 0..=g.nt {
                    let w = (-l * g.t(k)).exp();
                    for i in 0..spec.m {
                        gamma.slice_mut(i, k).iter_mut().for_each(|v| *v *= w);
                    }
                }
                // undo the rounding of e^{-λT}·e^{λT}h
                let plain = terminal_fields(&Problem::plain(spec), disc)?;
                for i in 0..spec.m {
                    gamma.slice_mut(i, g.nt).copy_from_slice(plain.slice(i, g.nt));
                }
            }
            gamma.diagnostics = diag;
            finalize(&mut gamma, spec, disc, opts, stats)?;
            return Ok(gamma);
        }
    }
    Err(Error::NoConvergence {
        scheme: "picard",
        iterations: opts.max_outer,
        last_change: diag.outer_changes.last().copied().unwrap_or(f64::NAN),
    })
}

fn finalize<S: Scalar>(
    fields: &mut ValueFields<S>,
    spec: &SwitchingSpec<S>,
    disc: &Discretization<S>,
    opts: &SolverOptions,
    stats: MarchStats,
) -> Result<()> {
    let g = disc.grid;
    let (m, w) = (spec.m, g.nx + 1);
    let d = &mut fields.diagnostics;
    d.max_mode_sweeps = stats.mode_sweeps;
    d.max_active_set_iterations = stats.active_set_iterations;
    d.leak_mass = disc.leak_mass;
    d.delta = disc.quad.delta.as_f64();
    d.jump_intensity = disc.quad.total_weight.as_f64();
    let scale = fields.sup_norm().max(S::one()).as_f64();
    let mut masks = vec![vec![false; (g.nt + 1) * w]; m];
    let mut min_margin = f64::INFINITY;
    if m > 1 {
        let problem = Problem::plain(spec);
        let mut costs = Vec::new();
        let mut phi = vec![S::zero(); w];
        for k in 0..=g.nt {
            problem.cost_slices(disc, k, &mut costs)?;
            let views: Vec<&[S]> = (0..m).map(|l| fields.slice(l, k)).collect();
            for i in 0..m {
                obstacle_of(i, &views, &costs, &mut phi);
                for n in 0..w {
                    let r1 = (views[i][n] - phi[n]).as_f64();
                    min_margin = min_margin.min(r1);
                    masks[i][k * w + n] = r1 <= 10.0 * opts.proj_tol * scale;
                }
            }
        }
    }
    let d = &mut fields.diagnostics;
    d.min_obstacle_margin = min_margin;
    d.active_fraction = masks
        .iter()
        .map(|mk| mk.iter().filter(|a| **a).count() as f64 / mk.len() as f64)
        .collect();
    d.active = masks;
    Ok(())
}
