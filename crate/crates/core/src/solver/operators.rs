use crate::error::{Error, Result};
use crate::levy::LevyTriplet;
use crate::path::Dynamics;
use crate::scalar::Scalar;

use super::grid::Grid;
use super::quad::{build_quadrature, default_delta, QuadTables};
use super::SolverOptions;

fn half<S: Scalar>() -> S {
    S::lit(0.5)
}

/// `L¹u` on one time slice: upwinded drift `(E[L₁]σ + b)∂ₓ`, central
/// diffusion `½σ²ϖ²∂ₓₓ`, one-sided stencils at the two boundary nodes.
pub fn apply_local<S: Scalar>(u: &[S], grid: &Grid<S>, dynamics: &Dynamics<S>, levy: &LevyTriplet<S>, t: S) -> Result<Vec<S>> {
    check_len(u, grid)?;
    let mean = levy.mean_l1()?;
    let varpi2 = levy.varpi * levy.varpi;
    let nx = grid.nx;
    let h = grid.dx();
    let mut out = vec![S::zero(); nx + 1];
    for (n, o) in out.iter_mut().enumerate() {
        let x = grid.x(n);
        let sigma = dynamics.sigma(t, x)?;
        let mu = mean * sigma + dynamics.b(t, x)?;
        let diff = half::<S>() * sigma * sigma * varpi2;
        *o = mu * upwind_first(u, n, mu, h) + diff * second(u, n, h);
    }
    Ok(out)
}

/// Nonlocal term on one time slice: `½σ²s²(δ)∂ₓₓu` for small jumps plus
/// `Σ w_q [ũ(x + σy_q) − u(x) − σy_q ∂ₓu(x)]` over the large-jump nodes, with
/// `ũ` linear interpolation clamped flat outside the domain and `∂ₓ` central.
pub fn apply_nonlocal<S: Scalar>(u: &[S], grid: &Grid<S>, quad: &QuadTables<S>, dynamics: &Dynamics<S>, t: S) -> Result<Vec<S>> {
    check_len(u, grid)?;
    let nx = grid.nx;
    let h = grid.dx();
    let mut out = vec![S::zero(); nx + 1];
    for (n, o) in out.iter_mut().enumerate() {
        let x = grid.x(n);
        let sigma = dynamics.sigma(t, x)?;
        let mut v = half::<S>() * sigma * sigma * quad.s2 * second(u, n, h);
        if !quad.nodes.is_empty() {
            let ux = central_first(u, n, h);
            for &(y, w) in &quad.nodes {
                v += w * (interp_clamped(u, grid, x + sigma * y) - u[n] - ux * sigma * y);
            }
        }
        *o = v;
    }
    Ok(out)
}

fn check_len<S>(u: &[S], grid: &Grid<S>) -> Result<()> {
    if u.len() != grid.nx + 1 {
        return Err(Error::Mismatch(format!("slice has {} values, grid has {} nodes", u.len(), grid.nx + 1)));
    }
    Ok(())
}

fn upwind_first<S: Scalar>(u: &[S], n: usize, mu: S, h: S) -> S {
    let last = u.len() - 1;
    if n == 0 || (mu >= S::zero() && n < last) {
        (u[n + 1] - u[n]) / h
    } else {
        (u[n] - u[n - 1]) / h
    }
}

fn central_first<S: Scalar>(u: &[S], n: usize, h: S) -> S {
    let last = u.len() - 1;
    if n == 0 {
        (u[1] - u[0]) / h
    } else if n == last {
        (u[last] - u[last - 1]) / h
    } else {
        (u[n + 1] - u[n - 1]) / (h + h)
    }
}

fn second<S: Scalar>(u: &[S], n: usize, h: S) -> S {
    let last = u.len() - 1;
    let c = n.clamp(1, last - 1);
    (u[c - 1] - S::lit(2.0) * u[c] + u[c + 1]) / (h * h)
}

/// `u` at `x` by linear interpolation, flat outside the grid.
pub fn interp_clamped<S: Scalar>(u: &[S], grid: &Grid<S>, x: S) -> S {
    let (i, w) = Grid::locate(x, grid.x_min, grid.x_max, grid.nx);
    u[i] * (S::one() - w) + u[i + 1] * w
}

/// Implicit matrix `M = I − Δt L_imp` (tridiagonal after boundary
/// elimination) and the explicit jump stencil at one time level.
///
/// `L_imp` carries the drift `b + σ(E[L₁] − Σ w_q y_q)` upwinded and the
/// diffusion `½σ²(ϖ² + s²(δ))`; the explicit part is
/// `J u = Σ w_q [ũ(x + σy_q) − u(x)]`.
#[derive(Debug, Clone)]
pub struct StepOperator<S> {
    pub t: S,
    pub dt: S,
    pub a: Vec<S>,
    pub d: Vec<S>,
    pub c: Vec<S>,
    /// Boundary rows are combined with their neighbour: `r₀ ← r₀ − elim.0·r₁`,
    /// `r_N ← r_N − elim.1·r_{N−1}`.
    pub elim: (S, S),
    jump_weights: Vec<S>,
    jump_idx: Vec<u32>,
    jump_frac: Vec<S>,
}

impl<S: Scalar> StepOperator<S> {
    fn build(disc: &Discretization<S>, t: S) -> Result<Self> {
        let grid = &disc.grid;
        let nx = grid.nx;
        let (h, dt) = (grid.dx(), grid.dt());
        let comp = disc.mean_l1 - disc.quad.first_moment;
        let vol = disc.varpi2 + disc.quad.s2;
        let q = disc.quad.nodes.len();
        let mut op = Self {
            t,
            dt,
            a: vec![S::zero(); nx + 1],
            d: vec![S::zero(); nx + 1],
            c: vec![S::zero(); nx + 1],
            elim: (S::zero(), S::zero()),
            jump_weights: disc.quad.nodes.iter().map(|n| n.1).collect(),
            jump_idx: Vec::with_capacity((nx + 1) * q),
            jump_frac: Vec::with_capacity((nx + 1) * q),
        };
        let mut mu = vec![S::zero(); nx + 1];
        let mut dif = vec![S::zero(); nx + 1];
        for n in 0..=nx {
            let x = grid.x(n);
            let sigma = disc.dynamics.sigma(t, x)?;
            mu[n] = disc.dynamics.b(t, x)? + sigma * comp;
            dif[n] = half::<S>() * sigma * sigma * vol;
            for &(y, _) in &disc.quad.nodes {
                let (i, w) = Grid::locate(x + sigma * y, grid.x_min, grid.x_max, nx);
                op.jump_idx.push(i as u32);
                op.jump_frac.push(w);
            }
        }
        let (r, p) = (dt / (h * h), dt / h);
        let two = S::lit(2.0);
        for n in 1..nx {
            let (up, down) = (mu[n].max(S::zero()), (-mu[n]).max(S::zero()));
            op.a[n] = -(r * dif[n] + p * down);
            op.c[n] = -(r * dif[n] + p * up);
            op.d[n] = S::one() + two * r * dif[n] + p * (up + down);
        }
        // left: forward drift, one-sided second difference on (u0, u1, u2)
        let (d0, c0, e0) = (S::one() + p * mu[0] - r * dif[0], -p * mu[0] + two * r * dif[0], -r * dif[0]);
        if e0 != S::zero() && op.c[1] != S::zero() {
            let f = e0 / op.c[1];
            op.elim.0 = f;
            op.d[0] = d0 - f * op.a[1];
            op.c[0] = c0 - f * op.d[1];
        } else {
            op.d[0] = S::one() + p * mu[0];
            op.c[0] = -p * mu[0];
        }
        // right: backward drift, one-sided second difference on (u_{N-2}, u_{N-1}, u_N)
        let (dn, an, en) = (S::one() - p * mu[nx] - r * dif[nx], p * mu[nx] + two * r * dif[nx], -r * dif[nx]);
        if en != S::zero() && op.a[nx - 1] != S::zero() {
            let f = en / op.a[nx - 1];
            op.elim.1 = f;
            op.a[nx] = an - f * op.d[nx - 1];
            op.d[nx] = dn - f * op.c[nx - 1];
        } else {
            op.a[nx] = p * mu[nx];
            op.d[nx] = S::one() - p * mu[nx];
        }
        Ok(op)
    }

    /// `J u` at node `n`.
    pub fn jump_at(&self, u: &[S], n: usize) -> S {
        let q = self.jump_weights.len();
        let base = n * q;
        let mut v = S::zero();
        for (k, &w) in self.jump_weights.iter().enumerate() {
            let i = self.jump_idx[base + k] as usize;
            let f = self.jump_frac[base + k];
            v += w * (u[i] + (u[i + 1] - u[i]) * f - u[n]);
        }
        v
    }

    /// Right-hand side `u_next + Δt (J u_next + f)`, boundary rows combined.
    pub fn rhs(&self, u_next: &[S], f: &[S], out: &mut [S]) {
        let nx = out.len() - 1;
        let jumps = !self.jump_weights.is_empty();
        for n in 0..=nx {
            let j = if jumps { self.jump_at(u_next, n) } else { S::zero() };
            out[n] = u_next[n] + self.dt * (j + f[n]);
        }
        out[0] -= self.elim.0 * out[1];
        out[nx] -= self.elim.1 * out[nx - 1];
    }

    /// `(M u)_n`.
    pub fn apply_m(&self, u: &[S], n: usize) -> S {
        let mut v = self.d[n] * u[n];
        if n > 0 {
            v += self.a[n] * u[n - 1];
        }
        if n + 1 < u.len() {
            v += self.c[n] * u[n + 1];
        }
        v
    }
}

/// Scratch buffers for the tridiagonal and obstacle solves.
#[derive(Debug, Clone, Default)]
pub struct Workspace<S> {
    cp: Vec<S>,
    dp: Vec<S>,
}

fn thomas<S: Scalar>(
    op: &StepOperator<S>,
    rhs: &[S],
    obstacle: Option<(&[S], &[bool])>,
    u: &mut [S],
    ws: &mut Workspace<S>,
) -> std::result::Result<(), String> {
    let n = rhs.len();
    ws.cp.resize(n, S::zero());
    ws.dp.resize(n, S::zero());
    let row = |i: usize| -> (S, S, S, S) {
        match obstacle {
            Some((phi, active)) if active[i] => (S::zero(), S::one(), S::zero(), phi[i]),
            _ => (op.a[i], op.d[i], op.c[i], rhs[i]),
        }
    };
    let (_, d0, c0, r0) = row(0);
    if d0 == S::zero() {
        return Err("zero pivot in row 0".into());
    }
    ws.cp[0] = c0 / d0;
    ws.dp[0] = r0 / d0;
    for i in 1..n {
        let (a, d, c, r) = row(i);
        let denom = d - a * ws.cp[i - 1];
        if denom == S::zero() || !denom.is_finite() {
            return Err(format!("zero pivot in row {i}"));
        }
        ws.cp[i] = c / denom;
        ws.dp[i] = (r - a * ws.dp[i - 1]) / denom;
    }
    u[n - 1] = ws.dp[n - 1];
    for i in (0..n - 1).rev() {
        u[i] = ws.dp[i] - ws.cp[i] * u[i + 1];
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err("non-finite solution".into());
    }
    Ok(())
}

/// Solves `min(u − φ, M u − rhs) = 0` by active-set (Howard) iteration, or
/// `M u = rhs` when there is no obstacle. `active` carries the warm-start set
/// in and the final set out. Returns the number of linear solves.
pub fn solve_obstacle<S: Scalar>(
    op: &StepOperator<S>,
    rhs: &[S],
    obstacle: Option<&[S]>,
    u: &mut [S],
    active: &mut [bool],
    ws: &mut Workspace<S>,
    step: usize,
) -> Result<usize> {
    let fail = |reason: String| Error::LinearSolve { step, reason };
    let Some(phi) = obstacle else {
        active.iter_mut().for_each(|a| *a = false);
        thomas(op, rhs, None, u, ws).map_err(fail)?;
        return Ok(1);
    };
    let n = rhs.len();
    let scale = rhs.iter().chain(phi.iter()).fold(S::one(), |acc, v| acc.max(v.abs()));
    let tol = S::lit(1e-13) * scale;
    for it in 1..=n + 2 {
        thomas(op, rhs, Some((phi, active)), u, ws).map_err(fail)?;
        let mut changed = false;
        for i in 0..n {
            let flip = if active[i] {
                op.apply_m(u, i) - rhs[i] < -tol
            } else {
                u[i] - phi[i] < -tol
            };
            if flip {
                active[i] = !active[i];
                changed = true;
            }
        }
        if !changed {
            return Ok(it);
        }
    }
    Err(fail(format!("active-set iteration did not settle within {} solves", n + 2)))
}

/// Everything the time stepping needs that does not depend on the switching
/// data: grid with resolved `δ`, jump quadrature, and the dynamics.
#[derive(Clone)]
pub struct Discretization<S> {
    pub grid: Grid<S>,
    pub quad: QuadTables<S>,
    pub dynamics: Dynamics<S>,
    pub mean_l1: S,
    pub varpi2: S,
    /// Largest jump mass leaving the domain from nodes in the central half.
    pub leak_mass: f64,
    frozen: Option<StepOperator<S>>,
}

impl<S: Scalar> std::fmt::Debug for Discretization<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Discretization")
            .field("grid", &self.grid)
            .field("dynamics", &self.dynamics)
            .field("delta", &self.quad.delta)
            .field("jump_nodes", &self.quad.nodes.len())
            .field("leak_mass", &self.leak_mass)
            .finish()
    }
}

impl<S: Scalar> Discretization<S> {
    pub fn new(dynamics: &Dynamics<S>, levy: &LevyTriplet<S>, grid: Grid<S>, opts: &SolverOptions) -> Result<Self> {
        let delta = grid.delta.unwrap_or_else(|| default_delta(&grid, levy, dynamics.sigma_bound));
        let grid = Grid {
            delta: Some(delta),
            ..grid
        };
        let quad = build_quadrature(levy, delta)?;
        let intensity = quad.total_weight.as_f64();
        let ratio = grid.dt().as_f64() * intensity;
        if ratio > 1.0 {
            return Err(Error::NonlocalCfl {
                ratio,
                min_nt: (grid.t_end.as_f64() * intensity).ceil() as usize,
            });
        }
        let mut disc = Self {
            grid,
            quad,
            dynamics: dynamics.clone(),
            mean_l1: levy.mean_l1()?,
            varpi2: levy.varpi * levy.varpi,
            leak_mass: 0.0,
            frozen: None,
        };
        disc.leak_mass = disc.measure_leak()?;
        if let Some(tol) = opts.leak_tol {
            if disc.leak_mass > tol {
                return Err(Error::Validation(format!(
                    "domain [{}, {}] too narrow: jump mass {:e} leaves it from the central half (tolerance {tol:e})",
                    grid.x_min, grid.x_max, disc.leak_mass
                )));
            }
        }
        if !dynamics.b.depends_on_t() && !dynamics.sigma.depends_on_t() {
            disc.frozen = Some(StepOperator::build(&disc, S::zero())?);
        }
        Ok(disc)
    }

    fn measure_leak(&self) -> Result<f64> {
        let g = &self.grid;
        let quarter = g.nx / 4;
        let mut worst = 0.0f64;
        for t in [S::zero(), half::<S>() * g.t_end, g.t_end] {
            for n in quarter..=g.nx - quarter {
                let x = g.x(n);
                let sigma = self.dynamics.sigma(t, x)?;
                let leak: f64 = self
                    .quad
                    .nodes
                    .iter()
                    .filter(|&&(y, _)| {
                        let z = x + sigma * y;
                        z < g.x_min || z > g.x_max
                    })
                    .map(|&(_, w)| w.as_f64())
                    .sum();
                worst = worst.max(leak);
            }
        }
        Ok(worst)
    }

    /// Implicit operator at time index `k`.
    pub fn operator(&self, k: usize) -> Result<std::borrow::Cow<'_, StepOperator<S>>> {
        match &self.frozen {
            Some(op) => Ok(std::borrow::Cow::Borrowed(op)),
            None => Ok(std::borrow::Cow::Owned(StepOperator::build(self, self.grid.t(k))?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::JumpMeasure;

    fn grid() -> Grid<f64> {
        Grid::new(1.0, 10, -2.0, 2.0, 40).unwrap()
    }

    fn on_grid(f: impl Fn(f64) -> f64) -> Vec<f64> {
        grid().xs().into_iter().map(f).collect()
    }

    #[test]
    fn local_examples() {
        let g = grid();
        let bm = LevyTriplet::brownian(0.0, 1.0);
        let out = apply_local(&on_grid(|_| 3.0), &g, &Dynamics::constant(0.4, 1.0), &bm, 0.0).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        let out = apply_local(&on_grid(|x| x), &g, &Dynamics::constant(0.7, 0.0), &bm, 0.0).unwrap();
        assert!(out[1..40].iter().all(|v| (v - 0.7).abs() < 1e-12));
        let out = apply_local(&on_grid(|x| x * x), &g, &Dynamics::constant(0.0, 1.0), &bm, 0.0).unwrap();
        assert!(out[1..40].iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn nonlocal_examples() {
        let g = grid();
        let dynamics = Dynamics::constant(0.0, 1.0);
        let c = 0.5;
        let levy = LevyTriplet::new(0.0, 0.0, JumpMeasure::from_atoms([(c, 1.0)])).unwrap();
        let q = build_quadrature(&levy, 0.2).unwrap();
        let out = apply_nonlocal(&on_grid(|x| 2.0 * x - 1.0), &g, &q, &dynamics, 0.0).unwrap();
        assert!(out[..30].iter().all(|v| v.abs() < 1e-12));
        let out = apply_nonlocal(&on_grid(|x| x * x), &g, &q, &dynamics, 0.0).unwrap();
        // interior nodes whose jump target stays inside the domain
        assert!(out[1..30].iter().all(|v| (v - c * c).abs() < 1e-12), "{out:?}");
        let zero = build_quadrature(&LevyTriplet::brownian(0.0, 1.0), 0.2).unwrap();
        let out = apply_nonlocal(&on_grid(|x| x.sin()), &g, &zero, &dynamics, 0.0).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn obstacle_solve_matches_constraints() {
        let g = grid();
        let disc = Discretization::new(&Dynamics::constant(0.1, 1.0), &LevyTriplet::brownian(0.0, 1.0), g, &SolverOptions::default()).unwrap();
        let op = disc.operator(0).unwrap();
        let u_next = on_grid(|x| -x * x);
        let f = vec![0.0; 41];
        let mut rhs = vec![0.0; 41];
        op.rhs(&u_next, &f, &mut rhs);
        let phi = on_grid(|x| 0.5 - x.abs());
        let mut u = vec![0.0; 41];
        let mut active = vec![false; 41];
        let mut ws = Workspace::default();
        solve_obstacle(&op, &rhs, Some(&phi), &mut u, &mut active, &mut ws, 0).unwrap();
        for n in 0..41 {
            let gap = u[n] - phi[n];
            let res = op.apply_m(&u, n) - rhs[n];
            assert!(gap >= -1e-12 && res >= -1e-12 && gap.min(res).abs() < 1e-12, "node {n}: {gap} {res}");
        }
        assert!(active.iter().any(|a| *a));
    }
}
