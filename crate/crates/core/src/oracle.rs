//! Exact ground truth on small instances: switching on a finite Markov chain
//! solved by backward induction, and brute-force policy enumeration to check
//! the induction itself.

use crate::error::{Error, Result};
use crate::levy::{AbsRange, LevyTriplet};
use crate::path::Dynamics;
use crate::scalar::Scalar;
use crate::switching::{ensure_valid, validate_spec, SwitchingSpec};

/// Row tolerance of a stochastic matrix.
pub const ROW_TOL: f64 = 1e-12;
/// Default cap on the number of enumerated policies.
pub const ENUMERATION_GUARD: f64 = 1e7;
/// Poisson tail mass below which further jump counts are dropped.
const POISSON_TAIL: f64 = 1e-16;
/// Relative offset from a state below which mass is not split.
const SNAP: f64 = 1e-12;

/// Sparse row-stochastic matrix, one `(column, probability)` list per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub rows: Vec<Vec<(usize, S)>>,
}

impl<S: Scalar> Transition<S> {
    pub fn identity(n: usize) -> Self {
        Self {
            rows: (0..n).map(|s| vec![(s, S::one())]).collect(),
        }
    }

    pub fn from_dense(p: &[Vec<S>]) -> Self {
        Self {
            rows: p
                .iter()
                .map(|row| row.iter().enumerate().filter(|(_, &v)| v != S::zero()).map(|(j, &v)| (j, v)).collect())
                .collect(),
        }
    }

    pub fn dense(&self) -> Vec<Vec<S>> {
        let n = self.rows.len();
        self.rows
            .iter()
            .map(|row| {
                let mut d = vec![S::zero(); n];
                for &(j, p) in row {
                    d[j] += p;
                }
                d
            })
            .collect()
    }

    /// `Σ_{s′} P[s, s′] v[s′]`.
    pub fn expect(&self, s: usize, v: &[S]) -> S {
        self.rows[s].iter().fold(S::zero(), |acc, &(j, p)| acc + p * v[j])
    }

    fn check(&self, step: usize, n: usize) -> Result<()> {
        if self.rows.len() != n {
            return Err(Error::Mismatch(format!("transition of step {step} has {} rows for {n} states", self.rows.len())));
        }
        for (row, entries) in self.rows.iter().enumerate() {
            let fail = |reason: String| Error::NotStochastic { step, row, reason };
            let mut sum = 0.0;
            for &(j, p) in entries {
                if j >= n {
                    return Err(fail(format!("column {j} out of range")));
                }
                let p = p.as_f64();
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(fail(format!("entry {p} at column {j}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(fail(format!("row sum {sum}")));
            }
        }
        Ok(())
    }
}

/// Finite Markov chain on real states. `transitions` holds either one matrix
/// per step or a single matrix shared by all steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel<S> {
    pub states: Vec<S>,
    pub times: Vec<S>,
    pub transitions: Vec<Transition<S>>,
    /// Largest mass any row sent outside the state range before clamping.
    pub max_leak: f64,
}

impl<S: Scalar> ChainModel<S> {
    pub fn new(states: Vec<S>, times: Vec<S>, transitions: Vec<Transition<S>>) -> Result<Self> {
        if states.is_empty() || times.len() < 2 {
            return Err(Error::InvalidInput("a chain needs at least one state and two times".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("chain times must be strictly increasing".into()));
        }
        let steps = times.len() - 1;
        if transitions.len() != 1 && transitions.len() != steps {
            return Err(Error::Mismatch(format!("{} transitions for {steps} steps", transitions.len())));
        }
        for (k, p) in transitions.iter().enumerate() {
            p.check(k, states.len())?;
        }
        Ok(Self {
            states,
            times,
            transitions,
            max_leak: 0.0,
        })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn transition(&self, k: usize) -> &Transition<S> {
        &self.transitions[k.min(self.transitions.len() - 1)]
    }

    pub fn dt(&self, k: usize) -> S {
        self.times[k + 1] - self.times[k]
    }

    /// Every `(t_k, x_s)` of the chain.
    pub fn points(&self) -> Vec<(S, S)> {
        self.times.iter().flat_map(|&t| self.states.iter().map(move |&x| (t, x))).collect()
    }
}

/// Distribution of the jump part of `L` over `dt` for a finite atomic measure,
/// as merged `(sum of jumps, probability)` pairs.
fn jump_distribution(levy: &LevyTriplet<f64>, dt: f64) -> Vec<(f64, f64)> {
    let atoms: Vec<(f64, f64)> = levy.measure.atoms.iter().filter(|a| a.mass > 0.0).map(|a| (a.location, a.mass)).collect();
    let rate: f64 = atoms.iter().map(|a| a.1).sum();
    if rate == 0.0 {
        return vec![(0.0, 1.0)];
    }
    let mean = rate * dt;
    let mut out = Vec::new();
    let mut layer = vec![(0.0, 1.0)];
    let mut pn = (-mean).exp();
    let mut covered = 0.0;
    let mut n = 0u32;
    loop {
        out.extend(layer.iter().map(|&(z, q)| (z, q * pn)));
        covered += pn;
        if 1.0 - covered <= POISSON_TAIL || n > 200 {
            break;
        }
        n += 1;
        pn *= mean / n as f64;
        let mut next = Vec::with_capacity(layer.len() * atoms.len());
        for &(z, q) in &layer {
            for &(y, w) in &atoms {
                next.push((z + y, q * w / rate));
            }
        }
        layer = merge(next);
    }
    merge(out)
}

fn merge(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (z, q) in v {
        match out.last_mut() {
            Some(last) if (last.0 - z).abs() <= 1e-14 * (1.0 + z.abs()) => last.1 += q,
            _ => out.push((z, q)),
        }
    }
    out
}

/// Splits mass `q` at `z` between the two bracketing states (linear weights,
/// so the mean is preserved); mass beyond the ends goes to the end state and is
/// counted as leak.
fn deposit(states: &[f64], z: f64, q: f64, row: &mut [f64], leak: &mut f64) {
    let last = states.len() - 1;
    if z <= states[0] || z >= states[last] {
        let (end, edge) = if z <= states[0] { (0, states[0]) } else { (last, states[last]) };
        if (z - edge).abs() > 1e-12 * (1.0 + edge.abs()) {
            *leak += q;
        }
        row[end] += q;
        return;
    }
    let j = states.partition_point(|&s| s <= z) - 1;
    let (a, b) = (states[j], states[j + 1]);
    // land exactly on a node when rounding put `z` a hair beside it
    let w = match (z - a) / (b - a) {
        w if w < SNAP => 0.0,
        w if w > 1.0 - SNAP => 1.0,
        w => w,
    };
    row[j] += q * (1.0 - w);
    row[j + 1] += q * w;
}

/// Chain surrogate of one Euler step `x + bΔt + σΔL` per state.
///
/// The Gaussian part is a three-point law on multiples of the local state
/// spacing, with its variance reduced by the variance that linear splitting
/// adds, so mean and variance of every row match the Euler step whenever the
/// step variance exceeds the splitting variance. Jumps of a finite atomic
/// measure are enumerated exactly up to a negligible Poisson tail.
pub fn build_chain(
    dynamics: &Dynamics<f64>,
    levy: &LevyTriplet<f64>,
    states: Vec<f64>,
    times: Vec<f64>,
    leak_tol: f64,
) -> Result<ChainModel<f64>> {
    if levy.measure.density.is_some() {
        return Err(Error::Unsupported("chain construction needs a Lévy measure made of atoms".into()));
    }
    if states.len() < 2 || states.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("chain states must be strictly increasing with at least two entries".into()));
    }
    if times.len() < 2 {
        return Err(Error::InvalidInput("a chain needs at least two times".into()));
    }
    let small = levy.measure.pi_moment_in(1, AbsRange::below(1.0))?;
    let drift_l = levy.a - small;
    let varpi2 = levy.varpi * levy.varpi;
    let homogeneous = !dynamics.b.depends_on_t() && !dynamics.sigma.depends_on_t();
    let dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let uniform_dt = dts.iter().all(|&d| (d - dts[0]).abs() <= 1e-14 * dts[0]);
    let n_build = if homogeneous && uniform_dt { 1 } else { dts.len() };
    let ns = states.len();
    let quarter = ns / 4;
    let mut max_leak = 0.0f64;
    let mut transitions = Vec::with_capacity(n_build);
    let mut jumps_cache: Option<(f64, Vec<(f64, f64)>)> = None;
    for k in 0..n_build {
        let (t, dt) = (times[k], dts[k]);
        let jumps = match &jumps_cache {
            Some((d, j)) if *d == dt => j.clone(),
            _ => {
                let j = jump_distribution(levy, dt);
                jumps_cache = Some((dt, j.clone()));
                j
            }
        };
        let mut rows = Vec::with_capacity(ns);
        let mut dense = vec![0.0; ns];
        for (s, &x) in states.iter().enumerate() {
            dense.iter_mut().for_each(|v| *v = 0.0);
            let b = dynamics.b(t, x)?;
            let sigma = dynamics.sigma(t, x)?;
            let center = x + (b + sigma * drift_l) * dt;
            let var = sigma * sigma * varpi2 * dt;
            let mut leak = 0.0;
            for &(z, q) in &jumps {
                let c = center + sigma * z;
                if var == 0.0 {
                    deposit(&states, c, q, &mut dense, &mut leak);
                    continue;
                }
                let j = states.partition_point(|&v| v <= c).clamp(1, ns - 1);
                let h_grid = states[j] - states[j - 1];
                let w = ((c - states[j - 1]) / h_grid).clamp(0.0, 1.0);
                let split_var = w * (1.0 - w) * h_grid * h_grid;
                let h = h_grid * (var.sqrt() / h_grid).ceil().max(1.0);
                let p_side = ((var - split_var) / (2.0 * h * h)).max(0.0);
                deposit(&states, c - h, q * p_side, &mut dense, &mut leak);
                deposit(&states, c, q * (1.0 - 2.0 * p_side), &mut dense, &mut leak);
                deposit(&states, c + h, q * p_side, &mut dense, &mut leak);
            }
            if s >= quarter && s + quarter < ns {
                if leak > leak_tol {
                    return Err(Error::ChainLeak {
                        state: s,
                        leak,
                        tolerance: leak_tol,
                    });
                }
                max_leak = max_leak.max(leak);
            }
            rows.push(dense.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(j, &p)| (j, p)).collect());
        }
        transitions.push(Transition { rows });
    }
    let mut chain = ChainModel::new(states, times, transitions)?;
    chain.max_leak = max_leak;
    Ok(chain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Continue,
    SwitchTo(usize),
}

/// `values[i][k·S + s] = V_i(t_k, x_s)`, with the matching actions.
#[derive(Debug, Clone, PartialEq)]
pub struct DpResult<S> {
    pub m: usize,
    pub n_states: usize,
    pub values: Vec<Vec<S>>,
    pub actions: Vec<Vec<Action>>,
}

impl<S: Scalar> DpResult<S> {
    pub fn value(&self, i: usize, k: usize, s: usize) -> S {
        self.values[i][k * self.n_states + s]
    }

    pub fn action(&self, i: usize, k: usize, s: usize) -> Action {
        self.actions[i][k * self.n_states + s]
    }
}

/// Backward induction
/// `V_i(t_k) = max(f_iΔt + E[V_i(t_{k+1})], max_{j≠i}(V_j(t_k) − g_ij))`,
/// with the simultaneous system at each node settled by Jacobi sweeps and
/// coupled drivers reading `V(t_{k+1})` at the same state.
pub fn dp_solve<S: Scalar>(chain: &ChainModel<S>, spec: &SwitchingSpec<S>) -> Result<DpResult<S>> {
    ensure_valid(&validate_spec(spec, &chain.points())?)?;
    let (m, ns, nk) = (spec.m, chain.states.len(), chain.steps());
    let mut values = vec![vec![S::zero(); (nk + 1) * ns]; m];
    let mut actions = vec![vec![Action::Continue; (nk + 1) * ns]; m];
    for i in 0..m {
        for (s, &x) in chain.states.iter().enumerate() {
            values[i][nk * ns + s] = spec.terminal(i, x)?;
        }
    }
    let mut y = vec![S::zero(); m];
    let mut cont = vec![S::zero(); m];
    let mut cur = vec![S::zero(); m];
    let mut g = vec![S::zero(); m * m];
    for k in (0..nk).rev() {
        let (t, dt) = (chain.times[k], chain.dt(k));
        let p = chain.transition(k);
        for (s, &x) in chain.states.iter().enumerate() {
            for j in 0..m {
                y[j] = values[j][(k + 1) * ns + s];
            }
            for i in 0..m {
                let next = &values[i][(k + 1) * ns..(k + 2) * ns];
                cont[i] = spec.driver(i, t, x, &y)? * dt + p.expect(s, next);
                for j in 0..m {
                    g[i * m + j] = spec.cost(i, j, t, x)?;
                }
            }
            cur.copy_from_slice(&cont);
            let mut settled = false;
            for _ in 0..=m {
                let prev = cur.clone();
                for i in 0..m {
                    let mut v = cont[i];
                    for j in (0..m).filter(|&j| j != i) {
                        v = v.max(prev[j] - g[i * m + j]);
                    }
                    cur[i] = v;
                }
                if cur == prev {
                    settled = true;
                    break;
                }
            }
            if !settled {
                return Err(Error::DpNoConvergence {
                    step: k,
                    state: s,
                    sweeps: m + 1,
                });
            }
            for i in 0..m {
                values[i][k * ns + s] = cur[i];
                let target = (0..m).filter(|&j| j != i).find(|&j| cur[j] - g[i * m + j] == cur[i]);
                actions[i][k * ns + s] = target.map_or(Action::Continue, Action::SwitchTo);
            }
        }
    }
    Ok(DpResult {
        m,
        n_states: ns,
        values,
        actions,
    })
}

/// Result of brute-force enumeration. A policy maps `(k, s, i)` at index
/// `(k·S + s)·m + i` to the mode occupied on `[t_k, t_{k+1})` when arriving
/// there in mode `i`; the move is charged at the cheapest chain of switches.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration<S> {
    /// `values[i][s]`: best value at `t_0` starting in mode `i` at state `s`.
    pub values: Vec<Vec<S>>,
    /// An optimal policy per start, same layout as `values`.
    pub policies: Vec<Vec<Vec<usize>>>,
    pub policies_evaluated: u64,
}

/// Cheapest cost of reaching `j` from `i` through any chain of switches.
fn chained_costs<S: Scalar>(spec: &SwitchingSpec<S>, t: S, x: S) -> Result<Vec<S>> {
    let m = spec.m;
    let mut d = vec![S::zero(); m * m];
    for i in 0..m {
        for j in 0..m {
            d[i * m + j] = spec.cost(i, j, t, x)?;
        }
    }
    for l in 0..m {
        for i in 0..m {
            for j in 0..m {
                let via = d[i * m + l] + d[l * m + j];
                if via < d[i * m + j] {
                    d[i * m + j] = via;
                }
            }
        }
    }
    Ok(d)
}

/// Evaluates every feedback policy by exact expectation over the chain and
/// keeps the best per start. Drivers must not depend on `ȳ`.
pub fn enumerate_strategies<S: Scalar>(chain: &ChainModel<S>, spec: &SwitchingSpec<S>, guard: f64) -> Result<Enumeration<S>> {
    if spec.is_coupled() {
        return Err(Error::Unsupported("policy enumeration needs drivers that do not depend on ȳ".into()));
    }
    ensure_valid(&validate_spec(spec, &chain.points())?)?;
    let (m, ns, nk) = (spec.m, chain.states.len(), chain.steps());
    let slots = nk * ns * m;
    let leaves = (m as f64).powi(slots as i32);
    if leaves > guard {
        return Err(Error::EnumerationGuard { leaves, guard });
    }
    let mut reward = vec![S::zero(); slots];
    let mut cost = vec![S::zero(); nk * ns * m * m];
    for k in 0..nk {
        let (t, dt) = (chain.times[k], chain.dt(k));
        for (s, &x) in chain.states.iter().enumerate() {
            let d = chained_costs(spec, t, x)?;
            cost[(k * ns + s) * m * m..(k * ns + s + 1) * m * m].copy_from_slice(&d);
            for i in 0..m {
                reward[(k * ns + s) * m + i] = spec.driver(i, t, x, &[])? * dt;
            }
        }
    }
    let terminal: Vec<Vec<S>> = (0..m)
        .map(|i| chain.states.iter().map(|&x| spec.terminal(i, x)).collect::<Result<_>>())
        .collect::<Result<_>>()?;

    let mut best: Vec<Vec<Option<S>>> = vec![vec![None; ns]; m];
    let mut best_policy = vec![vec![Vec::new(); ns]; m];
    let mut policy = vec![0usize; slots];
    // J[k][j][s]: value of occupying mode j on [t_k, t_{k+1}) at state s
    let mut occupy = vec![vec![S::zero(); ns]; m];
    let mut arrive = terminal.clone();
    let mut evaluated = 0u64;
    loop {
        arrive.clone_from(&terminal);
        for k in (0..nk).rev() {
            let p = chain.transition(k);
            for j in 0..m {
                for s in 0..ns {
                    occupy[j][s] = reward[(k * ns + s) * m + j] + p.expect(s, &arrive[j]);
                }
            }
            for i in 0..m {
                for s in 0..ns {
                    let j = policy[(k * ns + s) * m + i];
                    let c = if j == i { S::zero() } else { cost[((k * ns + s) * m + i) * m + j] };
                    arrive[i][s] = occupy[j][s] - c;
                }
            }
        }
        evaluated += 1;
        for i in 0..m {
            for s in 0..ns {
                let v = arrive[i][s];
                if best[i][s].is_none_or(|b| v > b) {
                    best[i][s] = Some(v);
                    best_policy[i][s].clone_from(&policy);
                }
            }
        }
        // odometer over the policy table
        let mut pos = 0;
        while pos < slots {
            policy[pos] += 1;
            if policy[pos] < m {
                break;
            }
            policy[pos] = 0;
            pos += 1;
        }
        if pos == slots {
            break;
        }
    }
    Ok(Enumeration {
        values: best.into_iter().map(|row| row.into_iter().map(|v| v.expect("at least one policy")).collect()).collect(),
        policies: best_policy,
        policies_evaluated: evaluated,
    })
}
