//! Switching problem data `(m, f_i, g_ij, h_i)`, structural validators,
//! strategies and their Monte Carlo evaluation.
//!
//! Modes are 0-based in code (`0..m`). The problem is a maximization:
//! `J = E[∫ f_{a(s)} ds − A_T + h_{a_T}(X_T)]`.

use rand::Rng;

use crate::coefficient::Coefficient;
use crate::error::{Error, Result};
use crate::levy::LevyTriplet;
use crate::path::{path_rng, simulate_path_with, uniform_times, Dynamics, SimPath};
use crate::scalar::Scalar;
use crate::solver::ValueFields;

/// Cycle sums at or below this value count as free loops.
pub const NO_FREE_LOOP_TOL: f64 = 1e-12;

/// Default switch-count cap is `SWITCH_CAP_PER_MODE · m` per path.
pub const SWITCH_CAP_PER_MODE: usize = 10;

/// Declared direction of `f_i` in `y_k`, `k ≠ i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouplingMonotonicity {
    Nondecreasing,
    Nonincreasing,
    #[default]
    None,
}

impl CouplingMonotonicity {
    pub fn name(self) -> &'static str {
        match self {
            CouplingMonotonicity::Nondecreasing => "nondecreasing",
            CouplingMonotonicity::Nonincreasing => "nonincreasing",
            CouplingMonotonicity::None => "none",
        }
    }
}

#[derive(Clone)]
pub struct SwitchingSpec<S> {
    pub m: usize,
    /// Terminal time `T`.
    pub horizon: S,
    /// `f_i(t, x, ȳ)`
    pub drivers: Vec<Coefficient<S>>,
    /// `g_ij(t, x)`; the diagonal is never evaluated.
    pub costs: Vec<Vec<Coefficient<S>>>,
    /// `h_i(x)`
    pub terminals: Vec<Coefficient<S>>,
    pub coupling: CouplingMonotonicity,
    /// Lipschitz constants `C_i` of `f_i` in `ȳ`.
    pub lipschitz_y: Vec<S>,
}

impl<S: Scalar> std::fmt::Debug for SwitchingSpec<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SwitchingSpec")
            .field("m", &self.m)
            .field("horizon", &self.horizon)
            .field("drivers", &self.drivers)
            .field("costs", &self.costs)
            .field("terminals", &self.terminals)
            .field("coupling", &self.coupling)
            .field("lipschitz_y", &self.lipschitz_y)
            .finish()
    }
}

impl<S: Scalar> SwitchingSpec<S> {
    pub fn new(
        horizon: S,
        drivers: Vec<Coefficient<S>>,
        costs: Vec<Vec<Coefficient<S>>>,
        terminals: Vec<Coefficient<S>>,
    ) -> Result<Self> {
        let m = drivers.len();
        if m == 0 {
            return Err(Error::InvalidInput("at least one mode is required".into()));
        }
        if terminals.len() != m || costs.len() != m || costs.iter().any(|row| row.len() != m) {
            return Err(Error::Mismatch(format!(
                "{m} drivers need {m} terminals and an {m}x{m} cost matrix"
            )));
        }
        for (i, row) in costs.iter().enumerate() {
            if !row[i].is_zero_constant() {
                return Err(Error::InvalidInput(format!("g[{i}][{i}] must be 0")));
            }
        }
        if !(horizon > S::zero() && horizon.is_finite()) {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        for (i, d) in drivers.iter().enumerate() {
            if let Coefficient::Expr(e) = d {
                if e.max_y_index() > m {
                    return Err(Error::InvalidInput(format!(
                        "driver {i} references y{} but there are only {m} modes",
                        e.max_y_index()
                    )));
                }
            }
        }
        Ok(Self {
            m,
            horizon,
            drivers,
            costs,
            terminals,
            coupling: CouplingMonotonicity::None,
            lipschitz_y: vec![S::zero(); m],
        })
    }

    /// Constant data: `f_i ≡ f[i]`, `g_ij ≡ g[i][j]`, `h_i ≡ h[i]`.
    pub fn constant(horizon: f64, f: &[f64], g: &[Vec<f64>], h: &[f64]) -> Result<Self> {
        Self::new(
            S::lit(horizon),
            f.iter().map(|&v| Coefficient::constant(v)).collect(),
            g.iter().map(|row| row.iter().map(|&v| Coefficient::constant(v)).collect()).collect(),
            h.iter().map(|&v| Coefficient::constant(v)).collect(),
        )
    }

    pub fn with_coupling(mut self, coupling: CouplingMonotonicity, lipschitz_y: Vec<S>) -> Result<Self> {
        if lipschitz_y.len() != self.m {
            return Err(Error::Mismatch(format!("expected {} Lipschitz constants", self.m)));
        }
        self.coupling = coupling;
        self.lipschitz_y = lipschitz_y;
        Ok(self)
    }

    /// Any driver depends on `ȳ`.
    pub fn is_coupled(&self) -> bool {
        self.drivers.iter().any(|d| d.depends_on_y())
    }

    pub fn driver(&self, i: usize, t: S, x: S, y: &[S]) -> Result<S> {
        finite("driver", self.drivers[i].eval(t, x, y)?, t, x)
    }

    pub fn cost(&self, i: usize, j: usize, t: S, x: S) -> Result<S> {
        if i == j {
            return Ok(S::zero());
        }
        finite("switching cost", self.costs[i][j].eval(t, x, &[])?, t, x)
    }

    pub fn terminal(&self, i: usize, x: S) -> Result<S> {
        finite("terminal payoff", self.terminals[i].eval(self.horizon, x, &[])?, self.horizon, x)
    }

    /// Row-major `m × m` cost matrix at `(t, x)`.
    pub fn cost_matrix(&self, t: S, x: S, out: &mut Vec<S>) -> Result<()> {
        out.clear();
        for i in 0..self.m {
            for j in 0..self.m {
                out.push(self.cost(i, j, t, x)?);
            }
        }
        Ok(())
    }
}

fn finite<S: Scalar>(what: &str, v: S, t: S, x: S) -> Result<S> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            t: t.as_f64(),
            x: x.as_f64(),
        })
    }
}

/// Where a validator found its worst margin.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportLocation {
    pub t: f64,
    pub x: f64,
    /// Modes involved (the cycle, or the offending mode).
    pub modes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub check: &'static str,
    pub passed: bool,
    /// Smallest margin seen; negative or zero margins fail.
    pub worst_margin: f64,
    pub location: Option<ReportLocation>,
    pub detail: String,
}

impl ValidationReport {
    fn vacuous(check: &'static str) -> Self {
        Self {
            check,
            passed: true,
            worst_margin: f64::INFINITY,
            location: None,
            detail: "vacuous".into(),
        }
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::Validation(format!("{}: {}", self.check, self.detail)))
        }
    }
}

/// Fails with the first failing report.
pub fn ensure_valid(reports: &[ValidationReport]) -> Result<()> {
    for r in reports {
        r.clone().into_result()?;
    }
    Ok(())
}

/// All simple directed cycles of the complete digraph on `0..m`, each listed
/// once starting from its smallest vertex.
pub fn simple_cycles(m: usize) -> Vec<Vec<usize>> {
    fn extend(start: usize, m: usize, path: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if path.len() >= 2 {
            out.push(path.clone());
        }
        for v in start + 1..m {
            if !used[v] {
                used[v] = true;
                path.push(v);
                extend(start, m, path, used, out);
                path.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    for s in 0..m {
        let mut used = vec![false; m];
        used[s] = true;
        extend(s, m, &mut vec![s], &mut used, &mut out);
    }
    out
}

/// Every simple cycle of switching costs must have a positive total at every
/// sample point.
pub fn validate_no_free_loop<S: Scalar>(spec: &SwitchingSpec<S>, points: &[(S, S)]) -> Result<ValidationReport> {
    const CHECK: &str = "non-free-loop";
    if spec.m < 2 {
        return Ok(ValidationReport::vacuous(CHECK));
    }
    let cycles = simple_cycles(spec.m);
    let mut g = Vec::new();
    let mut worst = f64::INFINITY;
    let mut location = None;
    for &(t, x) in points {
        spec.cost_matrix(t, x, &mut g)?;
        for c in &cycles {
            let sum: f64 = (0..c.len())
                .map(|k| g[c[k] * spec.m + c[(k + 1) % c.len()]].as_f64())
                .sum();
            if sum < worst {
                worst = sum;
                location = Some(ReportLocation {
                    t: t.as_f64(),
                    x: x.as_f64(),
                    modes: c.clone(),
                });
            }
        }
    }
    let passed = worst > NO_FREE_LOOP_TOL;
    let detail = match &location {
        Some(l) => format!("minimal cycle sum {worst} on cycle {:?} at (t, x) = ({}, {})", l.modes, l.t, l.x),
        None => "no sample points".into(),
    };
    Ok(ValidationReport {
        check: CHECK,
        passed,
        worst_margin: worst,
        location,
        detail,
    })
}

/// `h_i(x) ≥ max_{j≠i}(h_j(x) − g_ij(T, x))` at every sample.
pub fn validate_consistency<S: Scalar>(spec: &SwitchingSpec<S>, xs: &[S]) -> Result<ValidationReport> {
    const CHECK: &str = "terminal consistency";
    if spec.m < 2 {
        return Ok(ValidationReport::vacuous(CHECK));
    }
    let t = spec.horizon;
    let mut worst = f64::INFINITY;
    let mut location = None;
    for &x in xs {
        let h: Vec<S> = (0..spec.m).map(|i| spec.terminal(i, x)).collect::<Result<_>>()?;
        for i in 0..spec.m {
            for j in (0..spec.m).filter(|&j| j != i) {
                let margin = (h[i] - (h[j] - spec.cost(i, j, t, x)?)).as_f64();
                if margin < worst {
                    worst = margin;
                    location = Some(ReportLocation {
                        t: t.as_f64(),
                        x: x.as_f64(),
                        modes: vec![i, j],
                    });
                }
            }
        }
    }
    let passed = worst >= -NO_FREE_LOOP_TOL;
    let detail = match &location {
        Some(l) => format!("worst margin {worst} for mode {} against {} at x = {}", l.modes[0], l.modes[1], l.x),
        None => "no sample points".into(),
    };
    Ok(ValidationReport {
        check: CHECK,
        passed,
        worst_margin: worst,
        location,
        detail,
    })
}

/// `g_ij ≥ 0` at every sample.
pub fn validate_costs_nonnegative<S: Scalar>(spec: &SwitchingSpec<S>, points: &[(S, S)]) -> Result<ValidationReport> {
    const CHECK: &str = "nonnegative costs";
    if spec.m < 2 {
        return Ok(ValidationReport::vacuous(CHECK));
    }
    let mut worst = f64::INFINITY;
    let mut location = None;
    for &(t, x) in points {
        for i in 0..spec.m {
            for j in (0..spec.m).filter(|&j| j != i) {
                let g = spec.cost(i, j, t, x)?.as_f64();
                if g < worst {
                    worst = g;
                    location = Some(ReportLocation {
                        t: t.as_f64(),
                        x: x.as_f64(),
                        modes: vec![i, j],
                    });
                }
            }
        }
    }
    let detail = match &location {
        Some(l) => format!("smallest cost g[{}][{}] = {worst} at (t, x) = ({}, {})", l.modes[0], l.modes[1], l.t, l.x),
        None => "no sample points".into(),
    };
    Ok(ValidationReport {
        check: CHECK,
        passed: worst >= 0.0,
        worst_margin: worst,
        location,
        detail,
    })
}

const Y_PROBES: [f64; 5] = [-2.0, -0.5, 0.0, 1.0, 3.0];
const Y_STEPS: [f64; 2] = [0.5, 2.0];

/// Lipschitz constants and the declared monotonicity direction of the drivers
/// in `ȳ`, checked on coordinate probe pairs. The margin is the smallest slack
/// over both checks.
pub fn validate_coupling<S: Scalar>(spec: &SwitchingSpec<S>, points: &[(S, S)]) -> Result<ValidationReport> {
    const CHECK: &str = "driver coupling";
    if !spec.is_coupled() {
        return Ok(ValidationReport::vacuous(CHECK));
    }
    let m = spec.m;
    let mut worst = f64::INFINITY;
    let mut location = None;
    let mut what = String::new();
    let mut y = vec![S::zero(); m];
    for &(t, x) in points {
        for (b, &base) in Y_PROBES.iter().enumerate() {
            // vary the base vector across coordinates so probes are not all diagonal
            for (k, yk) in y.iter_mut().enumerate() {
                *yk = S::lit(Y_PROBES[(b + k) % Y_PROBES.len()] * 0.5 + base * 0.5);
            }
            for i in 0..m {
                let f0 = spec.driver(i, t, x, &y)?;
                for k in 0..m {
                    for &h in &Y_STEPS {
                        let keep = y[k];
                        y[k] = keep + S::lit(h);
                        let f1 = spec.driver(i, t, x, &y)?;
                        y[k] = keep;
                        let diff = (f1 - f0).as_f64();
                        let lip = spec.lipschitz_y[i].as_f64() * h * (1.0 + 1e-9) + 1e-12 - diff.abs();
                        let dir = match spec.coupling {
                            CouplingMonotonicity::Nondecreasing if k != i => diff + 1e-12,
                            CouplingMonotonicity::Nonincreasing if k != i => -diff + 1e-12,
                            _ => f64::INFINITY,
                        };
                        for (margin, label) in [(lip, "Lipschitz bound"), (dir, "monotonicity")] {
                            if margin < worst {
                                worst = margin;
                                what = format!("{label} of f{} in y{}", i + 1, k + 1);
                                location = Some(ReportLocation {
                                    t: t.as_f64(),
                                    x: x.as_f64(),
                                    modes: vec![i, k],
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    let passed = worst >= 0.0;
    let detail = match &location {
        Some(l) => format!("{what}: worst slack {worst} at (t, x) = ({}, {})", l.t, l.x),
        None => "no sample points".into(),
    };
    Ok(ValidationReport {
        check: CHECK,
        passed,
        worst_margin: worst,
        location,
        detail,
    })
}

/// Runs every structural validator.
pub fn validate_spec<S: Scalar>(spec: &SwitchingSpec<S>, points: &[(S, S)]) -> Result<Vec<ValidationReport>> {
    let mut xs: Vec<S> = points.iter().map(|p| p.1).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite probe"));
    xs.dedup();
    Ok(vec![
        validate_costs_nonnegative(spec, points)?,
        validate_no_free_loop(spec, points)?,
        validate_consistency(spec, &xs)?,
        validate_coupling(spec, points)?,
    ])
}

/// `nt × nx` lattice of probe points over `[t0, T] × [x_min, x_max]`.
pub fn probe_lattice<S: Scalar>(t0: S, t_end: S, x_min: S, x_max: S, nt: usize, nx: usize) -> Vec<(S, S)> {
    let ts = uniform_times(t0, t_end, nt.max(1));
    let xs = uniform_times(x_min, x_max, nx.max(1));
    ts.iter().flat_map(|&t| xs.iter().map(move |&x| (t, x))).collect()
}

/// A switching strategy: start mode and events `(θ_j, α_j)`.
///
/// Event times are nondecreasing; equal times encode chained hops at one
/// instant. The mode after `θ_j` is `α_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy<S> {
    pub start_mode: usize,
    pub events: Vec<(S, usize)>,
}

impl<S: Scalar> Strategy<S> {
    pub fn never(start_mode: usize) -> Self {
        Self {
            start_mode,
            events: Vec::new(),
        }
    }

    pub fn new(start_mode: usize, events: Vec<(S, usize)>, m: usize) -> Result<Self> {
        let s = Self { start_mode, events };
        s.validate(m)?;
        Ok(s)
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.start_mode >= m {
            return Err(Error::InvalidStrategy(format!("start mode {} out of range", self.start_mode)));
        }
        let mut prev_mode = self.start_mode;
        let mut prev_time = S::neg_infinity();
        for (k, &(t, a)) in self.events.iter().enumerate() {
            if !t.is_finite() || t < prev_time {
                return Err(Error::InvalidStrategy(format!("event {k}: times must be finite and nondecreasing")));
            }
            if a >= m {
                return Err(Error::InvalidStrategy(format!("event {k}: mode {a} out of range")));
            }
            if a == prev_mode {
                return Err(Error::InvalidStrategy(format!("event {k}: mode does not change")));
            }
            prev_time = t;
            prev_mode = a;
        }
        Ok(())
    }

    /// `a_s`: the mode after every event with `θ_j ≤ s`.
    pub fn mode_at(&self, s: S) -> usize {
        self.events
            .iter()
            .take_while(|e| e.0 <= s)
            .last()
            .map_or(self.start_mode, |e| e.1)
    }

    pub fn final_mode(&self) -> usize {
        self.events.last().map_or(self.start_mode, |e| e.1)
    }

    /// Concatenation; `other` must continue from this strategy's final mode.
    pub fn then(&self, other: &Strategy<S>) -> Strategy<S> {
        let mut events = self.events.clone();
        events.extend(other.events.iter().copied());
        Strategy {
            start_mode: self.start_mode,
            events,
        }
    }
}

/// Step function `A^a`: `(θ_j, A_{θ_j})` after each event.
pub fn cumulative_cost<S: Scalar>(spec: &SwitchingSpec<S>, strategy: &Strategy<S>, path: &SimPath<S>) -> Result<Vec<(S, S)>> {
    strategy.validate(spec.m)?;
    let (start, end) = (path.t0, path.horizon());
    let mut total = S::zero();
    let mut prev = strategy.start_mode;
    let mut out = Vec::with_capacity(strategy.events.len());
    for &(t, a) in &strategy.events {
        if t < start || t > end {
            return Err(Error::EventOutsideHorizon {
                time: t.as_f64(),
                start: start.as_f64(),
                end: end.as_f64(),
            });
        }
        total += spec.cost(prev, a, t, path.state_at(t))?;
        out.push((t, total));
        prev = a;
    }
    Ok(out)
}

/// `A^a_T`
pub fn total_cost<S: Scalar>(spec: &SwitchingSpec<S>, strategy: &Strategy<S>, path: &SimPath<S>) -> Result<S> {
    Ok(cumulative_cost(spec, strategy, path)?.last().map_or(S::zero(), |e| e.1))
}

/// Realized payoff `∫ f_{a(s)}(s, X_s) ds − A_T + h_{a_T}(X_T)` with
/// left-endpoint quadrature. Coupled drivers read `ȳ` from `fields`.
pub fn path_payoff<S: Scalar>(
    spec: &SwitchingSpec<S>,
    strategy: &Strategy<S>,
    path: &SimPath<S>,
    fields: Option<&ValueFields<S>>,
) -> Result<S> {
    let coupled = spec.is_coupled();
    if coupled && fields.is_none() {
        return Err(Error::Unsupported(
            "drivers depend on the value vector; supply value fields to evaluate the payoff".into(),
        ));
    }
    let mut y = vec![S::zero(); spec.m];
    let mut running = S::zero();
    let mut next_event = 0;
    let mut mode = strategy.start_mode;
    for k in 0..path.steps.len() {
        let t = path.times[k];
        while next_event < strategy.events.len() && strategy.events[next_event].0 <= t {
            mode = strategy.events[next_event].1;
            next_event += 1;
        }
        let x = path.states[k];
        if let (true, Some(f)) = (coupled, fields) {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = f.interpolate(i, t, x);
            }
        }
        running += spec.driver(mode, t, x, &y)? * (path.times[k + 1] - t);
    }
    let x_end = *path.states.last().expect("nonempty path");
    Ok(running - total_cost(spec, strategy, path)? + spec.terminal(strategy.final_mode(), x_end)?)
}

/// Switching rule read off value fields: at each path time before `T`, switch
/// from `α` while `u_α ≤ max_{k≠α}(u_k − g_αk) + switch_tol`, to the lowest
/// maximizing mode.
pub fn strategy_from_fields<S: Scalar>(
    fields: &ValueFields<S>,
    spec: &SwitchingSpec<S>,
    path: &SimPath<S>,
    i0: usize,
    switch_tol: S,
    cap: usize,
) -> Result<Strategy<S>> {
    if i0 >= spec.m || fields.m != spec.m {
        return Err(Error::Mismatch(format!(
            "start mode {i0}, spec with {} modes, fields with {} modes",
            spec.m, fields.m
        )));
    }
    let mut events = Vec::new();
    let mut mode = i0;
    let mut u = vec![S::zero(); spec.m];
    for k in 0..path.steps.len() {
        let (t, x) = (path.times[k], path.states[k]);
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = fields.interpolate(i, t, x);
        }
        loop {
            let mut best: Option<(usize, S)> = None;
            for j in (0..spec.m).filter(|&j| j != mode) {
                let v = u[j] - spec.cost(mode, j, t, x)?;
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, v)) if u[mode] <= v + switch_tol => {
                    if events.len() >= cap {
                        return Err(Error::SwitchCap { path: 0, seed: 0, cap });
                    }
                    events.push((t, j));
                    mode = j;
                }
                _ => break,
            }
        }
    }
    Ok(Strategy { start_mode: i0, events })
}

/// How the Monte Carlo evaluator obtains a strategy for each path.
pub enum Policy<'a, S> {
    /// The same event list on every path.
    Fixed(&'a Strategy<S>),
    /// Feedback from value fields with the given switch tolerance.
    Fields { fields: &'a ValueFields<S>, switch_tol: S },
    /// Arbitrary path-dependent rule.
    Rule(&'a dyn Fn(&SimPath<S>) -> Result<Strategy<S>>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig<S> {
    pub t0: S,
    pub x0: S,
    pub i0: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Maximum switches per path; `SWITCH_CAP_PER_MODE · m` when `None`.
    pub switch_cap: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn count(&self) -> usize {
        self.n
    }
}

/// Monte Carlo estimate of the payoff of `policy` started in mode `i0` at
/// `(t0, x0)`. Path `p` uses [`path_rng`]`(seed, p)`.
pub fn mc_payoff<S: Scalar>(
    spec: &SwitchingSpec<S>,
    dynamics: &Dynamics<S>,
    levy: &LevyTriplet<S>,
    policy: &Policy<'_, S>,
    config: &McConfig<S>,
    coupling_fields: Option<&ValueFields<S>>,
) -> Result<McEstimate> {
    if config.i0 >= spec.m || config.n_paths == 0 || config.n_steps == 0 {
        return Err(Error::InvalidInput("need a valid start mode, n_paths > 0 and n_steps > 0".into()));
    }
    let coupling_fields = coupling_fields.or(match policy {
        Policy::Fields { fields, .. } => Some(*fields),
        _ => None,
    });
    let cap = config.switch_cap.unwrap_or(SWITCH_CAP_PER_MODE * spec.m);
    let sampler = levy.sampler()?;
    let times = uniform_times(config.t0, spec.horizon, config.n_steps);
    let mut stats = Welford::default();
    for p in 0..config.n_paths {
        let mut rng = path_rng(config.seed, p as u64);
        let path = simulate_path_with(dynamics, &sampler, config.t0, config.x0, &times, &mut rng)?;
        let name_path = |e: Error| match e {
            Error::SwitchCap { cap, .. } => Error::SwitchCap {
                path: p,
                seed: config.seed,
                cap,
            },
            other => other,
        };
        let strategy = match policy {
            Policy::Fixed(s) => (*s).clone(),
            Policy::Fields { fields, switch_tol } => {
                strategy_from_fields(fields, spec, &path, config.i0, *switch_tol, cap).map_err(name_path)?
            }
            Policy::Rule(rule) => rule(&path)?,
        };
        if strategy.start_mode != config.i0 {
            return Err(Error::InvalidStrategy(format!(
                "strategy starts in mode {} but the evaluation starts in mode {}",
                strategy.start_mode, config.i0
            )));
        }
        if strategy.events.len() > cap {
            return Err(Error::SwitchCap {
                path: p,
                seed: config.seed,
                cap,
            });
        }
        stats.push(path_payoff(spec, &strategy, &path, coupling_fields)?.as_f64());
    }
    Ok(McEstimate {
        mean: stats.mean(),
        std_error: stats.std_error(),
        n_paths: config.n_paths,
    })
}

/// Random strategy with up to `max_events` switches at uniform grid times.
pub fn random_strategy<S: Scalar, R: Rng + ?Sized>(
    m: usize,
    start_mode: usize,
    times: &[S],
    max_events: usize,
    rng: &mut R,
) -> Strategy<S> {
    let n = rng.random_range(0..=max_events);
    let mut picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..times.len() - 1)).collect();
    picks.sort_unstable();
    let mut mode = start_mode;
    let mut events = Vec::new();
    for k in picks {
        if m < 2 {
            break;
        }
        let mut next = rng.random_range(0..m - 1);
        if next >= mode {
            next += 1;
        }
        events.push((times[k], next));
        mode = next;
    }
    Strategy { start_mode, events }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_mode(g12: f64, g21: f64) -> SwitchingSpec<f64> {
        SwitchingSpec::constant(1.0, &[0.0, 0.0], &[vec![0.0, g12], vec![g21, 0.0]], &[0.0, 0.0]).unwrap()
    }

    #[test]
    fn cycles_of_small_digraphs() {
        assert_eq!(simple_cycles(2), vec![vec![0, 1]]);
        assert_eq!(simple_cycles(3).len(), 5);
        assert_eq!(simple_cycles(4).len(), 20);
    }

    #[test]
    fn no_free_loop_examples() {
        let pts = probe_lattice(0.0, 1.0, -1.0, 1.0, 2, 2);
        let r = validate_no_free_loop(&two_mode(0.3, 0.0), &pts).unwrap();
        assert!(r.passed && (r.worst_margin - 0.3).abs() < 1e-15);

        let spec = SwitchingSpec::new(
            1.0,
            vec![Coefficient::constant(0.0); 2],
            vec![
                vec![Coefficient::constant(0.0), Coefficient::parse("abs(x)").unwrap()],
                vec![Coefficient::parse("abs(x)").unwrap(), Coefficient::constant(0.0)],
            ],
            vec![Coefficient::constant(0.0); 2],
        )
        .unwrap();
        let r = validate_no_free_loop(&spec, &[(0.0, 1.0), (0.5, 0.0)]).unwrap();
        assert!(!r.passed);
        assert_eq!(r.location.as_ref().unwrap().x, 0.0);

        let mut g = vec![vec![1.0; 3]; 3];
        for (i, row) in g.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        g[0][1] = 0.1;
        g[1][2] = 0.1;
        g[2][0] = 0.1;
        let spec = SwitchingSpec::constant(1.0, &[0.0; 3], &g, &[0.0; 3]).unwrap();
        let r = validate_no_free_loop(&spec, &pts).unwrap();
        assert!(r.passed && (r.worst_margin - 0.3).abs() < 1e-12);
        assert_eq!(r.location.unwrap().modes, vec![0, 1, 2]);
    }

    #[test]
    fn consistency_examples() {
        let r = validate_consistency(&two_mode(0.5, 0.5), &[0.0, 1.0]).unwrap();
        assert!(r.passed && r.worst_margin == 0.5);
        let spec = SwitchingSpec::constant(1.0, &[0.0, 0.0], &[vec![0.0, 0.5], vec![0.5, 0.0]], &[0.0, 1.0]).unwrap();
        let r = validate_consistency(&spec, &[0.0]).unwrap();
        assert!(!r.passed && r.worst_margin == -0.5);
        assert_eq!(r.location.unwrap().modes[0], 0);
        let one = SwitchingSpec::<f64>::constant(1.0, &[0.0], &[vec![0.0]], &[3.0]).unwrap();
        assert!(validate_consistency(&one, &[0.0]).unwrap().passed);
    }

    #[test]
    fn diagonal_cost_must_vanish() {
        assert!(SwitchingSpec::<f64>::constant(1.0, &[0.0], &[vec![0.1]], &[0.0]).is_err());
    }

    #[test]
    fn coupling_validator_detects_wrong_direction() {
        let spec = SwitchingSpec::new(
            1.0,
            vec![Coefficient::parse("0.5*y2").unwrap(), Coefficient::parse("-0.5*y1").unwrap()],
            vec![vec![Coefficient::constant(0.0), Coefficient::constant(1.0)], vec![Coefficient::constant(1.0), Coefficient::constant(0.0)]],
            vec![Coefficient::constant(0.0); 2],
        )
        .unwrap();
        let pts = [(0.0, 0.0)];
        let ok = spec.clone().with_coupling(CouplingMonotonicity::None, vec![0.5, 0.5]).unwrap();
        assert!(validate_coupling(&ok, &pts).unwrap().passed);
        let bad = spec.clone().with_coupling(CouplingMonotonicity::Nondecreasing, vec![0.5, 0.5]).unwrap();
        assert!(!validate_coupling(&bad, &pts).unwrap().passed);
        let small = spec.with_coupling(CouplingMonotonicity::None, vec![0.1, 0.5]).unwrap();
        assert!(!validate_coupling(&small, &pts).unwrap().passed);
    }

    fn flat_path(n: usize) -> SimPath<f64> {
        let times = uniform_times(0.0, 1.0, n);
        SimPath {
            t0: 0.0,
            x0: 0.0,
            states: vec![0.0; n + 1],
            steps: vec![Default::default(); n],
            times,
        }
    }

    #[test]
    fn cumulative_cost_examples() {
        let spec = SwitchingSpec::constant(1.0, &[0.0, 0.0], &[vec![0.0, 0.3], vec![0.4, 0.0]], &[0.0, 0.0]).unwrap();
        let path = flat_path(4);
        assert!(cumulative_cost(&spec, &Strategy::never(0), &path).unwrap().is_empty());
        let one = Strategy::new(0, vec![(0.25, 1)], 2).unwrap();
        assert_eq!(total_cost(&spec, &one, &path).unwrap(), 0.3);
        let two = Strategy::new(0, vec![(0.25, 1), (0.5, 0)], 2).unwrap();
        assert!((total_cost(&spec, &two, &path).unwrap() - 0.7).abs() < 1e-15);
        let late = Strategy::new(0, vec![(1.5, 1)], 2).unwrap();
        assert!(matches!(cumulative_cost(&spec, &late, &path), Err(Error::EventOutsideHorizon { .. })));
    }

    #[test]
    fn payoff_examples() {
        let spec = SwitchingSpec::constant(1.0, &[2.0, 0.0], &[vec![0.0, 0.5], vec![0.5, 0.0]], &[0.0, 0.0]).unwrap();
        let path = flat_path(8);
        assert!((path_payoff(&spec, &Strategy::never(0), &path, None).unwrap() - 2.0).abs() < 1e-15);
        let zero = two_mode(0.5, 0.5);
        let once = Strategy::new(0, vec![(0.5, 1)], 2).unwrap();
        assert_eq!(path_payoff(&zero, &once, &path, None).unwrap(), -0.5);
    }

    #[test]
    fn strategy_mode_process() {
        let s = Strategy::new(0, vec![(0.2, 1), (0.2, 2), (0.7, 0)], 3).unwrap();
        assert_eq!(s.mode_at(0.1), 0);
        assert_eq!(s.mode_at(0.2), 2);
        assert_eq!(s.mode_at(0.9), 0);
        assert!(Strategy::new(0, vec![(0.2, 0)], 2).is_err());
        assert!(Strategy::new(0, vec![(0.5, 1), (0.2, 0)], 2).is_err());
    }
}
