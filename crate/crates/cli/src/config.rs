//! TOML run configuration.
//!
//! Parsing happens in two passes: serde builds the raw sections (unknown keys
//! are rejected there), then [`Config::check`] collects every semantic error
//! at once so a user sees the full list instead of fixing one typo per run.

use std::fmt;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use levy_switching::coefficient::{Coefficient, Table};
use levy_switching::levy::{Density, DensityFamily, JumpMeasure, LevyTriplet, QuadRule};
use levy_switching::path::Dynamics;
use levy_switching::solver::{Grid, Scheme, SolverOptions};
use levy_switching::switching::{probe_lattice, CouplingMonotonicity, SwitchingSpec};

/// Probe lattice side used when checking that expressions evaluate finitely.
const PROBE_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line and column in the source text.
    pub position: Option<(usize, usize)>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some((line, col)) = self.position {
            write!(f, "line {line}, column {col}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "{key}: ")?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len();
        writeln!(f, "invalid configuration ({n} error{}):", if n == 1 { "" } else { "s" })?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

/// A coefficient as written in the file: a number, an expression string, an
/// affine pair or a table of `[x, value]` knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefSource {
    Number(f64),
    Expr(String),
    Affine { intercept: f64, slope: f64 },
    Table { table: Vec<[f64; 2]> },
}

impl CoefSource {
    pub fn is_zero(&self) -> bool {
        match self {
            CoefSource::Number(v) => *v == 0.0,
            CoefSource::Expr(s) => s.trim().parse::<f64>() == Ok(0.0),
            CoefSource::Affine { intercept, slope } => *intercept == 0.0 && *slope == 0.0,
            CoefSource::Table { table } => table.iter().all(|k| k[1] == 0.0),
        }
    }

    fn build(&self) -> Result<Coefficient<f64>, String> {
        match self {
            CoefSource::Number(v) => Ok(Coefficient::Constant(*v)),
            CoefSource::Expr(s) => Coefficient::parse(s).map_err(|e| format!("`{s}`: {e}")),
            CoefSource::Affine { intercept, slope } => Ok(Coefficient::Affine {
                intercept: *intercept,
                slope: *slope,
            }),
            CoefSource::Table { table } => Table::new(table.iter().map(|k| (k[0], k[1])).collect())
                .map(Coefficient::Tabulated)
                .ok_or_else(|| "table needs at least one knot and distinct x values".to_string()),
        }
    }
}

impl From<&str> for CoefSource {
    fn from(s: &str) -> Self {
        CoefSource::Expr(s.to_string())
    }
}

pub type Coef = Spanned<CoefSource>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub levy: LevySection,
    pub dynamics: DynamicsSection,
    pub problem: ProblemSection,
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevySection {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub varpi: f64,
    #[serde(default)]
    pub measure: MeasureSection,
    /// Radius `ε` outside which the exponential moment is checked.
    #[serde(default = "one")]
    pub eps: f64,
    /// Exponent `λ` of the exponential moment check.
    #[serde(default = "one")]
    pub lambda: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    /// `[location, mass]` pairs.
    #[serde(default)]
    pub atoms: Vec<[f64; 2]>,
    pub density: Option<DensitySection>,
    /// Density jumps below this size are dropped.
    #[serde(default)]
    pub cutoff: f64,
    /// Initial panel count of the density quadrature.
    pub panels: Option<usize>,
    /// Density truncation bound.
    pub x_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySection {
    Gaussian { rate: f64, mean: f64, std: f64 },
    DoubleExponential { rate: f64, p_up: f64, eta_up: f64, eta_down: f64 },
    TemperedStable { c: f64, alpha: f64, eta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub b: Coef,
    pub sigma: Coef,
    /// Declared `sup |σ|`; the largest value on the probe lattice when absent.
    pub sigma_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Nondecreasing,
    Nonincreasing,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub m: usize,
    pub f: Spanned<Vec<Coef>>,
    /// Switching costs; may be omitted when `m = 1`.
    pub g: Option<Spanned<Vec<Vec<Coef>>>>,
    pub h: Spanned<Vec<Coef>>,
    #[serde(default)]
    pub coupling_monotonicity: Monotonicity,
    pub lipschitz_y: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub nt: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Monotone,
    Picard,
    Direct,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Monotone => Scheme::Monotone,
            SchemeName::Picard => Scheme::Picard,
            SchemeName::Direct => Scheme::Direct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub scheme: SchemeName,
    /// Outer-iteration tolerance on the sup-norm change.
    pub tolerance: f64,
    pub inner_tolerance: f64,
    pub projection_tolerance: f64,
    pub max_outer: usize,
    pub max_mode_sweeps: usize,
    pub leak_tol: f64,
    /// Exponential weight for nonincreasing coupling; `m(1 + max C_i)` when absent.
    pub lambda: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            scheme: SchemeName::default(),
            tolerance: o.outer_tol,
            inner_tolerance: o.inner_tol,
            projection_tolerance: o.proj_tol,
            max_outer: o.max_outer,
            max_mode_sweeps: o.max_mode_sweeps,
            leak_tol: o.leak_tol.unwrap_or(1e-3),
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    /// Number of chain states, spread uniformly over `[x_min, x_max]`.
    pub states: usize,
    /// Chain range; the grid range when absent.
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    /// Chain time steps; `grid.nt` when absent.
    pub steps: Option<usize>,
    pub leak_tol: f64,
    pub enumeration_guard: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            states: 201,
            x_min: None,
            x_max: None,
            steps: None,
            leak_tol: 1e-6,
            enumeration_guard: levy_switching::oracle::ENUMERATION_GUARD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub paths: usize,
    /// Time steps per path; `grid.nt` when absent.
    pub steps: Option<usize>,
    pub t0: f64,
    pub x0: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            paths: 10,
            steps: None,
            t0: 0.0,
            x0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub t0: f64,
    pub x0: f64,
    pub mode: usize,
    pub paths: usize,
    /// Time steps per path; `grid.nt` when absent.
    pub steps: Option<usize>,
    /// Switching slack for the feedback rule; twice the inner tolerance when absent.
    pub switch_tol: Option<f64>,
    pub switch_cap: Option<usize>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            t0: 0.0,
            x0: 0.0,
            mode: 0,
            paths: 10_000,
            steps: None,
            switch_tol: None,
            switch_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Allowed `|u − v| / max(|v|, 1)` between the grid and chain values.
    pub rel_tol: f64,
    /// Allowed Monte Carlo deviation in standard errors.
    pub mc_sigmas: f64,
    /// Number of `x` probes at `t = 0`.
    pub points: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            rel_tol: 0.02,
            mc_sigmas: 3.0,
            points: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub simulate: u64,
    pub evaluate: u64,
}

/// Everything the numerical modules need, built from a checked [`Config`].
pub struct Model {
    pub levy: LevyTriplet<f64>,
    pub dynamics: Dynamics<f64>,
    pub spec: SwitchingSpec<f64>,
    pub grid: Grid<f64>,
    pub options: SolverOptions,
}

/// Parses and fully checks a configuration.
pub fn parse_config(text: &str) -> Result<Config, ConfigErrors> {
    let config: Config = toml::from_str(text).map_err(|e| ConfigErrors(vec![from_toml(text, &e)]))?;
    config.check(text)?;
    Ok(config)
}

/// Renders a configuration back to TOML.
pub fn render_config(config: &Config) -> String {
    toml::to_string(config).expect("configuration is always representable in TOML")
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn from_toml(text: &str, e: &toml::de::Error) -> ConfigError {
    let mut message = e.message().trim().to_string();
    if let Some(hint) = suggestion(&message) {
        message.push_str(&format!("; did you mean `{hint}`?"));
    }
    ConfigError {
        position: e.span().map(|s| line_col(text, s.start)),
        key: None,
        message,
    }
}

/// Closest expected name for serde's "unknown field `x`, expected ..." message.
fn suggestion(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    let (unknown, rest) = rest.split_once('`')?;
    rest.split('`')
        .skip(1)
        .step_by(2)
        .map(|cand| (strsim::jaro_winkler(unknown, cand), cand))
        .filter(|(score, _)| *score > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_string())
}

struct Collector<'a> {
    text: &'a str,
    errors: Vec<ConfigError>,
}

impl Collector<'_> {
    fn push(&mut self, span: Option<std::ops::Range<usize>>, key: impl Into<String>, message: impl Into<String>) {
        let position = span.filter(|s| s.end > 0).map(|s| line_col(self.text, s.start));
        self.errors.push(ConfigError {
            position,
            key: Some(key.into()),
            message: message.into(),
        });
    }

    fn require(&mut self, ok: bool, key: &str, message: &str) {
        if !ok {
            self.push(None, key, message);
        }
    }

    fn coefficient(&mut self, c: &Coef, key: &str) -> Option<Coefficient<f64>> {
        match c.get_ref().build() {
            Ok(v) => Some(v),
            Err(msg) => {
                self.push(Some(c.span()), key, msg);
                None
            }
        }
    }
}

impl Config {
    /// Semantic checks; every problem found is reported.
    pub fn check(&self, text: &str) -> Result<(), ConfigErrors> {
        let mut c = Collector { text, errors: Vec::new() };
        let g = &self.grid;
        c.require(g.t_end > 0.0 && g.t_end.is_finite(), "grid.T", "must be positive");
        c.require(g.nt >= 1, "grid.nt", "must be at least 1");
        c.require(g.nx >= 2, "grid.nx", "must be at least 2");
        c.require(g.x_min < g.x_max, "grid.x_min", "must be below grid.x_max");
        c.require(g.delta.is_none_or(|d| d > 0.0), "grid.delta", "must be positive");
        let s = &self.solver;
        for (key, v) in [
            ("solver.tolerance", s.tolerance),
            ("solver.inner_tolerance", s.inner_tolerance),
            ("solver.projection_tolerance", s.projection_tolerance),
            ("solver.leak_tol", s.leak_tol),
        ] {
            c.require(v > 0.0, key, "must be positive");
        }
        c.require(s.max_outer >= 1, "solver.max_outer", "must be at least 1");
        c.require(self.oracle.states >= 2, "oracle.states", "must be at least 2");
        c.require(self.evaluate.paths >= 1, "evaluate.paths", "must be at least 1");
        c.require(self.compare.points >= 1, "compare.points", "must be at least 1");
        c.require(self.levy.varpi >= 0.0, "levy.varpi", "must be nonnegative");
        if !self.levy.measure.atoms.is_empty() && self.levy.measure.density.is_some() {
            c.push(None, "levy.measure", "give either atoms or a density, not both");
        }

        let p = &self.problem;
        let m = p.m;
        c.require(m >= 1, "problem.m", "must be at least 1");
        if p.f.get_ref().len() != m {
            c.push(Some(p.f.span()), "problem.f", format!("expected {m} drivers, found {}", p.f.get_ref().len()));
        }
        if p.h.get_ref().len() != m {
            c.push(Some(p.h.span()), "problem.h", format!("expected {m} terminals, found {}", p.h.get_ref().len()));
        }
        match &p.g {
            None if m > 1 => c.push(None, "problem.g", format!("a {m}x{m} cost matrix is required")),
            None => {}
            Some(rows) => {
                let r = rows.get_ref();
                if r.len() != m || r.iter().any(|row| row.len() != m) {
                    c.push(Some(rows.span()), "problem.g", format!("expected a {m}x{m} matrix"));
                } else {
                    for (i, row) in r.iter().enumerate() {
                        if !row[i].get_ref().is_zero() {
                            c.push(Some(row[i].span()), format!("problem.g[{i}][{i}]"), "g_ii must be zero");
                        }
                    }
                }
            }
        }
        if let Some(l) = &p.lipschitz_y {
            if l.len() != m {
                c.push(None, "problem.lipschitz_y", format!("expected {m} entries, found {}", l.len()));
            } else if l.iter().any(|v| v.is_nan() || *v < 0.0) {
                c.push(None, "problem.lipschitz_y", "entries must be nonnegative");
            }
        }
        if !c.errors.is_empty() {
            return Err(ConfigErrors(c.errors));
        }

        // Every coefficient must build and evaluate finitely on the probe box.
        let probes = probe_lattice(0.0, g.t_end, g.x_min, g.x_max, PROBE_SIDE, PROBE_SIDE);
        let y = vec![0.0; m];
        let mut coefs: Vec<(String, &Coef)> = vec![
            ("dynamics.b".into(), &self.dynamics.b),
            ("dynamics.sigma".into(), &self.dynamics.sigma),
        ];
        coefs.extend(p.f.get_ref().iter().enumerate().map(|(i, f)| (format!("problem.f[{i}]"), f)));
        coefs.extend(p.h.get_ref().iter().enumerate().map(|(i, h)| (format!("problem.h[{i}]"), h)));
        if let Some(rows) = &p.g {
            for (i, row) in rows.get_ref().iter().enumerate() {
                coefs.extend(row.iter().enumerate().filter(|(j, _)| *j != i).map(|(j, v)| (format!("problem.g[{i}][{j}]"), v)));
            }
        }
        for (key, src) in coefs {
            let Some(coef) = c.coefficient(src, &key) else { continue };
            if let Coefficient::Expr(e) = &coef {
                if e.max_y_index() > m {
                    c.push(Some(src.span()), key, format!("references y{} but there are only {m} modes", e.max_y_index()));
                    continue;
                }
            }
            for &(t, x) in &probes {
                match coef.eval(t, x, &y) {
                    Ok(v) if v.is_finite() => {}
                    Ok(_) => {
                        c.push(Some(src.span()), key, format!("non-finite value at t = {t}, x = {x}"));
                        break;
                    }
                    Err(e) => {
                        c.push(Some(src.span()), key, format!("at t = {t}, x = {x}: {e}"));
                        break;
                    }
                }
            }
        }
        if c.errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(c.errors))
        }
    }

    pub fn measure(&self) -> JumpMeasure<f64> {
        let ms = &self.levy.measure;
        match &ms.density {
            Some(d) => {
                let family = match *d {
                    DensitySection::Gaussian { rate, mean, std } => DensityFamily::Gaussian { rate, mean, std },
                    DensitySection::DoubleExponential {
                        rate,
                        p_up,
                        eta_up,
                        eta_down,
                    } => DensityFamily::DoubleExponential {
                        rate,
                        p_up,
                        eta_up,
                        eta_down,
                    },
                    DensitySection::TemperedStable { c, alpha, eta } => DensityFamily::TemperedStable { c, alpha, eta },
                };
                let mut density = Density::new(family);
                density.cutoff = ms.cutoff;
                density.rule = QuadRule {
                    panels: ms.panels.unwrap_or(QuadRule::default().panels),
                    x_max: ms.x_max,
                };
                JumpMeasure::from_density(density)
            }
            None => JumpMeasure::from_atoms(ms.atoms.iter().map(|a| (a[0], a[1]))),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            proj_tol: s.projection_tolerance,
            inner_tol: s.inner_tolerance,
            outer_tol: s.tolerance,
            max_outer: s.max_outer,
            max_mode_sweeps: s.max_mode_sweeps,
            leak_tol: Some(s.leak_tol),
            validate: true,
            lambda: s.lambda,
        }
    }

    pub fn grid(&self) -> levy_switching::Result<Grid<f64>> {
        let g = &self.grid;
        let grid = Grid::new(g.t_end, g.nt, g.x_min, g.x_max, g.nx)?;
        Ok(match g.delta {
            Some(d) => grid.with_delta(d),
            None => grid,
        })
    }

    /// Builds the numerical objects. Only fails on conditions the module
    /// constructors check beyond [`Config::check`].
    pub fn model(&self) -> levy_switching::Result<Model> {
        let build = |c: &Coef| c.get_ref().build().map_err(levy_switching::Error::InvalidInput);
        let levy = LevyTriplet::new(self.levy.a, self.levy.varpi, self.measure())?;
        let g = &self.grid;
        let b = build(&self.dynamics.b)?;
        let sigma = build(&self.dynamics.sigma)?;
        let sigma_bound = match self.dynamics.sigma_bound {
            Some(v) => v,
            None => {
                let mut worst = 0.0f64;
                for (t, x) in probe_lattice(0.0, g.t_end, g.x_min, g.x_max, PROBE_SIDE, PROBE_SIDE) {
                    worst = worst.max(sigma.eval(t, x, &[])?.abs());
                }
                worst
            }
        };
        let dynamics = Dynamics::new(b, sigma, sigma_bound);
        let p = &self.problem;
        let m = p.m;
        let drivers = p.f.get_ref().iter().map(build).collect::<levy_switching::Result<Vec<_>>>()?;
        let terminals = p.h.get_ref().iter().map(build).collect::<levy_switching::Result<Vec<_>>>()?;
        let costs = match &p.g {
            Some(rows) => rows
                .get_ref()
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(j, c)| if i == j { Ok(Coefficient::constant(0.0)) } else { build(c) })
                        .collect()
                })
                .collect::<levy_switching::Result<Vec<Vec<_>>>>()?,
            None => vec![vec![Coefficient::constant(0.0)]],
        };
        let coupling = match p.coupling_monotonicity {
            Monotonicity::Nondecreasing => CouplingMonotonicity::Nondecreasing,
            Monotonicity::Nonincreasing => CouplingMonotonicity::Nonincreasing,
            Monotonicity::None => CouplingMonotonicity::None,
        };
        let spec = SwitchingSpec::new(g.t_end, drivers, costs, terminals)?
            .with_coupling(coupling, p.lipschitz_y.clone().unwrap_or_else(|| vec![0.0; m]))?;
        Ok(Model {
            levy,
            dynamics,
            spec,
            grid: self.grid()?,
            options: self.solver_options(),
        })
    }
}
