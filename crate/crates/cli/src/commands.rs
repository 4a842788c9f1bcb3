use std::io::Write;
use std::path::Path;

use levy_switching::levy::validate_triplet;
use levy_switching::oracle::{build_chain, dp_solve, enumerate_strategies, ChainModel, DpResult};
use levy_switching::path::{path_rng, simulate_path_with, uniform_times};
use levy_switching::solver::{residual_check, solve_on, Discretization, ResidualReport, Scheme, ValueFields};
use levy_switching::switching::{mc_payoff, probe_lattice, validate_spec, McConfig, McEstimate, Policy, Strategy};
use levy_switching::teugels::build_basis;
use levy_switching::Error as CoreError;

use crate::config::{Config, Model};
use crate::error::{ctx, CliError};
use crate::output::{self, Artifacts};

/// Probe lattice used by `validate`.
const VALIDATE_NT: usize = 16;
const VALIDATE_NX: usize = 64;

type Out<'a> = &'a mut dyn Write;

fn say(out: Out<'_>, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::Usage(format!("writing output: {e}")))
}

macro_rules! outln {
    ($out:expr, $($arg:tt)*) => {
        say($out, format_args!($($arg)*))
    };
}

fn model(config: &Config) -> Result<Model, CliError> {
    config.model().map_err(ctx("building the model"))
}

fn discretize(model: &Model) -> Result<Discretization<f64>, CliError> {
    Discretization::new(&model.dynamics, &model.levy, model.grid, &model.options).map_err(ctx("discretizing"))
}

pub fn validate(config: &Config, out: Out<'_>) -> Result<(), CliError> {
    let model = model(config)?;
    let mut failures = Vec::new();
    let measure = validate_triplet(&model.levy, config.levy.eps, config.levy.lambda).map_err(ctx("Levy measure"))?;
    outln!(
        out,
        "levy-measure: {} (small-jump integral {:e}, exponential moment {:e})",
        pass(measure.is_valid()),
        measure.small_jump_integral,
        measure.exp_moment
    )?;
    if !measure.is_valid() {
        failures.push("levy-measure".to_string());
    }

    let g = &model.grid;
    let points = probe_lattice(0.0, g.t_end, g.x_min, g.x_max, VALIDATE_NT, VALIDATE_NX);
    let mut sigma_ok = true;
    for &(t, x) in &points {
        if let Err(e) = model.dynamics.sigma(t, x) {
            outln!(out, "sigma-bound: FAIL ({e})")?;
            failures.push("sigma-bound".into());
            sigma_ok = false;
            break;
        }
    }
    if sigma_ok {
        outln!(out, "sigma-bound: PASS (declared {})", model.dynamics.sigma_bound)?;
    }

    for r in validate_spec(&model.spec, &points).map_err(ctx("validating the switching data"))? {
        let mut line = format!("{}: {}", r.check, pass(r.passed));
        if r.worst_margin.is_finite() {
            line.push_str(&format!(" (worst margin {:e}", r.worst_margin));
            if let Some(loc) = &r.location {
                let modes: Vec<String> = loc.modes.iter().map(usize::to_string).collect();
                line.push_str(&format!(" at t = {}, x = {}, modes {}", loc.t, loc.x, modes.join(" -> ")));
            }
            line.push(')');
        }
        if !r.passed {
            line.push_str(&format!(": {}", r.detail));
            failures.push(r.check.to_string());
        }
        outln!(out, "{line}")?;
    }

    match discretize(&model) {
        Ok(d) => outln!(
            out,
            "discretization: PASS (delta {:e}, jump intensity {:e}, leak {:e})",
            d.quad.delta,
            d.quad.total_weight + 0.0,
            d.leak_mass + 0.0
        )?,
        Err(e) => {
            outln!(out, "discretization: FAIL ({e})")?;
            failures.push("discretization".into());
        }
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("failed checks: {}", failures.join(", "))))
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn teugels(config: &Config, n_max: usize, out_file: Option<&Path>, out: Out<'_>) -> Result<(), CliError> {
    let model = model(config)?;
    let basis = build_basis(&model.levy, n_max).map_err(ctx("building the basis"))?;
    outln!(out, "degenerate_rank = {}", basis.degenerate_rank)?;
    outln!(out, "orthonormality_error = {:e}", basis.orthonormality_error())?;
    let mut table = String::from("q");
    for k in 0..basis.degenerate_rank {
        table.push_str(&format!(",x^{k}"));
    }
    table.push('\n');
    for i in 1..=basis.degenerate_rank {
        table.push_str(&format!("q_{}", i - 1));
        for k in 1..=basis.degenerate_rank {
            let c = if k <= i { basis.coeff(i, k).map_err(ctx("reading the basis"))? } else { 0.0 };
            table.push_str(&format!(",{c}"));
        }
        table.push('\n');
    }
    out.write_all(table.as_bytes()).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(path) = out_file {
        let mut a = Artifacts::new();
        a.write(path, table.as_bytes())?;
        a.commit();
    }
    Ok(())
}

pub fn simulate(config: &Config, out_file: Option<&Path>, out: Out<'_>) -> Result<(), CliError> {
    let model = model(config)?;
    let s = &config.simulate;
    let steps = s.steps.unwrap_or(config.grid.nt);
    if steps == 0 || s.t0 >= config.grid.t_end {
        return Err(CliError::Validation("simulate needs steps >= 1 and t0 < T".into()));
    }
    let times = uniform_times(s.t0, config.grid.t_end, steps);
    let sampler = model.levy.sampler().map_err(ctx("building the sampler"))?;
    let mut text = String::from("path,t,x,jumps\n");
    for p in 0..s.paths {
        let mut rng = path_rng(config.seeds.simulate, p as u64);
        let path = simulate_path_with(&model.dynamics, &sampler, s.t0, s.x0, &times, &mut rng).map_err(ctx("simulating"))?;
        for (k, (&t, &x)) in path.times.iter().zip(&path.states).enumerate() {
            let jumps = if k == 0 { 0 } else { path.n_jumps(k - 1) };
            text.push_str(&format!("{p},{t},{x},{jumps}\n"));
        }
    }
    match out_file {
        Some(path) => {
            let mut a = Artifacts::new();
            a.write(path, text.as_bytes())?;
            a.commit();
            outln!(out, "wrote {} paths to {}", s.paths, path.display())
        }
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn run_solver(model: &Model, disc: &Discretization<f64>, scheme: Scheme) -> Result<ValueFields<f64>, CliError> {
    solve_on(scheme, &model.spec, disc, &model.options).map_err(ctx("solving"))
}

fn residual_lines(r: &ResidualReport) -> Vec<(&'static str, String)> {
    vec![
        ("max_residual", format!("{:e}", r.max_residual)),
        ("residual_tol", format!("{:e}", r.residual_tol)),
        ("complementarity", format!("{:e}", r.complementarity)),
        ("min_r1", format!("{:e}", r.min_r1)),
        ("min_value", format!("{:e}", r.min_value)),
        ("max_value", format!("{:e}", r.max_value)),
    ]
}

fn residual_ok(r: &ResidualReport) -> bool {
    r.within_tolerance() && r.complementarity_holds() && r.min_r1 >= -r.residual_tol
}

pub fn solve(config: &Config, scheme: Option<Scheme>, dir: &Path, out: Out<'_>) -> Result<(), CliError> {
    let model = model(config)?;
    let disc = discretize(&model)?;
    let scheme = scheme.unwrap_or_else(|| config.solver.scheme.into());
    let fields = run_solver(&model, &disc, scheme)?;
    let report = residual_check(&fields, &model.spec, &disc, &model.options).map_err(ctx("checking the residual"))?;
    let mut a = Artifacts::new();
    a.ensure_dir(dir)?;
    for i in 0..fields.m {
        a.write(&output::mode_file(dir, i), &output::fields_csv(&fields, i))?;
    }
    let diag = output::diagnostics_text(&fields.diagnostics, &residual_lines(&report));
    a.write(&dir.join(output::DIAGNOSTICS_FILE), diag.as_bytes())?;
    let written = a.commit();
    outln!(
        out,
        "{} scheme: {} outer iterations, max residual {:e} (tolerance {:e})",
        scheme.name(),
        fields.diagnostics.outer_iterations,
        report.max_residual,
        report.residual_tol
    )?;
    let (t0, x0) = (config.evaluate.t0, config.evaluate.x0);
    for i in 0..fields.m {
        outln!(out, "u_{i}({t0}, {x0}) = {}", fields.interpolate(i, t0, x0))?;
    }
    outln!(out, "wrote {} files to {}", written.len(), dir.display())
}

pub fn residual(config: &Config, fields_dir: &Path, out: Out<'_>) -> Result<(), CliError> {
    let model = model(config)?;
    let disc = discretize(&model)?;
    let fields = output::read_fields(fields_dir, model.grid, model.spec.m)?;
    let report = residual_check(&fields, &model.spec, &disc, &model.options).map_err(ctx("checking the residual"))?;
    for (k, v) in residual_lines(&report) {
        outln!(out, "{k} = {v}")?;
    }
    if let Some(at) = &report.max_at {
        outln!(out, "max_at = mode {}, t = {}, x = {}", at.mode, at.t, at.x)?;
    }
    if residual_ok(&report) {
        outln!(out, "residual: PASS")
    } else {
        outln!(out, "residual: FAIL")?;
        Err(CliError::Numerical("residual check failed".into()))
    }
}

fn mc_config(config: &Config) -> McConfig<f64> {
    let e = &config.evaluate;
    McConfig {
        t0: e.t0,
        x0: e.x0,
        i0: e.mode,
        n_paths: e.paths,
        n_steps: e.steps.unwrap_or(config.grid.nt),
        seed: config.seeds.evaluate,
        switch_cap: e.switch_cap,
    }
}

fn evaluate_fields(config: &Config, model: &Model, fields: &ValueFields<f64>) -> Result<McEstimate, CliError> {
    let switch_tol = config.evaluate.switch_tol.unwrap_or(2.0 * model.options.inner_tol);
    let policy = Policy::Fields { fields, switch_tol };
    mc_payoff(&model.spec, &model.dynamics, &model.levy, &policy, &mc_config(config), None).map_err(ctx("evaluating"))
}

pub fn evaluate(config: &Config, fields_dir: Option<&Path>, strategy: Option<&Path>, out: Out<'_>) -> Result<(), CliError> {
    let model = model(config)?;
    let fields = fields_dir.map(|d| output::read_fields(d, model.grid, model.spec.m)).transpose()?;
    let e = &config.evaluate;
    let estimate = match (strategy, &fields) {
        (Some(path), _) => {
            let s: Strategy<f64> = output::read_strategy(path, e.mode, model.spec.m)?;
            if model.spec.is_coupled() && fields.is_none() {
                return Err(CliError::Usage("coupled drivers need --fields to evaluate a fixed strategy".into()));
            }
            mc_payoff(&model.spec, &model.dynamics, &model.levy, &Policy::Fixed(&s), &mc_config(config), fields.as_ref())
                .map_err(ctx("evaluating"))?
        }
        (None, Some(f)) => evaluate_fields(config, &model, f)?,
        (None, None) => return Err(CliError::Usage("evaluate needs --fields or --strategy".into())),
    };
    outln!(
        out,
        "payoff = {} +- {} ({} paths, seed {})",
        estimate.mean,
        estimate.std_error,
        estimate.n_paths,
        config.seeds.evaluate
    )?;
    if let Some(f) = &fields {
        let u = f.interpolate(e.mode, e.t0, e.x0);
        outln!(out, "u_{}({}, {}) = {u}", e.mode, e.t0, e.x0)?;
    }
    Ok(())
}

fn chain(config: &Config, model: &Model, file: Option<&Path>) -> Result<ChainModel<f64>, CliError> {
    if let Some(path) = file {
        return output::read_chain(path);
    }
    let o = &config.oracle;
    let g = &config.grid;
    let (lo, hi) = (o.x_min.unwrap_or(g.x_min), o.x_max.unwrap_or(g.x_max));
    if lo >= hi {
        return Err(CliError::Validation("oracle.x_min must be below oracle.x_max".into()));
    }
    let states = uniform_times(lo, hi, o.states - 1);
    let times = uniform_times(0.0, g.t_end, o.steps.unwrap_or(g.nt));
    build_chain(&model.dynamics, &model.levy, states, times, o.leak_tol).map_err(ctx("building the chain"))
}

/// Largest `|dp − enumeration|` at the first time, or why it was skipped.
fn cross_check(config: &Config, model: &Model, chain: &ChainModel<f64>, dp: &DpResult<f64>) -> Result<Option<f64>, CliError> {
    if model.spec.is_coupled() {
        return Ok(None);
    }
    match enumerate_strategies(chain, &model.spec, config.oracle.enumeration_guard) {
        Ok(en) => {
            let mut worst = 0.0f64;
            for i in 0..dp.m {
                for s in 0..dp.n_states {
                    worst = worst.max((en.values[i][s] - dp.value(i, 0, s)).abs());
                }
            }
            Ok(Some(worst))
        }
        Err(CoreError::EnumerationGuard { .. }) => Ok(None),
        Err(e) => Err(CliError::core("enumerating strategies", e)),
    }
}

pub fn oracle(config: &Config, chain_file: Option<&Path>, out_file: Option<&Path>, out: Out<'_>) -> Result<(), CliError> {
    let model = model(config)?;
    let chain = chain(config, &model, chain_file)?;
    let dp = dp_solve(&chain, &model.spec).map_err(ctx("solving the chain"))?;
    let mut table = String::from("state,x");
    for i in 0..dp.m {
        table.push_str(&format!(",v_{i}"));
    }
    table.push('\n');
    for s in 0..dp.n_states {
        table.push_str(&format!("{s},{}", chain.states[s]));
        for i in 0..dp.m {
            table.push_str(&format!(",{}", dp.value(i, 0, s)));
        }
        table.push('\n');
    }
    match out_file {
        Some(path) => {
            let mut a = Artifacts::new();
            a.write(path, table.as_bytes())?;
            a.commit();
        }
        None => out.write_all(table.as_bytes()).map_err(|e| CliError::Usage(e.to_string()))?,
    }
    let scale = dp.values.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()));
    match cross_check(config, &model, &chain, &dp)? {
        Some(gap) => {
            let ok = gap <= 1e-12 * scale;
            outln!(out, "enumeration agreement: {} (max gap {gap:e})", pass(ok))?;
            if !ok {
                return Err(CliError::Numerical("dynamic programming and enumeration disagree".into()));
            }
        }
        None => outln!(out, "enumeration agreement: skipped (coupled drivers or above the enumeration guard)")?,
    }
    Ok(())
}

pub fn compare(config: &Config, scheme: Option<Scheme>, chain_file: Option<&Path>, out: Out<'_>) -> Result<(), CliError> {
    let model = model(config)?;
    let disc = discretize(&model)?;
    let scheme = scheme.unwrap_or_else(|| config.solver.scheme.into());
    let fields = run_solver(&model, &disc, scheme)?;
    let chain = chain(config, &model, chain_file)?;
    let dp = dp_solve(&chain, &model.spec).map_err(ctx("solving the chain"))?;
    let c = &config.compare;
    let g = &model.grid;

    // Probes in the middle half of the shared range, snapped to chain states.
    let lo = g.x_min.max(chain.states[0]);
    let hi = g.x_max.min(*chain.states.last().expect("chain has states"));
    let (a, b) = (lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo));
    let mut probes: Vec<usize> = (0..c.points)
        .map(|p| {
            let x = if c.points == 1 { 0.5 * (a + b) } else { a + (b - a) * p as f64 / (c.points - 1) as f64 };
            chain.states.partition_point(|&s| s < x).min(chain.states.len() - 1)
        })
        .collect();
    probes.dedup();

    let mut failed = 0;
    outln!(out, "{:<10} {:>4} {:>14} {:>14} {:>11} {:>6}", "x", "mode", "solver", "oracle", "gap", "")?;
    for &s in &probes {
        let x = chain.states[s];
        for i in 0..model.spec.m {
            let u = fields.interpolate(i, 0.0, x);
            let v = dp.value(i, 0, s);
            let gap = (u - v).abs() / v.abs().max(1.0);
            let ok = gap <= c.rel_tol;
            failed += usize::from(!ok);
            outln!(out, "{x:<10.4} {i:>4} {u:>14.6} {v:>14.6} {gap:>11.3e} {:>6}", pass(ok))?;
        }
    }

    let e = &config.evaluate;
    let estimate = evaluate_fields(config, &model, &fields)?;
    let u = fields.interpolate(e.mode, e.t0, e.x0);
    let allowed = c.mc_sigmas * estimate.std_error + 1e-9 * u.abs().max(1.0);
    let ok = (estimate.mean - u).abs() <= allowed;
    failed += usize::from(!ok);
    outln!(
        out,
        "monte carlo at (t = {}, x = {}, mode {}): solver {u:.6}, payoff {:.6} +- {:.2e} ({} paths) {}",
        e.t0,
        e.x0,
        e.mode,
        estimate.mean,
        estimate.std_error,
        estimate.n_paths,
        pass(ok)
    )?;
    if failed == 0 {
        outln!(out, "agreement: PASS")
    } else {
        outln!(out, "agreement: FAIL ({failed} rows outside tolerance)")?;
        Err(CliError::Numerical(format!("{failed} comparison rows outside tolerance")))
    }
}

/// Loads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(crate::config::parse_config(&text)?)
}
