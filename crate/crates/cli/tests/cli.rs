use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BROWNIAN: &str = r#"
[levy]
varpi = 2.0

[dynamics]
b = 0.0
sigma = 0.5

[problem]
m = 1
f = ["0"]
h = ["x"]

[grid]
T = 1.0
nt = 10
x_min = -4.0
x_max = 4.0
nx = 40
"#;

/// Two modes with constant rewards 0 and 1 and switching cost 0.4; starting
/// in mode 0 it pays to switch at once, so the values at `t = 0` are 0.6 and 1.
const TOY: &str = r#"
[levy]
varpi = 1.0

[dynamics]
b = 0.0
sigma = 0.1

[problem]
m = 2
f = ["0", "1"]
g = [["0", "0.4"], ["0.4", "0"]]
h = ["0", "0"]

[grid]
T = 1.0
nt = 20
x_min = -2.0
x_max = 2.0
nx = 40

[oracle]
states = 41

[evaluate]
paths = 200

[seeds]
evaluate = 7
"#;

const JUMPS: &str = r#"
[levy]
varpi = 1.0
measure = { atoms = [[0.5, 1.0]] }

[dynamics]
b = 0.0
sigma = 0.3

[problem]
m = 2
f = ["1 + x", "1 - x"]
g = [[0, 0.1], [0.1, 0]]
h = ["0", "0"]

[grid]
T = 1.0
nt = 40
x_min = -3.0
x_max = 3.0
nx = 60

[simulate]
paths = 3
steps = 20
x0 = 0.2

[evaluate]
x0 = 0.2
mode = 1
paths = 500

[seeds]
simulate = 11
evaluate = 3
"#;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn levyswitch(args: &[&str]) -> Run {
    let Output { status, stdout, stderr } = Command::new(env!("CARGO_BIN_EXE_levyswitch"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: status.code().expect("exit code"),
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_a_minimal_config() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", BROWNIAN);
    let r = levyswitch(&["validate", "-c", s(&c)]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("non-free-loop: PASS"));
}

#[test]
fn validate_names_a_free_loop() {
    let d = TempDir::new().unwrap();
    // The loop 0 -> 1 -> 0 costs nothing for x in [1, 3].
    let text = TOY.replace(
        r#"g = [["0", "0.4"], ["0.4", "0"]]"#,
        r#"g = [["0", "max(0, 1 - x)"], ["max(0, x - 3)", "0"]]"#,
    );
    let c = write_config(&d, "c.toml", &text);
    let r = levyswitch(&["validate", "-c", s(&c)]);
    assert_eq!(r.code, 1);
    let line = r.stdout.lines().find(|l| l.starts_with("non-free-loop")).unwrap();
    assert!(line.contains("FAIL"), "{line}");
    assert!(line.contains("modes 0 -> 1"), "{line}");
    let x: f64 = line.split("x = ").nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((1.0..=2.0).contains(&x), "{line}");
}

#[test]
fn config_errors_exit_with_validation_status() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", &format!("{BROWNIAN}\n[solver]\ntolerence = 1e-6\n"));
    let r = levyswitch(&["validate", "-c", s(&c)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("did you mean `tolerance`"), "{}", r.stderr);

    let c = write_config(&d, "g.toml", &TOY.replace(r#"[["0", "0.4"]"#, r#"[["0.2", "0.4"]"#));
    let r = levyswitch(&["validate", "-c", s(&c)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("g_ii must be zero"), "{}", r.stderr);
}

#[test]
fn usage_errors_exit_with_status_3() {
    assert_eq!(levyswitch(&["validate"]).code, 3);
    assert_eq!(levyswitch(&["frobnicate"]).code, 3);
    assert_eq!(levyswitch(&["validate", "-c", "/nonexistent/config.toml"]).code, 3);
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", BROWNIAN);
    assert_eq!(levyswitch(&["evaluate", "-c", s(&c)]).code, 3);
}

#[test]
fn teugels_brownian_is_a_single_row() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", BROWNIAN);
    let out = d.path().join("basis.csv");
    let r = levyswitch(&["teugels", "-c", s(&c), "--out", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("degenerate_rank = 1"));
    assert_eq!(fs::read_to_string(&out).unwrap(), "q,x^0\nq_0,0.5\n");
}

#[test]
fn teugels_two_atoms() {
    let d = TempDir::new().unwrap();
    let text = BROWNIAN.replace("varpi = 2.0", "varpi = 0.0\nmeasure = { atoms = [[-1.0, 1.0], [1.0, 1.0]] }");
    let c = write_config(&d, "c.toml", &text);
    let r = levyswitch(&["teugels", "-c", s(&c)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("degenerate_rank = 2"));
    let rows: Vec<Vec<f64>> = r
        .stdout
        .lines()
        .filter(|l| l.starts_with("q_"))
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((rows[0][0] - h).abs() < 1e-12 && rows[0][1] == 0.0);
    assert!(rows[1][0].abs() < 1e-12 && (rows[1][1] - h).abs() < 1e-12);
}

#[test]
fn simulation_is_reproducible() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", JUMPS);
    let a = levyswitch(&["simulate", "-c", s(&c)]);
    let b = levyswitch(&["simulate", "-c", s(&c)]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout.lines().count(), 1 + 3 * 21);
    let other = write_config(&d, "o.toml", &JUMPS.replace("simulate = 11", "simulate = 12"));
    assert_ne!(levyswitch(&["simulate", "-c", s(&other)]).stdout, a.stdout);
}

#[test]
fn solve_then_residual_then_evaluate() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", JUMPS);
    let out = d.path().join("fields");
    let r = levyswitch(&["solve", "-c", s(&c), "--out", s(&out), "--scheme", "direct"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let diag = fs::read_to_string(out.join("diagnostics.txt")).unwrap();
    for key in ["scheme = \"direct\"", "outer_iterations = ", "max_residual = ", "residual_tol = ", "delta = "] {
        assert!(diag.contains(key), "{key} missing from\n{diag}");
    }
    let mode0 = fs::read_to_string(out.join("mode_0.csv")).unwrap();
    assert_eq!(mode0.lines().count(), 42);
    assert!(mode0.starts_with("t,-3,-2.9,"));

    let r = levyswitch(&["residual", "-c", s(&c), "--fields", s(&out)]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("residual: PASS"));

    let first = levyswitch(&["evaluate", "-c", s(&c), "--fields", s(&out)]);
    assert_eq!(first.code, 0, "{}", first.stderr);
    assert_eq!(first.stdout, levyswitch(&["evaluate", "-c", s(&c), "--fields", s(&out)]).stdout);
    let payoff: f64 = first.stdout.split("payoff = ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    let se: f64 = first.stdout.split("+- ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    let u: f64 = first.stdout.lines().find(|l| l.starts_with("u_1")).unwrap().split("= ").nth(1).unwrap().parse().unwrap();
    assert!((payoff - u).abs() <= 4.0 * se + 0.02 * u.abs(), "{payoff} +- {se} vs {u}");

    // Never switching from mode 1 is worse than the optimal rule.
    let strategy = d.path().join("never.csv");
    fs::write(&strategy, "time,mode\n").unwrap();
    let r = levyswitch(&["evaluate", "-c", s(&c), "--strategy", s(&strategy)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let never: f64 = r.stdout.split("payoff = ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(never < payoff, "{never} vs {payoff}");
}

#[test]
fn tampered_fields_fail_the_residual_check() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", BROWNIAN);
    let out = d.path().join("fields");
    assert_eq!(levyswitch(&["solve", "-c", s(&c), "--out", s(&out)]).code, 0);
    let path = out.join("mode_0.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[3].split(',').map(str::to_string).collect();
    cells[20] = "5".into();
    lines[3] = cells.join(",");
    fs::write(&path, lines.join("\n")).unwrap();
    let r = levyswitch(&["residual", "-c", s(&c), "--fields", s(&out)]);
    assert_eq!(r.code, 2, "{}", r.stdout);
    assert!(r.stdout.contains("residual: FAIL"));
}

#[test]
fn fields_on_another_grid_are_rejected() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", BROWNIAN);
    let out = d.path().join("fields");
    assert_eq!(levyswitch(&["solve", "-c", s(&c), "--out", s(&out)]).code, 0);
    let other = write_config(&d, "o.toml", &BROWNIAN.replace("nx = 40", "nx = 50"));
    let r = levyswitch(&["residual", "-c", s(&other), "--fields", s(&out)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("does not match the configured grid"), "{}", r.stderr);
}

#[test]
fn failed_writes_remove_partial_artifacts() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", TOY);
    let out = d.path().join("fields");
    // A directory where the second mode file should go makes that write fail.
    fs::create_dir_all(out.join("mode_1.csv")).unwrap();
    let r = levyswitch(&["solve", "-c", s(&c), "--out", s(&out)]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(!out.join("mode_0.csv").exists());
    assert!(!out.join("diagnostics.txt").exists());
}

#[test]
fn unsupported_scheme_is_a_validation_failure() {
    let d = TempDir::new().unwrap();
    let text = TOY.replace(r#"f = ["0", "1"]"#, r#"f = ["0 - 0.1 * y2", "1"]"#).replace(
        "h = [\"0\", \"0\"]",
        "h = [\"0\", \"0\"]\ncoupling_monotonicity = \"nonincreasing\"\nlipschitz_y = [0.1, 0]",
    );
    let c = write_config(&d, "c.toml", &text);
    let out = d.path().join("fields");
    let r = levyswitch(&["solve", "-c", s(&c), "--out", s(&out)]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(!out.exists());
    let r = levyswitch(&["solve", "-c", s(&c), "--out", s(&out), "--scheme", "picard"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(fs::read_to_string(out.join("diagnostics.txt")).unwrap().contains("transform_lambda = "));
}

#[test]
fn oracle_on_an_explicit_chain_file() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", TOY);
    let chain = d.path().join("chain.csv");
    fs::write(&chain, "# one state, one step\nstates,0\ntimes,0,1\nstep,0\n1\n").unwrap();
    let r = levyswitch(&["oracle", "-c", s(&c), "--chain", s(&chain)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("state,x,v_0,v_1\n0,0,0.6,1\n"), "{}", r.stdout);
    assert!(r.stdout.contains("enumeration agreement: PASS"));
}

#[test]
fn malformed_chain_file_is_rejected() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", TOY);
    let chain = d.path().join("chain.csv");
    fs::write(&chain, "states,0,1\ntimes,0,1\nstep,0\n0.5,0.6\n0,1\n").unwrap();
    let r = levyswitch(&["oracle", "-c", s(&c), "--chain", s(&chain)]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(r.stderr.contains("not stochastic"), "{}", r.stderr);
}

#[test]
fn compare_on_the_lifted_toy() {
    let d = TempDir::new().unwrap();
    let c = write_config(&d, "c.toml", TOY);
    let r = levyswitch(&["compare", "-c", s(&c)]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("agreement: PASS"), "{}", r.stdout);
    let rows: Vec<&str> = r.stdout.lines().filter(|l| l.ends_with("PASS") && !l.starts_with("agreement")).collect();
    assert_eq!(rows.len(), 2 * 5 + 1, "{}", r.stdout);
    assert!(rows[0].contains("0.600000"), "{}", rows[0]);
}

#[test]
fn compare_on_a_jump_instance() {
    let d = TempDir::new().unwrap();
    let text = JUMPS.replace("[simulate]", "[oracle]\nstates = 151\nsteps = 200\n\n[simulate]");
    let c = write_config(&d, "c.toml", &text);
    let r = levyswitch(&["compare", "-c", s(&c), "--scheme", "direct"]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("agreement: PASS"));
}
