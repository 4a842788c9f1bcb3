//! File formats read and written by the subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use levy_switching::oracle::{ChainModel, Transition};
use levy_switching::solver::{Diagnostics, Grid, ValueFields};
use levy_switching::switching::Strategy;

use crate::error::CliError;

/// Files written by one command; removed again unless [`Artifacts::commit`]
/// is called, so a failing run leaves nothing half-written behind.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
    committed: bool,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ensure_dir(&mut self, dir: &Path) -> Result<(), CliError> {
        if !dir.exists() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            if self.created_dir.is_none() {
                self.created_dir = Some(dir.to_path_buf());
            }
        }
        Ok(())
    }

    pub fn write(&mut self, path: &Path, contents: &[u8]) -> Result<(), CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            self.ensure_dir(parent)?;
        }
        self.files.push(path.to_path_buf());
        let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        f.write_all(contents).map_err(|e| CliError::io(path, e))
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if let Some(d) = &self.created_dir {
            let _ = fs::remove_dir(d);
        }
    }
}

pub fn mode_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("mode_{i}.csv"))
}

pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

fn csv_bytes(rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

/// One mode of a value field: header `t, x_0, …, x_nx`, then one row per time.
pub fn fields_csv(fields: &ValueFields<f64>, i: usize) -> Vec<u8> {
    let g = &fields.grid;
    let header = std::iter::once("t".to_string()).chain(g.xs().iter().map(|x| x.to_string())).collect();
    let rows = (0..=g.nt).map(|k| {
        std::iter::once(g.t(k).to_string())
            .chain(fields.slice(i, k).iter().map(|v| v.to_string()))
            .collect()
    });
    csv_bytes(std::iter::once(header).chain(rows))
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Validation(format!("{}: line {line}: `{s}` is not a number", path.display())))
}

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    r.records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| CliError::io(path, e))
        })
        .collect()
}

/// Reads the `m` mode files of `dir`, checking they sit on `grid`.
pub fn read_fields(dir: &Path, grid: Grid<f64>, m: usize) -> Result<ValueFields<f64>, CliError> {
    let mut fields = ValueFields::zeros(grid, m);
    let xs = grid.xs();
    let ts = grid.times();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    for i in 0..m {
        let path = mode_file(dir, i);
        let rows = read_csv(&path)?;
        let shape_err = |what: &str| {
            CliError::Validation(format!("{}: {what} does not match the configured grid", path.display()))
        };
        if rows.len() != grid.nt + 2 {
            return Err(shape_err("number of time rows"));
        }
        let header = &rows[0];
        if header.len() != xs.len() + 1 {
            return Err(shape_err("number of x columns"));
        }
        for (n, cell) in header[1..].iter().enumerate() {
            if !close(parse_f64(cell, &path, 1)?, xs[n]) {
                return Err(shape_err("x header"));
            }
        }
        for k in 0..=grid.nt {
            let row = &rows[k + 1];
            if row.len() != xs.len() + 1 || !close(parse_f64(&row[0], &path, k + 2)?, ts[k]) {
                return Err(shape_err(&format!("row {}", k + 2)));
            }
            let slice = fields.slice_mut(i, k);
            for (n, cell) in row[1..].iter().enumerate() {
                slice[n] = parse_f64(cell, &path, k + 2)?;
            }
        }
    }
    Ok(fields)
}

/// `key = value` lines with stable names.
pub fn diagnostics_text(d: &Diagnostics, extra: &[(&str, String)]) -> String {
    let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", "));
    let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:e}"));
    let mut lines = vec![
        ("scheme", format!("\"{}\"", d.scheme)),
        ("outer_iterations", d.outer_iterations.to_string()),
        ("outer_changes", list(&d.outer_changes)),
        ("contraction_factors", list(&d.contraction_factors)),
        ("max_mode_sweeps", d.max_mode_sweeps.to_string()),
        ("max_active_set_iterations", d.max_active_set_iterations.to_string()),
        ("min_obstacle_margin", format!("{:e}", d.min_obstacle_margin)),
        ("active_fraction", list(&d.active_fraction)),
        ("leak_mass", format!("{:e}", d.leak_mass)),
        ("delta", format!("{:e}", d.delta)),
        ("jump_intensity", format!("{:e}", d.jump_intensity)),
        ("transform_lambda", opt(d.transform_lambda)),
        ("monotone_min_increase", opt(d.monotone_min_increase)),
        ("monotone_upper_excess", opt(d.monotone_upper_excess)),
    ];
    lines.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
    lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Strategy file: rows of `time, mode`.
pub fn read_strategy(path: &Path, start_mode: usize, m: usize) -> Result<Strategy<f64>, CliError> {
    let mut events = Vec::new();
    for (line, row) in read_csv(path)?.into_iter().enumerate() {
        if line == 0 && row.first().is_some_and(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        if row.len() != 2 {
            return Err(CliError::Validation(format!(
                "{}: line {}: expected `time, mode`",
                path.display(),
                line + 1
            )));
        }
        let t = parse_f64(&row[0], path, line + 1)?;
        let mode = row[1].parse::<usize>().map_err(|_| {
            CliError::Validation(format!("{}: line {}: mode must be an index", path.display(), line + 1))
        })?;
        events.push((t, mode));
    }
    Strategy::new(start_mode, events, m).map_err(crate::error::ctx("reading strategy"))
}

/// Explicit chain file.
///
/// ```text
/// states, x_0, x_1, …
/// times, t_0, t_1, …
/// step, 0
/// p_00, p_01, …      (one row per state)
/// step, 1
/// …
/// ```
///
/// A single `step` block is shared by every step.
pub fn read_chain(path: &Path) -> Result<ChainModel<f64>, CliError> {
    let rows = read_csv(path)?;
    let bad = |line: usize, what: &str| CliError::Validation(format!("{}: line {line}: {what}", path.display()));
    let numbers = |row: &[String], line: usize| -> Result<Vec<f64>, CliError> {
        row.iter().map(|c| parse_f64(c, path, line)).collect()
    };
    let mut it = rows.iter().enumerate();
    let mut take_labelled = |label: &str| -> Result<Vec<f64>, CliError> {
        match it.next() {
            Some((l, row)) if row.first().map(String::as_str) == Some(label) => numbers(&row[1..], l + 1),
            Some((l, _)) => Err(bad(l + 1, &format!("expected a `{label}` row"))),
            None => Err(bad(rows.len(), &format!("missing `{label}` row"))),
        }
    };
    let states = take_labelled("states")?;
    let times = take_labelled("times")?;
    let n = states.len();
    let mut blocks = Vec::new();
    let mut it = rows.iter().enumerate().skip(2);
    while let Some((l, row)) = it.next() {
        if row.first().map(String::as_str) != Some("step") {
            return Err(bad(l + 1, "expected a `step` row"));
        }
        let mut dense = Vec::with_capacity(n);
        for _ in 0..n {
            let (l, row) = it.next().ok_or_else(|| bad(l + 1, "transition block is short"))?;
            let p = numbers(row, l + 1)?;
            if p.len() != n {
                return Err(bad(l + 1, &format!("expected {n} probabilities")));
            }
            dense.push(p);
        }
        blocks.push(Transition::from_dense(&dense));
    }
    ChainModel::new(states, times, blocks).map_err(crate::error::ctx("reading chain"))
}
