//! CSV serialization of results.
//!
//! Floats are written with 12 significant digits in the shortest of fixed or
//! exponent notation, booleans as `true`/`false`, and a missing owner as an
//! empty field. Column order is fixed per table; identical results give
//! byte-identical files.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::allocator::{AllocationProblem, SolveOutcome};
use crate::asymptotics::MarginResult;
use crate::channel::linear_to_db;
use crate::error::{Error, Result};
use crate::experiments::{
    AllocationSnapshot, ConvergenceTrace, SnapshotRow, SweepResult, ValidationRow,
};

/// Formats `x` like C's `%.12g`.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    const DIGITS: i32 = 12;
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= DIGITS {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn fmt_bool(b: bool) -> String {
    b.to_string()
}

fn fmt_owner(owner: Option<usize>) -> String {
    owner.map_or_else(String::new, |k| k.to_string())
}

/// A result that serializes to one CSV table.
pub trait CsvTable {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;
}

/// Writes `table` to any writer.
pub fn write_csv<W: Write>(table: &dyn CsvTable, writer: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(table.header())?;
    for row in table.rows() {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `table` to `path`, creating parent directories.
pub fn emit_csv(table: &dyn CsvTable, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(table, std::io::BufWriter::new(file)).map_err(|e| {
        let source = match e.into_kind() {
            csv::ErrorKind::Io(io) => io,
            other => std::io::Error::other(format!("{other:?}")),
        };
        Error::io(path, source)
    })
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Supportable loads and margins at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginTable {
    pub alpha: f64,
    pub receive_snr_db: f64,
    pub beta_star_db: f64,
    pub sigma2: f64,
    pub results: Vec<MarginResult>,
}

impl CsvTable for MarginTable {
    fn header(&self) -> Vec<String> {
        strings(&[
            "receiver",
            "alpha",
            "receive_snr_db",
            "beta_star_db",
            "alpha_star",
            "margin",
            "margin_db",
            "feasible",
        ])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.results
            .iter()
            .map(|m| {
                vec![
                    m.receiver.to_string(),
                    fmt_float(self.alpha),
                    fmt_float(self.receive_snr_db),
                    fmt_float(self.beta_star_db),
                    fmt_float(m.alpha_star),
                    fmt_float(m.margin / self.sigma2),
                    if m.feasible {
                        fmt_float(linear_to_db(m.margin / self.sigma2))
                    } else {
                        String::new()
                    },
                    fmt_bool(m.feasible),
                ]
            })
            .collect()
    }
}

impl CsvTable for SweepResult {
    fn header(&self) -> Vec<String> {
        strings(&[
            "swept",
            "value",
            "receiver",
            "alpha",
            "receive_snr_db",
            "users",
            "alpha_star",
            "margin",
            "feasible",
            "ofdma_throughput",
            "ofdma_throughput_std",
            "mean_interference",
            "cdma_sinr_theory",
            "cdma_sinr_theory_db",
            "cdma_sinr_empirical_mean",
            "cdma_sinr_empirical_mean_db",
            "cdma_sinr_empirical_std",
            "solver_iterations",
            "converged_fraction",
        ])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.points
            .iter()
            .map(|p| {
                vec![
                    self.swept.to_string(),
                    fmt_float(p.value),
                    self.receiver.to_string(),
                    fmt_float(p.alpha),
                    fmt_float(p.receive_snr_db),
                    p.users.to_string(),
                    fmt_float(p.alpha_star),
                    fmt_float(p.margin),
                    fmt_bool(p.feasible),
                    fmt_float(p.ofdma_throughput),
                    fmt_float(p.ofdma_throughput_std),
                    fmt_float(p.mean_interference),
                    fmt_float(p.cdma_sinr_theory),
                    fmt_float(linear_to_db(p.cdma_sinr_theory)),
                    fmt_float(p.cdma_sinr_empirical_mean),
                    fmt_float(linear_to_db(p.cdma_sinr_empirical_mean)),
                    fmt_float(p.cdma_sinr_empirical_std),
                    fmt_float(p.solver_iterations),
                    fmt_float(p.converged_fraction),
                ]
            })
            .collect()
    }
}

impl CsvTable for ConvergenceTrace {
    fn header(&self) -> Vec<String> {
        let k = self.run.problem.k();
        let mut h = strings(&["iteration", "relative_gap", "delta"]);
        h.extend((0..k).map(|i| format!("lambda_{i}")));
        h.extend(strings(&["throughput", "mean_interference", "margin"]));
        h.extend((0..k).map(|i| format!("user_power_{i}")));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let margin = fmt_float(self.run.problem.margin);
        self.records()
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.iteration.to_string(),
                    fmt_float(r.relative_gap),
                    fmt_float(r.delta),
                ];
                row.extend(r.lambdas.iter().map(|&l| fmt_float(l)));
                row.push(fmt_float(r.throughput));
                row.push(fmt_float(r.mean_interference));
                row.push(margin.clone());
                row.extend(r.user_power.iter().map(|&p| fmt_float(p)));
                row
            })
            .collect()
    }
}

/// Per-subcarrier allocation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationTable {
    pub rows: Vec<SnapshotRow>,
}

impl CsvTable for AllocationTable {
    fn header(&self) -> Vec<String> {
        let k = self.rows.first().map_or(0, |r| r.user_gains.len());
        let mut h = strings(&["subcarrier", "owner", "power", "gain", "received"]);
        h.extend((0..k).map(|i| format!("gain_{i}")));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.subcarrier.to_string(),
                    fmt_owner(r.owner),
                    fmt_float(r.power),
                    fmt_float(r.gain),
                    fmt_float(r.received),
                ];
                row.extend(r.user_gains.iter().map(|&g| fmt_float(g)));
                row
            })
            .collect()
    }
}

impl CsvTable for AllocationSnapshot {
    fn header(&self) -> Vec<String> {
        AllocationTable { rows: self.rows.clone() }.header()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        AllocationTable { rows: self.rows.clone() }.rows()
    }
}

/// Headline numbers of one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveSummary {
    pub problem: AllocationProblem,
    pub outcome: SolveOutcome,
}

impl CsvTable for SolveSummary {
    fn header(&self) -> Vec<String> {
        let k = self.problem.k();
        let mut h = strings(&[
            "throughput",
            "dual_bound",
            "relative_gap",
            "iterations",
            "converged",
            "mean_interference",
            "margin",
            "delta",
        ]);
        h.extend((0..k).map(|i| format!("lambda_{i}")));
        h.extend((0..k).map(|i| format!("user_power_{i}")));
        h.extend((0..k).map(|i| format!("power_cap_{i}")));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let o = &self.outcome;
        let mut row = vec![
            fmt_float(o.throughput),
            fmt_float(o.dual_bound),
            fmt_float(o.relative_gap),
            o.dual.iteration.to_string(),
            fmt_bool(o.converged),
            fmt_float(o.allocation.mean_interference(&self.problem.gains)),
            fmt_float(self.problem.margin),
            fmt_float(o.dual.delta),
        ];
        row.extend(o.dual.lambdas.iter().map(|&l| fmt_float(l)));
        row.extend(o.allocation.user_powers().iter().map(|&p| fmt_float(p)));
        row.extend(self.problem.power_caps.iter().map(|&p| fmt_float(p)));
        vec![row]
    }
}

/// Rows of a theory-vs-simulation comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationTable {
    pub rows: Vec<ValidationRow>,
}

impl CsvTable for ValidationTable {
    fn header(&self) -> Vec<String> {
        strings(&[
            "receiver",
            "model",
            "n",
            "users",
            "alpha",
            "trials",
            "theory",
            "empirical_mean",
            "empirical_std",
            "relative_error",
            "std_over_mean",
        ])
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.receiver.to_string(),
                    r.model.to_string(),
                    r.n.to_string(),
                    r.users.to_string(),
                    fmt_float(r.alpha),
                    r.trials.to_string(),
                    fmt_float(r.theory),
                    fmt_float(r.empirical_mean),
                    fmt_float(r.empirical_std),
                    fmt_float(r.relative_error),
                    fmt_float(r.std_over_mean),
                ]
            })
            .collect()
    }
}
