//! The tradeoff table: one row per (grid point, seed) and one mean row per
//! grid point, written as CSV with numbers at 6 significant digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub const HEADER: &str = "lambda,epsilon,h,N,seed,error,dp_violation,eo_violation,sigma_theta_sq,sigma_w_sq,seconds";
const CELLS_HEADER: &str = "lambda,epsilon,h,N,seed,delta,rounds,n_tilde,noise_batch,rho,l_theta,diameter,failure";

/// Inputs of the noise calibration and the failure reason of one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellDetails {
    pub delta: f64,
    pub rounds: usize,
    /// Size of the sensitive silo with the largest noise.
    pub n_tilde: usize,
    /// Batch size that silo was calibrated for.
    pub noise_batch: usize,
    pub rho: f64,
    pub l_theta: f64,
    pub diameter: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRecord {
    pub lambda: f64,
    pub epsilon: f64,
    pub h: f64,
    #[serde(rename = "N")]
    pub silos: usize,
    /// `None` marks a seed-averaged summary row.
    pub seed: Option<u64>,
    pub error: f64,
    pub dp_violation: f64,
    pub eo_violation: f64,
    pub sigma_theta_sq: f64,
    pub sigma_w_sq: f64,
    pub seconds: f64,
    #[serde(skip)]
    pub cell: Option<CellDetails>,
}

impl TradeoffRecord {
    pub fn is_summary(&self) -> bool {
        self.seed.is_none()
    }

    pub fn failed(&self) -> bool {
        self.cell.as_ref().is_some_and(|c| c.failure.is_some()) || self.error.is_nan()
    }

    fn key(&self) -> [u64; 4] {
        [self.lambda.to_bits(), self.epsilon.to_bits(), self.h.to_bits(), self.silos as u64]
    }

    fn measures(&self) -> [f64; 6] {
        [self.error, self.dp_violation, self.eo_violation, self.sigma_theta_sq, self.sigma_w_sq, self.seconds]
    }
}

/// `printf("%g")`: 6 significant digits, trailing zeros dropped, scientific
/// notation outside `[1e-4, 1e6)`.
pub fn format_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Path of the per-cell calibration sidecar written next to `path`.
pub fn cells_path(path: &Path) -> PathBuf {
    sidecar(path, "cells.csv")
}

pub fn failures_path(path: &Path) -> PathBuf {
    sidecar(path, "failures.txt")
}

fn seed_text(seed: Option<u64>) -> String {
    seed.map_or_else(|| "mean".to_string(), |s| s.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the table, plus a `.cells.csv` sidecar with the calibration inputs
/// of every seed row and a `.failures.txt` listing failed cells if any.
pub fn emit_tradeoff_table(records: &[TradeoffRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to write".into()));
    }
    let mut table = String::with_capacity(records.len() * 96);
    table.push_str(HEADER);
    table.push('\n');
    for r in records {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{}",
            format_g(r.lambda),
            format_g(r.epsilon),
            format_g(r.h),
            r.silos,
            seed_text(r.seed),
            r.measures().iter().map(|&v| format_g(v)).collect::<Vec<_>>().join(",")
        );
    }
    write_file(path, &table)?;

    let detailed: Vec<(&TradeoffRecord, &CellDetails)> =
        records.iter().filter_map(|r| r.cell.as_ref().map(|c| (r, c))).collect();
    if detailed.is_empty() {
        return Ok(());
    }
    let mut cells = String::new();
    let mut failures = String::new();
    cells.push_str(CELLS_HEADER);
    cells.push('\n');
    for (r, c) in detailed {
        let failure = c.failure.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(
            cells,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.lambda, r.epsilon, r.h, r.silos, seed_text(r.seed), c.delta, c.rounds, c.n_tilde, c.noise_batch, c.rho,
            c.l_theta, c.diameter, failure
        );
        if let Some(reason) = &c.failure {
            let _ = writeln!(
                failures,
                "lambda={} epsilon={} h={} N={} seed={}: {reason}",
                r.lambda, r.epsilon, r.h, r.silos, seed_text(r.seed)
            );
        }
    }
    write_file(&cells_path(path), &cells)?;
    if !failures.is_empty() {
        write_file(&failures_path(path), &failures)?;
    }
    Ok(())
}

fn field<'a>(row: &'a csv::StringRecord, i: usize, line: usize) -> Result<&'a str> {
    row.get(i).ok_or_else(|| Error::Config(format!("line {line}: missing column {i}")))
}

fn number(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Config(format!("line {line}: `{s}` is not a number")))
}

/// Parses a table written by [`emit_tradeoff_table`]; `cell` is `None` on
/// every row.
pub fn read_tradeoff_table(path: impl AsRef<Path>) -> Result<Vec<TradeoffRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    if first != HEADER {
        return Err(Error::Config(format!("{}: header `{first}` does not match `{HEADER}`", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let f = |c: usize| field(&row, c, line).and_then(|s| number(s, line));
        let silos = field(&row, 3, line)?
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("line {line}: bad N")))?;
        let seed = match field(&row, 4, line)?.trim() {
            "mean" => None,
            s => Some(s.parse().map_err(|_| Error::Config(format!("line {line}: bad seed `{s}`")))?),
        };
        out.push(TradeoffRecord {
            lambda: f(0)?,
            epsilon: f(1)?,
            h: f(2)?,
            silos,
            seed,
            error: f(5)?,
            dp_violation: f(6)?,
            eo_violation: f(7)?,
            sigma_theta_sq: f(8)?,
            sigma_w_sq: f(9)?,
            seconds: f(10)?,
            cell: None,
        });
    }
    Ok(out)
}

/// Groups seed rows by grid point in order of first appearance and follows
/// each group with its mean row. Existing summary rows are dropped. Failed
/// seeds are left out of the means; a group with no successful seed gets a
/// row of NaN.
pub fn summarize(records: &[TradeoffRecord]) -> Vec<TradeoffRecord> {
    let mut groups: Vec<([u64; 4], Vec<&TradeoffRecord>)> = Vec::new();
    for r in records.iter().filter(|r| !r.is_summary()) {
        match groups.iter_mut().find(|(k, _)| *k == r.key()) {
            Some((_, rows)) => rows.push(r),
            None => groups.push((r.key(), vec![r])),
        }
    }
    let mut out = Vec::with_capacity(records.len() + groups.len());
    for (_, rows) in groups {
        let ok: Vec<&&TradeoffRecord> = rows.iter().filter(|r| !r.failed()).collect();
        let mut mean = [f64::NAN; 6];
        if !ok.is_empty() {
            for (j, m) in mean.iter_mut().enumerate() {
                *m = ok.iter().map(|r| r.measures()[j]).sum::<f64>() / ok.len() as f64;
            }
        }
        let head = rows[0];
        out.extend(rows.iter().map(|r| (*r).clone()));
        out.push(TradeoffRecord {
            lambda: head.lambda,
            epsilon: head.epsilon,
            h: head.h,
            silos: head.silos,
            seed: None,
            error: mean[0],
            dp_violation: mean[1],
            eo_violation: mean[2],
            sigma_theta_sq: mean[3],
            sigma_w_sq: mean[4],
            seconds: mean[5],
            cell: None,
        });
    }
    out
}
