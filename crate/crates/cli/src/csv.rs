//! CSV writers and parsers for the command outputs.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! parsing a file and re-writing it reproduces it byte for byte.

use crate::CliError;
use qkdnet::simnet::TimeSeriesPoint;
use std::fmt::Write;

pub const SWEEP_HEADER: &str = "loss_db,skr_bps,qber,skr_asymptotic_bps";
pub const SERIES_HEADER: &str = "timestamp_s,skr_bps,qber,secret_bits";
pub const SUMMARY_HEADER: &str =
    "link_id,points,mean_skr_bps,std_skr_bps,mean_qber,std_qber,total_secret_bits";

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub loss_db: f64,
    pub skr_bps: f64,
    pub qber: f64,
    pub skr_asymptotic_bps: f64,
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub link_id: String,
    pub points: u64,
    pub mean_skr_bps: f64,
    pub std_skr_bps: f64,
    pub mean_qber: f64,
    pub std_qber: f64,
    pub total_secret_bits: u64,
}

pub fn write_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.loss_db, r.skr_bps, r.qber, r.skr_asymptotic_bps
        )
        .expect("writing to a string cannot fail");
    }
    out
}

pub fn write_series(points: &[TimeSeriesPoint]) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for p in points {
        writeln!(
            out,
            "{},{},{},{}",
            p.timestamp_s, p.skr_bps, p.qber, p.secret_bits
        )
        .expect("writing to a string cannot fail");
    }
    out
}

pub fn write_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.link_id,
            r.points,
            r.mean_skr_bps,
            r.std_skr_bps,
            r.mean_qber,
            r.std_qber,
            r.total_secret_bits
        )
        .expect("writing to a string cannot fail");
    }
    out
}

fn split_line<'a>(
    file: &str,
    lineno: usize,
    line: &'a str,
    want: usize,
) -> Result<Vec<&'a str>, CliError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != want {
        return Err(CliError::Config(format!(
            "{file} line {lineno}: expected {want} fields, got {}",
            fields.len()
        )));
    }
    Ok(fields)
}

fn parse_field<T: std::str::FromStr>(
    file: &str,
    lineno: usize,
    name: &str,
    raw: &str,
) -> Result<T, CliError> {
    raw.parse().map_err(|_| {
        CliError::Config(format!("{file} line {lineno}: bad {name} value {raw:?}"))
    })
}

fn check_header(file: &str, text: &str, header: &str) -> Result<(), CliError> {
    match text.lines().next() {
        Some(first) if first == header => Ok(()),
        Some(first) => Err(CliError::Config(format!(
            "{file} line 1: expected header {header:?}, got {first:?}"
        ))),
        None => Err(CliError::Config(format!("{file} is empty"))),
    }
}

pub fn parse_sweep(file: &str, text: &str) -> Result<Vec<SweepRow>, CliError> {
    check_header(file, text, SWEEP_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let lineno = i + 1;
        let f = split_line(file, lineno, line, 4)?;
        rows.push(SweepRow {
            loss_db: parse_field(file, lineno, "loss_db", f[0])?,
            skr_bps: parse_field(file, lineno, "skr_bps", f[1])?,
            qber: parse_field(file, lineno, "qber", f[2])?,
            skr_asymptotic_bps: parse_field(file, lineno, "skr_asymptotic_bps", f[3])?,
        });
    }
    Ok(rows)
}

pub fn parse_series(file: &str, text: &str) -> Result<Vec<TimeSeriesPoint>, CliError> {
    check_header(file, text, SERIES_HEADER)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let lineno = i + 1;
        let f = split_line(file, lineno, line, 4)?;
        points.push(TimeSeriesPoint {
            timestamp_s: parse_field(file, lineno, "timestamp_s", f[0])?,
            skr_bps: parse_field(file, lineno, "skr_bps", f[1])?,
            qber: parse_field(file, lineno, "qber", f[2])?,
            secret_bits: parse_field(file, lineno, "secret_bits", f[3])?,
        });
    }
    Ok(points)
}

pub fn parse_summary(file: &str, text: &str) -> Result<Vec<SummaryRow>, CliError> {
    check_header(file, text, SUMMARY_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let lineno = i + 1;
        let f = split_line(file, lineno, line, 7)?;
        rows.push(SummaryRow {
            link_id: f[0].to_string(),
            points: parse_field(file, lineno, "points", f[1])?,
            mean_skr_bps: parse_field(file, lineno, "mean_skr_bps", f[2])?,
            std_skr_bps: parse_field(file, lineno, "std_skr_bps", f[3])?,
            mean_qber: parse_field(file, lineno, "mean_qber", f[4])?,
            std_qber: parse_field(file, lineno, "std_qber", f[5])?,
            total_secret_bits: parse_field(file, lineno, "total_secret_bits", f[6])?,
        });
    }
    Ok(rows)
}
