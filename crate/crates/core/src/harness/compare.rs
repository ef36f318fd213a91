use std::fmt::Write as _;

use super::eval::MetricsReport;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub return_mean: f64,
    pub return_std: f64,
    pub success_mean: f64,
    pub success_std: f64,
    pub discounted_mean: f64,
}

impl From<&MetricsReport> for CompareRow {
    fn from(r: &MetricsReport) -> Self {
        Self {
            method: r.label.clone(),
            return_mean: r.return_mean,
            return_std: r.return_std,
            success_mean: r.success_mean,
            success_std: r.success_std,
            discounted_mean: r.discounted_mean,
        }
    }
}

/// One row per report: `(csv, rendered text table)`.
pub fn run_compare(reports: &[MetricsReport]) -> (Vec<CompareRow>, String, String) {
    let rows: Vec<CompareRow> = reports.iter().map(CompareRow::from).collect();
    let mut csv = String::from("method,return_mean,return_std,success_mean,success_std,discounted_return_mean\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.method, r.return_mean, r.return_std, r.success_mean, r.success_std, r.discounted_mean
        );
    }
    let text = render_table(&rows);
    (rows, csv, text)
}

pub fn render_table(rows: &[CompareRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} | {:>14} | {:>14}", "Method", "Return", "Success (%)");
    let _ = writeln!(out, "{}-+-{}-+-{}", "-".repeat(width), "-".repeat(14), "-".repeat(14));
    for r in rows {
        let ret = format!("{:.1} ± {:.1}", r.return_mean, r.return_std);
        let suc = format!("{:.1} ± {:.1}", r.success_mean, r.success_std);
        let _ = writeln!(out, "{:<width$} | {:>14} | {:>14}", r.method, ret, suc);
    }
    out
}

pub fn parse_compare_csv(csv: &str) -> Result<Vec<CompareRow>> {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    lines.next().ok_or_else(|| Error::InvalidArgument("empty comparison csv".into()))?;
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::InvalidArgument(format!("malformed row: {line}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{s}: {e}")));
            Ok(CompareRow {
                method: f[0].to_string(),
                return_mean: num(f[1])?,
                return_std: num(f[2])?,
                success_mean: num(f[3])?,
                success_std: num(f[4])?,
                discounted_mean: num(f[5])?,
            })
        })
        .collect()
}
