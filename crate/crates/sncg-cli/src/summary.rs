//! Aggregation of experiment summary CSVs into per-problem/algorithm
//! quantile tables.
//!
//! Quantiles use linear interpolation between order statistics
//! (`pos = q (n-1)`), so the median of an odd-length sample is the middle
//! value and the median of `{a, b}` is `(a+b)/2`.

use std::path::Path;

use crate::runner::{HarnessError, RunRow};

/// Aggregate of one (problem, algorithm) cell under one scope.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SummaryRow {
    pub problem: String,
    pub algorithm: String,
    /// "all" or "converged".
    pub scope: String,
    pub runs: usize,
    pub converged: usize,
    pub iters_p25: f64,
    pub iters_p50: f64,
    pub iters_p75: f64,
    pub ifo_p25: f64,
    pub ifo_p50: f64,
    pub ifo_p75: f64,
    pub iso_p25: f64,
    pub iso_p50: f64,
    pub iso_p75: f64,
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn quantiles(values: &mut [f64]) -> (f64, f64, f64) {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        quantile(values, 0.25),
        quantile(values, 0.50),
        quantile(values, 0.75),
    )
}

pub fn read_rows(paths: &[impl AsRef<Path>]) -> Result<Vec<RunRow>, HarnessError> {
    let mut rows = Vec::new();
    for path in paths {
        let mut reader = csv::Reader::from_path(path.as_ref()).map_err(|e| {
            match e.kind() {
                csv::ErrorKind::Io(_) => HarnessError::Io {
                    path: path.as_ref().display().to_string(),
                    source: std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        e.to_string(),
                    ),
                },
                _ => HarnessError::Csv(e),
            }
        })?;
        for row in reader.deserialize::<RunRow>() {
            rows.push(row?);
        }
    }
    Ok(rows)
}

/// Builds "all runs" and "converged only" aggregates for each
/// (problem, algorithm) cell, in first-appearance order.
pub fn aggregate(rows: &[RunRow]) -> Vec<SummaryRow> {
    let mut cells: Vec<(String, String)> = Vec::new();
    for row in rows {
        let key = (row.problem.clone(), row.algorithm.clone());
        if !cells.contains(&key) {
            cells.push(key);
        }
    }
    let mut out = Vec::new();
    for (problem, algorithm) in cells {
        let cell: Vec<&RunRow> = rows
            .iter()
            .filter(|r| r.problem == problem && r.algorithm == algorithm)
            .collect();
        let converged: Vec<&RunRow> = cell
            .iter()
            .copied()
            .filter(|r| r.status == "converged")
            .collect();
        let n_converged = converged.len();
        for (scope, subset) in [("all", &cell), ("converged", &converged)] {
            if subset.is_empty() {
                continue;
            }
            let mut iters: Vec<f64> = subset.iter().map(|r| r.iters as f64).collect();
            let mut ifo: Vec<f64> = subset.iter().map(|r| r.ifo_total as f64).collect();
            let mut iso: Vec<f64> = subset.iter().map(|r| r.iso_total as f64).collect();
            let (i25, i50, i75) = quantiles(&mut iters);
            let (f25, f50, f75) = quantiles(&mut ifo);
            let (s25, s50, s75) = quantiles(&mut iso);
            out.push(SummaryRow {
                problem: problem.clone(),
                algorithm: algorithm.clone(),
                scope: scope.to_string(),
                runs: subset.len(),
                converged: n_converged,
                iters_p25: i25,
                iters_p50: i50,
                iters_p75: i75,
                ifo_p25: f25,
                ifo_p50: f50,
                ifo_p75: f75,
                iso_p25: s25,
                iso_p50: s50,
                iso_p75: s75,
            });
        }
    }
    out
}

/// Reads summary CSVs and renders the aggregate table as CSV text.
pub fn summarize(paths: &[impl AsRef<Path>]) -> Result<String, HarnessError> {
    let rows = read_rows(paths)?;
    let aggregates = aggregate(&rows);
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &aggregates {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().expect("in-memory writer");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
