//! Versioned JSONL trace schema: one meta line, one line per iteration, one
//! result line. Every non-timing byte is a pure function of (config, seed).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sncg::driver::IterationRecord;
use sncg::oracle::ProblemConstants;
use thiserror::Error;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {detail}")]
    Malformed { path: String, detail: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub problem: String,
    pub algorithm: String,
    pub seed: u64,
    pub dim: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub alpha: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub mode: String,
    /// Resolved gradient batch size `|S1|` for this run.
    pub grad_batch: usize,
    /// Resolved Hessian batch size `|S2|` for this run.
    pub hess_batch: usize,
    pub sncg1_iter_cap: usize,
    pub sncg2_sg_cap: usize,
    pub sncg2_ncgs_cap: usize,
    pub constants: ProblemConstants,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub status: String,
    pub iters: usize,
    pub sg_steps: usize,
    pub ncgs_steps: usize,
    pub curvature_steps: usize,
    pub ifo_total: u64,
    pub iso_total: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_lambda_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass_first_order: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass_second_order: Option<bool>,
    pub box_violations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
    pub x_final: Vec<f64>,
    pub wall_time_s: f64,
}

/// One line of a trace file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum TraceRecord {
    Meta(MetaRecord),
    Iter(IterationRecord),
    Result(ResultRecord),
}

/// A fully parsed trace.
#[derive(Debug, Clone)]
pub struct Trace {
    pub meta: MetaRecord,
    pub iters: Vec<IterationRecord>,
    pub result: ResultRecord,
}

pub fn write_trace(
    path: &Path,
    meta: &MetaRecord,
    iters: &[IterationRecord],
    result: &ResultRecord,
) -> Result<(), TraceError> {
    let display = path.display().to_string();
    let io_err = |source| TraceError::Io {
        path: display.clone(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let dump = |w: &mut BufWriter<fs::File>, record: &TraceRecord| -> Result<(), TraceError> {
        let line = serde_json::to_string(record).expect("trace records serialize");
        writeln!(w, "{line}").map_err(|source| TraceError::Io {
            path: display.clone(),
            source,
        })
    };
    dump(&mut w, &TraceRecord::Meta(meta.clone()))?;
    for it in iters {
        dump(&mut w, &TraceRecord::Iter(it.clone()))?;
    }
    dump(&mut w, &TraceRecord::Result(result.clone()))?;
    w.flush().map_err(|source| TraceError::Io {
        path: display.clone(),
        source,
    })
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: display.clone(),
        source,
    })?;
    let mut meta = None;
    let mut result = None;
    let mut iters = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord =
            serde_json::from_str(line).map_err(|source| TraceError::Json {
                path: display.clone(),
                line: i + 1,
                source,
            })?;
        match record {
            TraceRecord::Meta(m) => {
                if meta.is_some() {
                    return Err(TraceError::Malformed {
                        path: display,
                        detail: "duplicate meta record".into(),
                    });
                }
                meta = Some(m);
            }
            TraceRecord::Iter(it) => iters.push(it),
            TraceRecord::Result(r) => {
                if result.is_some() {
                    return Err(TraceError::Malformed {
                        path: display,
                        detail: "duplicate result record".into(),
                    });
                }
                result = Some(r);
            }
        }
    }
    let meta = meta.ok_or_else(|| TraceError::Malformed {
        path: display.clone(),
        detail: "missing meta record".into(),
    })?;
    let result = result.ok_or_else(|| TraceError::Malformed {
        path: display.clone(),
        detail: "missing result record".into(),
    })?;
    Ok(Trace {
        meta,
        iters,
        result,
    })
}
