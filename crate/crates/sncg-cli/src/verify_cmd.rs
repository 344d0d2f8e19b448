//! Trace re-verification: counter reconciliation against the recorded batch
//! sizes plus recomputation of the stationarity flags.

use std::path::Path;

use sncg::driver::StepKind;

use crate::trace::{read_trace, Trace, TraceError, TRACE_SCHEMA_VERSION};

/// Verifies one trace file; an empty issue list means the trace is sound.
pub fn verify_trace_file(path: &Path) -> Result<Vec<String>, TraceError> {
    let trace = read_trace(path)?;
    Ok(verify_trace(&trace))
}

pub fn verify_trace(trace: &Trace) -> Vec<String> {
    let mut issues = Vec::new();
    let meta = &trace.meta;
    let result = &trace.result;
    let mut push = |msg: String| issues.push(msg);

    if meta.schema_version != TRACE_SCHEMA_VERSION {
        push(format!(
            "unsupported trace schema version {}",
            meta.schema_version
        ));
    }

    let mut prev_ifo = 0u64;
    let mut prev_iso = 0u64;
    let mut sg = 0usize;
    let mut ncgs = 0usize;
    let mut curvature = 0usize;
    for (i, rec) in trace.iters.iter().enumerate() {
        let n = i + 1;
        if rec.iter != n {
            push(format!("record {n}: iteration index {} out of order", rec.iter));
        }
        if rec.ifo_cum != prev_ifo + rec.ifo_delta {
            push(format!(
                "record {n}: ifo_cum {} != previous {} + delta {}",
                rec.ifo_cum, prev_ifo, rec.ifo_delta
            ));
        }
        if rec.iso_cum != prev_iso + rec.iso_delta {
            push(format!(
                "record {n}: iso_cum {} != previous {} + delta {}",
                rec.iso_cum, prev_iso, rec.iso_delta
            ));
        }
        if rec.ifo_cum < prev_ifo || rec.iso_cum < prev_iso {
            push(format!("record {n}: cumulative counter decreased"));
        }
        prev_ifo = rec.ifo_cum;
        prev_iso = rec.iso_cum;

        if rec.ifo_delta != meta.grad_batch as u64 {
            push(format!(
                "record {n}: ifo_delta {} != grad batch {}",
                rec.ifo_delta, meta.grad_batch
            ));
        }
        match rec.kind {
            StepKind::Sg => {
                sg += 1;
                if rec.iso_delta != 0 || rec.nc_applies != 0 {
                    push(format!("record {n}: sg pass consumed second-order oracle"));
                }
                if rec.rayleigh.is_some() {
                    push(format!("record {n}: sg pass carries a curvature value"));
                }
            }
            kind => {
                ncgs += 1;
                if kind == StepKind::NcgsCurvature {
                    curvature += 1;
                }
                let expected = meta.hess_batch as u64 * rec.nc_applies;
                if rec.iso_delta != expected {
                    push(format!(
                        "record {n}: iso_delta {} != hess batch {} x applies {}",
                        rec.iso_delta, meta.hess_batch, rec.nc_applies
                    ));
                }
            }
        }
        if rec.terminal && n != trace.iters.len() {
            push(format!("record {n}: terminal flag before the last record"));
        }
    }

    if result.iters != trace.iters.len() {
        push(format!(
            "result iters {} != {} trace records",
            result.iters,
            trace.iters.len()
        ));
    }
    if result.sg_steps != sg || result.ncgs_steps != ncgs {
        push(format!(
            "step counts (sg {}, ncgs {}) disagree with records (sg {sg}, ncgs {ncgs})",
            result.sg_steps, result.ncgs_steps
        ));
    }
    if result.curvature_steps != curvature {
        push(format!(
            "curvature steps {} disagree with records ({curvature})",
            result.curvature_steps
        ));
    }
    if result.iters != result.sg_steps + result.ncgs_steps {
        push("iters != sg_steps + ncgs_steps".to_string());
    }
    if result.ifo_total != prev_ifo || result.iso_total != prev_iso {
        push(format!(
            "totals (ifo {}, iso {}) != last cumulative (ifo {prev_ifo}, iso {prev_iso})",
            result.ifo_total, result.iso_total
        ));
    }
    if result.status == "converged" {
        match trace.iters.last() {
            Some(last) if last.terminal => {}
            _ => push("converged run without a terminal record".to_string()),
        }
    }

    // Stationarity flags must be reproducible from the stored values.
    if let (Some(grad_norm), Some(flag)) = (result.final_grad_norm, result.pass_first_order) {
        if flag != (grad_norm <= 2.0 * meta.eps1) {
            push(format!(
                "pass_first_order {flag} inconsistent with grad norm {grad_norm} at eps1 {}",
                meta.eps1
            ));
        }
    }
    if let (Some(lambda), Some(flag)) = (result.final_lambda_min, result.pass_second_order) {
        if flag != (lambda >= -2.0 * meta.eps2) {
            push(format!(
                "pass_second_order {flag} inconsistent with lambda_min {lambda} at eps2 {}",
                meta.eps2
            ));
        }
    }
    issues
}
