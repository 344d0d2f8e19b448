//! The optimizer drivers: two negative-curvature variants and a plain
//! mini-batch SGD baseline.
//!
//! Variant 1 runs the competing step every iteration with a curvature
//! tolerance `max(eps2, ||g||^alpha)/2` adaptive to the gradient magnitude,
//! and stops at the first iterate where `v'Hv > -eps2/2` and `||g|| <= eps1`.
//! Variant 2 takes plain gradient steps while `||g|| >= eps1` (no
//! second-order work at all) and only invokes the competing step with fixed
//! tolerance `eps2/2` below that threshold, stopping when `v'Hv > -eps2/2`.
//!
//! Each randomized ingredient gets the per-step failure budget
//! `delta' = delta / (1 + max(48 L2^2/eps2^3, 8 L1/eps1^2) Gap)`, whose
//! denominator is also the certified bound on the number of iterations.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{
    ceil_with_slack, estimate_gradient, BatchMode, EstimatorError,
};
use crate::negcurv::{LanczosOptions, SolverError};
use crate::ncgs::{ncgs_step, CurvatureTolerance, StepBranch, StepError, StepParams};
use crate::oracle::{Oracle, OracleCounts, OracleError, ProblemConstants, Region};
use crate::verify::dense_min_eig;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// All constants of a run: accuracy targets, failure budget, problem
/// constants, batch mode and solver options.
#[derive(Debug, Clone)]
pub struct SncgConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub alpha: f64,
    pub delta: f64,
    pub constants: ProblemConstants,
    pub mode: BatchMode,
    pub max_iters_override: Option<usize>,
    /// Record exact objective values per iteration and verify the final
    /// iterate with a dense stationarity check.
    pub verify_mode: bool,
    pub solver: LanczosOptions,
    delta_prime: f64,
}

impl SncgConfig {
    /// Builds a config with `eps2 = eps1^alpha`.
    pub fn new(
        eps1: f64,
        alpha: f64,
        delta: f64,
        constants: ProblemConstants,
    ) -> Result<Self, DriverError> {
        if !(eps1 > 0.0 && eps1 < 1.0) {
            return Err(DriverError::InvalidConfig(format!(
                "eps1 must lie in (0,1), got {eps1}"
            )));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(DriverError::InvalidConfig(format!(
                "alpha must lie in (0,1], got {alpha}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DriverError::InvalidConfig(format!(
                "delta must lie in (0,1), got {delta}"
            )));
        }
        constants
            .validate()
            .map_err(|e| DriverError::InvalidConfig(e.to_string()))?;
        let eps2 = eps1.powf(alpha);
        let mut cfg = SncgConfig {
            eps1,
            eps2,
            alpha,
            delta,
            constants,
            mode: BatchMode::Theoretical,
            max_iters_override: None,
            verify_mode: true,
            solver: LanczosOptions::default(),
            delta_prime: 0.0,
        };
        cfg.delta_prime = cfg.compute_delta_prime();
        Ok(cfg)
    }

    /// Overrides the second-order target (the default is `eps1^alpha`);
    /// the failure-budget split is recomputed.
    pub fn with_eps2(mut self, eps2: f64) -> Result<Self, DriverError> {
        if !(eps2 > 0.0 && eps2 < 1.0) {
            return Err(DriverError::InvalidConfig(format!(
                "eps2 must lie in (0,1), got {eps2}"
            )));
        }
        self.eps2 = eps2;
        self.delta_prime = self.compute_delta_prime();
        Ok(self)
    }

    pub fn with_mode(mut self, mode: BatchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_max_iters(mut self, cap: usize) -> Self {
        self.max_iters_override = Some(cap);
        self
    }

    pub fn with_verify(mut self, verify: bool) -> Self {
        self.verify_mode = verify;
        self
    }

    pub fn with_solver(mut self, solver: LanczosOptions) -> Self {
        self.solver = solver;
        self
    }

    fn cap_term(&self) -> f64 {
        let l1 = self.constants.grad_lipschitz;
        let l2 = self.constants.hess_lipschitz;
        let a = 48.0 * l2 * l2 / self.eps2.powi(3);
        let b = 8.0 * l1 / (self.eps1 * self.eps1);
        a.max(b) * self.constants.f_gap
    }

    fn compute_delta_prime(&self) -> f64 {
        self.delta / (1.0 + self.cap_term())
    }

    /// Per-step failure budget `delta / (1 + max(48 L2^2/eps2^3,
    /// 8 L1/eps1^2) Gap)`.
    pub fn delta_prime(&self) -> f64 {
        self.delta_prime
    }

    /// Gradient accuracy target fed to the batch sizing.
    pub fn eps4(&self) -> f64 {
        self.step_params().eps4()
    }

    /// Hessian accuracy target fed to the batch sizing.
    pub fn eps3(&self) -> f64 {
        self.step_params().eps3()
    }

    /// Certified iteration bound for variant 1.
    pub fn sncg1_iter_cap(&self) -> usize {
        ceil_with_slack(1.0 + self.cap_term())
    }

    /// Certified bound on plain gradient steps for variant 2 (and the SGD
    /// baseline's iteration cap).
    pub fn sncg2_sg_cap(&self) -> usize {
        let l1 = self.constants.grad_lipschitz;
        ceil_with_slack(8.0 * l1 * self.constants.f_gap / (self.eps1 * self.eps1))
    }

    /// Certified bound on competing-step invocations for variant 2.
    pub fn sncg2_ncgs_cap(&self) -> usize {
        let l2 = self.constants.hess_lipschitz;
        ceil_with_slack((1.0 + 48.0 * l2 * l2 / self.eps2.powi(3)) * self.constants.f_gap)
    }

    pub fn step_params(&self) -> StepParams {
        StepParams {
            eps1: self.eps1,
            eps2: self.eps2,
            delta_prime: self.delta_prime,
            constants: self.constants,
            mode: self.mode,
            solver: self.solver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    IterCapReached,
    SolverFailure,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RunStatus::Converged => "converged",
            RunStatus::IterCapReached => "iter_cap_reached",
            RunStatus::SolverFailure => "solver_failure",
        };
        f.write_str(s)
    }
}

/// What one loop pass did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Plain gradient step (variant 2 dispatch or the SGD baseline).
    Sg,
    /// Competing step that chose the gradient branch.
    NcgsGradient,
    /// Competing step that chose the curvature branch.
    NcgsCurvature,
    /// Competing step aborted by a solver failure.
    NcgsFailed,
}

impl StepKind {
    /// True for passes that invoked the competing step.
    pub fn is_ncgs(self) -> bool {
        !matches!(self, StepKind::Sg)
    }
}

/// One row of the per-iteration trace.
///
/// Oracle counters are cumulative within the run; `f_value` and `in_box` are
/// populated in verification mode only (and `in_box` only when the problem
/// documents a containment region).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub kind: StepKind,
    pub terminal: bool,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rayleigh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_nc: Option<f64>,
    pub nc_applies: u64,
    pub ifo_delta: u64,
    pub iso_delta: u64,
    pub ifo_cum: u64,
    pub iso_cum: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_box: Option<bool>,
    pub wall_time_s: f64,
}

/// Outcome of one optimizer run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub x_final: DVector<f64>,
    pub status: RunStatus,
    /// Loop passes executed (`sg_steps + ncgs_steps`).
    pub iters: usize,
    /// Passes that took a plain gradient step.
    pub sg_steps: usize,
    /// Passes that invoked the competing step.
    pub ncgs_steps: usize,
    /// Competing steps that chose the curvature branch.
    pub curvature_steps: usize,
    pub ifo_total: u64,
    pub iso_total: u64,
    pub final_f: Option<f64>,
    pub final_grad_norm: Option<f64>,
    pub final_lambda_min: Option<f64>,
    pub box_violations: u64,
    pub error_detail: Option<String>,
    pub trace: Vec<IterationRecord>,
}

struct Recorder<'a> {
    oracle: &'a Oracle,
    verify: bool,
    region: Option<Region>,
    start: Instant,
    base: OracleCounts,
    last: OracleCounts,
    trace: Vec<IterationRecord>,
    best: Option<(f64, DVector<f64>)>,
    box_violations: u64,
}

impl<'a> Recorder<'a> {
    fn new(oracle: &'a Oracle, verify: bool) -> Self {
        let counts = oracle.counts();
        Recorder {
            oracle,
            verify,
            region: oracle.certified_region(),
            start: Instant::now(),
            base: counts,
            last: counts,
            trace: Vec::new(),
            best: None,
            box_violations: 0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        x: &DVector<f64>,
        kind: StepKind,
        terminal: bool,
        grad_norm: f64,
        rayleigh: Option<f64>,
        eps_nc: Option<f64>,
        nc_applies: u64,
    ) {
        let now = self.oracle.counts();
        let f_value = if self.verify {
            let f = self.oracle.exact_value(x).ok();
            if let Some(f) = f {
                if self.best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    self.best = Some((f, x.clone()));
                }
            }
            f
        } else {
            None
        };
        let in_box = match (self.verify, &self.region) {
            (true, Some(region)) => {
                let inside = region.contains(x);
                if !inside {
                    self.box_violations += 1;
                }
                Some(inside)
            }
            _ => None,
        };
        self.trace.push(IterationRecord {
            iter: self.trace.len() + 1,
            kind,
            terminal,
            grad_norm,
            rayleigh,
            eps_nc,
            nc_applies,
            ifo_delta: now.ifo - self.last.ifo,
            iso_delta: now.iso - self.last.iso,
            ifo_cum: now.ifo - self.base.ifo,
            iso_cum: now.iso - self.base.iso,
            f_value,
            in_box,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        });
        self.last = now;
    }

    fn finish(
        self,
        x_final: DVector<f64>,
        status: RunStatus,
        sg_steps: usize,
        ncgs_steps: usize,
        curvature_steps: usize,
        error_detail: Option<String>,
    ) -> RunResult {
        // On a solver failure the best objective value seen wins in
        // verification mode; otherwise the last iterate stands.
        let x_final = if status == RunStatus::SolverFailure {
            match &self.best {
                Some((_, bx)) => bx.clone(),
                None => x_final,
            }
        } else {
            x_final
        };
        let end = self.oracle.counts();
        let (mut final_f, mut final_grad_norm, mut final_lambda_min) = (None, None, None);
        if self.verify {
            if let Ok(exact) = self.oracle.exact_eval(&x_final) {
                final_f = Some(exact.value);
                final_grad_norm = Some(exact.grad.norm());
                final_lambda_min = dense_min_eig(&exact.hessian).ok().map(|(l, _)| l);
            }
        }
        RunResult {
            x_final,
            status,
            iters: self.trace.len(),
            sg_steps,
            ncgs_steps,
            curvature_steps,
            ifo_total: end.ifo - self.base.ifo,
            iso_total: end.iso - self.base.iso,
            final_f,
            final_grad_norm,
            final_lambda_min,
            box_violations: self.box_violations,
            error_detail,
            trace: self.trace,
        }
    }
}

fn check_start(oracle: &Oracle, x0: &DVector<f64>) -> Result<(), DriverError> {
    if x0.len() != oracle.dim() {
        return Err(DriverError::Oracle(OracleError::DimensionMismatch {
            expected: oracle.dim(),
            got: x0.len(),
        }));
    }
    Ok(())
}

fn map_step_error(e: StepError) -> DriverError {
    match e {
        StepError::Estimator(e) => DriverError::Estimator(e),
        StepError::Oracle(e) => DriverError::Oracle(e),
        other => DriverError::InvalidConfig(other.to_string()),
    }
}

fn effective_cap(theoretical: usize, over: Option<usize>) -> usize {
    match over {
        Some(o) => theoretical.min(o),
        None => theoretical,
    }
}

/// Variant 1: the competing step every iteration, curvature tolerance
/// adaptive to the gradient magnitude, joint first/second-order termination.
pub fn sncg1(
    oracle: &Oracle,
    x0: &DVector<f64>,
    cfg: &SncgConfig,
    rng: &mut impl Rng,
) -> Result<RunResult, DriverError> {
    check_start(oracle, x0)?;
    let cap = effective_cap(cfg.sncg1_iter_cap(), cfg.max_iters_override);
    let params = cfg.step_params();
    let tolerance = CurvatureTolerance::GradAdaptive {
        floor: cfg.eps2,
        exponent: cfg.alpha,
    };
    let mut rec = Recorder::new(oracle, cfg.verify_mode);
    let mut x = x0.clone();
    let mut ncgs_steps = 0usize;
    let mut curvature_steps = 0usize;
    let mut error_detail = None;

    let status = loop {
        if ncgs_steps >= cap {
            break RunStatus::IterCapReached;
        }
        match ncgs_step(oracle, &x, None, tolerance, &params, rng) {
            Ok(out) => {
                ncgs_steps += 1;
                let kind = match out.branch {
                    StepBranch::Curvature => {
                        curvature_steps += 1;
                        StepKind::NcgsCurvature
                    }
                    StepBranch::Gradient => StepKind::NcgsGradient,
                };
                let terminal =
                    out.rayleigh > -cfg.eps2 / 2.0 && out.grad_norm <= cfg.eps1;
                rec.record(
                    &x,
                    kind,
                    terminal,
                    out.grad_norm,
                    Some(out.rayleigh),
                    Some(out.eps_nc),
                    out.curvature.stats.operator_applies,
                );
                if terminal {
                    break RunStatus::Converged;
                }
                x = out.x_next;
            }
            Err(StepError::Solver { source, grad_norm }) => {
                ncgs_steps += 1;
                let (rayleigh, eps_nc, applies) = solver_failure_details(&source);
                rec.record(&x, StepKind::NcgsFailed, true, grad_norm, rayleigh, eps_nc, applies);
                error_detail = Some(source.to_string());
                break RunStatus::SolverFailure;
            }
            Err(other) => return Err(map_step_error(other)),
        }
    };
    Ok(rec.finish(x, status, 0, ncgs_steps, curvature_steps, error_detail))
}

/// Variant 2: plain gradient steps while the estimated gradient is large (no
/// second-order oracle calls on those iterations); the competing step with
/// fixed tolerance `eps2/2` otherwise.
pub fn sncg2(
    oracle: &Oracle,
    x0: &DVector<f64>,
    cfg: &SncgConfig,
    rng: &mut impl Rng,
) -> Result<RunResult, DriverError> {
    check_start(oracle, x0)?;
    let sg_cap = cfg.sncg2_sg_cap();
    let ncgs_cap = cfg.sncg2_ncgs_cap();
    let l1 = cfg.constants.grad_lipschitz;
    let params = cfg.step_params();
    let mut rec = Recorder::new(oracle, cfg.verify_mode);
    let mut x = x0.clone();
    let mut sg_steps = 0usize;
    let mut ncgs_steps = 0usize;
    let mut curvature_steps = 0usize;
    let mut error_detail = None;

    let status = loop {
        let iters = sg_steps + ncgs_steps;
        if let Some(over) = cfg.max_iters_override {
            if iters >= over {
                break RunStatus::IterCapReached;
            }
        }
        if sg_steps >= sg_cap || ncgs_steps >= ncgs_cap {
            break RunStatus::IterCapReached;
        }
        let grad = estimate_gradient(
            oracle,
            &x,
            params.eps4(),
            cfg.delta_prime,
            cfg.mode,
            rng,
        )?;
        if grad.norm >= cfg.eps1 {
            sg_steps += 1;
            let x_next = &x - &grad.g / l1;
            rec.record(&x, StepKind::Sg, false, grad.norm, None, None, 0);
            x = x_next;
        } else {
            match ncgs_step(
                oracle,
                &x,
                Some(grad),
                CurvatureTolerance::Fixed(cfg.eps2 / 2.0),
                &params,
                rng,
            ) {
                Ok(out) => {
                    ncgs_steps += 1;
                    let kind = match out.branch {
                        StepBranch::Curvature => {
                            curvature_steps += 1;
                            StepKind::NcgsCurvature
                        }
                        StepBranch::Gradient => StepKind::NcgsGradient,
                    };
                    let terminal = out.rayleigh > -cfg.eps2 / 2.0;
                    rec.record(
                        &x,
                        kind,
                        terminal,
                        out.grad_norm,
                        Some(out.rayleigh),
                        Some(out.eps_nc),
                        out.curvature.stats.operator_applies,
                    );
                    if terminal {
                        break RunStatus::Converged;
                    }
                    x = out.x_next;
                }
                Err(StepError::Solver { source, grad_norm }) => {
                    ncgs_steps += 1;
                    let (rayleigh, eps_nc, applies) = solver_failure_details(&source);
                    rec.record(
                        &x,
                        StepKind::NcgsFailed,
                        true,
                        grad_norm,
                        rayleigh,
                        eps_nc,
                        applies,
                    );
                    error_detail = Some(source.to_string());
                    break RunStatus::SolverFailure;
                }
                Err(other) => return Err(map_step_error(other)),
            }
        }
    };
    Ok(rec.finish(x, status, sg_steps, ncgs_steps, curvature_steps, error_detail))
}

/// Plain mini-batch SGD with fixed step `1/L1`, stopping at
/// `||g|| <= eps1`. First-order only; it happily terminates at saddle
/// points, which is exactly the contrast the benchmark demonstrates.
pub fn sgd_baseline(
    oracle: &Oracle,
    x0: &DVector<f64>,
    cfg: &SncgConfig,
    rng: &mut impl Rng,
) -> Result<RunResult, DriverError> {
    check_start(oracle, x0)?;
    let cap = effective_cap(cfg.sncg2_sg_cap(), cfg.max_iters_override);
    let l1 = cfg.constants.grad_lipschitz;
    let params = cfg.step_params();
    let mut rec = Recorder::new(oracle, cfg.verify_mode);
    let mut x = x0.clone();
    let mut sg_steps = 0usize;

    let status = loop {
        if sg_steps >= cap {
            break RunStatus::IterCapReached;
        }
        let grad = estimate_gradient(
            oracle,
            &x,
            params.eps4(),
            cfg.delta_prime,
            cfg.mode,
            rng,
        )?;
        sg_steps += 1;
        let terminal = grad.norm <= cfg.eps1;
        rec.record(&x, StepKind::Sg, terminal, grad.norm, None, None, 0);
        if terminal {
            break RunStatus::Converged;
        }
        x = &x - &grad.g / l1;
    };
    Ok(rec.finish(x, status, sg_steps, 0, 0, None))
}

fn solver_failure_details(e: &SolverError) -> (Option<f64>, Option<f64>, u64) {
    match e {
        SolverError::BudgetExceeded { best, .. } => (
            Some(best.rayleigh),
            Some(best.eps),
            best.stats.operator_applies,
        ),
        _ => (None, None, 0),
    }
}
