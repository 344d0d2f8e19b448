//! Experiment execution: builds the problem once, fans runs out over a
//! worker pool (each run with an isolated RNG stream and isolated oracle
//! counters), and writes all artifacts from a single collector so output is
//! deterministic byte-for-byte apart from wall-clock fields.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sncg::driver::{sgd_baseline, sncg1, sncg2, RunResult, SncgConfig};
use sncg::estimator::{resolved_grad_batch, resolved_hess_batch, BatchMode};
use sncg::negcurv::LanczosOptions;
use sncg::oracle::{
    load_matrix_problem, Oracle, PcaFiniteSum, Population, SaddleQuadratic, SamplingScheme,
    SeparableQuartic, StochasticProblem,
};

use crate::config::{
    Algorithm, ExperimentConfig, ModeConfig, ProblemKind, SamplingConfig, StartKind,
};
use crate::trace::{write_trace, MetaRecord, ResultRecord, TraceError, TRACE_SCHEMA_VERSION};

pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("building problem: {0}")]
    Problem(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One row of the experiment summary CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub schema_version: u32,
    pub problem: String,
    pub algorithm: String,
    pub seed: u64,
    pub status: String,
    pub iters: usize,
    pub sg_steps: usize,
    pub ncgs_steps: usize,
    pub ifo_total: u64,
    pub iso_total: u64,
    pub final_grad_norm: Option<f64>,
    pub final_lambda_min: Option<f64>,
    pub wall_time_s: f64,
}

pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub rows: Vec<RunRow>,
    pub trace_paths: Vec<PathBuf>,
    pub csv_path: PathBuf,
    /// Runs that failed with a hard error (not a status).
    pub failed: usize,
}

struct JobOutput {
    row: RunRow,
    trace: Option<(MetaRecord, RunResult, ResultRecord)>,
    error: Option<String>,
}

pub fn build_problem(
    cfg: &ExperimentConfig,
) -> Result<Arc<dyn StochasticProblem>, HarnessError> {
    let p = &cfg.problem;
    let problem: Arc<dyn StochasticProblem> = match p.kind {
        ProblemKind::SaddleQuadratic => {
            let population = if p.population == 0 {
                Population::Infinite
            } else {
                Population::Finite(p.population)
            };
            Arc::new(SaddleQuadratic::new(
                p.dim,
                p.noise_radius,
                population,
                p.data_seed,
            ))
        }
        ProblemKind::SeparableQuartic => Arc::new(SeparableQuartic::with_box(
            p.dim,
            p.weight_spread,
            p.population,
            p.data_seed,
            p.box_radius,
        )),
        ProblemKind::PcaFiniteSum => Arc::new(PcaFiniteSum::new(p.dim, p.population, p.data_seed)),
        ProblemKind::MatrixFile => {
            let path = p.path.as_ref().expect("validated");
            let problem = load_matrix_problem(Path::new(path))
                .map_err(|e| HarnessError::Problem(e.to_string()))?;
            Arc::new(problem)
        }
    };
    Ok(problem)
}

fn resolve_start(
    cfg: &ExperimentConfig,
    oracle: &Oracle,
    rng: &mut impl Rng,
) -> Result<DVector<f64>, String> {
    match cfg.start.kind {
        StartKind::Default => Ok(oracle.default_start()),
        StartKind::Origin => Ok(DVector::zeros(oracle.dim())),
        StartKind::Fixed => {
            let value = cfg.start.value.as_ref().expect("validated");
            if value.len() != oracle.dim() {
                return Err(format!(
                    "start.value has {} entries, problem dim is {}",
                    value.len(),
                    oracle.dim()
                ));
            }
            Ok(DVector::from_vec(value.clone()))
        }
        StartKind::Uniform => {
            let h = cfg.start.halfwidth;
            let base = oracle.default_start();
            Ok(DVector::from_fn(oracle.dim(), |j, _| {
                base[j] + h * (2.0 * rng.random::<f64>() - 1.0)
            }))
        }
    }
}

fn batch_mode(cfg: &ExperimentConfig) -> BatchMode {
    match cfg.run.mode {
        ModeConfig::Theoretical => BatchMode::Theoretical,
        ModeConfig::Practical => BatchMode::Practical {
            grad_cap: cfg.run.grad_cap,
            hess_cap: cfg.run.hess_cap,
        },
    }
}

fn run_id(cfg: &ExperimentConfig, alg: Algorithm, seed: u64) -> String {
    format!("{}__{}__s{}", cfg.problem.kind, alg, seed)
}

fn execute_job(
    cfg: &ExperimentConfig,
    problem: Arc<dyn StochasticProblem>,
    alg: Algorithm,
    seed: u64,
) -> Result<(RunRow, MetaRecord, RunResult, ResultRecord), String> {
    let sampling = match cfg.run.sampling {
        SamplingConfig::WithReplacement => SamplingScheme::WithReplacement,
        SamplingConfig::WithoutReplacement => SamplingScheme::WithoutReplacement,
    };
    let oracle = Oracle::from_arc(problem)
        .with_sampling(sampling)
        .with_dense_cap(cfg.run.dense_cap);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = resolve_start(cfg, &oracle, &mut rng)?;

    let mut constants = oracle.constants();
    constants.f_gap = oracle.f_gap_from(&x0);
    let mode = batch_mode(cfg);
    let mut sncg_cfg = SncgConfig::new(cfg.run.eps1, cfg.run.alpha, cfg.run.delta, constants)
        .map_err(|e| e.to_string())?
        .with_mode(mode)
        .with_verify(cfg.run.verify)
        .with_solver(LanczosOptions {
            budget_factor: cfg.run.solver_budget_factor,
        });
    if let Some(eps2) = cfg.run.eps2 {
        sncg_cfg = sncg_cfg.with_eps2(eps2).map_err(|e| e.to_string())?;
    }
    if let Some(cap) = cfg.run.max_iters {
        sncg_cfg = sncg_cfg.with_max_iters(cap);
    }

    let grad_batch = resolved_grad_batch(&oracle, sncg_cfg.eps4(), sncg_cfg.delta_prime(), mode)
        .map_err(|e| e.to_string())?;
    let hess_batch = resolved_hess_batch(&oracle, sncg_cfg.eps3(), sncg_cfg.delta_prime(), mode)
        .map_err(|e| e.to_string())?;

    let meta = MetaRecord {
        schema_version: TRACE_SCHEMA_VERSION,
        run_id: run_id(cfg, alg, seed),
        problem: cfg.problem.kind.to_string(),
        algorithm: alg.to_string(),
        seed,
        dim: oracle.dim(),
        eps1: sncg_cfg.eps1,
        eps2: sncg_cfg.eps2,
        alpha: sncg_cfg.alpha,
        delta: sncg_cfg.delta,
        delta_prime: sncg_cfg.delta_prime(),
        mode: match cfg.run.mode {
            ModeConfig::Theoretical => "theoretical".to_string(),
            ModeConfig::Practical => "practical".to_string(),
        },
        grad_batch,
        hess_batch,
        sncg1_iter_cap: sncg_cfg.sncg1_iter_cap(),
        sncg2_sg_cap: sncg_cfg.sncg2_sg_cap(),
        sncg2_ncgs_cap: sncg_cfg.sncg2_ncgs_cap(),
        constants,
    };

    let started = Instant::now();
    let result = match alg {
        Algorithm::Sncg1 => sncg1(&oracle, &x0, &sncg_cfg, &mut rng),
        Algorithm::Sncg2 => sncg2(&oracle, &x0, &sncg_cfg, &mut rng),
        Algorithm::Sgd => sgd_baseline(&oracle, &x0, &sncg_cfg, &mut rng),
    }
    .map_err(|e| e.to_string())?;
    let wall = started.elapsed().as_secs_f64();

    let pass_first = result
        .final_grad_norm
        .map(|g| g <= 2.0 * sncg_cfg.eps1);
    let pass_second = result
        .final_lambda_min
        .map(|l| l >= -2.0 * sncg_cfg.eps2);

    let record = ResultRecord {
        status: result.status.to_string(),
        iters: result.iters,
        sg_steps: result.sg_steps,
        ncgs_steps: result.ncgs_steps,
        curvature_steps: result.curvature_steps,
        ifo_total: result.ifo_total,
        iso_total: result.iso_total,
        final_f: result.final_f,
        final_grad_norm: result.final_grad_norm,
        final_lambda_min: result.final_lambda_min,
        pass_first_order: pass_first,
        pass_second_order: pass_second,
        box_violations: result.box_violations,
        error_detail: result.error_detail.clone(),
        x_final: result.x_final.iter().copied().collect(),
        wall_time_s: wall,
    };
    let row = RunRow {
        schema_version: CSV_SCHEMA_VERSION,
        problem: cfg.problem.kind.to_string(),
        algorithm: alg.to_string(),
        seed,
        status: result.status.to_string(),
        iters: result.iters,
        sg_steps: result.sg_steps,
        ncgs_steps: result.ncgs_steps,
        ifo_total: result.ifo_total,
        iso_total: result.iso_total,
        final_grad_norm: result.final_grad_norm,
        final_lambda_min: result.final_lambda_min,
        wall_time_s: wall,
    };
    Ok((row, meta, result, record))
}

fn worker_count(cfg: &ExperimentConfig) -> usize {
    cfg.workers
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(4)
                .min(8)
        })
        .max(1)
}

/// Executes the full run matrix and writes traces, the summary CSV and the
/// resolved config echo into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome, HarnessError> {
    let problem = build_problem(cfg)?;
    let jobs: Vec<(Algorithm, u64)> = cfg
        .run
        .algorithms
        .iter()
        .flat_map(|&alg| cfg.run.seeds.iter().map(move |&s| (alg, s)))
        .collect();

    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..jobs.len()).collect());
    let outputs: Vec<Mutex<Option<JobOutput>>> =
        (0..jobs.len()).map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..worker_count(cfg).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let idx = match queue.lock().unwrap().pop_front() {
                    Some(i) => i,
                    None => break,
                };
                let (alg, seed) = jobs[idx];
                let output = match execute_job(cfg, Arc::clone(&problem), alg, seed) {
                    Ok((row, meta, result, record)) => JobOutput {
                        row,
                        trace: Some((meta, result, record)),
                        error: None,
                    },
                    Err(msg) => JobOutput {
                        row: RunRow {
                            schema_version: CSV_SCHEMA_VERSION,
                            problem: cfg.problem.kind.to_string(),
                            algorithm: alg.to_string(),
                            seed,
                            status: "error".to_string(),
                            iters: 0,
                            sg_steps: 0,
                            ncgs_steps: 0,
                            ifo_total: 0,
                            iso_total: 0,
                            final_grad_norm: None,
                            final_lambda_min: None,
                            wall_time_s: 0.0,
                        },
                        trace: None,
                        error: Some(msg),
                    },
                };
                *outputs[idx].lock().unwrap() = Some(output);
            });
        }
    });

    // Single collector: everything below runs on this thread, in job order.
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let resolved_path = out_dir.join("resolved_config.toml");
    std::fs::write(&resolved_path, cfg.to_resolved_toml()).map_err(|source| HarnessError::Io {
        path: resolved_path.display().to_string(),
        source,
    })?;

    let csv_path = out_dir.join("summary.csv");
    let mut writer = csv::Writer::from_path(&csv_path)?;
    let mut rows = Vec::with_capacity(jobs.len());
    let mut trace_paths = Vec::new();
    let mut failed = 0;
    for (idx, slot) in outputs.iter().enumerate() {
        let output = slot.lock().unwrap().take().expect("job completed");
        if let Some(msg) = &output.error {
            let (alg, seed) = jobs[idx];
            eprintln!("run {}__s{} failed: {}", alg, seed, msg);
            failed += 1;
        }
        if let Some((meta, result, record)) = &output.trace {
            let path = out_dir.join(format!("{}.jsonl", meta.run_id));
            write_trace(&path, meta, &result.trace, record)?;
            trace_paths.push(path);
        }
        writer.serialize(&output.row)?;
        rows.push(output.row);
    }
    writer.flush().map_err(|source| HarnessError::Io {
        path: csv_path.display().to_string(),
        source,
    })?;

    Ok(ExperimentOutcome {
        out_dir: out_dir.to_path_buf(),
        rows,
        trace_paths,
        csv_path,
        failed,
    })
}
