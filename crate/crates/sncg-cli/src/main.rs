use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sncg_cli::config::ExperimentConfig;
use sncg_cli::runner::run_experiment;
use sncg_cli::summary::summarize;
use sncg_cli::verify_cmd::verify_trace_file;

/// Benchmark harness for stochastic non-convex optimizers with
/// negative-curvature saddle escape.
#[derive(Parser)]
#[command(name = "sncg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the run matrix described by a config file.
    ///
    /// Trailing key=value arguments override config fields (dotted paths,
    /// e.g. `run.eps1=0.1`); precedence is CLI > environment > file >
    /// defaults.
    Run {
        config: PathBuf,
        /// Field overrides of the form key=value.
        overrides: Vec<String>,
        /// Output directory (equivalent to `output_dir=DIR`).
        #[arg(long)]
        output_dir: Option<String>,
    },
    /// Aggregate one or more summary CSVs into quantile tables.
    Summarize { paths: Vec<PathBuf> },
    /// Re-check counter reconciliation and stationarity flags of traces.
    Verify { paths: Vec<PathBuf> },
    /// List the built-in problems and their documented constants.
    ListProblems,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            mut overrides,
            output_dir,
        } => {
            if let Some(dir) = output_dir {
                overrides.push(format!("output_dir={dir}"));
            }
            let cfg = match ExperimentConfig::load(&config, &overrides) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let out_dir = PathBuf::from(&cfg.output_dir);
            match run_experiment(&cfg, &out_dir) {
                Ok(outcome) => {
                    for row in &outcome.rows {
                        println!(
                            "{}  {}  seed {}  {}  iters {}  ifo {}  iso {}",
                            row.problem,
                            row.algorithm,
                            row.seed,
                            row.status,
                            row.iters,
                            row.ifo_total,
                            row.iso_total
                        );
                    }
                    println!(
                        "wrote {} traces and {} to {}",
                        outcome.trace_paths.len(),
                        outcome.csv_path.display(),
                        outcome.out_dir.display()
                    );
                    if outcome.failed > 0 {
                        eprintln!("{} runs failed", outcome.failed);
                        ExitCode::from(EXIT_RUNTIME)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => {
                    eprintln!("runtime error: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::Summarize { paths } => {
            if paths.is_empty() {
                eprintln!("summarize: no input files");
                return ExitCode::from(EXIT_CONFIG);
            }
            match summarize(&paths) {
                Ok(table) => {
                    print!("{table}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("summarize error: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::Verify { paths } => {
            if paths.is_empty() {
                eprintln!("verify: no input files");
                return ExitCode::from(EXIT_CONFIG);
            }
            let mut failures = 0;
            for path in &paths {
                match verify_trace_file(path) {
                    Ok(issues) if issues.is_empty() => println!("OK   {}", path.display()),
                    Ok(issues) => {
                        failures += 1;
                        println!("FAIL {}", path.display());
                        for issue in issues {
                            println!("     {issue}");
                        }
                    }
                    Err(e) => {
                        failures += 1;
                        println!("FAIL {} ({e})", path.display());
                    }
                }
            }
            if failures > 0 {
                ExitCode::from(EXIT_VERIFY)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::ListProblems => {
            print!("{}", problem_catalog());
            ExitCode::SUCCESS
        }
    }
}

fn problem_catalog() -> String {
    "\
saddle_quadratic    f(x; xi) = x'Dx/2 + xi'x with a mildly indefinite diagonal D
                    (default spectrum 0.5..0.1 with one -0.04 direction) and
                    zero-mean bounded gradient noise. Hessian estimates are
                    exact; constants: L1 = max|D|, L2 = L1, G = max noise norm.
                    Fields: dim, noise_radius, population (0 = infinite), data_seed.

separable_quartic   f(x; i) = w_i sum_j (x_j^4/4 - x_j^2/2), weights of mean 1.
                    Strict saddle at the origin (lambda_min = -1), minima at
                    |x_j| = 1. Constants on |x|_inf <= box_radius:
                    L1 = w_max max(3R^2-1, 1), L2 = 6R, G from the weight spread.
                    Fields: dim, weight_spread (0 = noiseless), population,
                    box_radius, data_seed.

pca_finite_sum      f(x; i) = -(a_i'x)^2/2 + |x|^4/4 with random unit rows a_i.
                    Saddle at the origin, minima along the top eigenvector of
                    the row Gram matrix. Constants on |x| <= 1.5: L1 = 3R^2,
                    L2 = 6R, G = (lambda_max + 1) R.
                    Fields: dim, population, data_seed.

matrix_file         pca_finite_sum over rows loaded from a CSV (one sample per
                    row) with declared constants in a `<path>.json` sidecar:
                    {\"grad_lipschitz\", \"hess_lipschitz\", \"noise_scale\",
                    \"f_gap\", \"x0\": [...], \"ball_radius\"}.
                    Fields: path.
"
    .to_string()
}
