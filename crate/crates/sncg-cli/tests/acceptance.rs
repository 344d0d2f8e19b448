//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Everything here is pinned — tolerances, thresholds, seed counts — and
//! checked against independent oracles (dense eigendecomposition, exact
//! full-population evaluations, hand-frozen formula values).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sncg::driver::{sgd_baseline, sncg1, sncg2, RunResult, RunStatus, SncgConfig, StepKind};
use sncg::estimator::{grad_batch_size, hess_batch_size, BatchMode};
use sncg::negcurv::{min_eigvec, DenseSymOperator, LanczosOptions};
use sncg::ncgs::{ncgs_step, sufficient_decrease_bound, CurvatureTolerance, StepParams};
use sncg::oracle::{Oracle, PcaFiniteSum, Population, SaddleQuadratic, SeparableQuartic};
use sncg::verify::{check_stationarity, dense_min_eig};

#[test]
fn criterion_1_batch_size_formulas() {
    // Frozen from an independent evaluation of the sizing formulas:
    // 4(1 + 3 ln^2 10)/0.01 = 6762.277... and 1600 ln 200 = 8477.307...
    assert_eq!(grad_batch_size(1.0, 0.1, 0.1).unwrap(), 6763);
    assert_eq!(hess_batch_size(1.0, 0.1, 0.1, 10).unwrap(), 8478);
    println!("acceptance 1 (batch-size formulas): PASS");
}

#[test]
fn criterion_2_negative_curvature_contract() {
    let (eps, delta) = (0.05, 0.1);
    let trials = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_501);
    let mut violations = 0;
    for _ in 0..trials {
        let d = rng.random_range(2..=50);
        // Random orthogonal basis times a spectrum drawn uniformly in [-1, 1].
        let gauss = DMatrix::from_fn(d, d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let q = gauss.qr().q();
        let spectrum =
            DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| 2.0 * rng.random::<f64>() - 1.0));
        let h = &q * spectrum * q.transpose();
        let (lambda_min, _) = dense_min_eig(&(&h + h.transpose()).scale(0.5)).unwrap();
        let op = DenseSymOperator::new((&h + h.transpose()).scale(0.5));
        let est = min_eigvec(&op, 1.0, eps, delta, &mut rng).unwrap();
        if lambda_min < est.rayleigh - eps - 1e-9 {
            violations += 1;
        }
    }
    let limit = (0.15 * trials as f64) as usize;
    assert!(
        violations <= limit,
        "{violations} contract violations out of {trials} (limit {limit})"
    );
    println!(
        "acceptance 2 (negative-curvature contract): PASS ({violations}/{trials} violations)"
    );
}

#[test]
fn criterion_3_per_step_sufficient_decrease() {
    let quartic = Oracle::new(SeparableQuartic::new(8, 0.0, 1, 0));
    let pca = Oracle::new(PcaFiniteSum::new(6, 1, 3));
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut checked = 0;
    for (oracle, linf_draw) in [(&quartic, true), (&pca, false)] {
        let c = oracle.constants();
        for _ in 0..100 {
            let d = oracle.dim();
            let x = if linf_draw {
                DVector::from_fn(d, |_, _| 1.0 * (2.0 * rng.random::<f64>() - 1.0))
            } else {
                let v = DVector::from_fn(d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
                let r: f64 = 1.2 * rng.random::<f64>();
                v.normalize() * r
            };
            let eps1 = 0.02 + 0.85 * rng.random::<f64>();
            let eps2 = 0.02 + 0.85 * rng.random::<f64>();
            let params = StepParams {
                eps1,
                eps2,
                delta_prime: 0.1,
                constants: c,
                mode: BatchMode::Theoretical,
                solver: LanczosOptions::default(),
            };
            let out = ncgs_step(
                oracle,
                &x,
                None,
                CurvatureTolerance::Fixed(eps2 / 2.0),
                &params,
                &mut rng,
            )
            .unwrap();
            let f0 = oracle.exact_value(&x).unwrap();
            let f1 = oracle.exact_value(&out.x_next).unwrap();
            let (d1, d2, bound) = sufficient_decrease_bound(
                out.rayleigh,
                out.grad_norm,
                eps1,
                eps2,
                c.grad_lipschitz,
                c.hess_lipschitz,
            );
            assert_eq!(bound, d1.max(d2));
            let slack = 1e-8 * f0.abs().max(1.0);
            assert!(
                f0 - f1 >= bound - slack,
                "decrease {} below bound {} (eps1 {eps1}, eps2 {eps2})",
                f0 - f1,
                bound
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 200);
    println!("acceptance 3 (per-step sufficient decrease): PASS (200/200 steps)");
}

#[test]
fn criterion_4_boundary_constants() {
    for (eps1, eps2, l1, l2) in [
        (0.1, 0.1, 1.0, 1.0),
        (0.23, 0.37, 0.9, 1.7),
        (0.05, 0.62, 3.3, 0.4),
    ] {
        let (d1, _, _) = sufficient_decrease_bound(-eps2 / 2.0, 0.0, eps1, eps2, l1, l2);
        let expect1 = eps2 * eps2 * eps2 / (48.0 * l2 * l2);
        assert!(
            (d1 - expect1).abs() <= 1e-12 * expect1,
            "curvature boundary: {d1} vs {expect1}"
        );
        let (_, d2, _) = sufficient_decrease_bound(0.0, eps1, eps1, eps2, l1, l2);
        let expect2 = eps1 * eps1 / (8.0 * l1);
        assert!(
            (d2 - expect2).abs() <= 1e-12 * expect2,
            "gradient boundary: {d2} vs {expect2}"
        );
    }
    println!("acceptance 4 (boundary constants): PASS");
}

enum Variant {
    One,
    Two,
}

fn terminal_stationarity_cell(
    problem_label: &str,
    make_oracle: &(dyn Fn() -> Oracle + Sync),
    variant: Variant,
) -> (usize, usize) {
    let seeds: Vec<u64> = (0..25).collect();
    let results: Vec<Mutex<Option<(RunResult, bool, bool)>>> =
        seeds.iter().map(|_| Mutex::new(None)).collect();
    let next: Mutex<usize> = Mutex::new(0);
    std::thread::scope(|scope| {
        for _ in 0..8 {
            scope.spawn(|| loop {
                let idx = {
                    let mut guard = next.lock().unwrap();
                    if *guard >= seeds.len() {
                        break;
                    }
                    let i = *guard;
                    *guard += 1;
                    i
                };
                let seed = seeds[idx];
                let oracle = make_oracle();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // Jitter the start around the documented default so seeds
                // explore genuinely different trajectories.
                let base = oracle.default_start();
                let x0 = DVector::from_fn(oracle.dim(), |j, _| {
                    base[j] + 0.15 * (2.0 * rng.random::<f64>() - 1.0)
                });
                let mut constants = oracle.constants();
                constants.f_gap = oracle.f_gap_from(&x0);
                let cfg = SncgConfig::new(0.2, 0.5, 0.2, constants).unwrap();
                let result = match variant {
                    Variant::One => sncg1(&oracle, &x0, &cfg, &mut rng).unwrap(),
                    Variant::Two => sncg2(&oracle, &x0, &cfg, &mut rng).unwrap(),
                };
                let verified = result.status == RunStatus::Converged
                    && check_stationarity(&oracle, &result.x_final, cfg.eps1, cfg.eps2)
                        .unwrap()
                        .pass();
                let caps_ok = match variant {
                    Variant::One => result.iters <= cfg.sncg1_iter_cap(),
                    Variant::Two => {
                        result.sg_steps <= cfg.sncg2_sg_cap()
                            && result.ncgs_steps <= cfg.sncg2_ncgs_cap()
                    }
                };
                *results[idx].lock().unwrap() = Some((result, verified, caps_ok));
            });
        }
    });

    let mut verified_count = 0;
    let mut converged_count = 0;
    for slot in &results {
        let (result, verified, caps_ok) = slot.lock().unwrap().take().unwrap();
        assert!(
            caps_ok,
            "{problem_label}: converged run exceeded its certified iteration caps"
        );
        if result.status == RunStatus::Converged {
            converged_count += 1;
        }
        if verified {
            verified_count += 1;
        }
    }
    let _ = converged_count;
    (verified_count, seeds.len())
}

#[test]
fn criterion_5_terminal_stationarity() {
    // Problem (a) runs with real gradient noise at theoretical batch sizes;
    // problem (b) runs noiseless (its certified constants at lambda_min(0) =
    // -1 put the theoretical Hessian batches far beyond desk scale).
    let quadratic =
        || Oracle::new(SaddleQuadratic::new(10, 0.04, Population::Finite(256), 11));
    let quartic = || Oracle::new(SeparableQuartic::new(10, 0.0, 1, 0));
    let cells: [(&str, &(dyn Fn() -> Oracle + Sync)); 2] = [
        ("saddle_quadratic", &quadratic),
        ("separable_quartic", &quartic),
    ];
    for (label, make) in cells {
        for (vname, variant) in [("sncg1", Variant::One), ("sncg2", Variant::Two)] {
            let (verified, total) = terminal_stationarity_cell(label, make, variant);
            let bar = (0.6 * total as f64).ceil() as usize;
            assert!(
                verified >= bar,
                "{label}/{vname}: only {verified}/{total} runs converged to a verified \
                 second-order stationary point (bar {bar})"
            );
            println!("acceptance 5 ({label}/{vname}): {verified}/{total} verified");
        }
    }
    println!("acceptance 5 (terminal stationarity): PASS");
}

#[test]
fn criterion_6_saddle_escape() {
    let oracle_factory = || Oracle::new(SeparableQuartic::new(10, 0.0, 1, 0));
    let x0 = DVector::zeros(10);
    let (eps1, eps2) = (0.1, 0.1);
    for seed in 0..10u64 {
        let oracle = oracle_factory();
        let mut constants = oracle.constants();
        constants.f_gap = oracle.f_gap_from(&x0);
        // alpha = 1 makes eps2 = eps1 = 0.1 for variant 1; variant 2 gets the
        // same target explicitly.
        let cfg = SncgConfig::new(eps1, 1.0, 0.2, constants).unwrap();
        let cfg2 = cfg.clone().with_eps2(eps2).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sgd = sgd_baseline(&oracle.fresh(), &x0, &cfg, &mut rng).unwrap();
        assert_eq!(sgd.status, RunStatus::Converged, "sgd seed {seed}");
        assert_eq!(sgd.x_final, x0, "sgd must terminate at the exact saddle");
        let report = check_stationarity(&oracle, &sgd.x_final, eps1, eps2).unwrap();
        assert!(report.pass_first_order);
        assert!(
            !report.pass_second_order,
            "the saddle (lambda_min = -1) must fail the second-order check"
        );
        assert!((report.lambda_min + 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r1 = sncg1(&oracle.fresh(), &x0, &cfg, &mut rng).unwrap();
        assert_eq!(r1.status, RunStatus::Converged, "sncg1 seed {seed}");
        assert!(
            check_stationarity(&oracle, &r1.x_final, eps1, eps2)
                .unwrap()
                .pass(),
            "sncg1 seed {seed} failed the stationarity check"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r2 = sncg2(&oracle.fresh(), &x0, &cfg2, &mut rng).unwrap();
        assert_eq!(r2.status, RunStatus::Converged, "sncg2 seed {seed}");
        assert!(
            check_stationarity(&oracle, &r2.x_final, eps1, eps2)
                .unwrap()
                .pass(),
            "sncg2 seed {seed} failed the stationarity check"
        );

        // Determinism: the same seed reproduces the same terminal point.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r1b = sncg1(&oracle.fresh(), &x0, &cfg, &mut rng).unwrap();
        assert_eq!(r1.x_final, r1b.x_final);
    }
    println!("acceptance 6 (saddle escape): PASS (10/10 seeds)");
}

#[test]
fn criterion_7_sncg2_oracle_separation() {
    let oracle = Oracle::new(SeparableQuartic::new(10, 0.0, 1, 0));
    let x0 = DVector::from_element(10, 1.2);
    let mut constants = oracle.constants();
    constants.f_gap = oracle.f_gap_from(&x0);
    let cfg = SncgConfig::new(0.2, 0.5, 0.2, constants).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let result = sncg2(&oracle, &x0, &cfg, &mut rng).unwrap();
    assert_eq!(result.status, RunStatus::Converged);
    assert!(result.sg_steps > 0, "a far start must take gradient steps");
    for record in &result.trace {
        if record.grad_norm >= cfg.eps1 {
            assert_eq!(
                record.iso_delta, 0,
                "iteration {} consumed second-order oracle with a large gradient",
                record.iter
            );
            assert_eq!(record.kind, StepKind::Sg);
        }
    }
    assert!(
        result.sg_steps <= cfg.sncg2_sg_cap(),
        "{} gradient steps exceed the certified cap {}",
        result.sg_steps,
        cfg.sncg2_sg_cap()
    );
    println!(
        "acceptance 7 (oracle separation): PASS ({} sg steps <= cap {})",
        result.sg_steps,
        cfg.sncg2_sg_cap()
    );
}

fn canonical_trace(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            if let Some(obj) = v.as_object_mut() {
                obj.insert("wall_time_s".into(), serde_json::json!(0));
            }
            serde_json::to_string(&v).unwrap()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_8_determinism_and_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let config_text = r#"
[problem]
kind = "saddle_quadratic"
dim = 6
population = 64
noise_radius = 0.04

[run]
algorithms = ["sncg1", "sncg2", "sgd"]
seeds = [0, 1, 2]
eps1 = 0.3
delta = 0.2
"#;
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, config_text).unwrap();

    let mut trace_paths: Vec<PathBuf> = Vec::new();
    for sub in ["a", "b"] {
        let out = Command::new(env!("CARGO_BIN_EXE_sncg"))
            .arg("run")
            .arg(&cfg_path)
            .arg(format!("output_dir={}", dir.path().join(sub).display()))
            .env_remove("SNCG_OUT_DIR")
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "run failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for entry in fs::read_dir(dir.path().join("a")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        if name.ends_with(".jsonl") {
            let twin = dir.path().join("b").join(&name);
            assert_eq!(
                canonical_trace(&path),
                canonical_trace(&twin),
                "trace {name} not byte-reproducible"
            );
            trace_paths.push(path);
        }
    }
    assert_eq!(trace_paths.len(), 9);

    let verify = Command::new(env!("CARGO_BIN_EXE_sncg"))
        .arg("verify")
        .args(&trace_paths)
        .output()
        .unwrap();
    assert_eq!(
        verify.status.code(),
        Some(0),
        "verify failed:\n{}",
        String::from_utf8_lossy(&verify.stdout)
    );
    println!("acceptance 8 (determinism and accounting): PASS (9 traces verified)");
}
