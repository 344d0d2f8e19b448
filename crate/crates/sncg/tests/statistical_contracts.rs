//! Seeded Monte-Carlo checks of the probabilistic contracts: the solver's
//! eigenvector guarantee and the per-step decrease bound under noise.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sncg::estimator::BatchMode;
use sncg::negcurv::{min_eigvec, DenseSymOperator, LanczosOptions};
use sncg::ncgs::{ncgs_step, sufficient_decrease_bound, CurvatureTolerance, StepParams};
use sncg::oracle::{Oracle, Population, SaddleQuadratic};
use sncg::verify::dense_min_eig;

fn random_symmetric(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let sym = (&a + a.transpose()) * 0.5;
    let top = sym
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, &l| m.max(l.abs()));
    sym / top.max(1e-12)
}

#[test]
fn solver_contract_violation_rate_stays_below_budget() {
    let (eps, delta) = (0.05, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 120;
    let mut violations = 0;
    for _ in 0..trials {
        let d = rng.random_range(2..=20);
        let h = random_symmetric(d, &mut rng);
        let (lambda_min, _) = dense_min_eig(&h).unwrap();
        let op = DenseSymOperator::new(h);
        let est = min_eigvec(&op, 1.0, eps, delta, &mut rng).unwrap();
        if lambda_min < est.rayleigh - eps - 1e-9 {
            violations += 1;
        }
    }
    let bound = ((delta + 0.05) * trials as f64).ceil() as usize;
    assert!(
        violations <= bound,
        "{violations} violations out of {trials} (bound {bound})"
    );
}

#[test]
fn per_step_decrease_holds_within_failure_rate_under_noise() {
    // Steps on the noisy quadratic at exactly the concentration batch sizes:
    // the decrease bound may fail only on the concentration failure event.
    let oracle = Oracle::new(SaddleQuadratic::new(6, 0.04, Population::Finite(256), 3));
    let c = oracle.constants();
    let delta_prime = 0.05;
    let params = StepParams {
        eps1: 0.2,
        eps2: 0.35,
        delta_prime,
        constants: c,
        mode: BatchMode::Theoretical,
        solver: LanczosOptions::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let trials = 150;
    let mut violations = 0;
    for _ in 0..trials {
        let x = DVector::from_fn(6, |_, _| 1.0 * (2.0 * rng.random::<f64>() - 1.0));
        let out = ncgs_step(
            &oracle,
            &x,
            None,
            CurvatureTolerance::Fixed(params.eps2 / 2.0),
            &params,
            &mut rng,
        )
        .unwrap();
        let f0 = oracle.exact_value(&x).unwrap();
        let f1 = oracle.exact_value(&out.x_next).unwrap();
        let (d1, d2, bound) = sufficient_decrease_bound(
            out.rayleigh,
            out.grad_norm,
            params.eps1,
            params.eps2,
            c.grad_lipschitz,
            c.hess_lipschitz,
        );
        let slack = 1e-8 * f0.abs().max(1.0);
        assert_eq!(bound, d1.max(d2));
        if f0 - f1 < bound - slack {
            violations += 1;
        }
    }
    // Two concentration events per step at delta' each, plus MC slack.
    let rate_bound = 2.0 * delta_prime + 0.05;
    assert!(
        (violations as f64) <= rate_bound * trials as f64,
        "{violations} violations out of {trials}"
    );
}
