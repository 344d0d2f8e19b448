//! Mini-batch gradient estimates and the averaged stochastic Hessian
//! operator, with concentration-driven batch sizing.
//!
//! Batch sizes come from sub-exponential vector concentration for the
//! gradient and matrix concentration for the Hessian:
//!
//! - `|S1| >= 4 G^2 (1 + 3 ln^2(1/delta)) / eps4^2` gives
//!   `||g(x) - grad f(x)|| <= eps4` with probability at least `1 - delta`;
//! - `|S2| >= (16 L1^2 / eps3^2) ln(2d/delta)` gives
//!   `||H(x) - hess f(x)||_2 <= eps3` with probability at least `1 - delta`.
//!
//! Logs are natural logs. Noiseless problems bypass the formulas: a single
//! sample reproduces the exact quantities, so `eps3 = eps4 = 0` holds with
//! batch size 1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::negcurv::SymOperator;
use crate::oracle::{Oracle, OracleError, SampleId};

/// Hard guard against batch sizes that cannot finish at desk scale.
pub const MAX_BATCH: usize = 50_000_000;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("parameter {name} must lie in {range}, got {value}")]
    InvalidParameter {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
    #[error(
        "required batch size {required} exceeds the {limit} guard; \
         use practical mode with a batch cap"
    )]
    BatchTooLarge { required: f64, limit: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Theoretical sizing uses the concentration formulas as-is; practical mode
/// additionally caps each batch for tractable benchmarking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchMode {
    Theoretical,
    Practical { grad_cap: usize, hess_cap: usize },
}

/// Ceiling with a tiny relative slack so that floating-point roundoff in the
/// sizing formulas cannot inflate an exact integer bound by one.
pub(crate) fn ceil_with_slack(x: f64) -> usize {
    let y = (x - x.max(1.0) * 1e-9).ceil();
    if y < 1.0 {
        1
    } else {
        y as usize
    }
}

fn check_unit_interval(name: &'static str, value: f64) -> Result<(), EstimatorError> {
    if !(value > 0.0 && value < 1.0) {
        return Err(EstimatorError::InvalidParameter {
            name,
            range: "(0, 1)",
            value,
        });
    }
    Ok(())
}

fn check_positive(name: &'static str, value: f64) -> Result<(), EstimatorError> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(EstimatorError::InvalidParameter {
            name,
            range: "(0, inf)",
            value,
        });
    }
    Ok(())
}

/// The logarithm used by both sizing formulas (natural log, matching the
/// concentration bounds they come from). Centralized so the convention can
/// be changed in one place.
fn sizing_log(x: f64) -> f64 {
    x.ln()
}

/// Raw gradient batch-size bound `4 G^2 (1 + 3 ln^2(1/delta)) / eps4^2`,
/// before the ceiling.
pub fn grad_batch_bound(
    noise_scale: f64,
    eps4: f64,
    delta: f64,
) -> Result<f64, EstimatorError> {
    check_positive("noise_scale", noise_scale)?;
    check_unit_interval("eps4", eps4)?;
    check_unit_interval("delta", delta)?;
    let log = sizing_log(1.0 / delta);
    Ok(4.0 * noise_scale * noise_scale * (1.0 + 3.0 * log * log) / (eps4 * eps4))
}

/// Smallest batch size meeting the gradient concentration target.
pub fn grad_batch_size(
    noise_scale: f64,
    eps4: f64,
    delta: f64,
) -> Result<usize, EstimatorError> {
    Ok(ceil_with_slack(grad_batch_bound(noise_scale, eps4, delta)?))
}

/// Raw Hessian batch-size bound `(16 L1^2 / eps3^2) ln(2d/delta)`, before the
/// ceiling.
pub fn hess_batch_bound(
    grad_lipschitz: f64,
    eps3: f64,
    delta: f64,
    dim: usize,
) -> Result<f64, EstimatorError> {
    check_positive("grad_lipschitz", grad_lipschitz)?;
    check_unit_interval("eps3", eps3)?;
    check_unit_interval("delta", delta)?;
    if dim == 0 {
        return Err(EstimatorError::InvalidParameter {
            name: "dim",
            range: "[1, inf)",
            value: 0.0,
        });
    }
    let l1 = grad_lipschitz;
    Ok(16.0 * l1 * l1 / (eps3 * eps3) * sizing_log(2.0 * dim as f64 / delta))
}

/// Smallest batch size meeting the Hessian concentration target.
pub fn hess_batch_size(
    grad_lipschitz: f64,
    eps3: f64,
    delta: f64,
    dim: usize,
) -> Result<usize, EstimatorError> {
    Ok(ceil_with_slack(hess_batch_bound(
        grad_lipschitz,
        eps3,
        delta,
        dim,
    )?))
}

fn apply_mode(required: usize, bound: f64, cap: Option<usize>) -> Result<usize, EstimatorError> {
    let size = match cap {
        Some(c) => required.min(c.max(1)),
        None => required,
    };
    if size > MAX_BATCH {
        return Err(EstimatorError::BatchTooLarge {
            required: bound,
            limit: MAX_BATCH,
        });
    }
    Ok(size)
}

/// Gradient batch size an estimate will actually use for this oracle and
/// mode: 1 for noiseless problems, clamped to the population under
/// without-replacement sampling, capped in practical mode.
pub fn resolved_grad_batch(
    oracle: &Oracle,
    eps4: f64,
    delta: f64,
    mode: BatchMode,
) -> Result<usize, EstimatorError> {
    if oracle.is_noiseless() {
        return Ok(1);
    }
    let bound = grad_batch_bound(oracle.constants().noise_scale, eps4, delta)?;
    let mut required = ceil_with_slack(bound);
    if let Some(n) = oracle.max_batch() {
        required = required.min(n);
    }
    let cap = match mode {
        BatchMode::Theoretical => None,
        BatchMode::Practical { grad_cap, .. } => Some(grad_cap),
    };
    apply_mode(required, bound, cap)
}

/// Hessian batch size an operator will actually use for this oracle and mode.
pub fn resolved_hess_batch(
    oracle: &Oracle,
    eps3: f64,
    delta: f64,
    mode: BatchMode,
) -> Result<usize, EstimatorError> {
    if oracle.is_noiseless() {
        return Ok(1);
    }
    let bound = hess_batch_bound(
        oracle.constants().grad_lipschitz,
        eps3,
        delta,
        oracle.dim(),
    )?;
    let mut required = ceil_with_slack(bound);
    if let Some(n) = oracle.max_batch() {
        required = required.min(n);
    }
    let cap = match mode {
        BatchMode::Theoretical => None,
        BatchMode::Practical { hess_cap, .. } => Some(hess_cap),
    };
    apply_mode(required, bound, cap)
}

/// Averaged mini-batch gradient `g(x)` with its batch identity.
#[derive(Debug, Clone)]
pub struct GradEstimate {
    pub g: DVector<f64>,
    pub batch_size: usize,
    /// Accuracy target the batch was sized for.
    pub eps4: f64,
    /// Cached Euclidean norm of `g`.
    pub norm: f64,
}

/// Estimates the gradient at `x` with the batch size implied by the
/// concentration target. Consumes `|S1|` IFO calls.
pub fn estimate_gradient(
    oracle: &Oracle,
    x: &DVector<f64>,
    eps4: f64,
    delta: f64,
    mode: BatchMode,
    rng: &mut impl Rng,
) -> Result<GradEstimate, EstimatorError> {
    let size = resolved_grad_batch(oracle, eps4, delta, mode)?;
    let batch = oracle.sample_indices(size, rng)?;
    estimate_gradient_with_batch(oracle, x, &batch, eps4)
}

/// Gradient estimate over an explicitly supplied batch.
pub fn estimate_gradient_with_batch(
    oracle: &Oracle,
    x: &DVector<f64>,
    batch: &[SampleId],
    eps4: f64,
) -> Result<GradEstimate, EstimatorError> {
    let g = oracle.mean_sample_grad(x, batch)?;
    let norm = g.norm();
    Ok(GradEstimate {
        g,
        batch_size: batch.len(),
        eps4,
        norm,
    })
}

/// The averaged stochastic Hessian at a fixed base point, applied matrix-free.
///
/// The batch is drawn once per operator; every `apply` re-touches the whole
/// batch, so ISO consumption scales with the number of applications.
pub struct HessianOperator<'a> {
    oracle: &'a Oracle,
    x: DVector<f64>,
    batch: Vec<SampleId>,
    /// Accuracy target the batch was sized for.
    pub eps3: f64,
}

impl<'a> HessianOperator<'a> {
    pub fn batch_size(&self) -> usize {
        self.batch.len()
    }

    pub fn base_point(&self) -> &DVector<f64> {
        &self.x
    }

    /// Dense materialization by applying to every basis vector. Test helper;
    /// consumes `dim * |S2|` ISO calls.
    pub fn materialize(&self) -> DMatrix<f64> {
        let d = self.x.len();
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            m.set_column(j, &self.apply(&e));
        }
        m
    }
}

impl SymOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.x.len()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.oracle
            .mean_sample_hvp(&self.x, &self.batch, v)
            .expect("operator dimensions verified at construction")
    }
}

/// Builds the averaged Hessian operator at `x` with the batch size implied by
/// the concentration target.
pub fn build_hessian_operator<'a>(
    oracle: &'a Oracle,
    x: &DVector<f64>,
    eps3: f64,
    delta: f64,
    mode: BatchMode,
    rng: &mut impl Rng,
) -> Result<HessianOperator<'a>, EstimatorError> {
    let size = resolved_hess_batch(oracle, eps3, delta, mode)?;
    let batch = oracle.sample_indices(size, rng)?;
    hessian_operator_with_batch(oracle, x, batch, eps3)
}

/// Hessian operator over an explicitly supplied batch.
pub fn hessian_operator_with_batch<'a>(
    oracle: &'a Oracle,
    x: &DVector<f64>,
    batch: Vec<SampleId>,
    eps3: f64,
) -> Result<HessianOperator<'a>, EstimatorError> {
    if batch.is_empty() {
        return Err(EstimatorError::Oracle(OracleError::EmptyBatch));
    }
    if x.len() != oracle.dim() {
        return Err(EstimatorError::Oracle(OracleError::DimensionMismatch {
            expected: oracle.dim(),
            got: x.len(),
        }));
    }
    Ok(HessianOperator {
        oracle,
        x: x.clone(),
        batch,
        eps3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{PcaFiniteSum, Population, SaddleQuadratic, SeparableQuartic};
    use crate::verify::dense_spectral_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grad_batch_size_matches_frozen_values() {
        // 4 * (1 + 3 ln^2 10) / 0.01 = 6762.27773..., recomputed externally.
        assert_eq!(grad_batch_size(1.0, 0.1, 0.1).unwrap(), 6763);
        // Unit-parameter case: ln(1/delta) = 1 at delta = e^-1.
        let delta = (-1.0f64).exp();
        assert_eq!(grad_batch_size(1.0, 1.0 - 1e-12, delta).unwrap(), 16);
    }

    #[test]
    fn hess_batch_size_matches_frozen_values() {
        // 1600 * ln 200 = 8477.3077..., recomputed externally.
        assert_eq!(hess_batch_size(1.0, 0.1, 0.1, 10).unwrap(), 8478);
        // Unit-log case: 2d/delta = e with d = 1.
        let delta = 2.0 / std::f64::consts::E;
        assert_eq!(hess_batch_size(1.0, 1.0 - 1e-12, delta, 1).unwrap(), 16);
    }

    #[test]
    fn halving_eps4_quadruples_the_grad_bound() {
        let b1 = grad_batch_bound(1.3, 0.2, 0.05).unwrap();
        let b2 = grad_batch_bound(1.3, 0.1, 0.05).unwrap();
        assert_eq!(b2, 4.0 * b1);
    }

    #[test]
    fn doubling_l1_quadruples_the_hess_bound() {
        let b1 = hess_batch_bound(0.7, 0.2, 0.05, 12).unwrap();
        let b2 = hess_batch_bound(1.4, 0.2, 0.05, 12).unwrap();
        assert_eq!(b2, 4.0 * b1);
    }

    #[test]
    fn out_of_range_inputs_are_rejected() {
        assert!(grad_batch_size(0.0, 0.1, 0.1).is_err());
        assert!(grad_batch_size(1.0, 1.5, 0.1).is_err());
        assert!(grad_batch_size(1.0, 0.1, 1.0).is_err());
        assert!(hess_batch_size(1.0, 0.1, 0.1, 0).is_err());
        assert!(hess_batch_size(-1.0, 0.1, 0.1, 3).is_err());
    }

    #[test]
    fn noiseless_problems_use_single_sample_batches() {
        let oracle = Oracle::new(SeparableQuartic::new(4, 0.0, 16, 0));
        assert_eq!(
            resolved_grad_batch(&oracle, 0.01, 0.1, BatchMode::Theoretical).unwrap(),
            1
        );
        assert_eq!(
            resolved_hess_batch(&oracle, 0.01, 0.1, BatchMode::Theoretical).unwrap(),
            1
        );
    }

    #[test]
    fn practical_mode_caps_batches() {
        let oracle = Oracle::new(SaddleQuadratic::new(4, 0.05, Population::Finite(64), 1));
        let mode = BatchMode::Practical {
            grad_cap: 10,
            hess_cap: 20,
        };
        assert_eq!(resolved_grad_batch(&oracle, 0.001, 0.1, mode).unwrap(), 10);
        assert_eq!(resolved_hess_batch(&oracle, 0.001, 0.1, mode).unwrap(), 20);
    }

    #[test]
    fn without_replacement_clamps_resolved_batches_to_the_population() {
        use crate::oracle::SamplingScheme;
        let oracle = Oracle::new(SaddleQuadratic::new(4, 0.05, Population::Finite(64), 1))
            .with_sampling(SamplingScheme::WithoutReplacement);
        let size = resolved_grad_batch(&oracle, 0.001, 0.1, BatchMode::Theoretical).unwrap();
        assert_eq!(size, 64);
        let size = resolved_hess_batch(&oracle, 0.01, 0.1, BatchMode::Theoretical).unwrap();
        assert_eq!(size, 64);
    }

    #[test]
    fn oversized_theoretical_batches_error_out() {
        let oracle = Oracle::new(SaddleQuadratic::new(4, 0.5, Population::Finite(64), 1));
        let err = resolved_grad_batch(&oracle, 1e-6, 0.01, BatchMode::Theoretical).unwrap_err();
        assert!(matches!(err, EstimatorError::BatchTooLarge { .. }));
    }

    #[test]
    fn explicit_batch_average_matches_mean_of_individual_calls() {
        let oracle = Oracle::new(PcaFiniteSum::new(5, 24, 3));
        let x = DVector::from_fn(5, |j, _| 0.1 * j as f64 - 0.2);
        let batch: Vec<SampleId> = [0u64, 3, 3, 7, 11, 20].iter().map(|&i| SampleId(i)).collect();
        let est = estimate_gradient_with_batch(&oracle, &x, &batch, 0.1).unwrap();
        let mut mean = DVector::zeros(5);
        for id in &batch {
            mean += oracle.sample_grad(&x, *id).unwrap();
        }
        mean /= batch.len() as f64;
        assert!((est.g.clone() - mean).norm() < 1e-15);
        assert!((est.norm - est.g.norm()).abs() < 1e-15);
    }

    #[test]
    fn full_population_batch_reproduces_exact_gradient() {
        let oracle = Oracle::new(PcaFiniteSum::new(4, 30, 5));
        let x = DVector::from_fn(4, |j, _| 0.3 - 0.1 * j as f64);
        let batch: Vec<SampleId> = (0..30).map(SampleId).collect();
        let est = estimate_gradient_with_batch(&oracle, &x, &batch, 0.1).unwrap();
        let exact = oracle.exact_grad(&x).unwrap();
        assert!((est.g - exact).norm() < 1e-12);
    }

    #[test]
    fn noiseless_operator_materialization_matches_exact_hessian() {
        let oracle = Oracle::new(SeparableQuartic::new(4, 0.0, 8, 0));
        let x = DVector::from_fn(4, |j, _| 0.2 * (j as f64 + 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let op = build_hessian_operator(&oracle, &x, 0.01, 0.1, BatchMode::Theoretical, &mut rng)
            .unwrap();
        let dense = op.materialize();
        let exact = oracle.exact_eval(&x).unwrap().hessian;
        assert!((dense - exact).abs().max() < 1e-12);
    }

    #[test]
    fn full_population_operator_has_zero_spectral_gap() {
        let oracle = Oracle::new(PcaFiniteSum::new(4, 12, 9));
        let x = DVector::from_fn(4, |j, _| 0.15 * (j as f64 - 1.5));
        let batch: Vec<SampleId> = (0..12).map(SampleId).collect();
        let op = hessian_operator_with_batch(&oracle, &x, batch, 0.1).unwrap();
        let gap = op.materialize() - oracle.exact_eval(&x).unwrap().hessian;
        assert!(dense_spectral_norm(&gap).unwrap() < 1e-12);
    }

    #[test]
    fn operator_is_linear_and_symmetric_as_a_bilinear_form() {
        let oracle = Oracle::new(PcaFiniteSum::new(6, 20, 13));
        let x = DVector::from_fn(6, |j, _| 0.1 * (j as f64).cos());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = oracle.sample_indices(20, &mut rng).unwrap();
        let op = hessian_operator_with_batch(&oracle, &x, batch, 0.1).unwrap();
        for _ in 0..20 {
            let u = DVector::from_fn(6, |_, _| 2.0 * rng.random::<f64>() - 1.0);
            let v = DVector::from_fn(6, |_, _| 2.0 * rng.random::<f64>() - 1.0);
            let (a, b): (f64, f64) = (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let lin = op.apply(&(&u * a + &v * b)) - op.apply(&u) * a - op.apply(&v) * b;
            assert!(lin.norm() < 1e-12);
            let sym = u.dot(&op.apply(&v)) - v.dot(&op.apply(&u));
            assert!(sym.abs() < 1e-12);
        }
    }

    #[test]
    fn operator_norm_is_bounded_by_documented_l1() {
        let oracle = Oracle::new(SeparableQuartic::new(5, 0.2, 32, 7));
        let l1 = oracle.constants().grad_lipschitz;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DVector::from_fn(5, |_, _| 1.3 * (2.0 * rng.random::<f64>() - 1.0));
        let batch = oracle.sample_indices(50, &mut rng).unwrap();
        let op = hessian_operator_with_batch(&oracle, &x, batch, 0.1).unwrap();
        let norm = dense_spectral_norm(&op.materialize()).unwrap();
        assert!(norm <= l1 * (1.0 + 1e-12));
    }

    #[test]
    fn iso_accounting_scales_with_applications() {
        let oracle = Oracle::new(PcaFiniteSum::new(4, 15, 2));
        let x = DVector::from_element(4, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = oracle.sample_indices(7, &mut rng).unwrap();
        let op = hessian_operator_with_batch(&oracle, &x, batch, 0.1).unwrap();
        let v = DVector::from_element(4, 1.0);
        let before = oracle.counts().iso;
        for _ in 0..5 {
            op.apply(&v);
        }
        assert_eq!(oracle.counts().iso - before, 5 * 7);
    }

    #[test]
    fn gradient_concentration_holds_empirically() {
        // Monte-Carlo check of the sizing guarantee on the noisy quadratic.
        let oracle = Oracle::new(SaddleQuadratic::new(6, 0.04, Population::Finite(256), 19));
        let x = DVector::from_element(6, 0.4);
        let exact = oracle.exact_grad(&x).unwrap();
        let (eps4, delta) = (0.01, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut violations = 0;
        let reps = 1000;
        for _ in 0..reps {
            let est =
                estimate_gradient(&oracle, &x, eps4, delta, BatchMode::Theoretical, &mut rng)
                    .unwrap();
            if (est.g - &exact).norm() > eps4 {
                violations += 1;
            }
        }
        // Allow Monte-Carlo slack on top of delta.
        assert!(
            (violations as f64) <= (delta + 0.05) * reps as f64,
            "{violations} violations out of {reps}"
        );
    }

    #[test]
    fn hessian_concentration_holds_empirically() {
        let oracle = Oracle::new(PcaFiniteSum::new(6, 64, 23));
        let x = DVector::from_element(6, 0.3);
        let exact = oracle.exact_eval(&x).unwrap().hessian;
        let (eps3, delta) = (0.75, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut violations = 0;
        let reps = 200;
        for _ in 0..reps {
            let op =
                build_hessian_operator(&oracle, &x, eps3, delta, BatchMode::Theoretical, &mut rng)
                    .unwrap();
            let gap = op.materialize() - &exact;
            if dense_spectral_norm(&gap).unwrap() > eps3 {
                violations += 1;
            }
        }
        assert!(
            (violations as f64) <= (delta + 0.05) * reps as f64,
            "{violations} violations out of {reps}"
        );
    }
}
