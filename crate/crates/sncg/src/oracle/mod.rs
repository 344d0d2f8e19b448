//! Stochastic-function abstraction: incremental first/second-order oracles
//! with exact full-batch access for verification.
//!
//! A [`StochasticProblem`] describes an objective `f(x) = E[f(x; xi)]` through
//! per-sample values, gradients and Hessian-vector products, together with the
//! analytically documented constants the optimizers rely on. An [`Oracle`]
//! wraps a problem with IFO/ISO call counters and deterministic index
//! sampling.

mod problems;

pub use problems::{
    load_matrix_problem, MatrixFileError, PcaFiniteSum, SaddleQuadratic, SeparableQuartic,
};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reduce::pairwise_vector_sum;

/// Default dimension cap for dense verification quantities.
pub const DEFAULT_DENSE_CAP: usize = 2000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample id {id} out of range for population of size {size}")]
    SampleOutOfRange { id: u64, size: usize },
    #[error("batch count must be at least 1")]
    EmptyBatch,
    #[error("dense verification requires dim <= {cap}, got {dim}")]
    DenseCapExceeded { dim: usize, cap: usize },
    #[error("problem constant {name} must be positive and finite, got {value}")]
    InvalidConstant { name: &'static str, value: f64 },
}

/// Analytically documented constants of a stochastic problem.
///
/// `grad_lipschitz` bounds every per-sample gradient's Lipschitz constant,
/// `hess_lipschitz` bounds the full objective's Hessian Lipschitz constant,
/// `noise_scale` is the sub-exponential scale of the gradient noise and
/// `f_gap` bounds `f(x0) - f(x*)`. For built-in problems the constants hold
/// on the problem's certified region, not globally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub grad_lipschitz: f64,
    pub hess_lipschitz: f64,
    pub noise_scale: f64,
    pub f_gap: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<(), OracleError> {
        let fields = [
            ("grad_lipschitz", self.grad_lipschitz),
            ("hess_lipschitz", self.hess_lipschitz),
            ("noise_scale", self.noise_scale),
            ("f_gap", self.f_gap),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(OracleError::InvalidConstant { name, value });
            }
        }
        Ok(())
    }
}

/// The random index space of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Population {
    /// Equally weighted finite sum of `n` component functions.
    Finite(usize),
    /// Generator-based stream; a sample id is the generator state seed.
    Infinite,
}

/// Identifier of one random component function.
///
/// For finite populations this is an index below the population size; for
/// infinite populations it is an opaque generator state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleId(pub u64);

/// Region on which a problem's documented constants are certified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    LinfBall(f64),
    L2Ball(f64),
}

impl Region {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        match self {
            Region::LinfBall(r) => x.iter().all(|v| v.abs() <= *r),
            Region::L2Ball(r) => x.norm() <= *r,
        }
    }
}

/// A twice-differentiable stochastic objective.
///
/// Per-sample evaluations are pure functions of `(x, id)`; all methods are
/// safe to call concurrently.
pub trait StochasticProblem: Send + Sync {
    fn dim(&self) -> usize;
    fn population(&self) -> Population;
    fn constants(&self) -> ProblemConstants;

    /// True when every sample is the same function, so a single-sample batch
    /// reproduces the exact gradient and Hessian.
    fn is_noiseless(&self) -> bool {
        false
    }

    /// Region on which the documented constants hold. Iterates are expected
    /// to stay inside; the drivers record violations.
    fn certified_region(&self) -> Option<Region> {
        None
    }

    /// Documented default starting point (the one `f_gap` is stated for).
    fn default_start(&self) -> DVector<f64>;

    /// Recomputes `f(x0) - f(x*)` for a caller-chosen start.
    fn f_gap_from(&self, x0: &DVector<f64>) -> f64;

    fn sample_value(&self, x: &DVector<f64>, id: SampleId) -> f64;

    /// Adds the per-sample gradient into `acc`.
    fn sample_grad_acc(&self, x: &DVector<f64>, id: SampleId, acc: &mut DVector<f64>);

    /// Adds the per-sample Hessian-vector product into `acc`.
    fn sample_hvp_acc(&self, x: &DVector<f64>, id: SampleId, v: &DVector<f64>, acc: &mut DVector<f64>);

    /// Exact population objective value.
    fn exact_value(&self, x: &DVector<f64>) -> f64;

    /// Exact population gradient.
    fn exact_grad(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Exact dense population Hessian.
    fn exact_hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Index-sampling scheme for finite populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingScheme {
    /// I.i.d. uniform draws (the default; matches the expectation model).
    WithReplacement,
    /// Distinct uniform indices; batches are capped at the population size.
    WithoutReplacement,
}

/// Snapshot of oracle call counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounts {
    pub ifo: u64,
    pub iso: u64,
}

/// Exact population quantities returned by [`Oracle::exact_eval`].
#[derive(Debug, Clone)]
pub struct ExactEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// A stochastic problem plus IFO/ISO accounting.
///
/// Evaluations are pure given `(x, id)` and may run concurrently; the call
/// counters are the only shared mutable state and are updated atomically.
/// Exact (verification) quantities never touch the counters.
pub struct Oracle {
    problem: Arc<dyn StochasticProblem>,
    sampling: SamplingScheme,
    dense_cap: usize,
    ifo: AtomicU64,
    iso: AtomicU64,
}

impl Oracle {
    pub fn new<P: StochasticProblem + 'static>(problem: P) -> Self {
        Self::from_arc(Arc::new(problem))
    }

    pub fn from_arc(problem: Arc<dyn StochasticProblem>) -> Self {
        Oracle {
            problem,
            sampling: SamplingScheme::WithReplacement,
            dense_cap: DEFAULT_DENSE_CAP,
            ifo: AtomicU64::new(0),
            iso: AtomicU64::new(0),
        }
    }

    pub fn with_sampling(mut self, sampling: SamplingScheme) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    /// Same problem and configuration, fresh zeroed counters.
    pub fn fresh(&self) -> Oracle {
        Oracle {
            problem: Arc::clone(&self.problem),
            sampling: self.sampling,
            dense_cap: self.dense_cap,
            ifo: AtomicU64::new(0),
            iso: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn population(&self) -> Population {
        self.problem.population()
    }

    pub fn sampling(&self) -> SamplingScheme {
        self.sampling
    }

    /// Largest batch a single index draw can produce (the population size
    /// under without-replacement sampling, unbounded otherwise).
    pub fn max_batch(&self) -> Option<usize> {
        match (self.sampling, self.problem.population()) {
            (SamplingScheme::WithoutReplacement, Population::Finite(n)) => Some(n),
            _ => None,
        }
    }

    pub fn constants(&self) -> ProblemConstants {
        self.problem.constants()
    }

    pub fn is_noiseless(&self) -> bool {
        self.problem.is_noiseless()
    }

    pub fn certified_region(&self) -> Option<Region> {
        self.problem.certified_region()
    }

    pub fn default_start(&self) -> DVector<f64> {
        self.problem.default_start()
    }

    pub fn f_gap_from(&self, x0: &DVector<f64>) -> f64 {
        self.problem.f_gap_from(x0)
    }

    pub fn problem(&self) -> &dyn StochasticProblem {
        self.problem.as_ref()
    }

    pub fn counts(&self) -> OracleCounts {
        OracleCounts {
            ifo: self.ifo.load(Ordering::Relaxed),
            iso: self.iso.load(Ordering::Relaxed),
        }
    }

    /// Draws `count` sample ids, i.i.d. uniform by default. Deterministic
    /// given the RNG state. Without-replacement batches are capped at the
    /// population size.
    pub fn sample_indices(
        &self,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<SampleId>, OracleError> {
        if count == 0 {
            return Err(OracleError::EmptyBatch);
        }
        match self.problem.population() {
            Population::Infinite => Ok((0..count).map(|_| SampleId(rng.next_u64())).collect()),
            Population::Finite(n) => match self.sampling {
                SamplingScheme::WithReplacement => Ok((0..count)
                    .map(|_| SampleId(rng.random_range(0..n as u64)))
                    .collect()),
                SamplingScheme::WithoutReplacement => {
                    let take = count.min(n);
                    let mut pool: Vec<u64> = (0..n as u64).collect();
                    for i in 0..take {
                        let j = rng.random_range(i..n);
                        pool.swap(i, j);
                    }
                    pool.truncate(take);
                    Ok(pool.into_iter().map(SampleId).collect())
                }
            },
        }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), OracleError> {
        if x.len() != self.problem.dim() {
            return Err(OracleError::DimensionMismatch {
                expected: self.problem.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_id(&self, id: SampleId) -> Result<(), OracleError> {
        if let Population::Finite(n) = self.problem.population() {
            if id.0 >= n as u64 {
                return Err(OracleError::SampleOutOfRange { id: id.0, size: n });
            }
        }
        Ok(())
    }

    /// Per-sample gradient (one IFO call).
    pub fn sample_grad(&self, x: &DVector<f64>, id: SampleId) -> Result<DVector<f64>, OracleError> {
        self.check_dim(x)?;
        self.check_id(id)?;
        self.ifo.fetch_add(1, Ordering::Relaxed);
        let mut out = DVector::zeros(x.len());
        self.problem.sample_grad_acc(x, id, &mut out);
        Ok(out)
    }

    /// Per-sample Hessian-vector product (one ISO call).
    pub fn sample_hvp(
        &self,
        x: &DVector<f64>,
        id: SampleId,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>, OracleError> {
        self.check_dim(x)?;
        self.check_dim(v)?;
        self.check_id(id)?;
        self.iso.fetch_add(1, Ordering::Relaxed);
        let mut out = DVector::zeros(x.len());
        self.problem.sample_hvp_acc(x, id, v, &mut out);
        Ok(out)
    }

    /// Mean of per-sample gradients over an explicit batch.
    /// Counts one IFO call per batch element.
    pub fn mean_sample_grad(
        &self,
        x: &DVector<f64>,
        batch: &[SampleId],
    ) -> Result<DVector<f64>, OracleError> {
        self.check_dim(x)?;
        if batch.is_empty() {
            return Err(OracleError::EmptyBatch);
        }
        for id in batch {
            self.check_id(*id)?;
        }
        self.ifo.fetch_add(batch.len() as u64, Ordering::Relaxed);
        let problem = self.problem.as_ref();
        let sum = pairwise_vector_sum(batch.len(), x.len(), &|i, acc| {
            problem.sample_grad_acc(x, batch[i], acc)
        });
        Ok(sum / batch.len() as f64)
    }

    /// Mean of per-sample Hessian-vector products over an explicit batch.
    /// Counts one ISO call per batch element.
    pub fn mean_sample_hvp(
        &self,
        x: &DVector<f64>,
        batch: &[SampleId],
        v: &DVector<f64>,
    ) -> Result<DVector<f64>, OracleError> {
        self.check_dim(x)?;
        self.check_dim(v)?;
        if batch.is_empty() {
            return Err(OracleError::EmptyBatch);
        }
        for id in batch {
            self.check_id(*id)?;
        }
        self.iso.fetch_add(batch.len() as u64, Ordering::Relaxed);
        let problem = self.problem.as_ref();
        let sum = pairwise_vector_sum(batch.len(), x.len(), &|i, acc| {
            problem.sample_hvp_acc(x, batch[i], v, acc)
        });
        Ok(sum / batch.len() as f64)
    }

    /// Exact population value; counter-neutral.
    pub fn exact_value(&self, x: &DVector<f64>) -> Result<f64, OracleError> {
        self.check_dim(x)?;
        Ok(self.problem.exact_value(x))
    }

    /// Exact population gradient; counter-neutral.
    pub fn exact_grad(&self, x: &DVector<f64>) -> Result<DVector<f64>, OracleError> {
        self.check_dim(x)?;
        Ok(self.problem.exact_grad(x))
    }

    /// Exact value, gradient and dense Hessian; counter-neutral.
    ///
    /// Refuses dimensions above the dense cap (default
    /// [`DEFAULT_DENSE_CAP`]); this is a verification path only.
    pub fn exact_eval(&self, x: &DVector<f64>) -> Result<ExactEval, OracleError> {
        self.check_dim(x)?;
        if self.problem.dim() > self.dense_cap {
            return Err(OracleError::DenseCapExceeded {
                dim: self.problem.dim(),
                cap: self.dense_cap,
            });
        }
        Ok(ExactEval {
            value: self.problem.exact_value(x),
            grad: self.problem.exact_grad(x),
            hessian: self.problem.exact_hessian(x),
        })
    }
}
