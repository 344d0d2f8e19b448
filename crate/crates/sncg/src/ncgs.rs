//! The competing update step: estimate a mini-batch gradient and a noisy
//! negative curvature direction, then take whichever of the curvature step or
//! the gradient step promises the larger guaranteed decrease.
//!
//! With `r = v'H(x)v` and `gn = ||g(x)||`, the two decrease bounds are
//!
//! ```text
//! D1 = -eps2^2 r / (2 L2^2) - 11 eps2^3 / (48 L2^2)   (curvature step)
//! D2 = gn^2 / (4 L1) - eps1^2 / (8 L1)                (gradient step)
//! ```
//!
//! If `D1 > D2` the update is `x - (eps2/L2) sign(v'g) v` (step length exactly
//! `eps2/L2`); otherwise it is `x - g/L1`. Ties go to the gradient step and
//! `sign(0) := +1`.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{
    build_hessian_operator, estimate_gradient, BatchMode, EstimatorError, GradEstimate,
};
use crate::negcurv::{min_eigvec_with, CurvatureEstimate, LanczosOptions, SolverError};
use crate::oracle::{Oracle, OracleError, ProblemConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepBranch {
    Curvature,
    Gradient,
}

/// How the curvature-solver tolerance is chosen for a step.
#[derive(Debug, Clone, Copy)]
pub enum CurvatureTolerance {
    /// Use this tolerance as-is.
    Fixed(f64),
    /// `max(floor, ||g||^exponent) / 2`, adaptive to the gradient magnitude.
    GradAdaptive { floor: f64, exponent: f64 },
}

impl CurvatureTolerance {
    pub fn resolve(&self, grad_norm: f64) -> f64 {
        match self {
            CurvatureTolerance::Fixed(eps) => *eps,
            CurvatureTolerance::GradAdaptive { floor, exponent } => {
                floor.max(grad_norm.powf(*exponent)) / 2.0
            }
        }
    }
}

/// Everything a single NCG-S step needs to know.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub eps1: f64,
    pub eps2: f64,
    /// Per-step failure budget for each of the three randomized ingredients.
    pub delta_prime: f64,
    pub constants: ProblemConstants,
    pub mode: BatchMode,
    pub solver: LanczosOptions,
}

impl StepParams {
    /// Gradient accuracy target `min(eps1/(2 sqrt 2), eps2^2/(24 L2))`.
    pub fn eps4(&self) -> f64 {
        let a = self.eps1 / (2.0 * 2.0f64.sqrt());
        let b = self.eps2 * self.eps2 / (24.0 * self.constants.hess_lipschitz);
        a.min(b)
    }

    /// Hessian accuracy target `eps2 / 24`.
    pub fn eps3(&self) -> f64 {
        self.eps2 / 24.0
    }
}

/// Outcome of one NCG-S step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub x_next: DVector<f64>,
    pub branch: StepBranch,
    /// `v' H(x) v` against the same mini-batch Hessian the solver used.
    pub rayleigh: f64,
    pub grad_norm: f64,
    /// Curvature-branch decrease bound.
    pub delta1: f64,
    /// Gradient-branch decrease bound.
    pub delta2: f64,
    /// Signed curvature step length (zero on the gradient branch).
    pub eta: f64,
    /// Solver tolerance this step ran at.
    pub eps_nc: f64,
    pub grad: GradEstimate,
    pub curvature: CurvatureEstimate,
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("eps1 must lie in (0,1), got {0}")]
    BadEps1(f64),
    #[error("eps2 must lie in (0,1), got {0}")]
    BadEps2(f64),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("curvature solver failed: {source}")]
    Solver {
        source: SolverError,
        /// Norm of the gradient estimate the step had already computed.
        grad_norm: f64,
    },
}

/// Both per-step decrease bounds and their max. Pure arithmetic.
pub fn sufficient_decrease_bound(
    rayleigh: f64,
    grad_norm: f64,
    eps1: f64,
    eps2: f64,
    grad_lipschitz: f64,
    hess_lipschitz: f64,
) -> (f64, f64, f64) {
    let l1 = grad_lipschitz;
    let l2 = hess_lipschitz;
    let delta1 = -eps2 * eps2 * rayleigh / (2.0 * l2 * l2) - 11.0 * eps2.powi(3) / (48.0 * l2 * l2);
    let delta2 = grad_norm * grad_norm / (4.0 * l1) - eps1 * eps1 / (8.0 * l1);
    (delta1, delta2, delta1.max(delta2))
}

fn sign_or_plus(t: f64) -> f64 {
    if t < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// One NCG-S step at `x`.
///
/// Computes (or reuses) the mini-batch gradient, resolves the curvature
/// tolerance from its norm, builds the averaged Hessian operator on a fresh
/// independent batch, solves for a noisy negative curvature direction, and
/// applies the branch rule. The gradient and Hessian batches are drawn fresh
/// and independently on every call.
pub fn ncgs_step(
    oracle: &Oracle,
    x: &DVector<f64>,
    grad: Option<GradEstimate>,
    tolerance: CurvatureTolerance,
    params: &StepParams,
    rng: &mut impl Rng,
) -> Result<StepOutcome, StepError> {
    if !(params.eps1 > 0.0 && params.eps1 < 1.0) {
        return Err(StepError::BadEps1(params.eps1));
    }
    if !(params.eps2 > 0.0 && params.eps2 < 1.0) {
        return Err(StepError::BadEps2(params.eps2));
    }
    let l1 = params.constants.grad_lipschitz;
    let l2 = params.constants.hess_lipschitz;

    let grad = match grad {
        Some(g) => g,
        None => estimate_gradient(
            oracle,
            x,
            params.eps4(),
            params.delta_prime,
            params.mode,
            rng,
        )?,
    };

    let eps_nc = tolerance.resolve(grad.norm);
    let hessian = build_hessian_operator(
        oracle,
        x,
        params.eps3(),
        params.delta_prime,
        params.mode,
        rng,
    )?;
    let curvature = min_eigvec_with(
        &hessian,
        l1,
        eps_nc,
        params.delta_prime,
        &params.solver,
        rng,
    )
    .map_err(|source| StepError::Solver {
        source,
        grad_norm: grad.norm,
    })?;

    let (delta1, delta2, _) = sufficient_decrease_bound(
        curvature.rayleigh,
        grad.norm,
        params.eps1,
        params.eps2,
        l1,
        l2,
    );

    let (x_next, branch, eta) = if delta1 > delta2 {
        let eta = (params.eps2 / l2) * sign_or_plus(curvature.direction.dot(&grad.g));
        (x - &curvature.direction * eta, StepBranch::Curvature, eta)
    } else {
        (x - &grad.g / l1, StepBranch::Gradient, 0.0)
    };

    Ok(StepOutcome {
        x_next,
        branch,
        rayleigh: curvature.rayleigh,
        grad_norm: grad.norm,
        delta1,
        delta2,
        eta,
        eps_nc,
        grad,
        curvature,
    })
}
