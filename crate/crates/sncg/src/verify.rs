//! Exact stationarity checking and dense eigen-oracles.
//!
//! These are the independent verification paths used by tests and by the
//! harness: dense symmetric eigendecomposition (deterministic) and exact
//! full-population evaluations. Nothing here touches the IFO/ISO counters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{Oracle, OracleError};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },
    #[error("eigenpair residual {residual:.3e} exceeds 1e-8")]
    ResidualTooLarge { residual: f64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Exact second-order stationarity report at thresholds `2 eps1` on the
/// gradient norm and `-2 eps2` on the smallest Hessian eigenvalue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    pub grad_norm: f64,
    pub lambda_min: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub pass_first_order: bool,
    pub pass_second_order: bool,
}

impl StationarityReport {
    pub fn pass(&self) -> bool {
        self.pass_first_order && self.pass_second_order
    }
}

/// Checks `||grad f(x)|| <= 2 eps1` and `lambda_min(hess f(x)) >= -2 eps2`
/// using exact dense evaluations. Oracle-count-neutral.
pub fn check_stationarity(
    oracle: &Oracle,
    x: &DVector<f64>,
    eps1: f64,
    eps2: f64,
) -> Result<StationarityReport, VerifyError> {
    let exact = oracle.exact_eval(x)?;
    let grad_norm = exact.grad.norm();
    let (lambda_min, _) = dense_min_eig(&exact.hessian)?;
    Ok(StationarityReport {
        grad_norm,
        lambda_min,
        eps1,
        eps2,
        pass_first_order: grad_norm <= 2.0 * eps1,
        pass_second_order: lambda_min >= -2.0 * eps2,
    })
}

fn check_symmetry(h: &DMatrix<f64>) -> Result<(), VerifyError> {
    let max_asym = (h - h.transpose()).abs().max();
    if max_asym > 1e-10 {
        return Err(VerifyError::NotSymmetric { max_asym });
    }
    Ok(())
}

/// Smallest eigenvalue and eigenvector of a dense symmetric matrix via the
/// deterministic symmetric eigendecomposition. The returned pair satisfies
/// `||Hv - lambda v|| <= 1e-8`.
pub fn dense_min_eig(h: &DMatrix<f64>) -> Result<(f64, DVector<f64>), VerifyError> {
    check_symmetry(h)?;
    let eig = h.clone().symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    let lambda = eig.eigenvalues[best];
    let v = eig.eigenvectors.column(best).into_owned();
    let residual = (h * &v - &v * lambda).norm();
    if residual > 1e-8 {
        return Err(VerifyError::ResidualTooLarge { residual });
    }
    Ok((lambda, v))
}

/// Spectral norm of a dense symmetric matrix (largest absolute eigenvalue).
pub fn dense_spectral_norm(h: &DMatrix<f64>) -> Result<f64, VerifyError> {
    check_symmetry(h)?;
    let eig = h.clone().symmetric_eigen();
    Ok(eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs())))
}
