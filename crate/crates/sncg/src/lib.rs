//! Matrix-free stochastic non-convex optimization.
//!
//! Implements a family of optimizers that escape saddle points by competing a
//! mini-batch gradient step against a noisy negative-curvature step, with
//! concentration-driven batch sizing, a Lanczos-based smallest-eigenvector
//! solver over Hessian-vector-product oracles, and exact dense verification of
//! the per-step and terminal guarantees at desk scale.
//!
//! Module map:
//! - [`oracle`]: stochastic-function abstraction (IFO/ISO) plus built-in test
//!   problems with documented constants;
//! - [`estimator`]: mini-batch gradient and averaged Hessian operator with
//!   concentration batch sizing;
//! - [`negcurv`]: approximate smallest-eigenvector solver on the shifted
//!   operator;
//! - [`ncgs`]: the competing update step;
//! - [`driver`]: the two optimizer variants and an SGD baseline;
//! - [`verify`]: exact second-order stationarity checks and dense eigen
//!   oracles for tests.

pub mod driver;
pub mod estimator;
pub mod negcurv;
pub mod ncgs;
pub mod oracle;
pub mod reduce;
mod rngutil;
pub mod verify;

pub use driver::{sgd_baseline, sncg1, sncg2, IterationRecord, RunResult, RunStatus, SncgConfig};
pub use estimator::{BatchMode, GradEstimate, HessianOperator};
pub use negcurv::{min_eigvec, shift_operator, CurvatureEstimate, LanczosOptions, SymOperator};
pub use ncgs::{ncgs_step, sufficient_decrease_bound, StepBranch, StepOutcome};
pub use oracle::{
    Oracle, PcaFiniteSum, Population, ProblemConstants, SaddleQuadratic, SampleId,
    SeparableQuartic, StochasticProblem,
};
pub use verify::{check_stationarity, dense_min_eig, StationarityReport};
