//! Deterministic parallel reductions.
//!
//! Mini-batch averaging sums thousands of per-sample vectors. The sum is
//! computed over a fixed pairwise tree (split at the midpoint, sequential
//! accumulation inside each leaf), so the floating-point result is identical
//! whether the tree is evaluated on one thread or many.

use nalgebra::DVector;

/// Items per sequential leaf of the reduction tree.
const LEAF: usize = 1024;

/// Range length below which we do not bother forking.
const PAR_THRESHOLD: usize = 4 * LEAF;

/// Sums `count` vector-valued items of dimension `dim`.
///
/// `accumulate(i, acc)` must add item `i` into `acc`. The summation tree is
/// fixed by `count` alone; thread scheduling cannot change the result.
pub fn pairwise_vector_sum<F>(count: usize, dim: usize, accumulate: &F) -> DVector<f64>
where
    F: Fn(usize, &mut DVector<f64>) + Sync,
{
    if count == 0 {
        return DVector::zeros(dim);
    }
    sum_range(0, count, dim, accumulate)
}

fn sum_range<F>(lo: usize, hi: usize, dim: usize, accumulate: &F) -> DVector<f64>
where
    F: Fn(usize, &mut DVector<f64>) + Sync,
{
    let len = hi - lo;
    if len <= LEAF {
        let mut acc = DVector::zeros(dim);
        for i in lo..hi {
            accumulate(i, &mut acc);
        }
        return acc;
    }
    let mid = lo + len / 2;
    let (left, right) = if len >= PAR_THRESHOLD {
        rayon::join(
            || sum_range(lo, mid, dim, accumulate),
            || sum_range(mid, hi, dim, accumulate),
        )
    } else {
        (
            sum_range(lo, mid, dim, accumulate),
            sum_range(mid, hi, dim, accumulate),
        )
    };
    left + right
}
