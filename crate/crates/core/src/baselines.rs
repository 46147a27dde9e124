//! Magnitude thresholding and truncated-SVD compression.

use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::matrix::DenseMatrix;

/// Keeps entries with `|w| > t`, zeroes the rest.
pub fn hard_threshold(w: &DenseMatrix, t: f64) -> DenseMatrix {
    w.map(|v| if v.abs() > t { v } else { 0.0 })
}

/// Smallest threshold that zeroes at least `target` of the entries: the
/// `⌈target·n⌉`-th smallest magnitude, or 0 for a zero target.
pub fn threshold_for_sparsity(w: &DenseMatrix, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::invalid(format!("sparsity target {target} outside [0, 1]")));
    }
    let n = w.as_slice().len();
    // Guard against 0.95 * 100 = 95.00000000000001 style round-up.
    let k = ((target * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if k == 0 || n == 0 {
        return Ok(0.0);
    }
    let mut mags: Vec<f64> = w.as_slice().iter().map(|v| v.abs()).collect();
    let (_, kth, _) = mags.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Leading `k` singular triplets.
#[derive(Debug, Clone)]
pub struct LowRankFactors {
    /// `d1 × k`
    pub left: DenseMatrix,
    pub singular_values: Vec<f64>,
    /// `d2 × k`
    pub right: DenseMatrix,
}

impl LowRankFactors {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let scaled = DenseMatrix::from_fn(self.left.rows(), self.rank(), |i, j| {
            self.left.get(i, j) * self.singular_values[j]
        });
        scaled
            .matmul_t(&self.right)
            .expect("factor shapes agree by construction")
    }
}

/// Best rank-`k` approximation of `w` in the Frobenius norm.
pub fn truncated_svd_compress(w: &DenseMatrix, k: usize) -> Result<LowRankFactors> {
    let full = w.rows().min(w.cols());
    if k > full {
        return Err(Error::invalid(format!("rank {k} exceeds min dimension {full}")));
    }
    let dec = svd(w)?;
    let keep: Vec<usize> = (0..k).collect();
    let take = |m: &DenseMatrix| DenseMatrix::from_fn(m.rows(), k, |i, j| m.get(i, keep[j]));
    Ok(LowRankFactors {
        left: take(&dec.left),
        singular_values: dec.singular_values[..k].to_vec(),
        right: take(&dec.right),
    })
}

/// Storage of a rank-`k` factorization relative to the dense matrix,
/// `(k·d1 + k + k·d2) / (d1·d2)`. Values above 1 mean no compression.
pub fn compression_ratio(d1: usize, d2: usize, k: usize) -> f64 {
    let cr = (k * d1 + k + k * d2) as f64 / (d1 * d2) as f64;
    if cr > 1.0 {
        log::warn!("rank {k} on a {d1}x{d2} matrix stores more than the dense matrix (CR {cr:.3})");
    }
    cr
}

/// Largest rank whose compression ratio does not exceed `cr`.
pub fn rank_for_compression_ratio(d1: usize, d2: usize, cr: f64) -> usize {
    let per_rank = (d1 + d2 + 1) as f64;
    let k = (cr * (d1 * d2) as f64 / per_rank + 1e-9).floor() as usize;
    k.min(d1.min(d2))
}
