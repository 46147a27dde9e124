//! Spectral norm by power iteration and a one-sided Jacobi SVD.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, DenseMatrix};

const POWER_MAX_ITERS: usize = 1000;
const POWER_REL_TOL: f64 = 1e-8;
const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `M = left · diag(singular_values) · rightᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows × r` with orthonormal columns.
    pub left: DenseMatrix,
    /// Nonincreasing, nonnegative, length `r = min(rows, cols)`.
    pub singular_values: Vec<f64>,
    /// `cols × r` with orthonormal columns.
    pub right: DenseMatrix,
}

impl SvdResult {
    /// Rebuilds `left · diag(σ) · rightᵀ`, optionally keeping only the
    /// leading `rank` triplets.
    pub fn reconstruct(&self, rank: Option<usize>) -> DenseMatrix {
        let r = rank
            .unwrap_or(self.singular_values.len())
            .min(self.singular_values.len());
        let (m, n) = (self.left.rows(), self.right.rows());
        let mut out = DenseMatrix::zeros(m, n);
        for k in 0..r {
            let s = self.singular_values[k];
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let li = self.left.get(i, k) * s;
                if li == 0.0 {
                    continue;
                }
                let row = out.row_mut(i);
                for (j, o) in row.iter_mut().enumerate() {
                    *o += li * self.right.get(j, k);
                }
            }
        }
        out
    }

    /// Number of singular values above `rel_tol · σ_max`.
    pub fn effective_rank(&self, rel_tol: f64) -> usize {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s >= rel_tol * smax)
            .count()
    }
}

/// Largest singular value of `m`, by power iteration on `mᵀm`.
///
/// The start vector is the normalized all-ones vector so repeated calls are
/// reproducible.
pub fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::dim("spectral norm of an empty matrix"));
    }
    if !m.is_finite() {
        return Err(Error::invalid("spectral norm of a non-finite matrix"));
    }
    if m.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let n = m.cols();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut mv = m.matvec(&v)?;
    if norm2(&mv) == 0.0 {
        // Start vector orthogonal to the row space.
        v[0] += 1e-12;
        normalize(&mut v);
        mv = m.matvec(&v)?;
    }
    if norm2(&mv) == 0.0 {
        let col = (0..n)
            .find(|&c| (0..m.rows()).any(|r| m.get(r, c) != 0.0))
            .expect("nonzero matrix has a nonzero column");
        v = vec![0.0; n];
        v[col] = 1.0;
        mv = m.matvec(&v)?;
    }

    let mut sigma = norm2(&mv);
    for _ in 0..POWER_MAX_ITERS {
        let mut w = m.t_matvec(&mv)?;
        let wn = norm2(&w);
        if wn == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= wn);
        v = w;
        mv = m.matvec(&v)?;
        // ‖Mv‖ with unit v is the Rayleigh estimate of σ_max.
        let next = norm2(&mv);
        let done = (next - sigma).abs() <= POWER_REL_TOL * next;
        sigma = next;
        if done {
            break;
        }
    }
    Ok(sigma)
}

/// Thin SVD by one-sided (Hestenes) Jacobi rotations.
pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::invalid("svd of a non-finite matrix"));
    }
    if m.rows() < m.cols() {
        let t = svd(&m.transpose())?;
        return Ok(SvdResult {
            left: t.right,
            singular_values: t.singular_values,
            right: t.left,
        });
    }
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Ok(SvdResult {
            left: DenseMatrix::zeros(rows, 0),
            singular_values: Vec::new(),
            right: DenseMatrix::zeros(0, 0),
        });
    }
    if rows > cols + cols / 4 {
        // Rotate the small triangular factor instead of the tall matrix.
        let (q, r) = householder_qr(m);
        let inner = jacobi_svd(&r);
        return Ok(SvdResult {
            left: q.matmul(&inner.left)?,
            singular_values: inner.singular_values,
            right: inner.right,
        });
    }
    Ok(jacobi_svd(m))
}

/// Thin QR by Householder reflections: `Q` is `rows × cols` with orthonormal
/// columns and `R` is `cols × cols` upper triangular. Needs `rows ≥ cols`.
fn householder_qr(m: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (rows, cols) = m.shape();
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for k in 0..cols {
        let x = &a[k][k..];
        let nx = norm2(x);
        let mut v = x.to_vec();
        if nx > 0.0 {
            let alpha = if x[0] >= 0.0 { -nx } else { nx };
            v[0] -= alpha;
        }
        let nv = norm2(&v);
        if nv > 0.0 {
            v.iter_mut().for_each(|e| *e /= nv);
            for col in a.iter_mut().skip(k) {
                let tail = &mut col[k..];
                let d = 2.0 * dot(&v, tail);
                tail.iter_mut().zip(&v).for_each(|(t, vi)| *t -= d * vi);
            }
        } else {
            v.iter_mut().for_each(|e| *e = 0.0);
        }
        reflectors.push(v);
    }
    let r = DenseMatrix::from_fn(cols, cols, |i, j| if i <= j { a[j][i] } else { 0.0 });

    // Q = H_0 · … · H_{cols-1} applied to the first `cols` unit vectors.
    let mut q: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; rows];
            e[j] = 1.0;
            e
        })
        .collect();
    for (k, v) in reflectors.iter().enumerate().rev() {
        for col in q.iter_mut() {
            let tail = &mut col[k..];
            let d = 2.0 * dot(v, tail);
            if d != 0.0 {
                tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= d * vi);
            }
        }
    }
    let q = DenseMatrix::from_fn(rows, cols, |i, j| q[j][i]);
    (q, r)
}

fn jacobi_svd(m: &DenseMatrix) -> SvdResult {
    let (rows, cols) = m.shape();

    // Column-major working copies: a[j] is column j of M, v[j] column j of V.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    let eps = f64::EPSILON;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = a.iter().enumerate().map(|(j, col)| (norm2(col), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut left_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut sigmas = Vec::with_capacity(cols);
    let mut right_cols = Vec::with_capacity(cols);
    let mut missing = Vec::new();
    for &(s, j) in &order {
        sigmas.push(s);
        right_cols.push(v[j].clone());
        if s > 0.0 && s.is_normal() {
            left_cols.push(a[j].iter().map(|x| x / s).collect());
        } else {
            missing.push(left_cols.len());
            left_cols.push(Vec::new());
        }
    }
    if !missing.is_empty() {
        complete_orthonormal(&mut left_cols, &missing, rows);
        for &k in &missing {
            sigmas[k] = 0.0;
        }
    }

    let left = DenseMatrix::from_fn(rows, cols, |i, k| left_cols[k][i]);
    let right = DenseMatrix::from_fn(cols, cols, |i, k| right_cols[k][i]);
    SvdResult {
        left,
        singular_values: sigmas,
        right,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Fills the empty slots of `cols` with unit vectors orthogonal to every
/// other column, by Gram-Schmidt over the canonical basis.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], dim: usize) {
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < dim, "ran out of basis vectors");
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of classical Gram-Schmidt.
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let proj = dot(&e, other);
                    e.iter_mut().zip(other).for_each(|(x, o)| *x -= proj * o);
                }
            }
            let n = norm2(&e);
            if n > 1e-8 {
                e.iter_mut().for_each(|x| *x /= n);
                cols[slot] = e;
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn max_orthonormality_error(g: &DenseMatrix) -> f64 {
        let gram = g.t_matmul(g).unwrap();
        gram.sub(&DenseMatrix::identity(g.cols())).unwrap().max_abs()
    }

    #[test]
    fn spectral_norm_of_identity_and_diagonal() {
        assert!((spectral_norm(&DenseMatrix::identity(3)).unwrap() - 1.0).abs() < 1e-12);
        assert!((spectral_norm(&DenseMatrix::diag(&[3.0, 1.0])).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_matches_svd_on_gaussian() {
        let mut rng = Rng::new(17);
        let m = rng.gaussian_matrix(5, 4);
        let s = spectral_norm(&m).unwrap();
        let smax = svd(&m).unwrap().singular_values[0];
        assert!((s - smax).abs() <= 1e-6 * smax, "{s} vs {smax}");
    }

    #[test]
    fn spectral_norm_empty_is_error() {
        assert!(matches!(spectral_norm(&DenseMatrix::zeros(0, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn spectral_norm_orthogonal_start() {
        // All-ones start lies in the null space.
        let m = DenseMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let s = spectral_norm(&m).unwrap();
        assert!((s - 2f64.sqrt()).abs() < 1e-8);
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0, -1.0]]).unwrap();
        assert!((spectral_norm(&m).unwrap() - 2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn svd_diagonal() {
        let r = svd(&DenseMatrix::diag(&[2.0, 1.0])).unwrap();
        assert_eq!(r.singular_values, vec![2.0, 1.0]);
    }

    #[test]
    fn svd_rank_one() {
        let u = [0.6, 0.8, 0.0];
        let v = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()];
        let m = DenseMatrix::from_fn(3, 2, |i, j| u[i] * v[j]);
        let r = svd(&m).unwrap();
        assert!((r.singular_values[0] - 1.0).abs() < 1e-14);
        assert!(r.singular_values[1].abs() < 1e-14);
        assert!(max_orthonormality_error(&r.left) < 1e-8);
        assert!(max_orthonormality_error(&r.right) < 1e-8);
    }

    #[test]
    fn svd_reconstructs_random() {
        let mut rng = Rng::new(23);
        let m = rng.gaussian_matrix(6, 3);
        let r = svd(&m).unwrap();
        assert!(r.reconstruct(None).sub(&m).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn svd_of_zero_and_wide() {
        let r = svd(&DenseMatrix::zeros(3, 2)).unwrap();
        assert_eq!(r.singular_values, vec![0.0, 0.0]);
        assert!(max_orthonormality_error(&r.left) < 1e-12);

        let mut rng = Rng::new(4);
        let m = rng.gaussian_matrix(2, 5);
        let r = svd(&m).unwrap();
        assert_eq!(r.left.shape(), (2, 2));
        assert_eq!(r.right.shape(), (5, 2));
        assert!(r.reconstruct(None).sub(&m).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = DenseMatrix::zeros(2, 2);
        m.as_mut_slice()[0] = f64::INFINITY;
        assert!(matches!(svd(&m), Err(Error::Validation(_))));
    }
}
