//! Reference implementations used as oracles by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use feta::solver::SmoothOracle;
use feta::{DenseMatrix, LayerData, Result, Rng};

pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
        (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
    })
}

/// `Σ_ij (max(z_ij, 0) − b_ij)²` with `z = A·U`, by explicit loops.
pub fn relu_loss(u: &DenseMatrix, data: &LayerData) -> f64 {
    let (a, b) = (data.inputs(), data.outputs());
    let mut total = 0.0;
    for i in 0..a.rows() {
        for j in 0..u.cols() {
            let z: f64 = (0..a.cols()).map(|k| a.get(i, k) * u.get(k, j)).sum();
            total += (z.max(0.0) - b.get(i, j)).powi(2);
        }
    }
    total
}

pub fn random_layer(rng: &mut Rng, m: usize, d1: usize, d2: usize, signed: bool) -> LayerData {
    let a = rng.gaussian_matrix(m, d1);
    let mut b = rng.gaussian_matrix(m, d2);
    if !signed {
        b = b.map(f64::abs);
    }
    LayerData::new(a, b).unwrap()
}

/// Central differences of `f` at `u`, entry by entry.
pub fn finite_difference(f: impl Fn(&DenseMatrix) -> f64, u: &DenseMatrix, h: f64) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(u.rows(), u.cols());
    for r in 0..u.rows() {
        for c in 0..u.cols() {
            let mut plus = u.clone();
            plus.set(r, c, u.get(r, c) + h);
            let mut minus = u.clone();
            minus.set(r, c, u.get(r, c) - h);
            out.set(r, c, (f(&plus) - f(&minus)) / (2.0 * h));
        }
    }
    out
}

pub fn rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
}

/// `(1/m)·‖A·X − B‖²_F` as a finite sum over rows.
pub struct LeastSquares {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
}

impl LeastSquares {
    fn grad_on(&self, a: &DenseMatrix, b: &DenseMatrix, x: &DenseMatrix, scale: f64) -> Result<DenseMatrix> {
        let mut r = a.matmul(x)?;
        r.axpy(-1.0, b)?;
        let mut g = a.t_matmul(&r)?;
        g.scale(scale);
        Ok(g)
    }
}

impl SmoothOracle for LeastSquares {
    fn sample_count(&self) -> usize {
        self.a.rows()
    }

    fn value(&self, x: &DenseMatrix) -> Result<f64> {
        let r = self.a.matmul(x)?.sub(&self.b)?;
        Ok(r.frobenius_norm().powi(2) / self.a.rows() as f64)
    }

    fn full_gradient(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.grad_on(&self.a, &self.b, x, 2.0 / self.a.rows() as f64)
    }

    fn minibatch_gradient(&self, x: &DenseMatrix, indices: &[usize]) -> Result<DenseMatrix> {
        let a = self.a.select_rows(indices)?;
        let b = self.b.select_rows(indices)?;
        self.grad_on(&a, &b, x, 2.0 / indices.len() as f64)
    }
}

/// Solves `AᵀA·X = AᵀB` by Gauss-Jordan elimination with partial pivoting.
pub fn normal_equations(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let n = a.cols();
    let k = b.cols();
    let mut m = vec![vec![0.0; n + k]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = (0..a.rows()).map(|r| a.get(r, i) * a.get(r, j)).sum();
        }
        for j in 0..k {
            m[i][n + j] = (0..a.rows()).map(|r| a.get(r, i) * b.get(r, j)).sum();
        }
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    DenseMatrix::from_fn(n, k, |i, j| m[i][n + j])
}

/// Cyclic coordinate descent for `(1/m)·‖A·X − B‖²_F + λ‖X‖₁`.
pub fn lasso_coordinate_descent(a: &DenseMatrix, b: &DenseMatrix, lambda: f64, sweeps: usize) -> DenseMatrix {
    let (m, n) = (a.rows(), a.cols());
    let mut x = DenseMatrix::zeros(n, b.cols());
    let col_sq: Vec<f64> = (0..n).map(|j| (0..m).map(|r| a.get(r, j).powi(2)).sum()).collect();
    for c in 0..b.cols() {
        let mut resid: Vec<f64> = (0..m).map(|r| b.get(r, c)).collect();
        for _ in 0..sweeps {
            for j in 0..n {
                let old = x.get(j, c);
                let rho: f64 = (0..m).map(|r| a.get(r, j) * (resid[r] + a.get(r, j) * old)).sum();
                let t = lambda * m as f64 / 2.0;
                let new = if rho > t {
                    (rho - t) / col_sq[j]
                } else if rho < -t {
                    (rho + t) / col_sq[j]
                } else {
                    0.0
                };
                for (r, res) in resid.iter_mut().enumerate() {
                    *res -= a.get(r, j) * (new - old);
                }
                x.set(j, c, new);
            }
        }
    }
    x
}

pub fn lasso_objective(a: &DenseMatrix, b: &DenseMatrix, x: &DenseMatrix, lambda: f64) -> f64 {
    let r = a.matmul(x).unwrap().sub(b).unwrap();
    r.frobenius_norm().powi(2) / a.rows() as f64 + lambda * x.as_slice().iter().map(|v| v.abs()).sum::<f64>()
}
