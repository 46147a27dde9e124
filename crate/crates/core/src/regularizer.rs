//! Convex penalties `λΩ(U)` and their proximal maps.

use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerKind {
    None,
    /// Entrywise `‖U‖₁`.
    L1,
    /// Sum of singular values `‖U‖_*`.
    Nuclear,
}

/// A penalty `λΩ(U)`.
///
/// The last `exempt_rows` rows of `U` are left out of both the penalty and
/// the proximal step; a folded-in bias row is carried this way.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    kind: RegularizerKind,
    lambda: f64,
    exempt_rows: usize,
}

impl Regularizer {
    pub fn new(kind: RegularizerKind, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(Self {
            kind,
            lambda,
            exempt_rows: 0,
        })
    }

    pub fn none() -> Self {
        Self {
            kind: RegularizerKind::None,
            lambda: 0.0,
            exempt_rows: 0,
        }
    }

    pub fn l1(lambda: f64) -> Result<Self> {
        Self::new(RegularizerKind::L1, lambda)
    }

    pub fn nuclear(lambda: f64) -> Result<Self> {
        Self::new(RegularizerKind::Nuclear, lambda)
    }

    /// Excludes the trailing `rows` rows from the penalty.
    pub fn with_exempt_rows(mut self, rows: usize) -> Self {
        self.exempt_rows = rows;
        self
    }

    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn exempt_rows(&self) -> usize {
        self.exempt_rows
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    /// Number of leading rows that the penalty applies to.
    pub fn penalized_rows(&self, u: &DenseMatrix) -> usize {
        u.rows().saturating_sub(self.exempt_rows)
    }

    pub fn penalty(&self, u: &DenseMatrix) -> Result<f64> {
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        let rows = self.penalized_rows(u);
        match self.kind {
            RegularizerKind::None => Ok(0.0),
            RegularizerKind::L1 => {
                let n = rows * u.cols();
                Ok(self.lambda * u.as_slice()[..n].iter().map(|v| v.abs()).sum::<f64>())
            }
            RegularizerKind::Nuclear => {
                let block = u.row_slice(0, rows)?;
                Ok(self.lambda * svd(&block)?.singular_values.iter().sum::<f64>())
            }
        }
    }

    /// `argmin_X ½‖X − V‖²_F + step·λ·Ω(X)`.
    pub fn prox(&self, v: &DenseMatrix, step: f64) -> Result<DenseMatrix> {
        if !(step > 0.0) {
            return Err(Error::invalid(format!("prox step must be positive, got {step}")));
        }
        let tau = step * self.lambda;
        if tau == 0.0 || self.kind == RegularizerKind::None {
            return Ok(v.clone());
        }
        let rows = self.penalized_rows(v);
        match self.kind {
            RegularizerKind::None => unreachable!(),
            RegularizerKind::L1 => {
                let mut out = v.clone();
                let n = rows * v.cols();
                out.as_mut_slice()[..n]
                    .iter_mut()
                    .for_each(|x| *x = soft_threshold(*x, tau));
                Ok(out)
            }
            RegularizerKind::Nuclear => {
                let block = v.row_slice(0, rows)?;
                let mut dec = svd(&block)?;
                dec.singular_values
                    .iter_mut()
                    .for_each(|s| *s = (*s - tau).max(0.0));
                let shrunk = dec.reconstruct(None);
                if rows == v.rows() {
                    Ok(shrunk)
                } else {
                    shrunk.vstack(&v.row_slice(rows, v.rows())?)
                }
            }
        }
    }
}

/// `sign(v)·max(|v| − tau, 0)`; `|v| == tau` maps to zero.
#[inline]
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}
