//! The layerwise reconstruction objective split into convex pieces.
//!
//! For weights `U` (`d1 × d2`, column `i` feeds output unit `i`), inputs
//! `a_j` and targets `b_j`, the squared loss `Σ_j ‖ρ(Uᵀa_j) − b_j‖²`
//! expands into `g(U) − h(U)` with
//!
//! * `g(U) = Σ_j Σ_i [ρ²(u_iᵀa_j) + b_ji²] + Σ_{b_ji<0} −2 b_ji ρ(u_iᵀa_j)`
//! * `h(U) = Σ_{b_ji≥0} 2 b_ji ρ(u_iᵀa_j)`
//!
//! Both are convex whenever `ρ` is convex, nonnegative and nondecreasing,
//! which holds for the softplus surrogate and for the rectifier itself.
//! Optimization always goes through the softplus; the exact rectifier is
//! kept for checking the decomposition.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::regularizer::Regularizer;

/// Sharpness of the softplus surrogate `ρ(x) = log(1 + exp(βx)) / β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothReluParams {
    beta: f64,
}

impl SmoothReluParams {
    pub const DEFAULT_BETA: f64 = 20.0;

    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("softplus beta must be positive, got {beta}")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for SmoothReluParams {
    fn default() -> Self {
        Self {
            beta: Self::DEFAULT_BETA,
        }
    }
}

/// Overflow-safe softplus, `max(x, 0) + log1p(exp(−β|x|)) / β`.
#[inline]
pub fn softplus(x: f64, p: SmoothReluParams) -> f64 {
    x.max(0.0) + (-p.beta * x.abs()).exp().ln_1p() / p.beta
}

/// Derivative of [`softplus`]: the logistic function of `βx`.
#[inline]
pub fn softplus_grad(x: f64, p: SmoothReluParams) -> f64 {
    let t = p.beta * x;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// The nonlinearity used when evaluating the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rectifier {
    Softplus(SmoothReluParams),
    /// `max(0, x)`; not differentiable at 0, used only for evaluation.
    Relu,
}

impl Rectifier {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Rectifier::Softplus(p) => softplus(x, *p),
            Rectifier::Relu => x.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Rectifier::Softplus(p) => softplus_grad(x, *p),
            Rectifier::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl From<SmoothReluParams> for Rectifier {
    fn from(p: SmoothReluParams) -> Self {
        Rectifier::Softplus(p)
    }
}

/// Captured activations of one layer: row `j` of `inputs` produced row `j`
/// of `outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerData {
    inputs: DenseMatrix,
    outputs: DenseMatrix,
}

impl LayerData {
    pub fn new(inputs: DenseMatrix, outputs: DenseMatrix) -> Result<Self> {
        if inputs.rows() != outputs.rows() {
            return Err(Error::dim(format!(
                "{} input rows but {} output rows",
                inputs.rows(),
                outputs.rows()
            )));
        }
        if inputs.rows() == 0 {
            return Err(Error::invalid("layer data needs at least one sample"));
        }
        if !inputs.is_finite() || !outputs.is_finite() {
            return Err(Error::invalid("layer data contains non-finite values"));
        }
        Ok(Self { inputs, outputs })
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn outputs(&self) -> &DenseMatrix {
        &self.outputs
    }

    pub fn samples(&self) -> usize {
        self.inputs.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.cols()
    }

    /// Subset of samples, in the order given.
    pub fn select(&self, rows: &[usize]) -> Result<LayerData> {
        LayerData::new(self.inputs.select_rows(rows)?, self.outputs.select_rows(rows)?)
    }

    /// Same samples with a constant-one input appended, so a bias can be
    /// carried as the last row of the weight matrix.
    pub fn with_bias_column(&self) -> LayerData {
        LayerData {
            inputs: self.inputs.append_constant_column(1.0),
            outputs: self.outputs.clone(),
        }
    }

    pub fn has_nonnegative_outputs(&self) -> bool {
        self.outputs.as_slice().iter().all(|&b| b >= 0.0)
    }

    fn check(&self, u: &DenseMatrix) -> Result<()> {
        if u.rows() != self.input_dim() || u.cols() != self.output_dim() {
            return Err(Error::dim(format!(
                "weights are {}x{} but data is {} -> {}",
                u.rows(),
                u.cols(),
                self.input_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations `A·U`, one row per sample.
    fn preactivations(&self, u: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(u)?;
        self.inputs.matmul(u)
    }
}

pub fn g_value(u: &DenseMatrix, data: &LayerData, rect: impl Into<Rectifier>) -> Result<f64> {
    let rect = rect.into();
    let z = data.preactivations(u)?;
    let mut total = 0.0;
    for (&zi, &b) in z.as_slice().iter().zip(data.outputs.as_slice()) {
        let r = rect.value(zi);
        total += r * r + b * b;
        if b < 0.0 {
            total -= 2.0 * b * r;
        }
    }
    Ok(total)
}

pub fn h_value(u: &DenseMatrix, data: &LayerData, rect: impl Into<Rectifier>) -> Result<f64> {
    let rect = rect.into();
    let z = data.preactivations(u)?;
    let mut total = 0.0;
    for (&zi, &b) in z.as_slice().iter().zip(data.outputs.as_slice()) {
        if b >= 0.0 {
            total += 2.0 * b * rect.value(zi);
        }
    }
    Ok(total)
}

/// Gradient of [`g_value`] with respect to `U`.
pub fn grad_g(u: &DenseMatrix, data: &LayerData, rect: impl Into<Rectifier>) -> Result<DenseMatrix> {
    let rect = rect.into();
    let mut z = data.preactivations(u)?;
    for (zi, &b) in z.as_mut_slice().iter_mut().zip(data.outputs.as_slice()) {
        let (r, dr) = (rect.value(*zi), rect.derivative(*zi));
        let mut coef = 2.0 * r * dr;
        if b < 0.0 {
            coef -= 2.0 * b * dr;
        }
        *zi = coef;
    }
    data.inputs.t_matmul(&z)
}

/// Gradient of [`h_value`] with respect to `U`.
pub fn grad_h(u: &DenseMatrix, data: &LayerData, rect: impl Into<Rectifier>) -> Result<DenseMatrix> {
    let rect = rect.into();
    let mut z = data.preactivations(u)?;
    for (zi, &b) in z.as_mut_slice().iter_mut().zip(data.outputs.as_slice()) {
        *zi = if b >= 0.0 { 2.0 * b * rect.derivative(*zi) } else { 0.0 };
    }
    data.inputs.t_matmul(&z)
}

/// `g(U) − h(U) + penalty(U)`.
pub fn f_value(
    u: &DenseMatrix,
    data: &LayerData,
    rect: impl Into<Rectifier>,
    reg: &Regularizer,
) -> Result<f64> {
    let rect = rect.into();
    Ok(g_value(u, data, rect)? - h_value(u, data, rect)? + reg.penalty(u)?)
}

/// Per-sample squared reconstruction errors `‖ρ(Uᵀa_j) − b_j‖²`.
pub fn sample_errors(u: &DenseMatrix, data: &LayerData, rect: impl Into<Rectifier>) -> Result<Vec<f64>> {
    let rect = rect.into();
    let z = data.preactivations(u)?;
    Ok((0..z.rows())
        .map(|j| {
            z.row(j)
                .iter()
                .zip(data.outputs.row(j))
                .map(|(&zi, &b)| (rect.value(zi) - b).powi(2))
                .sum()
        })
        .collect())
}

/// `Σ_j ‖ρ(Uᵀa_j) − b_j‖²`.
pub fn reconstruction_loss(u: &DenseMatrix, data: &LayerData, rect: impl Into<Rectifier>) -> Result<f64> {
    Ok(sample_errors(u, data, rect)?.iter().sum())
}

/// Mean over samples of `‖ρ(Uᵀa_j) − b_j‖²`.
pub fn layer_mse(u: &DenseMatrix, data: &LayerData, rect: impl Into<Rectifier>) -> Result<f64> {
    Ok(reconstruction_loss(u, data, rect)? / data.samples() as f64)
}
