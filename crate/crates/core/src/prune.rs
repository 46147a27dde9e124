//! The DCA outer loop for layerwise pruning.
//!
//! Each outer iteration linearizes the concave part `−h` at the current
//! weights and hands the convex remainder
//! `g(U) + λΩ(U) − ⟨U, ∇h(Uᵏ)⟩` to [`acc_prox_svrg`]. The smooth terms are
//! averaged over samples, so `λ` weighs the penalty against the *mean*
//! per-sample reconstruction error.

use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::matrix::DenseMatrix;
use crate::objective::{g_value, grad_g, grad_h, h_value, layer_mse, LayerData, Rectifier, SmoothReluParams};
use crate::regularizer::{Regularizer, RegularizerKind};
use crate::solver::{acc_prox_svrg, SmoothOracle, SolverParams};

/// Entries below this magnitude are snapped to zero in the final weights.
pub const ZERO_SNAP: f64 = 1e-12;
/// Singular values below this fraction of the largest count as zero.
pub const RANK_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    pub reg: Regularizer,
    pub smooth: SmoothReluParams,
    /// Maximum number of outer (linearization) iterations `K`.
    pub outer_iters: usize,
    pub solver: SolverParams,
    /// Stop when `‖Uᵏ⁺¹ − Uᵏ‖_F / ‖Uᵏ‖_F` drops below this; 0 runs all `K`.
    pub convergence_tol: f64,
    /// Keep every outer iterate in [`PruneResult::history`].
    pub keep_history: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            reg: Regularizer::none(),
            smooth: SmoothReluParams::default(),
            outer_iters: 10,
            solver: SolverParams::default(),
            convergence_tol: 1e-4,
            keep_history: false,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 {
            return Err(Error::invalid("at least one outer iteration is required"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::invalid("convergence tolerance must be nonnegative"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone)]
pub struct PruneResult {
    pub weights: DenseMatrix,
    /// Objective after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// Fraction of exactly-zero penalized entries, or for the nuclear norm
    /// the fraction of singular directions removed, `1 − rank / min(d1, d2)`.
    pub achieved_sparsity: f64,
    /// Numerical rank of the penalized block; reported for nuclear runs.
    pub rank: Option<usize>,
    /// Mean over samples of `‖max(0, Uᵀa_j) − b_j‖²`.
    pub layer_mse: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub history: Vec<DenseMatrix>,
}

/// The convex subproblem's smooth part,
/// `(1/m)·(g(U) − ⟨U, C⟩)` with `C = ∇h(Uᵏ)` fixed.
pub struct LinearizedObjective<'a> {
    data: &'a LayerData,
    smooth: SmoothReluParams,
    linear: DenseMatrix,
    weight: f64,
}

impl<'a> LinearizedObjective<'a> {
    pub fn new(data: &'a LayerData, smooth: SmoothReluParams, anchor: &DenseMatrix) -> Result<Self> {
        Ok(Self {
            data,
            smooth,
            linear: grad_h(anchor, data, smooth)?,
            weight: 1.0 / data.samples() as f64,
        })
    }
}

impl SmoothOracle for LinearizedObjective<'_> {
    fn sample_count(&self) -> usize {
        self.data.samples()
    }

    fn value(&self, x: &DenseMatrix) -> Result<f64> {
        Ok(self.weight * (g_value(x, self.data, self.smooth)? - x.inner(&self.linear)?))
    }

    fn full_gradient(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut grad = grad_g(x, self.data, self.smooth)?;
        grad.axpy(-1.0, &self.linear)?;
        grad.scale(self.weight);
        Ok(grad)
    }

    fn minibatch_gradient(&self, x: &DenseMatrix, indices: &[usize]) -> Result<DenseMatrix> {
        if indices.len() == self.data.samples() {
            return self.full_gradient(x);
        }
        let batch = self.data.select(indices)?;
        let mut grad = grad_g(x, &batch, self.smooth)?;
        grad.scale(self.data.samples() as f64 / indices.len() as f64);
        grad.axpy(-1.0, &self.linear)?;
        grad.scale(self.weight);
        Ok(grad)
    }
}

/// The pruning objective `(1/m)·(g − h) + λΩ` under the smooth rectifier.
pub fn pruning_objective(u: &DenseMatrix, data: &LayerData, cfg: &PruneConfig) -> Result<f64> {
    let w = 1.0 / data.samples() as f64;
    Ok(w * (g_value(u, data, cfg.smooth)? - h_value(u, data, cfg.smooth)?) + cfg.reg.penalty(u)?)
}

/// Prunes one layer starting from `init` (normally the trained weights).
pub fn feta_prune(data: &LayerData, init: &DenseMatrix, cfg: &PruneConfig) -> Result<PruneResult> {
    cfg.validate()?;
    if init.shape() != (data.input_dim(), data.output_dim()) {
        return Err(Error::dim(format!(
            "initial weights are {}x{} but data is {} -> {}",
            init.rows(),
            init.cols(),
            data.input_dim(),
            data.output_dim()
        )));
    }
    if !init.is_finite() {
        return Err(Error::invalid("initial weights are not finite"));
    }

    let mut current = init.clone();
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    let mut history = Vec::new();
    if cfg.keep_history {
        history.push(current.clone());
    }
    let mut converged = false;
    for k in 0..cfg.outer_iters {
        let sub = LinearizedObjective::new(data, cfg.smooth, &current)?;
        let next = match acc_prox_svrg(&sub, &cfg.reg, &current, &cfg.solver) {
            Ok(next) => next,
            Err(Error::Diverged { reason, last_finite, .. }) => {
                return Err(Error::Diverged {
                    reason: format!("outer iteration {}: {reason}", k + 1),
                    last_finite: last_finite.or_else(|| Some(Box::new(current.clone()))),
                    trace,
                })
            }
            Err(e) => return Err(e),
        };
        trace.push(pruning_objective(&next, data, cfg)?);
        let change = next.sub(&current)?.frobenius_norm() / current.frobenius_norm().max(1e-12);
        log::trace!("outer {}: objective {:.6e}, change {change:.3e}", k + 1, trace[k]);
        current = next;
        if cfg.keep_history {
            history.push(current.clone());
        }
        if change < cfg.convergence_tol {
            converged = true;
            break;
        }
    }

    let penalized = cfg.reg.penalized_rows(&current);
    let d2 = current.cols();
    current.as_mut_slice()[..penalized * d2]
        .iter_mut()
        .filter(|v| v.abs() < ZERO_SNAP)
        .for_each(|v| *v = 0.0);

    let (achieved_sparsity, rank) = match cfg.reg.kind() {
        RegularizerKind::Nuclear => {
            let block = current.row_slice(0, penalized)?;
            let full = penalized.min(d2);
            let r = svd(&block)?.effective_rank(RANK_REL_TOL);
            let frac = if full == 0 { 0.0 } else { 1.0 - r as f64 / full as f64 };
            (frac, Some(r))
        }
        _ => (entry_sparsity(&current, penalized), None),
    };

    Ok(PruneResult {
        layer_mse: layer_mse(&current, data, Rectifier::Relu)?,
        weights: current,
        iterations_used: trace.len(),
        objective_trace: trace,
        achieved_sparsity,
        rank,
        converged,
        history,
    })
}

/// Fraction of exact zeros among the first `rows` rows.
pub fn entry_sparsity(u: &DenseMatrix, rows: usize) -> f64 {
    let n = rows * u.cols();
    if n == 0 {
        return 0.0;
    }
    u.as_slice()[..n].iter().filter(|&&v| v == 0.0).count() as f64 / n as f64
}

/// One independent [`feta_prune`] per `λ`, same seed throughout, sorted by `λ`.
pub fn sparsity_for_lambda_sweep(
    data: &LayerData,
    init: &DenseMatrix,
    cfg: &PruneConfig,
    lambdas: &[f64],
) -> Result<Vec<(f64, PruneResult)>> {
    let mut sorted = lambdas.to_vec();
    if sorted.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("lambda values must be finite"));
    }
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .map(|lambda| {
            let cfg = PruneConfig {
                reg: cfg.reg.with_lambda(lambda)?,
                ..cfg.clone()
            };
            Ok((lambda, feta_prune(data, init, &cfg)?))
        })
        .collect()
}

/// Largest entry of `|(1/m)∇(g − h)(0)|`: at or above this `λ` the zero
/// matrix is a fixed point of the L1 iteration.
pub fn lambda_max(data: &LayerData, smooth: SmoothReluParams) -> Result<f64> {
    let zero = DenseMatrix::zeros(data.input_dim(), data.output_dim());
    let mut grad = grad_g(&zero, data, smooth)?;
    grad.axpy(-1.0, &grad_h(&zero, data, smooth)?)?;
    Ok(grad.max_abs() / data.samples() as f64)
}

/// Outcome of [`lambda_for_sparsity`].
#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub result: PruneResult,
    pub evaluations: usize,
    /// Whether the achieved sparsity landed within the tolerance.
    pub hit: bool,
}

/// Bisects `λ` on a log scale until the achieved sparsity is within
/// `tolerance` of `target`, using at most `max_evals` pruning runs.
/// Returns the closest run when the budget runs out.
pub fn lambda_for_sparsity(
    data: &LayerData,
    init: &DenseMatrix,
    cfg: &PruneConfig,
    target: f64,
    tolerance: f64,
    max_evals: usize,
) -> Result<LambdaSearch> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::invalid(format!("sparsity target {target} outside [0, 1]")));
    }
    if cfg.reg.kind() == RegularizerKind::None {
        return Err(Error::invalid("a sparsity target needs an L1 or nuclear regularizer"));
    }
    if max_evals == 0 {
        return Err(Error::invalid("lambda search needs at least one evaluation"));
    }
    let scale = lambda_max(data, cfg.smooth)?.max(1e-12);
    let run = |lambda: f64| -> Result<PruneResult> {
        let cfg = PruneConfig {
            reg: cfg.reg.with_lambda(lambda)?,
            ..cfg.clone()
        };
        feta_prune(data, init, &cfg)
    };

    let mut evals = 0;
    let mut best: Option<(f64, PruneResult)> = None;
    let consider = |lambda: f64, res: PruneResult, best: &mut Option<(f64, PruneResult)>| {
        let better = best
            .as_ref()
            .is_none_or(|(_, b)| (res.achieved_sparsity - target).abs() < (b.achieved_sparsity - target).abs());
        if better {
            *best = Some((lambda, res));
        }
    };

    // Exponents of log10(λ / scale) known to give too little / too much sparsity.
    let (mut below, mut above): (Option<f64>, Option<f64>) = (None, None);
    let mut x = -1.5_f64;
    while evals < max_evals {
        let lambda = scale * 10f64.powf(x);
        let res = run(lambda)?;
        evals += 1;
        let s = res.achieved_sparsity;
        log::debug!("lambda {lambda:.4e}: sparsity {s:.4}");
        let done = (s - target).abs() <= tolerance;
        consider(lambda, res, &mut best);
        if done {
            break;
        }
        if s < target {
            below = Some(x);
        } else {
            above = Some(x);
        }
        x = match (below, above) {
            (Some(lo), Some(hi)) => 0.5 * (lo + hi),
            (Some(lo), None) => lo + 1.0,
            (None, Some(hi)) => hi - 1.0,
            (None, None) => unreachable!(),
        };
    }
    let (lambda, result) = best.expect("at least one evaluation ran");
    let hit = (result.achieved_sparsity - target).abs() <= tolerance;
    Ok(LambdaSearch {
        lambda,
        result,
        evaluations: evals,
        hit,
    })
}
