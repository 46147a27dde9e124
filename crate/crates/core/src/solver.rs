//! Accelerated proximal SVRG for `min_x φ(x) + λΩ(x)` with `φ` a smooth
//! convex finite sum.
//!
//! Each epoch takes a full-gradient snapshot at the epoch's starting point,
//! then runs `T` momentum steps along variance-reduced minibatch directions
//! followed by the proximal map of the regularizer. Momentum is reset at
//! every epoch boundary.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::regularizer::Regularizer;
use crate::rng::Rng;

/// Gradient access to a smooth finite-sum objective.
///
/// `minibatch_gradient` must be an unbiased estimate of `full_gradient`,
/// and must equal it when `indices` covers every sample.
pub trait SmoothOracle {
    fn sample_count(&self) -> usize;

    /// Value of the smooth part only.
    fn value(&self, x: &DenseMatrix) -> Result<f64>;

    fn full_gradient(&self, x: &DenseMatrix) -> Result<DenseMatrix>;

    /// `indices` are distinct and sorted.
    fn minibatch_gradient(&self, x: &DenseMatrix, indices: &[usize]) -> Result<DenseMatrix>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    /// Outer epochs `S`.
    pub epochs: usize,
    /// Inner steps `T` per epoch; `None` means one pass, `⌈m / minibatch⌉`.
    pub inner_steps: Option<usize>,
    pub step_eta: f64,
    /// Smaller step to restart with when the first epoch raises the
    /// objective by more than 10%.
    pub fallback_eta: Option<f64>,
    pub momentum: f64,
    pub minibatch: usize,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            epochs: 10,
            inner_steps: None,
            step_eta: 1e-3,
            fallback_eta: Some(1e-4),
            momentum: 0.95,
            minibatch: 64,
            seed: 0,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("solver needs at least one epoch"));
        }
        if self.inner_steps == Some(0) {
            return Err(Error::invalid("solver needs at least one inner step"));
        }
        if self.minibatch == 0 {
            return Err(Error::invalid("minibatch size must be at least 1"));
        }
        if !(self.step_eta > 0.0 && self.step_eta.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.step_eta)));
        }
        if let Some(f) = self.fallback_eta {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::invalid(format!("fallback step must be positive, got {f}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    pub fn inner_steps_for(&self, samples: usize) -> usize {
        self.inner_steps
            .unwrap_or_else(|| samples.div_ceil(self.minibatch.min(samples).max(1)))
            .max(1)
    }
}

/// Result of a solver run with diagnostics.
#[derive(Debug, Clone)]
pub struct SolverRun {
    pub solution: DenseMatrix,
    /// Composite objective `φ + λΩ` at the end of each epoch, when traced.
    pub epoch_objectives: Vec<f64>,
    /// Step size actually used.
    pub step: f64,
}

/// Runs the solver and returns the final iterate.
pub fn acc_prox_svrg(
    oracle: &dyn SmoothOracle,
    reg: &Regularizer,
    init: &DenseMatrix,
    params: &SolverParams,
) -> Result<DenseMatrix> {
    Ok(acc_prox_svrg_run(oracle, reg, init, params, false)?.solution)
}

/// Runs the solver, optionally evaluating the objective after every epoch.
pub fn acc_prox_svrg_run(
    oracle: &dyn SmoothOracle,
    reg: &Regularizer,
    init: &DenseMatrix,
    params: &SolverParams,
    trace: bool,
) -> Result<SolverRun> {
    params.validate()?;
    if !init.is_finite() {
        return Err(Error::invalid("solver start point is not finite"));
    }
    let Some(fallback) = params.fallback_eta else {
        return run_fixed_step(oracle, reg, init, params, params.step_eta, trace, None)
            .map(|run| run.expect("unchecked runs are never rejected"));
    };

    let start = oracle.value(init)? + reg.penalty(init)?;
    let accept = |obj: f64| obj.is_finite() && obj - start <= 0.1 * start.abs();
    match run_fixed_step(oracle, reg, init, params, params.step_eta, trace, Some(&accept)) {
        Ok(Some(run)) => Ok(run),
        Ok(None) | Err(Error::Diverged { .. }) => {
            log::debug!(
                "step {} rejected after first epoch, retrying with {}",
                params.step_eta,
                fallback
            );
            run_fixed_step(oracle, reg, init, params, fallback, trace, None)
                .map(|run| run.expect("unchecked runs are never rejected"))
        }
        Err(e) => Err(e),
    }
}

/// Returns false to reject the step size after the first epoch.
type FirstEpochCheck<'a> = &'a dyn Fn(f64) -> bool;

fn run_fixed_step(
    oracle: &dyn SmoothOracle,
    reg: &Regularizer,
    init: &DenseMatrix,
    params: &SolverParams,
    eta: f64,
    trace: bool,
    first_epoch_check: Option<FirstEpochCheck<'_>>,
) -> Result<Option<SolverRun>> {
    let m = oracle.sample_count();
    if m == 0 {
        return Err(Error::invalid("oracle has no samples"));
    }
    let batch = params.minibatch.min(m);
    let steps = params.inner_steps_for(m);
    let beta = params.momentum;
    let mut rng = Rng::new(params.seed);

    let mut snapshot = init.clone();
    let mut objectives = Vec::new();
    for epoch in 0..params.epochs {
        let snap_grad = oracle.full_gradient(&snapshot)?;
        if !snap_grad.is_finite() {
            return Err(diverged("non-finite snapshot gradient", &snapshot, objectives));
        }
        let mut x = snapshot.clone();
        let mut y = snapshot.clone();
        for _ in 0..steps {
            let idx = rng.sample_indices(m, batch);
            // u = ∇φ_B(y) − ∇φ_B(x̃) + ∇φ(x̃)
            let mut dir = oracle.minibatch_gradient(&y, &idx)?;
            dir.axpy(-1.0, &oracle.minibatch_gradient(&snapshot, &idx)?)?;
            dir.axpy(1.0, &snap_grad)?;
            let mut point = y;
            point.axpy(-eta, &dir)?;
            let x_next = reg.prox(&point, eta)?;
            if !x_next.is_finite() {
                return Err(diverged("non-finite iterate", &x, objectives));
            }
            let mut y_next = x_next.clone();
            y_next.axpy(beta, &x_next)?;
            y_next.axpy(-beta, &x)?;
            x = x_next;
            y = y_next;
        }
        snapshot = x;

        let check_now = epoch == 0 && first_epoch_check.is_some();
        if trace || check_now {
            let obj = oracle.value(&snapshot)? + reg.penalty(&snapshot)?;
            if let Some(check) = first_epoch_check.filter(|_| epoch == 0) {
                if !check(obj) {
                    return Ok(None);
                }
            }
            if trace {
                objectives.push(obj);
            }
        }
    }
    Ok(Some(SolverRun {
        solution: snapshot,
        epoch_objectives: objectives,
        step: eta,
    }))
}

fn diverged(reason: &str, last: &DenseMatrix, trace: Vec<f64>) -> Error {
    Error::Diverged {
        reason: reason.to_string(),
        last_finite: Some(Box::new(last.clone())),
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero {
        shape: (usize, usize),
    }

    impl SmoothOracle for Zero {
        fn sample_count(&self) -> usize {
            4
        }
        fn value(&self, _: &DenseMatrix) -> Result<f64> {
            Ok(0.0)
        }
        fn full_gradient(&self, _: &DenseMatrix) -> Result<DenseMatrix> {
            Ok(DenseMatrix::zeros(self.shape.0, self.shape.1))
        }
        fn minibatch_gradient(&self, _: &DenseMatrix, _: &[usize]) -> Result<DenseMatrix> {
            Ok(DenseMatrix::zeros(self.shape.0, self.shape.1))
        }
    }

    /// φ(x) = ½ c‖x‖² with an exploding curvature.
    struct Stiff(f64);

    impl SmoothOracle for Stiff {
        fn sample_count(&self) -> usize {
            1
        }
        fn value(&self, x: &DenseMatrix) -> Result<f64> {
            Ok(0.5 * self.0 * x.frobenius_norm().powi(2))
        }
        fn full_gradient(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
            Ok(x.scaled(self.0))
        }
        fn minibatch_gradient(&self, x: &DenseMatrix, _: &[usize]) -> Result<DenseMatrix> {
            Ok(x.scaled(self.0))
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let init = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let out = acc_prox_svrg(&Zero { shape: (2, 2) }, &Regularizer::none(), &init, &SolverParams::default())
            .unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn divergence_is_reported() {
        let init = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let params = SolverParams {
            step_eta: 1.0,
            fallback_eta: None,
            epochs: 200,
            ..SolverParams::default()
        };
        match acc_prox_svrg(&Stiff(1e6), &Regularizer::none(), &init, &params) {
            Err(Error::Diverged { last_finite, .. }) => assert!(last_finite.unwrap().is_finite()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn fallback_step_rescues_stiff_problem() {
        let init = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        // 1e-3 · 3000 > 2 blows up, 1e-4 · 3000 < 2 converges.
        let params = SolverParams {
            epochs: 20,
            inner_steps: Some(50),
            ..SolverParams::default()
        };
        let run = acc_prox_svrg_run(&Stiff(3000.0), &Regularizer::none(), &init, &params, true).unwrap();
        assert_eq!(run.step, 1e-4);
        assert!(run.solution.max_abs() < 1e-6);
    }

    #[test]
    fn params_validation() {
        let bad = [
            SolverParams { epochs: 0, ..SolverParams::default() },
            SolverParams { minibatch: 0, ..SolverParams::default() },
            SolverParams { momentum: 1.0, ..SolverParams::default() },
            SolverParams { step_eta: 0.0, ..SolverParams::default() },
            SolverParams { inner_steps: Some(0), ..SolverParams::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        assert_eq!(SolverParams { minibatch: 64, ..SolverParams::default() }.inner_steps_for(1000), 16);
    }
}
