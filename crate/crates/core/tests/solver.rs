mod common;

use common::{lasso_coordinate_descent, lasso_objective, normal_equations, rel_err, LeastSquares};
use feta::solver::{acc_prox_svrg, acc_prox_svrg_run};
use feta::{DenseMatrix, Regularizer, Rng, SolverParams};

fn problem(seed: u64) -> LeastSquares {
    let mut rng = Rng::new(seed);
    let a = rng.gaussian_matrix(20, 5);
    let truth = rng.gaussian_matrix(5, 2);
    let mut b = a.matmul(&truth).unwrap();
    b.axpy(0.1, &rng.gaussian_matrix(20, 2)).unwrap();
    LeastSquares { a, b }
}

fn params(seed: u64) -> SolverParams {
    SolverParams {
        epochs: 30,
        inner_steps: Some(40),
        step_eta: 0.02,
        fallback_eta: None,
        momentum: 0.95,
        minibatch: 5,
        seed,
    }
}

#[test]
fn least_squares_reaches_normal_equations() {
    for seed in 0..3 {
        let p = problem(seed);
        let exact = normal_equations(&p.a, &p.b);
        let x = acc_prox_svrg(&p, &Regularizer::none(), &DenseMatrix::zeros(5, 2), &params(seed)).unwrap();
        assert!(rel_err(&x, &exact) < 1e-3, "seed {seed}: {}", rel_err(&x, &exact));
    }
}

#[test]
fn lasso_matches_coordinate_descent() {
    let p = problem(11);
    let lambda = 0.3;
    let oracle = lasso_coordinate_descent(&p.a, &p.b, lambda, 2000);
    let x = acc_prox_svrg(&p, &Regularizer::l1(lambda).unwrap(), &DenseMatrix::zeros(5, 2), &params(1)).unwrap();
    let (fx, fo) = (lasso_objective(&p.a, &p.b, &x, lambda), lasso_objective(&p.a, &p.b, &oracle, lambda));
    assert!((fx - fo).abs() / fo < 1e-4, "{fx} vs {fo}");
}

#[test]
fn full_batch_runs_are_seed_independent() {
    let p = problem(2);
    let full = SolverParams { minibatch: 20, ..params(0) };
    let a = acc_prox_svrg(&p, &Regularizer::l1(0.1).unwrap(), &DenseMatrix::zeros(5, 2), &full).unwrap();
    let b = acc_prox_svrg(&p, &Regularizer::l1(0.1).unwrap(), &DenseMatrix::zeros(5, 2), &SolverParams { seed: 99, ..full }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn epoch_objectives_trend_down() {
    let p = problem(4);
    let run = acc_prox_svrg_run(&p, &Regularizer::l1(0.2).unwrap(), &DenseMatrix::zeros(5, 2), &params(3), true).unwrap();
    let obj = &run.epoch_objectives;
    assert_eq!(obj.len(), 30);
    let start = p.b.frobenius_norm().powi(2) / 20.0;
    assert!(obj[0] < start);
    assert!(obj[29] <= obj[0]);
    assert!(obj.windows(5).all(|w| w[4] <= w[0] + 1e-9));
}

#[test]
fn seeded_runs_are_bit_identical() {
    let p = problem(5);
    let run = || acc_prox_svrg(&p, &Regularizer::l1(0.1).unwrap(), &DenseMatrix::zeros(5, 2), &params(17)).unwrap();
    assert_eq!(run().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
               run().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn too_large_step_falls_back() {
    let p = problem(6);
    let bad = SolverParams { step_eta: 5.0, fallback_eta: Some(0.02), ..params(0) };
    let run = acc_prox_svrg_run(&p, &Regularizer::none(), &DenseMatrix::zeros(5, 2), &bad, false).unwrap();
    assert_eq!(run.step, 0.02);
    assert!(run.solution.is_finite());
}
