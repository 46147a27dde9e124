mod common;

use common::{finite_difference, random_layer, rel_err, relu_loss};
use feta::objective::{g_value, grad_g, grad_h, h_value, layer_mse, softplus};
use feta::{DenseMatrix, Rectifier, Rng, SmoothReluParams};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn dc_split_equals_relu_loss(m in 1usize..=20, d1 in 1usize..=16, d2 in 1usize..=8, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let data = random_layer(&mut rng, m, d1, d2, true);
        let u = rng.gaussian_matrix(d1, d2);
        let split = g_value(&u, &data, Rectifier::Relu).unwrap() - h_value(&u, &data, Rectifier::Relu).unwrap();
        let loss = relu_loss(&u, &data);
        prop_assert!((split - loss).abs() / (1.0 + loss) < 1e-10);
    }

    #[test]
    fn g_and_h_are_convex_along_lines(seed in any::<u64>(), t in 0.0f64..1.0) {
        let mut rng = Rng::new(seed);
        let data = random_layer(&mut rng, 8, 4, 3, true);
        let x = rng.gaussian_matrix(4, 3);
        let y = rng.gaussian_matrix(4, 3);
        let mut mid = x.scaled(t);
        mid.axpy(1.0 - t, &y).unwrap();
        let p = SmoothReluParams::new(5.0).unwrap();
        for f in [g_value, h_value] {
            let (fx, fy, fm) = (f(&x, &data, p).unwrap(), f(&y, &data, p).unwrap(), f(&mid, &data, p).unwrap());
            prop_assert!(fm <= t * fx + (1.0 - t) * fy + 1e-9 * (1.0 + fx.abs() + fy.abs()));
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = Rng::new(7);
    for case in 0..20 {
        let beta = [1.0, 5.0, 20.0][case % 3];
        let p = SmoothReluParams::new(beta).unwrap();
        let data = random_layer(&mut rng, 12, 5, 3, case % 2 == 0);
        let u = rng.gaussian_matrix(5, 3).scaled(0.5);
        let fd_g = finite_difference(|v| g_value(v, &data, p).unwrap(), &u, 1e-6);
        let fd_h = finite_difference(|v| h_value(v, &data, p).unwrap(), &u, 1e-6);
        assert!(rel_err(&grad_g(&u, &data, p).unwrap(), &fd_g) < 1e-5, "case {case}");
        let gh = grad_h(&u, &data, p).unwrap();
        if gh.frobenius_norm() > 0.0 {
            assert!(rel_err(&gh, &fd_h) < 1e-5, "case {case}");
        }
    }
}

#[test]
fn softplus_gap_to_relu_is_bounded() {
    for beta in [1.0, 5.0, 20.0, 100.0] {
        let p = SmoothReluParams::new(beta).unwrap();
        for i in -200..=200 {
            let x = i as f64 * 0.05;
            let gap = softplus(x, p) - x.max(0.0);
            assert!(gap >= 0.0 && gap <= std::f64::consts::LN_2 / beta + 1e-15);
        }
    }
}

#[test]
fn exact_weights_have_zero_relu_mse() {
    let mut rng = Rng::new(3);
    let a = rng.gaussian_matrix(30, 6);
    let u = rng.gaussian_matrix(6, 4);
    let b = a.matmul(&u).unwrap().map(|z| z.max(0.0));
    let data = feta::LayerData::new(a, b).unwrap();
    assert!(layer_mse(&u, &data, Rectifier::Relu).unwrap() < 1e-24);
    assert!(layer_mse(&DenseMatrix::zeros(6, 4), &data, Rectifier::Relu).unwrap() > 0.0);
}
