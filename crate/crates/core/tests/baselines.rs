use feta::baselines::{compression_ratio, hard_threshold, threshold_for_sparsity, truncated_svd_compress};
use feta::prune::entry_sparsity;
use feta::Rng;

#[test]
fn truncated_svd_beats_random_rank_k_matrices() {
    let mut rng = Rng::new(1);
    let w = rng.gaussian_matrix(12, 9);
    for k in 1..=4 {
        let best = truncated_svd_compress(&w, k).unwrap().reconstruct().sub(&w).unwrap().frobenius_norm();
        for _ in 0..50 {
            let alt = rng.gaussian_matrix(12, k).matmul(&rng.gaussian_matrix(k, 9)).unwrap();
            // best multiple of the random rank-k matrix
            let scale = alt.inner(&w).unwrap() / alt.frobenius_norm().powi(2);
            assert!(alt.scaled(scale).sub(&w).unwrap().frobenius_norm() >= best);
        }
    }
}

#[test]
fn thresholding_hits_requested_sparsity() {
    let w = Rng::new(2).gaussian_matrix(20, 10);
    for target in [0.0, 0.25, 0.5, 0.95, 1.0] {
        let t = threshold_for_sparsity(&w, target).unwrap();
        let s = entry_sparsity(&hard_threshold(&w, t), 20);
        assert!((s - target).abs() <= 1.0 / 200.0 + 1e-12, "{target}: {s}");
    }
}

#[test]
fn full_rank_svd_is_lossless() {
    let w = Rng::new(3).gaussian_matrix(6, 4);
    let back = truncated_svd_compress(&w, 4).unwrap().reconstruct();
    assert!(back.sub(&w).unwrap().max_abs() < 1e-10);
    assert!(compression_ratio(6, 4, 4) > 1.0);
}
