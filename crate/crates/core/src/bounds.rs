//! Margin-based generalization-error bounds for pruned networks.
//!
//! The base bound for a classifier whose training samples all have score
//! at least `o` is
//!
//! ```text
//! GE ≤ A·γ^(−k/2) + B,   γ = o / Π_i ‖W_i‖₂
//! A = sqrt(ln 2 · N_y · 2^(k+1) · C_M^k / m),   B = sqrt(2 ln(1/δ) / m)
//! ```
//!
//! Perturbing layer `i` by at most `√C_i` (in the representation it
//! produces) shrinks the usable margin by `√C_i · Π_{j>i} ‖W_j‖₂ / Π_j ‖W_j‖₂`.
//! Once the shrunken margin reaches zero the bound is vacuous.
//!
//! Both logarithms are natural logarithms.

use std::fmt;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::network::{Dataset, Network};

/// Constants of the data manifold and the sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldParams {
    /// Regularity constant `C_M`.
    pub regularity: f64,
    /// Intrinsic dimension `k`.
    pub intrinsic_dim: f64,
    pub classes: usize,
    pub samples: usize,
    /// Confidence parameter `δ`.
    pub delta: f64,
}

impl ManifoldParams {
    pub fn new(regularity: f64, intrinsic_dim: f64, classes: usize, samples: usize, delta: f64) -> Result<Self> {
        let p = Self {
            regularity,
            intrinsic_dim,
            classes,
            samples,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.regularity > 0.0 && self.regularity.is_finite()) {
            return Err(Error::invalid("C_M must be positive"));
        }
        if !(self.intrinsic_dim > 0.0 && self.intrinsic_dim.is_finite()) {
            return Err(Error::invalid("intrinsic dimension k must be positive"));
        }
        if self.classes == 0 || self.samples == 0 {
            return Err(Error::invalid("class and sample counts must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }

    /// `A = sqrt(ln 2 · N_y · 2^(k+1) · C_M^k / m)`.
    pub fn a_const(&self) -> f64 {
        let k = self.intrinsic_dim;
        (std::f64::consts::LN_2 * self.classes as f64 * 2f64.powf(k + 1.0) * self.regularity.powf(k)
            / self.samples as f64)
            .sqrt()
    }

    /// `B = sqrt(2 ln(1/δ) / m)`.
    pub fn b_const(&self) -> f64 {
        (2.0 * (1.0 / self.delta).ln() / self.samples as f64).sqrt()
    }
}

/// A bound value, or the regime where the margin penalty eats the margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundValue {
    Finite(f64),
    Vacuous,
}

impl BoundValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            BoundValue::Finite(v) => Some(v),
            BoundValue::Vacuous => None,
        }
    }

    pub fn is_vacuous(self) -> bool {
        matches!(self, BoundValue::Vacuous)
    }
}

impl fmt::Display for BoundValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundValue::Finite(v) => write!(f, "{v}"),
            BoundValue::Vacuous => f.write_str("VACUOUS"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeBoundReport {
    /// Smallest training score `o(s̃)`, when known.
    pub score_min: Option<f64>,
    /// Margin `γ`.
    pub gamma: f64,
    /// Margin reduction caused by the perturbation.
    pub penalty: f64,
    pub bound: BoundValue,
    pub a_const: f64,
    pub b_const: f64,
}

impl GeBoundReport {
    /// Column names of [`csv_fields`](Self::csv_fields).
    pub const CSV_HEADER: [&'static str; 6] = ["score_min", "gamma", "penalty", "a_const", "b_const", "bound"];

    pub fn csv_fields(&self) -> [String; 6] {
        [
            self.score_min.map_or_else(String::new, |s| s.to_string()),
            self.gamma.to_string(),
            self.penalty.to_string(),
            self.a_const.to_string(),
            self.b_const.to_string(),
            self.bound.to_string(),
        ]
    }
}

/// Per-layer perturbation sizes and the original network's spectral norms.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationProfile {
    /// Squared representation perturbation bound `C_i` for each layer.
    pub c_squared: Vec<f64>,
    pub spectral_norms: Vec<f64>,
}

impl PerturbationProfile {
    pub fn new(c_squared: Vec<f64>, spectral_norms: Vec<f64>) -> Result<Self> {
        if c_squared.len() != spectral_norms.len() {
            return Err(Error::dim(format!(
                "{} perturbations for {} layers",
                c_squared.len(),
                spectral_norms.len()
            )));
        }
        check_norms(&spectral_norms)?;
        if c_squared.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::invalid("perturbation bounds must be nonnegative"));
        }
        Ok(Self {
            c_squared,
            spectral_norms,
        })
    }

    /// Indices of layers with a nonzero perturbation.
    pub fn pruned_layers(&self) -> Vec<usize> {
        (0..self.c_squared.len()).filter(|&i| self.c_squared[i] > 0.0).collect()
    }

    /// `Σ_i √C_i · Π_{j>i} ‖W_j‖₂`, the perturbation as seen at the logits.
    pub fn propagated(&self) -> f64 {
        propagated_perturbation(&self.c_squared, &self.spectral_norms)
    }
}

fn check_norms(norms: &[f64]) -> Result<()> {
    if norms.is_empty() {
        return Err(Error::invalid("no spectral norms given"));
    }
    if norms.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
        return Err(Error::invalid("spectral norms must be positive"));
    }
    Ok(())
}

fn propagated_perturbation(c_squared: &[f64], norms: &[f64]) -> f64 {
    c_squared
        .iter()
        .enumerate()
        .map(|(i, c)| c.sqrt() * norms[i + 1..].iter().product::<f64>())
        .sum()
}

/// `√2 · (logit[c] − max_{j≠c} logit[j])`.
pub fn score(logits: &[f64], predicted: usize) -> Result<f64> {
    if logits.len() < 2 || predicted >= logits.len() {
        return Err(Error::invalid(format!(
            "class {predicted} for {} logits",
            logits.len()
        )));
    }
    let runner_up = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != predicted)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(std::f64::consts::SQRT_2 * (logits[predicted] - runner_up))
}

/// Scores of every sample under the network's own predictions.
pub fn scores(net: &Network, data: &Dataset) -> Result<Vec<f64>> {
    let logits = net.forward_batch(&data.inputs)?;
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            score(row, crate::network::argmax(row))
        })
        .collect()
}

pub fn min_score(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("score of an empty dataset"));
    }
    Ok(scores(net, data)?.into_iter().fold(f64::INFINITY, f64::min))
}

pub fn mean_score(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("score of an empty dataset"));
    }
    let s = scores(net, data)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// `γ = o / Π_i ‖W_i‖₂`.
pub fn margin_gamma(score_min: f64, spectral_norms: &[f64]) -> Result<f64> {
    check_norms(spectral_norms)?;
    Ok(score_min / spectral_norms.iter().product::<f64>())
}

/// Largest squared row distance between two output matrices: the empirical
/// `C` on the rows given.
pub fn estimate_c(original: &DenseMatrix, pruned: &DenseMatrix) -> Result<f64> {
    Ok(row_sq_distances(original, pruned)?.into_iter().fold(0.0, f64::max))
}

/// Smallest squared row distance; the "minimum layerwise error".
pub fn min_layer_error(original: &DenseMatrix, pruned: &DenseMatrix) -> Result<f64> {
    Ok(row_sq_distances(original, pruned)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

fn row_sq_distances(a: &DenseMatrix, b: &DenseMatrix) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "output matrices differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::invalid("no rows to compare"));
    }
    Ok((0..a.rows())
        .map(|r| a.row(r).iter().zip(b.row(r)).map(|(x, y)| (x - y).powi(2)).sum())
        .collect())
}

/// Above this many pairs [`estimate_epsilon`] strides over the test rows.
pub const EPSILON_MAX_PAIRS: usize = 100_000_000;

/// Empirical covering radius: the largest squared distance from a test row
/// to its nearest training row.
pub fn estimate_epsilon(train: &DenseMatrix, test: &DenseMatrix) -> Result<f64> {
    if train.cols() != test.cols() {
        return Err(Error::dim("train and test inputs differ in width"));
    }
    if train.rows() == 0 || test.rows() == 0 {
        return Err(Error::invalid("covering radius needs nonempty sets"));
    }
    let pairs = train.rows().saturating_mul(test.rows());
    let stride = pairs.div_ceil(EPSILON_MAX_PAIRS).max(1);
    if stride > 1 {
        log::warn!(
            "covering radius over {pairs} pairs: using every {stride}th test row, the result underestimates"
        );
    }
    let mut worst = 0.0_f64;
    for t in (0..test.rows()).step_by(stride) {
        let row = test.row(t);
        let nearest = (0..train.rows())
            .map(|s| train.row(s).iter().zip(row).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
    }
    Ok(worst)
}

/// `C₂ = C₁ + (B₁ + B₂)·ε`, with `B₁`, `B₂` the spectral norms of the
/// original and pruned layer.
pub fn perturbation_on_unseen(c1: f64, b1: f64, b2: f64, epsilon: f64) -> f64 {
    c1 + (b1 + b2) * epsilon
}

/// Bound for the unperturbed classifier.
pub fn ge_bound_base(gamma: f64, mp: &ManifoldParams) -> Result<GeBoundReport> {
    evaluate(gamma, 0.0, mp)
}

/// Bound after perturbing only layer `pruned`.
pub fn ge_bound_single_layer(
    gamma: f64,
    c2: f64,
    spectral_norms: &[f64],
    pruned: usize,
    mp: &ManifoldParams,
) -> Result<GeBoundReport> {
    check_norms(spectral_norms)?;
    if pruned >= spectral_norms.len() {
        return Err(Error::invalid(format!(
            "pruned layer {pruned} out of range for {} layers",
            spectral_norms.len()
        )));
    }
    let mut c = vec![0.0; spectral_norms.len()];
    c[pruned] = c2;
    ge_bound_multi_layer(gamma, &c, spectral_norms, mp)
}

/// Bound after perturbing every layer `i` by `√C_i`.
pub fn ge_bound_multi_layer(
    gamma: f64,
    c_squared: &[f64],
    spectral_norms: &[f64],
    mp: &ManifoldParams,
) -> Result<GeBoundReport> {
    let profile = PerturbationProfile::new(c_squared.to_vec(), spectral_norms.to_vec())?;
    let penalty = profile.propagated() / spectral_norms.iter().product::<f64>();
    evaluate(gamma, penalty, mp)
}

fn evaluate(gamma: f64, penalty: f64, mp: &ManifoldParams) -> Result<GeBoundReport> {
    mp.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("margin must be positive, got {gamma}")));
    }
    let (a, b) = (mp.a_const(), mp.b_const());
    let effective = gamma - penalty;
    let bound = if effective > 0.0 {
        BoundValue::Finite(a * effective.powf(-mp.intrinsic_dim / 2.0) + b)
    } else {
        BoundValue::Vacuous
    };
    Ok(GeBoundReport {
        score_min: None,
        gamma,
        penalty,
        bound,
        a_const: a,
        b_const: b,
    })
}

/// Predicted generalization error of a perturbed network from the
/// unperturbed one, with the additive constant dropped:
/// `GE_b · (o / (o − Σ_i √C_i Π_{j>i} ‖W_j‖₂))^(k/2)`.
pub fn ge_ratio_prediction(
    base_ge: f64,
    score: f64,
    c_squared: &[f64],
    spectral_norms: &[f64],
    intrinsic_dim: f64,
) -> Result<BoundValue> {
    let profile = PerturbationProfile::new(c_squared.to_vec(), spectral_norms.to_vec())?;
    if !(base_ge >= 0.0 && base_ge.is_finite()) {
        return Err(Error::invalid("base generalization error must be nonnegative"));
    }
    if !(intrinsic_dim > 0.0) {
        return Err(Error::invalid("intrinsic dimension k must be positive"));
    }
    let denom = score - profile.propagated();
    if !(denom > 0.0) || !(score > 0.0) {
        return Ok(BoundValue::Vacuous);
    }
    Ok(BoundValue::Finite(base_ge * (score / denom).powf(intrinsic_dim / 2.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp() -> ManifoldParams {
        ManifoldParams::new(1.0, 2.0, 2, 1000, 0.01).unwrap()
    }

    #[test]
    fn scores() {
        assert!((score(&[2.0, 1.0, 0.0], 0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(score(&[1.0, 1.0, 1.0], 2).unwrap(), 0.0);
        assert!((score(&[0.0, 5.0, 1.0], 1).unwrap() - 4.0 * 2f64.sqrt()).abs() < 1e-14);
        assert!(score(&[1.0], 0).is_err());
    }

    #[test]
    fn margins() {
        assert!((margin_gamma(2f64.sqrt(), &[2.0, 2.0]).unwrap() - 2f64.sqrt() / 4.0).abs() < 1e-15);
        assert_eq!(margin_gamma(0.7, &[1.0, 1.0, 1.0]).unwrap(), 0.7);
        assert!(margin_gamma(1.0, &[]).is_err());
    }

    #[test]
    fn perturbation_estimates() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(estimate_c(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.set(1, 0, 1.0);
        assert_eq!(estimate_c(&a, &b).unwrap(), 1.0);
        assert_eq!(min_layer_error(&a, &b).unwrap(), 0.0);

        let train = DenseMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let test = DenseMatrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert_eq!(estimate_epsilon(&train, &test).unwrap(), 4.0);
        assert_eq!(estimate_epsilon(&test, &test).unwrap(), 0.0);
    }

    #[test]
    fn unseen_perturbation() {
        assert_eq!(perturbation_on_unseen(0.3, 2.0, 5.0, 0.0), 0.3);
        assert!((perturbation_on_unseen(0.1, 4.0, 4.0, 0.01) - 0.18).abs() < 1e-15);
        assert_eq!(perturbation_on_unseen(0.0, 0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn base_bound_numbers() {
        let r = ge_bound_base(1.0, &mp()).unwrap();
        assert!((r.a_const - (2f64.ln() * 16.0 / 1000.0).sqrt()).abs() < 1e-15);
        assert!((r.a_const - 0.105311).abs() < 1e-6);
        assert!((r.b_const - 0.095971).abs() < 1e-6);
        assert!((r.bound.finite().unwrap() - 0.201282).abs() < 1e-5);
        assert!(ge_bound_base(0.0, &mp()).is_err());
        assert!(ge_bound_base(-1.0, &mp()).is_err());
        let far = ge_bound_base(1e12, &mp()).unwrap();
        assert!((far.bound.finite().unwrap() - far.b_const).abs() < 1e-12);
    }

    #[test]
    fn single_layer_reductions() {
        let norms = [2.0; 4];
        let base = ge_bound_base(0.5, &mp()).unwrap();
        let zero = ge_bound_single_layer(0.5, 0.0, &norms, 1, &mp()).unwrap();
        assert_eq!(zero.bound, base.bound);

        let first = ge_bound_single_layer(0.5, 0.01, &norms, 0, &mp()).unwrap();
        let last = ge_bound_single_layer(0.5, 0.01, &norms, 3, &mp()).unwrap();
        assert!((first.penalty - 0.1 / 2.0).abs() < 1e-15);
        assert!((last.penalty - 0.1 / 16.0).abs() < 1e-15);
        assert!(first.bound.finite().unwrap() > last.bound.finite().unwrap());

        let vac = ge_bound_single_layer(0.5, 1.0, &norms, 0, &mp()).unwrap();
        assert!(vac.bound.is_vacuous());
    }

    #[test]
    fn multi_layer_additivity() {
        let norms = [1.5, 2.0, 3.0];
        let c = [0.01, 0.0, 0.04];
        let multi = ge_bound_multi_layer(1.0, &c, &norms, &mp()).unwrap();
        let s0 = ge_bound_single_layer(1.0, 0.01, &norms, 0, &mp()).unwrap();
        let s2 = ge_bound_single_layer(1.0, 0.04, &norms, 2, &mp()).unwrap();
        assert!((multi.penalty - (s0.penalty + s2.penalty)).abs() < 1e-12);
        let m = multi.bound.finite().unwrap();
        assert!(m >= s0.bound.finite().unwrap() && m >= s2.bound.finite().unwrap());
    }

    #[test]
    fn ratio_prediction() {
        let norms = [2.0, 1.0];
        assert_eq!(
            ge_ratio_prediction(0.01, 3.0, &[0.0, 0.0], &norms, 20.0).unwrap(),
            BoundValue::Finite(0.01)
        );
        // o = 2, propagated = √1 · 1 = 1 → ratio 2, 2^10
        let p = ge_ratio_prediction(0.01, 2.0, &[1.0, 0.0], &norms, 20.0).unwrap();
        assert!((p.finite().unwrap() - 10.24).abs() < 1e-12);
        assert!(ge_ratio_prediction(0.01, 1.0, &[1.0, 0.0], &norms, 20.0).unwrap().is_vacuous());
    }

    #[test]
    fn manifold_validation() {
        assert!(ManifoldParams::new(1.0, 0.0, 2, 10, 0.1).is_err());
        assert!(ManifoldParams::new(1.0, 2.0, 2, 10, 1.0).is_err());
        assert!(ManifoldParams::new(0.0, 2.0, 2, 10, 0.1).is_err());
    }
}
