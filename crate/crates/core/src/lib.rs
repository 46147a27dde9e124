//! Post-training pruning of dense network layers.
//!
//! A layer's weights are re-fit to reproduce its own captured outputs under
//! a sparsity (L1) or low-rank (nuclear norm) penalty. The non-convex
//! squared loss through a rectifier is split into a difference of convex
//! functions and minimized with the DCA ([`prune::feta_prune`]), each
//! convex step solved by accelerated proximal SVRG ([`solver`]).
//!
//! Alongside the pruner the crate ships magnitude and truncated-SVD
//! baselines, a small MLP runtime to capture layer activations and measure
//! accuracy, and [`bounds`], which evaluates margin-based
//! generalization-error bounds for pruned networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bounds;
pub mod data;
pub mod error;
pub mod linalg;
pub mod matrix;
pub mod network;
pub mod objective;
pub mod prune;
pub mod regularizer;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::{spectral_norm, svd, SvdResult};
pub use matrix::DenseMatrix;
pub use network::{Activation, Dataset, Layer, Network, TrainParams};
pub use objective::{LayerData, Rectifier, SmoothReluParams};
pub use prune::{feta_prune, PruneConfig, PruneResult};
pub use regularizer::{Regularizer, RegularizerKind};
pub use rng::Rng;
pub use solver::{acc_prox_svrg, SmoothOracle, SolverParams};
