//! Compiles every Rust listing of the book as a doc-test.
//!
//! mdbook cannot link listings against workspace crates, so each chapter is
//! pulled in as the docs of an empty module and `cargo test` runs them.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/objective.md")]
pub mod objective {}
#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}
#[doc = include_str!("../../../book/src/pruning.md")]
pub mod pruning {}
#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}
#[doc = include_str!("../../../book/src/bounds.md")]
pub mod bounds {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
