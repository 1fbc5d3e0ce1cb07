//! Scale-invariant node classification on directed graphs.
//!
//! The crate is layered bottom-up:
//!
//! * [`sparse`]: CSR kernels (transpose, SpGEMM, support algebra, normalization).
//! * [`graphdata`]: datasets, splits, graph statistics, synthetic generators.
//! * [`scales`]: scaled adjacency matrices built from words over `{A, Aᵀ}`,
//!   k-th order proximity matrices and edge-weight strategies.
//! * [`tensor`]: a small reverse-mode autodiff tape over dense matrices, the
//!   neural building blocks and Adam.
//! * [`model`]: ScaleNet, the constant-weight inception models and baselines.
//! * [`harness`]: training, cross-validation, per-scale reports, grid search
//!   and the Wilcoxon signed-rank test.
//!
//! Data-parallel loops go through [`par`], which falls back to sequential
//! execution when the `parallel` feature is off.

pub mod dense;
pub mod graphdata;
pub mod harness;
pub mod model;
pub mod par;
pub mod scales;
pub mod sparse;
pub mod tensor;

pub use dense::Matrix;
pub use graphdata::{DirectedGraph, Split, SplitSet};
pub use model::{Model, ModelConfig};
pub use sparse::{SelfLoopMode, SparseMatrix};
