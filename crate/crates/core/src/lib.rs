//! Generalized variational inference for sparse and deep Gaussian process regression.
//!
//! The core routines are generic over [`scalar::Scalar`], which covers `f32`,
//! `f64` and the reverse-mode [`autodiff::Var`]. Gradients of the objective
//! are obtained by evaluating it on `Var` parameters.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod dgp;
pub mod divergence;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod loss;
pub mod scalar;
pub mod train;

pub use error::{GviError, Result};

/// Double-precision dense matrix.
pub type Matrix = linalg::Mat<f64>;
/// Double-precision deep GP.
pub type Model = dgp::DgpModel<f64>;
/// Double-precision layer.
pub type Layer = dgp::LayerState<f64>;
