//! In-context classification with a convex linear-attention predictor.
//!
//! Tasks are Gaussian mixtures with a random cluster mean; the predictor scores
//! a query `x` against a context mean `μ̂` as `μ̂ᵀ W x`. The crate covers task
//! sampling, gradient-descent pre-training of `W`, the minimum-norm
//! interpolating `W` via its dual, Monte-Carlo evaluation, empirical checks of
//! the supporting concentration and scaling statements, and a sweep driver.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); aliases for
//! the `f64` instantiation are exported at the root.

pub mod dual;
pub mod error;
pub mod eval;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod pretrain;
pub mod rng;
pub mod scalar;
pub mod task;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Preconditioner64 = model::Preconditioner<f64>;
pub type Preconditioner32 = model::Preconditioner<f32>;
pub type PretrainTask64 = task::PretrainTask<f64>;
pub type PretrainTask32 = task::PretrainTask<f32>;
pub type TestTask64 = task::TestTask<f64>;
pub type TestTask32 = task::TestTask<f32>;
pub type DualSolution64 = dual::DualSolution<f64>;
pub type TrainConfig64 = pretrain::TrainConfig<f64>;
