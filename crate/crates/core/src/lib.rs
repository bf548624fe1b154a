//! Differentially private training and prediction for multi-class linear
//! classifiers.
//!
//! Five mechanisms are provided: three that privatize the trained model
//! (output perturbation, objective perturbation, DP-SGD) and two that
//! privatize each answered query under an inference budget (noisy logits,
//! and an exponential-mechanism vote over a disjoint-partition ensemble).
//! The [`bench`] module runs accuracy sweeps over privacy parameters.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`, which is what calibration and the sweep
//! harness use.

pub mod accounting;
pub mod bench;
pub mod data;
pub mod dataset;
pub mod error;
pub mod loss;
pub mod matrix;
pub mod mechanisms;
pub mod noise;
pub mod params_io;
pub mod scalar;
pub mod trainer;
pub mod verify;

pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use loss::{LabelOneHot, LogitVector, LossConstants, ParamMatrix, ProbVector};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type ParamMatrix64 = ParamMatrix<f64>;
pub type ParamMatrix32 = ParamMatrix<f32>;
pub type LogitVector64 = LogitVector<f64>;
pub type LogitVector32 = LogitVector<f32>;
pub type Dataset64 = LabeledDataset<f64>;
pub type Dataset32 = LabeledDataset<f32>;
pub type Predictor64 = mechanisms::PrivatePredictor<f64>;
pub type Predictor32 = mechanisms::PrivatePredictor<f32>;
