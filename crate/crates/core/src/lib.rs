//! Stochastic gradient descent with a uniformly random learning rate.
//!
//! The crate covers the discrete optimizer and its learning-rate protocols,
//! dataset-backed objectives (quadratic ensembles, logistic regression and a
//! two-layer perceptron for MNIST), the covariance of the gradient noise, the
//! continuous Langevin approximation, and the effective temperature that
//! governs its stationary Gibbs law.
//!
//! All numerical code is generic over [`Scalar`] (`f32`, `f64`); closed-form
//! temperature arithmetic works over any [`Field`], including exact
//! rationals. The aliases below fix the common instantiations.

// `!(x > 0)` also rejects NaN, which `x <= 0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod linalg;
pub mod objectives;
pub mod optimizer;
pub mod protocols;
pub mod scalar;
pub mod sde;
pub mod thermo;

pub use error::{Error, IdxError, Result};
pub use scalar::{Field, Scalar};

pub use diffusion::{BatchScheme, DiffusionReport, MomentMode};
pub use linalg::Matrix;
pub use objectives::{LogisticRegression, Mlp, Objective, QuadraticEnsemble};
pub use optimizer::{EpochRecord, HyperParams, OptimizerState, TrainingRecord};
pub use protocols::{ProtocolKind, ProtocolSpec};
pub use sde::{OuKernel, PhaseSamples, Quadratic, SdeParams, SdeState};
pub use thermo::{GibbsDensity, TemperatureKey, ThermoParams};

/// Exact rational used for temperature bookkeeping.
pub type Rational = num_rational::Rational64;

pub type ProtocolSpecF64 = ProtocolSpec<f64>;
pub type ProtocolSpecF32 = ProtocolSpec<f32>;
pub type HyperParamsF64 = HyperParams<f64>;
pub type HyperParamsF32 = HyperParams<f32>;
pub type OptimizerStateF64 = OptimizerState<f64>;
pub type OptimizerStateF32 = OptimizerState<f32>;
pub type TrainingRecordF64 = TrainingRecord<f64>;
pub type MatrixF64 = Matrix<f64>;
pub type DiffusionReportF64 = DiffusionReport<f64>;
pub type QuadraticEnsembleF64 = QuadraticEnsemble<f64>;
pub type Model1F64 = Mlp<f64>;
pub type Model1F32 = Mlp<f32>;
pub type SdeParamsF64 = SdeParams<f64>;
pub type SdeStateF64 = SdeState<f64>;
pub type ThermoParamsF64 = ThermoParams<f64>;
pub type ThermoParamsExact = ThermoParams<Rational>;
pub type TemperatureKeyF64 = TemperatureKey<f64>;
pub type TemperatureKeyExact = TemperatureKey<Rational>;
