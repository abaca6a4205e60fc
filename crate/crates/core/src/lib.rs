//! Conditional quantile estimation for a scalar response and a curve-valued
//! covariate: the coefficient function is a penalized B-spline fitted under
//! the check loss. Includes a Monte Carlo harness and a CLI.
//!
//! Numerical code is generic over [`scalar::Real`]; the aliases below fix
//! the common choices.

pub mod bspline;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod funcdata;
pub mod linalg;
pub mod quadrature;
pub mod scalar;
pub mod simharness;
pub mod solver;

pub use error::{Error, Result};

pub type SplineBasisF64 = bspline::SplineBasis<f64>;
pub type SplineBasisF32 = bspline::SplineBasis<f32>;
pub type FunctionalDatasetF64 = funcdata::FunctionalDataset<f64>;
pub type FunctionalDatasetF32 = funcdata::FunctionalDataset<f32>;
pub type CurveSampleF64 = funcdata::CurveSample<f64>;
pub type PenalizedSystemF64 = funcdata::PenalizedSystem<f64>;
pub type FitConfigF64 = estimator::FitConfig<f64>;
pub type FitConfigF32 = estimator::FitConfig<f32>;
pub type QuantileModelF64 = estimator::QuantileModel<f64>;
pub type QuantileModelF32 = estimator::QuantileModel<f32>;
pub type MatrixF64 = linalg::Matrix<f64>;
