//! Unbalanced optimal transport models: conjugate kernels, adversarial
//! losses, toy networks and training, a discrete solver for checking the
//! theory on small instances, and sample diagnostics.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod conjugate;
pub mod diagnostics;
pub mod scalar;
pub mod schedule;
pub mod models;
pub mod oracle;
pub mod trainer;

pub use scalar::Scalar;

/// Training state in single precision, the default for toy runs.
pub type TrainerState32 = trainer::TrainerState<f32>;
pub type TrainerState64 = trainer::TrainerState<f64>;
pub type NetworkParams32 = models::NetworkParams<f32>;
pub type NetworkParams64 = models::NetworkParams<f64>;
/// Discrete measures for the exact solvers, which run in double precision.
pub type DiscreteMeasure64 = oracle::DiscreteMeasure<f64>;
pub type TransportPlan64 = oracle::TransportPlan<f64>;
