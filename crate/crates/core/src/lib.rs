//! Competing-risks survival analysis with the classical Aalen-Johansen
//! estimator and a deep kernel extension of it.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the 64-bit instantiation used by the data layer, the
//! model file and the command-line tool.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod data;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod predict;
pub mod scalar;
pub mod sft;
pub mod survival;
pub mod train;

pub use error::{DkajError, Result};
pub use scalar::Scalar;

pub type Cohort = survival::Cohort<f64>;
pub type SubjectRecord = survival::SubjectRecord<f64>;
pub type EventTimeGrid = survival::EventTimeGrid<f64>;
pub type StepCurve = survival::StepCurve<f64>;
pub type CifSet = survival::CifSet<f64>;
pub type EventTable = survival::EventTable<f64>;
pub type Mlp = embedding::Mlp<f64>;
pub type ClusterModel = cluster::ClusterModel<f64>;
pub type TrainedDkaj = predict::TrainedDkaj<f64>;
