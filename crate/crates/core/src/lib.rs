//! Adaptive filtering algorithms viewed as continual learners.
//!
//! The crate covers the linear family (LMS, APA with a memory buffer, APA†,
//! ICL, OGD and ORFit), exponentially weighted recursive least squares and
//! its class-incremental variant, Kalman filtering with Rauch-Tung-Striebel
//! smoothing, and layer-wise gradient projection for small feedforward
//! networks. Every learner consumes a [`stream::TaskStream`] and produces a
//! [`metrics::ModelTrajectory`] that can be scored with the error-matrix
//! metrics.
//!
//! The [`experiments`] module bundles property checks of these methods into
//! named, reproducible experiments driven by a JSON config.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deep;
pub mod error;
pub mod experiments;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod projection;
pub mod rls;
pub mod stream;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
