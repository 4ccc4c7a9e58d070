//! Federated k-means clustering.
//!
//! The crate provides the numerical kernel ([`kmeans`]), the federated
//! protocol ([`federation`]), synthetic data and client partitions
//! ([`datagen`]), evaluation metrics ([`metrics`]), the central and one-shot
//! comparison methods ([`baselines`]) and an experiment driver ([`harness`])
//! used by the `fedkmeans` binary.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod datagen;
pub mod error;
pub mod federation;
pub mod harness;
pub mod kmeans;
pub mod metrics;
pub mod points;
pub mod seeding;

pub use error::{Error, Result};
pub use points::{ClusterSet, PointSet};
