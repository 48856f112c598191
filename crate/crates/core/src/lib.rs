//! Design and randomization-based analysis of stratified 2^K factorial
//! experiments.
//!
//! The crate is organised bottom-up:
//!
//! * [`design`]: contrast structure of a 2^K design and stratified random assignment.
//! * [`dataset`]: CSV ingestion, validation and per stratum/arm summaries.
//! * [`numerics`]: Cholesky solves, chi-square / normal quantiles, multivariate normal draws.
//! * [`estimators`]: the stratified difference-in-means estimator and three
//!   covariate-adjusted variants.
//! * [`inference`]: Neyman-type conservative variances, Wald intervals and regions.
//! * [`simulation`]: finite-population scenario generation, exact population moments,
//!   exhaustive enumeration over assignments and a Monte Carlo harness.
//!
//! Arms are indexed from zero internally; every external surface (CSV, JSON)
//! numbers them from one.

pub mod dataset;
pub mod design;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod numerics;
pub mod seeding;
pub mod simulation;

pub use dataset::{ObservedDataset, Schema, StratumSummaries};
pub use design::{AssignmentPlan, FactorialDesign, StratumPlan};
pub use error::{Error, Result};
pub use estimators::{EffectEstimate, Method};
pub use inference::{ConfidenceRegion, Interval, VarianceEstimate};
