//! Numerical laboratory for margin-based losses on long-tailed classification
//! problems.
//!
//! The crate bundles everything needed to study logit-margin and embedding
//! pull/push regularisers on small synthetic datasets:
//!
//! * [`scorer`]: plain feedforward ReLU scorers with analytic gradients,
//!   finite-difference checking, and closed-form Gaussian heads.
//! * [`data`]: seeded long-tailed generators (two moons, Gaussian mixtures)
//!   and exponential class-count profiles.
//! * [`losses`]: the margin cross-entropy family plus pull/push, centre,
//!   DRO-style, spread-out, and range regularisers.
//! * [`bounds`]: numerical verification of the variance, pull, push, AUC,
//!   and generalisation bounds the losses are built around.
//! * [`metrics`]: balanced error, one-vs-rest AUC, margin distributions, and
//!   embedding-geometry summaries collected into serialisable reports.
//! * [`trainer`]: a deterministic SGD-with-momentum loop with LR schedules
//!   and checkpointing.
//! * [`verify`]: the trial-based check suite that drives [`bounds`] over
//!   randomised instances and aggregates machine-readable records.
//!
//! Everything is seeded explicitly and collected in index order, so results
//! are byte-identical across runs and across the sequential and parallel
//! execution paths (see [`exec`]).

pub mod bounds;
pub mod data;
pub mod error;
pub mod exec;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod scorer;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
