//! Cell-free massive MIMO simulation and max-min power control.
//!
//! The crate covers everything needed to turn a random deployment into a
//! labeled training sample:
//!
//! - [`scenario`]: geometry, large-scale fading, noise and coherence-block split
//! - [`channel`]: spatial covariance, small-scale draws and MMSE estimation
//! - [`se_engine`]: MMSE combining/precoding and Monte-Carlo hardening coefficients
//! - [`solvers`]: max-min SINR bisection, EPA/FPA baselines and a grid oracle
//! - [`pipeline`]: glue from a scenario to solved uplink/downlink powers
//! - [`dataset`]: feature construction, NDJSON shards, manifests and splits

pub mod channel;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod se_engine;
pub mod solvers;

pub use error::{Error, Result};
pub use num_complex::Complex64;
