//! Landscape analysis for low-rank matrix sensing and real phase retrieval.
//!
//! The crate pairs each empirical risk (an average over random measurements)
//! with its population risk (the expectation of the empirical risk) and
//! provides the machinery to compare their critical points:
//!
//! - [`manifold`]: the quotient geometry of full-rank `N×k` factors modulo
//!   `O(k)` (horizontal projection, Procrustes distance, horizontal bases).
//! - [`risk`]: the four risk models and their measurement ensembles.
//! - [`spectral`]: dense Hessian spectra and finite-difference oracles.
//! - [`landscape`]: region classification, sampled bound verification,
//!   proximity estimators and RIP estimation.
//! - [`critical`]: closed-form and numerically located critical points, and
//!   the correspondence between empirical and population minima.
//! - [`experiments`]: configuration, seeded runs and CSV/JSON output used by
//!   the `landscape-lab` binary.

pub mod critical;
pub mod error;
pub mod experiments;
pub mod landscape;
pub mod manifold;
pub mod risk;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};

/// Version string embedded in every output file.
pub const ARTIFACT_VERSION: &str = concat!("landscape-lab ", env!("CARGO_PKG_VERSION"));
