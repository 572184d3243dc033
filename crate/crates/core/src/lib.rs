//! Generalization intervals for estimates transported between sites under
//! random distribution shift.
//!
//! The pipeline ingests multi-site data, transports a source-site estimate to
//! a target site via entropy balancing or a doubly robust estimator, measures
//! covariate and conditional shift, and builds intervals whose widths are
//! calibrated on the ratio of the two shift measures. [`sim`] provides the
//! random-perturbation simulator used to validate the approach.

pub mod config;
pub mod data;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod influence;
pub mod intervals;
pub mod measures;
pub mod nuisance;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod worstcase;

pub use error::{Error, Result};
