//! Personalized counterfactual recourse for a decision-tree loan classifier.
//!
//! The pipeline: [`synth`] builds and labels a synthetic credit dataset,
//! [`tree`] trains the CART classifier, [`recourse`] projects rejected
//! profiles onto accepting leaves, [`metrics`] scores recourses,
//! [`preference`] learns per-user feature costs from pairwise choices,
//! [`awp`] predicts which recourse a user picks, and [`study`] builds
//! elicitation scenarios, runs threshold probing and evaluates predictions.

pub mod artifact;
pub mod awp;
pub mod error;
pub mod metrics;
pub mod preference;
pub mod recourse;
pub mod schema;
pub mod study;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
