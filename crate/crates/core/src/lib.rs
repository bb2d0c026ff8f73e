//! Global, rule-based explanations of black-box classifiers.
//!
//! The pipeline mines locally important conditions for each predicted class,
//! evolves conjunctive rules over them with a genetic algorithm scored by a
//! signed mutual-information fitness, and then selects a small rule set that
//! best imitates the model on held-out data. The [`robustness`] module measures
//! how well such an interpretation survives synthetic distribution shift.

pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod evolution;
pub mod mining;
pub mod oracle;
pub mod pipeline;
pub mod robustness;
pub mod rules;
pub mod seed;

pub use error::{Error, Result};
