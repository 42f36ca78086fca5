//! Counterfactual treatment-outcome estimation over time: a tumor-growth
//! simulator, a dual-attention history encoder with self-supervised
//! contrastive pretraining, a multi-horizon outcome predictor, a suite of
//! checks for the accompanying transfer theory, and an experiment harness.

pub mod data;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod nn;
pub mod predictor;
pub mod sim;
pub mod ssl;
pub mod theory;

pub use error::{Error, Result};
