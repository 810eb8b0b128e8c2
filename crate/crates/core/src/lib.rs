//! Estimation and inference for hybrid controlled trials with binary outcomes.

pub mod analysis;
pub mod conformal;
pub mod data;
pub mod error;
pub mod estimators;
pub mod frt;
pub mod nuisance;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
