//! Population-level estimates from per-item classifier probabilities.
//!
//! The pipeline: parse engagement rows carrying predicted probabilities
//! ([`ingest`]), collapse them into per-user binary and continuous
//! outcomes ([`aggregate`]), collapse users onto the 96-cell demographic
//! frame ([`frame`]), fit a non-Bayesian multilevel model and poststratify
//! with census counts ([`mrp`]), then compare against survey references
//! with rank correlations and bias tables ([`validate`]). The [`synth`]
//! module fabricates seeded worlds with known truth so all of it can be
//! verified end to end.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod frame;
pub mod ingest;
pub mod mrp;
pub mod synth;
pub mod validate;

pub use config::{Config, Labels};
pub use error::{Error, Result};
