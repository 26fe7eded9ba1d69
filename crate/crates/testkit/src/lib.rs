//! Brute-force reference implementations used as independent test oracles.
//!
//! Everything in this crate is deliberately written the slow, obvious way,
//! without sharing any code with the main library, so that tests comparing
//! the two are meaningful. Keep it dependency-free.

pub mod findiff;
pub mod logistic;
pub mod spearman;
