//! Evaluation of face-image anonymizations under a strong attacker.
//!
//! The attacker knows the anonymization and its parameters (but not secret
//! keys), trains recognizers on anonymized or de-anonymized data, and picks
//! the most distinctive identities. Privacy is the attacker's normalized
//! failure rate; utility compares shared images with their originals.

pub mod anonymize;
pub mod cache;
pub mod dataset;
pub mod deanonymize;
pub mod error;
mod fourier;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod recognize;
pub mod report;
pub mod seed;
pub mod select;

pub use error::{Error, Result};
