//! Auditing toolkit for first-name bias in multiple-choice scorers.
//!
//! The pipeline: load and filter name tables ([`names`]), measure how name
//! demographics correlate with subword tokenization ([`tokenize`]), build
//! name-substituted evaluation sets ([`mcq`]), score them through a pluggable
//! scorer ([`scoring`]), and test whether success-rate vectors separate name
//! subgroups ([`sr`]). [`cda`] builds counterfactually augmented training sets.

pub mod cda;
pub mod error;
pub mod manifest;
pub mod mcq;
pub mod names;
pub mod scoring;
pub mod seed;
pub mod sr;
pub mod tokenize;

pub use error::{Error, Result};
