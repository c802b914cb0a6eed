//! Library surface of the pricing CLI: configuration parsing, the sensitivity
//! experiments with their no-switching baseline, and the validation suite.

pub mod config;
pub mod experiment;
pub mod validation;
