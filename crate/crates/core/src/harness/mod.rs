//! Experiment configuration, corpora, end-to-end inequality checks and
//! report emission behind the `lp-lab` binary.

pub mod corpus;
pub mod config;
pub mod preflight;
pub mod report;
pub mod experiments;
