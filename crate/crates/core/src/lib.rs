//! Label-free ensembling of verifier scores for best-of-N response selection.

pub mod baselines;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod error;
mod linalg;
pub mod metrics;
pub mod moments;
pub mod posterior;
pub mod synth;
pub mod tci;
