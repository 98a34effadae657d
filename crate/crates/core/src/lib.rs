//! Intersectional fairness auditing for binary classifiers.

pub mod audit;
pub mod config;
pub mod counterfactual;
pub mod data;
pub mod error;
pub mod estimators;
pub mod ingest;
pub mod observational;
pub mod report;
pub mod resampling;
pub mod synth;
