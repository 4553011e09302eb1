//! Experiment runner for dyadlab: configuration, the acceptance experiments,
//! pinned constants and report emission.

pub mod commands;
pub mod config;
pub mod criteria;
pub mod error;
pub mod fixtures;
pub mod ops;
pub mod pins;
pub mod report;
pub mod schema;
pub mod suite;
