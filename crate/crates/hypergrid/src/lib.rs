//! Hyperparameter study harness: grid construction, exhaustive and random
//! search over native or external learners, and post-hoc analysis of the
//! resulting trial records.

pub mod analysis;
pub mod config;
pub mod data;
pub mod evaluators;
pub mod learners;
pub mod metrics;
pub mod robustness;
pub mod space;
pub mod strategy;
pub mod study;
