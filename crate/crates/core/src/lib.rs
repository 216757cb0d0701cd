//! Multiple testing for high-dimensional sparse linear regression by
//! marginal screening, thresholded-Gram graph decomposition, and exhaustive
//! L0-penalized cleaning of the resulting small components, together with
//! BH/BY baselines, an exact small-scale posterior oracle, synthetic data
//! generators, error-rate metrics, and a replication harness.

pub mod baselines;
pub mod clean;
pub mod config;
pub mod covmodel;
pub mod datagen;
pub mod error;
pub mod gram_graph;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod oracle;
pub mod seeding;
pub mod tuning;

pub use clean::{DecisionVector, PipelineOptions, Provenance};
pub use config::{ExperimentConfig, Method};
pub use error::{Result, UptError};
pub use matrix::Matrix;
pub use tuning::TuningParams;
