//! Reproducible pipeline stages over the `sprnet-core` library: data
//! generation, training, attribution, transfer, evaluation, fragility and
//! loss.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod config;
pub mod stages;

use std::path::PathBuf;
use thiserror::Error;

pub use config::PipelineConfig;
pub use stages::{run_stage, Stage, StageReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} needs {missing}; run `{producer}` first")]
    Dependency { stage: String, missing: PathBuf, producer: String },
    #[error("work directory is locked by {holder:?} ({path}); remove the lock if no stage is running")]
    Locked { path: PathBuf, holder: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Format(#[from] sprnet_core::io::IoError),
    #[error(transparent)]
    Gm(#[from] sprnet_core::gm::GmError),
    #[error(transparent)]
    Oracle(#[from] sprnet_core::oracle::OracleError),
    #[error(transparent)]
    Model(#[from] sprnet_core::sprnet::SprError),
    #[error(transparent)]
    Explain(#[from] sprnet_core::explain::ExplainError),
    #[error(transparent)]
    Metrics(#[from] sprnet_core::metrics::MetricsError),
    #[error(transparent)]
    Risk(#[from] sprnet_core::risk::RiskError),
}
