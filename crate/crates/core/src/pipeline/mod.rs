//! End-to-end orchestration and the curation service.

mod config;
mod run;
pub mod service;
pub mod store;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use config::{ControlConfig, CorpusConfig, EvaluateConfig, PipelineConfig, SplitConfig};
pub use run::{
    run_pipeline, run_with_config, sha256_file, Manifest, OutputDigest, RunOptions, RunSummary, Seeds, Stage, StageRecord, MANIFEST_FILE,
    SPLIT_NAMES,
};
pub use store::{export_accepted, ItemRecord, ItemStatus, ItemStore, ReviewRecord, StoreError};

use crate::metrics::BatchInput;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("stage {stage} failed: {source}")]
    Stage { stage: Stage, source: BoxError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// A dataset pair with its control inputs, as written by the tag stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedPair {
    pub id: String,
    pub input: BatchInput,
    /// Normalized sentence text.
    pub sentence: String,
}
