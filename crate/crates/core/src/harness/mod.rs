//! Config-driven experiments and the `funnel` command line.
//!
//! Each experiment is a pure function of its config and seed list. The
//! (policy, seed) cells of the bandit experiments run on a rayon pool and
//! are collected in input order before anything is written, so outputs do
//! not depend on scheduling.

mod cli;
mod config;
mod experiments;
mod output;

pub use cli::cli_main;
pub use config::{
    BanditConfig, BoundsConfig, ExperimentConfig, ExperimentKind, HyperGrids, LearnerConfig, PolicyParams,
    ReplayConfig, SupervisedConfig, DEFAULT_RADIUS_COEF,
};
pub use experiments::{
    bandit_policy_context, load_replay_log, run_bandit_sim, run_bound_curves, run_replay_bandit, run_supervised_sim,
    supervised_trial, supervised_truth, BanditOutput, BoundRow, LiftRow, PredictionCurve, RegretCurve, ReplayOutput,
    ReplayParts, SummaryRow, SupervisedOutput, SupervisedRow, SupervisedRun, SupervisedTrial,
};
pub use output::{audit_bundle, mean_sd, sha256_hex, verify_manifest, Manifest, ManifestEntry, ResultBundle};

use std::path::PathBuf;

use thiserror::Error;

use crate::bandit::BanditError;
use crate::env::EnvError;
use crate::glm::GlmError;
use crate::mtl::MtlError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Mtl(#[from] MtlError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error("self-audit failed: {0}")]
    Audit(String),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for usage and config problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            _ => 2,
        }
    }
}
