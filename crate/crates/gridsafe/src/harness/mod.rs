//! Experiment orchestration: dataset manifests with train/eval splits,
//! two-stage safety training (interpreter, then constrained policy
//! optimization on its predictions), transfer and multi-constraint
//! evaluation protocols, baselines, and metric aggregation.
//!
//! Oracle isolation: policy-update calls run inside
//! [`crate::constraint::meter`] sections, so any ground-truth cost or mask
//! read from gradient code is counted; a clean run reports zero violations.

pub mod manifest;
pub mod metrics;
pub mod rollout;
pub mod training;

pub use manifest::{
    gen_dataset, DatasetManifest, ManifestEntry, ResolvedEntry, RewardTableId, Split,
};
pub use metrics::{
    compute_metrics, metrics_csv, parse_metrics_csv, write_training_log, EpisodeStats,
    MetricsReport, MetricsRow, TrainingLogRecord,
};
pub use rollout::{
    collect_batch, collect_episodes, CostModel, InputAblation, PolicyInputMode, RolloutConfig,
    RolloutContext, RolloutOutput,
};
pub use training::{
    eval_multi, eval_transfer, evaluate_agent, report_episodes, run_baseline, safety_training,
    train_stage1, AgentKind, BaselineKind, CostSourceConfig, MultiEvalReport, SafetyConfig,
    SafetyOutcome, Stage1Config, Stage2Config, TrainedAgent,
};

use thiserror::Error;

use crate::constraint::{ConstraintError, ParseError, TemplateError};
use crate::grid::GridError;
use crate::interpreter::InterpError;
use crate::policy::PolicyError;
use crate::safeopt::OptimError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Format(#[from] serde_json::Error),
    #[error("grid: {0}")]
    Grid(#[from] GridError),
    #[error("constraint: {0}")]
    Constraint(#[from] ConstraintError),
    #[error("constraint parse: {0}")]
    Parse(#[from] ParseError),
    #[error("template: {0}")]
    Template(#[from] TemplateError),
    #[error("interpreter: {0}")]
    Interp(#[from] InterpError),
    #[error("optimizer: {0}")]
    Optim(#[from] OptimError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("constraint pool too small to split")]
    PoolTooSmall,
    #[error("no episodes to aggregate")]
    EmptyEpisodes,
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("metrics table line {line}: {message}")]
    MetricsFormat { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}
