//! Trust-region policy optimization with analytical safety projections.
//!
//! The update family implemented here:
//!
//! - [`trpo_update`]: plain trust-region reward step `theta + sqrt(2 delta /
//!   g^T F^-1 g) F^-1 g`.
//! - [`pcpo_update`]: the reward step followed by an analytical projection
//!   onto the linearized cost constraint `a^T (theta' - theta) + b <= 0`,
//!   in either the KL (`L = F`) or Euclidean (`L = I`) metric.
//! - [`space_update`]: the reward step followed by two projections applied
//!   together — one keeping the policy near a fixed baseline policy (KL
//!   divergence budget `h_D`), one enforcing the cost constraint.
//! - [`penalized_trpo_update`]: baseline that folds `-weight * cost` into
//!   the reward and takes a plain trust-region step.
//!
//! Advantages for the reward and cost streams come from generalized
//! advantage estimation over linear value heads refit on every batch. All
//! gradients, Fisher-vector products, and projections are computed
//! matrix-free over sparse features; given the same batch the updates are
//! bit-deterministic.

mod cg;
mod fisher;
mod gae;
mod update;

pub use cg::{conjugate_gradient, DenseOp, IdentityOp, LinearOperator};
pub use fisher::FisherOp;
pub use gae::{discounted_returns, gae_episode};
pub use update::{
    estimate_advantages, pcpo_update, penalized_trpo_update, project_core, regressed_windowed,
    space_update, surrogate_grads, three_step_core, trpo_step_core, trpo_update, update_h_d,
    Advantages, SurrogateGrads,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::ValueFitConfig;
use crate::vecmath::SparseVec;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("gradient contains a non-finite value")]
    NonFiniteGradient,
    #[error("non-positive curvature g^T F^-1 g = {q}; Fisher estimate unusable")]
    NonPositiveCurvature { q: f64 },
    #[error("constraint violated (slack {slack}) but its gradient is numerically zero")]
    InfeasibleConstraint { slack: f64 },
    #[error("rollout batch has no steps or no episodes")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("conjugate gradient produced a non-finite iterate")]
    NonFiniteIterate,
    #[error("episode spans do not contiguously tile the step list")]
    MisalignedEpisodes,
}

/// One environment transition as consumed by the optimizer.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Policy input features for the state the action was taken in.
    pub features: SparseVec,
    pub action: usize,
    pub reward: f64,
    /// Per-step cost signal (predicted or oracle, depending on the caller).
    pub cost: f64,
}

/// A contiguous span of steps forming one complete episode, together with
/// the episode's cost budget.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub start: usize,
    pub len: usize,
    /// Cost budget `h_C` in effect for this episode; the constraint slack is
    /// the mean over episodes of (episode cost sum - threshold).
    pub threshold: f64,
}

/// A batch of complete episodes collected under the current policy.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeRecord>,
}

impl RolloutBatch {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Appends one episode's steps, recording its span and threshold.
    pub fn push_episode(&mut self, steps: impl IntoIterator<Item = StepRecord>, threshold: f64) {
        let start = self.steps.len();
        self.steps.extend(steps);
        self.episodes.push(EpisodeRecord {
            start,
            len: self.steps.len() - start,
            threshold,
        });
    }

    /// Checks the batch is non-empty and its episodes contiguously tile the
    /// step list.
    pub fn validate(&self) -> Result<(), OptimError> {
        if self.steps.is_empty() || self.episodes.is_empty() {
            return Err(OptimError::EmptyBatch);
        }
        let mut next = 0;
        for ep in &self.episodes {
            if ep.start != next || ep.len == 0 {
                return Err(OptimError::MisalignedEpisodes);
            }
            next += ep.len;
        }
        if next != self.steps.len() {
            return Err(OptimError::MisalignedEpisodes);
        }
        Ok(())
    }

    pub fn episode_steps(&self, index: usize) -> &[StepRecord] {
        let ep = &self.episodes[index];
        &self.steps[ep.start..ep.start + ep.len]
    }

    /// Mean undiscounted episode reward sum.
    pub fn mean_episode_reward(&self) -> f64 {
        let total: f64 = self.steps.iter().map(|s| s.reward).sum();
        total / self.episodes.len().max(1) as f64
    }

    /// Mean undiscounted episode cost sum.
    pub fn mean_episode_cost(&self) -> f64 {
        let total: f64 = self.steps.iter().map(|s| s.cost).sum();
        total / self.episodes.len().max(1) as f64
    }

    /// Mean over episodes of (episode cost sum - episode threshold); positive
    /// means the constraint is violated on average.
    pub fn mean_cost_slack(&self) -> f64 {
        let mut total = 0.0;
        for (i, ep) in self.episodes.iter().enumerate() {
            let cost: f64 = self.episode_steps(i).iter().map(|s| s.cost).sum();
            total += cost - ep.threshold;
        }
        total / self.episodes.len().max(1) as f64
    }
}

/// Metric for the constraint projection: `L = F` (KL) or `L = I` (L2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMetric {
    Kl,
    L2,
}

/// Hyperparameters shared by all trust-region updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegionConfig {
    /// KL trust-region radius for the reward step.
    pub delta: f64,
    /// Reward discount.
    pub gamma: f64,
    /// Cost discount (1 = undiscounted, matching the episode-sum budget).
    pub gamma_c: f64,
    /// GAE lambda for the reward stream.
    pub lambda_r: f64,
    /// GAE lambda for the cost stream.
    pub lambda_c: f64,
    /// Conjugate-gradient iteration cap for `F^-1 v` solves.
    pub cg_iters: usize,
    /// Conjugate-gradient squared-residual stopping tolerance.
    pub cg_tol: f64,
    /// Damping added to the Fisher before inversion.
    pub damping: f64,
    /// Projection metric.
    pub metric: ProjectionMetric,
    /// Apply Fisher-vector products over every k-th sample (1 = all).
    pub fvp_subsample: usize,
    /// Halve the step while the sampled KL exceeds `2 * delta` (at most 10
    /// halvings).
    pub kl_safeguard: bool,
    /// Value-head ridge regression settings.
    pub value_fit: ValueFitConfig,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        TrustRegionConfig {
            delta: 1e-3,
            gamma: 0.99,
            gamma_c: 1.0,
            lambda_r: 0.95,
            lambda_c: 0.9,
            cg_iters: 20,
            cg_tol: 1e-10,
            damping: 1e-4,
            metric: ProjectionMetric::Kl,
            fvp_subsample: 1,
            kl_safeguard: true,
            value_fit: ValueFitConfig::default(),
        }
    }
}

/// A linearized inequality `grad . step + slack <= 0` at the current
/// parameters.
#[derive(Debug, Clone)]
pub struct ConstraintLin {
    pub grad: Vec<f64>,
    pub slack: f64,
}

/// Diagnostics from one policy update.
#[derive(Debug, Clone, Serialize)]
pub struct UpdateReport {
    /// Mean undiscounted episode reward in the batch the step was computed
    /// from (pre-update, on-policy).
    pub j_r: f64,
    /// Mean undiscounted episode cost in the batch.
    pub j_c: f64,
    /// Sampled mean KL(old || new) over batch states after the update.
    pub mean_kl: f64,
    /// Whether any projection correction was non-zero.
    pub projection_active: bool,
    /// Whether the update fell back to a pure cost-descent recovery step.
    pub recovery: bool,
    /// Euclidean norm of the applied parameter step.
    pub step_norm: f64,
    /// Number of safeguard halvings applied (0 if the raw step was accepted).
    pub safeguard_halvings: u32,
    /// Baseline-divergence budget in effect, for updates that use one.
    pub h_d: Option<f64>,
}
