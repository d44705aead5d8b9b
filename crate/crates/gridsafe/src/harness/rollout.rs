//! Episode rollouts: samples manifest entries, runs the policy in the
//! environment, and assembles optimizer batches whose cost stream comes from
//! a pluggable cost model (interpreter predictions, ground truth, or zeros),
//! alongside oracle-scored episode statistics for reporting.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{budget_mask, ground_truth_mask, step_cost, Mask};
use crate::grid::{
    stream, Action, EntityKind, EpisodeState, GenConfig, GridMap, Observation, RewardTable,
};
use crate::interpreter::{visited_indicator, Interpreter, TokenVocab};
use crate::policy::{encode_fusion_input, encode_policy_input, Policy};
use crate::rng::derive_rng;
use crate::safeopt::{RolloutBatch, StepRecord};
use crate::vecmath::SparseVec;

use super::manifest::{ResolvedEntry, Split};
use super::metrics::EpisodeStats;
use super::HarnessError;

/// Which input channels to blank out (ablations). A dropped channel is
/// encoded as its constant zero-information value, keeping the feature
/// layout and parameter count unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputAblation {
    pub drop_mask: bool,
    pub drop_budget: bool,
    pub drop_threshold: bool,
}

/// How observations become policy features.
#[derive(Debug, Clone, Copy)]
pub enum PolicyInputMode<'a> {
    /// Mask-conditioned input: observation, cost mask, budget mask,
    /// threshold embedding (optionally ablated).
    Masked(InputAblation),
    /// Observation concatenated with a normalized text bag-of-words
    /// (constraint-fusion baselines).
    Fusion(&'a TokenVocab),
}

/// Where the optimizer's per-step costs and per-episode thresholds come
/// from. Ground truth for *reporting* is always the environment oracle,
/// independent of this choice.
#[derive(Debug, Clone, Copy)]
pub enum CostModel<'a> {
    /// Predicted mask and threshold from a trained interpreter; a step is
    /// charged when it moves onto a cell the pre-move mask marks.
    Interpreter(&'a Interpreter),
    /// Ground-truth mask and threshold, charged the same way (the
    /// oracle-interpreter ablation).
    OracleMask,
    /// Exact transition costs and true thresholds.
    OracleCost,
    /// All-zero costs and thresholds (cost-blind training).
    Zero,
}

/// Rollout sizing. `batch_steps` is the minimum number of environment steps
/// per optimizer batch (episodes are never truncated to hit it);
/// `rollout_len` is the episode step limit baked into the reward table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub batch_steps: usize,
    pub rollout_len: u32,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            batch_steps: 2000,
            rollout_len: 60,
        }
    }
}

/// Everything a rollout needs besides sizing and randomness.
#[derive(Clone, Copy)]
pub struct RolloutContext<'a> {
    pub gen: &'a GenConfig,
    pub tasks: &'a [ResolvedEntry],
    pub rewards: &'a RewardTable,
    /// Controls the success definition (transfer rewards flip the key).
    pub split: Split,
    pub policy: &'a Policy,
    pub input: PolicyInputMode<'a>,
    pub cost: CostModel<'a>,
}

/// An optimizer batch plus oracle-scored per-episode statistics.
#[derive(Debug, Clone)]
pub struct RolloutOutput {
    pub batch: RolloutBatch,
    pub stats: Vec<EpisodeStats>,
}

/// Runs complete episodes until at least `batch_steps` steps are collected.
pub fn collect_batch(
    ctx: &RolloutContext,
    batch_steps: usize,
    seed: u64,
    iter: u64,
) -> Result<RolloutOutput, HarnessError> {
    if ctx.tasks.is_empty() {
        return Err(HarnessError::EmptyManifest);
    }
    let mut rng = derive_rng(seed, &[stream::ROLLOUT, iter]);
    let mut batch = RolloutBatch::default();
    let mut stats = Vec::new();
    while batch.num_steps() < batch_steps.max(1) {
        let (steps, threshold, ep) = run_episode(ctx, &mut rng)?;
        batch.push_episode(steps, threshold);
        stats.push(ep);
    }
    Ok(RolloutOutput { batch, stats })
}

/// Runs exactly `n_episodes` episodes (evaluation driver).
pub fn collect_episodes(
    ctx: &RolloutContext,
    n_episodes: usize,
    seed: u64,
    iter: u64,
) -> Result<RolloutOutput, HarnessError> {
    if ctx.tasks.is_empty() {
        return Err(HarnessError::EmptyManifest);
    }
    let mut rng = derive_rng(seed, &[stream::EVAL, iter]);
    let mut batch = RolloutBatch::default();
    let mut stats = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let (steps, threshold, ep) = run_episode(ctx, &mut rng)?;
        batch.push_episode(steps, threshold);
        stats.push(ep);
    }
    Ok(RolloutOutput { batch, stats })
}

/// Normalized bag-of-words features for fusion policies.
pub fn text_bow(vocab: &TokenVocab, text: &str) -> SparseVec {
    let ids = vocab.encode(text);
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for id in &ids {
        *counts.entry(*id).or_insert(0.0) += 1.0;
    }
    let inv = if ids.is_empty() {
        0.0
    } else {
        1.0 / ids.len() as f64
    };
    SparseVec::from_pairs(
        vocab.len(),
        counts.into_iter().map(|(i, c)| (i, c * inv)),
    )
}

fn run_episode(
    ctx: &RolloutContext,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<StepRecord>, f64, EpisodeStats), HarnessError> {
    let entry = &ctx.tasks[rng.gen_range(0..ctx.tasks.len())];
    let map = GridMap::generate(entry.map_seed, ctx.gen)?;
    let mut state = EpisodeState::new(map);
    let h_true = entry.spec.threshold() as f64;
    // The threshold is a property of the text alone; predict it once.
    let train_threshold = match ctx.cost {
        CostModel::Interpreter(interp) => interp.predict_threshold(&entry.text),
        CostModel::OracleMask | CostModel::OracleCost => h_true,
        CostModel::Zero => 0.0,
    };
    let bow = match ctx.input {
        PolicyInputMode::Fusion(vocab) => Some(text_bow(vocab, &entry.text)),
        PolicyInputMode::Masked(_) => None,
    };

    let mut steps = Vec::new();
    let mut reward_sum = 0.0;
    let mut oracle_sum = 0.0;
    let mut collected: BTreeSet<EntityKind> = BTreeSet::new();
    while !state.is_done() {
        let obs = state.observe();
        let mask = match ctx.cost {
            CostModel::Interpreter(interp) => {
                let vis = visited_indicator(state.visited_kinds());
                interp.predict_mask(&entry.text, &obs, &vis)
            }
            CostModel::OracleMask | CostModel::OracleCost => {
                ground_truth_mask(&obs, &entry.spec, state.visited_kinds())
            }
            CostModel::Zero => Mask::zero(),
        };
        let features = match ctx.input {
            PolicyInputMode::Masked(ab) => {
                let input_mask = if ab.drop_mask { Mask::zero() } else { mask.clone() };
                let budget = if ab.drop_budget {
                    budget_mask(&Mask::zero(), 0.0, 0.0)
                } else {
                    budget_mask(&mask, state.cumulative_cost(), train_threshold)
                };
                let threshold_in = if ab.drop_threshold { 0.0 } else { train_threshold };
                encode_policy_input(&obs, &input_mask, &budget, threshold_in)
            }
            PolicyInputMode::Fusion(_) => encode_fusion_input(&obs, bow.as_ref().unwrap()),
        };
        let dist = ctx.policy.forward(&features);
        let action_idx = dist.sample(rng);
        let action = Action::from_index(action_idx).expect("sampled action index in range");

        let prev = state.clone();
        let outcome = state.step(action, ctx.rewards)?;
        let oracle_c = step_cost(&entry.spec, &prev, action, &state);
        let moved = state.agent_pos() != prev.agent_pos();
        let train_c = match ctx.cost {
            CostModel::Interpreter(_) | CostModel::OracleMask => {
                let (r, c) = Observation::neighbor_of_center(action);
                if moved && mask.get(r, c) {
                    1.0
                } else {
                    0.0
                }
            }
            CostModel::OracleCost => oracle_c,
            CostModel::Zero => 0.0,
        };
        state.add_cost(train_c);

        reward_sum += outcome.reward;
        oracle_sum += oracle_c;
        if let Some(kind) = outcome.events.collected {
            collected.insert(kind);
        }
        steps.push(StepRecord {
            features,
            action: action_idx,
            reward: outcome.reward,
            cost: train_c,
        });
    }

    let success = match ctx.split {
        Split::Train => {
            collected.contains(&EntityKind::Ball)
                && collected.contains(&EntityKind::Box)
                && collected.contains(&EntityKind::Key)
        }
        Split::Eval => {
            collected.contains(&EntityKind::Ball)
                && collected.contains(&EntityKind::Box)
                && !collected.contains(&EntityKind::Key)
        }
    };
    let stats = EpisodeStats {
        reward: reward_sum,
        cost: oracle_sum,
        threshold: h_true,
        success,
        steps: steps.len(),
    };
    Ok((steps, train_threshold, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{meter, ConstraintSpec, Variant};
    use crate::harness::manifest::gen_dataset;
    use crate::policy::{PolicyConfig, OBS_FEATURES, POLICY_INPUT_DIM};

    fn budgetary_pool() -> Vec<ConstraintSpec> {
        ConstraintSpec::default_pool()
            .into_iter()
            .filter(|s| s.variant() == Variant::Budgetary)
            .collect()
    }

    fn tasks_fixture() -> Vec<ResolvedEntry> {
        let (train, _) = gen_dataset(21, 12, 3, &budgetary_pool()).unwrap();
        train.resolve().unwrap()
    }

    #[test]
    fn batches_contain_only_complete_episodes() {
        let gen = GenConfig::square(7, 2);
        let tasks = tasks_fixture();
        let rewards = RewardTable::train(20);
        let policy = Policy::new(PolicyConfig::linear(POLICY_INPUT_DIM));
        let ctx = RolloutContext {
            gen: &gen,
            tasks: &tasks,
            rewards: &rewards,
            split: Split::Train,
            policy: &policy,
            input: PolicyInputMode::Masked(InputAblation::default()),
            cost: CostModel::Zero,
        };
        let out = collect_batch(&ctx, 100, 7, 0).unwrap();
        assert!(out.batch.num_steps() >= 100);
        out.batch.validate().unwrap();
        assert_eq!(out.batch.num_episodes(), out.stats.len());
        // Every episode ran to its own termination, not the batch boundary.
        let max_len = out.stats.iter().map(|s| s.steps).max().unwrap();
        assert!(max_len <= 20);
    }

    #[test]
    fn rollouts_are_deterministic_in_the_seed() {
        let gen = GenConfig::square(7, 2);
        let tasks = tasks_fixture();
        let rewards = RewardTable::train(15);
        let policy = Policy::new(PolicyConfig::linear(POLICY_INPUT_DIM));
        let ctx = RolloutContext {
            gen: &gen,
            tasks: &tasks,
            rewards: &rewards,
            split: Split::Train,
            policy: &policy,
            input: PolicyInputMode::Masked(InputAblation::default()),
            cost: CostModel::OracleMask,
        };
        let a = collect_batch(&ctx, 80, 3, 5).unwrap();
        let b = collect_batch(&ctx, 80, 3, 5).unwrap();
        assert_eq!(a.stats, b.stats);
        let actions_a: Vec<usize> = a.batch.steps.iter().map(|s| s.action).collect();
        let actions_b: Vec<usize> = b.batch.steps.iter().map(|s| s.action).collect();
        assert_eq!(actions_a, actions_b);
        let c = collect_batch(&ctx, 80, 4, 5).unwrap();
        assert_ne!(
            a.stats, c.stats,
            "different seeds should explore differently"
        );
    }

    #[test]
    fn collect_episodes_returns_exactly_n() {
        let gen = GenConfig::square(7, 2);
        let tasks = tasks_fixture();
        let rewards = RewardTable::train(10);
        let policy = Policy::new(PolicyConfig::linear(POLICY_INPUT_DIM));
        let ctx = RolloutContext {
            gen: &gen,
            tasks: &tasks,
            rewards: &rewards,
            split: Split::Train,
            policy: &policy,
            input: PolicyInputMode::Masked(InputAblation::default()),
            cost: CostModel::Zero,
        };
        let out = collect_episodes(&ctx, 9, 1, 0).unwrap();
        assert_eq!(out.stats.len(), 9);
        assert_eq!(out.batch.num_episodes(), 9);
    }

    #[test]
    fn oracle_mask_costs_match_true_costs_for_budgetary_constraints() {
        // Entering a masked cell is exactly the budgetary entry event, so the
        // mask-derived training cost must reproduce the oracle cost stream.
        let gen = GenConfig::square(7, 3);
        let tasks = tasks_fixture();
        let rewards = RewardTable::train(25);
        let policy = Policy::new(PolicyConfig::linear(POLICY_INPUT_DIM));
        let ctx = RolloutContext {
            gen: &gen,
            tasks: &tasks,
            rewards: &rewards,
            split: Split::Train,
            policy: &policy,
            input: PolicyInputMode::Masked(InputAblation::default()),
            cost: CostModel::OracleMask,
        };
        let out = collect_batch(&ctx, 300, 11, 2).unwrap();
        let train_total: f64 = out.batch.steps.iter().map(|s| s.cost).sum();
        let oracle_total: f64 = out.stats.iter().map(|s| s.cost).sum();
        assert!(train_total > 0.0, "expected some cost events in the batch");
        assert_eq!(train_total, oracle_total);
        // Thresholds in the batch are the true ones in oracle mode.
        for (ep, stat) in out.batch.episodes.iter().zip(&out.stats) {
            assert_eq!(ep.threshold, stat.threshold);
        }
    }

    #[test]
    fn rollout_oracle_reads_stay_outside_optimizer_sections() {
        meter::reset();
        let gen = GenConfig::square(7, 2);
        let tasks = tasks_fixture();
        let rewards = RewardTable::train(15);
        let policy = Policy::new(PolicyConfig::linear(POLICY_INPUT_DIM));
        let ctx = RolloutContext {
            gen: &gen,
            tasks: &tasks,
            rewards: &rewards,
            split: Split::Train,
            policy: &policy,
            input: PolicyInputMode::Masked(InputAblation::default()),
            cost: CostModel::OracleCost,
        };
        collect_batch(&ctx, 60, 2, 0).unwrap();
        assert_eq!(meter::violations(), 0);
    }

    #[test]
    fn fusion_features_span_observation_and_vocabulary() {
        let gen = GenConfig::square(7, 2);
        let tasks = tasks_fixture();
        let vocab = TokenVocab::build(tasks.iter().map(|t| t.text.as_str()));
        let rewards = RewardTable::train(10);
        let policy = Policy::new(PolicyConfig::linear(OBS_FEATURES + vocab.len()));
        let ctx = RolloutContext {
            gen: &gen,
            tasks: &tasks,
            rewards: &rewards,
            split: Split::Train,
            policy: &policy,
            input: PolicyInputMode::Fusion(&vocab),
            cost: CostModel::Zero,
        };
        let out = collect_batch(&ctx, 30, 6, 0).unwrap();
        for step in &out.batch.steps {
            assert_eq!(step.features.dim(), OBS_FEATURES + vocab.len());
        }
        let bow = text_bow(&vocab, &tasks[0].text);
        let total: f64 = bow.iter().map(|(_, v)| v).sum();
        assert!((total - 1.0).abs() < 1e-12, "bow weights sum to 1");
    }

    #[test]
    fn ablations_blank_the_matching_channels() {
        let gen = GenConfig::square(7, 3);
        let tasks = tasks_fixture();
        let rewards = RewardTable::train(10);
        let policy = Policy::new(PolicyConfig::linear(POLICY_INPUT_DIM));
        let ablated = RolloutContext {
            gen: &gen,
            tasks: &tasks,
            rewards: &rewards,
            split: Split::Train,
            policy: &policy,
            input: PolicyInputMode::Masked(InputAblation {
                drop_mask: true,
                drop_budget: true,
                drop_threshold: true,
            }),
            cost: CostModel::OracleMask,
        };
        let out = collect_batch(&ablated, 120, 9, 1).unwrap();
        let mask_base = OBS_FEATURES;
        let threshold_base = OBS_FEATURES + 2 * 49;
        for step in &out.batch.steps {
            for (i, _) in step.features.iter() {
                let in_mask_or_budget = i >= mask_base && i < threshold_base;
                assert!(!in_mask_or_budget, "feature {i} should be blanked");
                // The threshold one-hot collapses to bucket zero.
                if i >= threshold_base {
                    assert_eq!(i, threshold_base);
                }
            }
        }
        // Costs still flow from the (un-ablated) oracle mask.
        let train_total: f64 = out.batch.steps.iter().map(|s| s.cost).sum();
        let oracle_total: f64 = out.stats.iter().map(|s| s.cost).sum();
        assert_eq!(train_total, oracle_total);
    }
}
