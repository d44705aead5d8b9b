//! Two-stage safety training, transfer and multi-constraint evaluation, and
//! the baseline agents.
//!
//! Stage 1 fits the constraint interpreter on random-walk trajectories
//! labeled with ground truth. Stage 2 optimizes the policy with
//! projection-corrected trust-region updates whose cost stream comes from the
//! interpreter's predictions; the environment's true costs are read only
//! outside optimizer sections, for reporting.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraint::{merge_masks, meter, step_cost, ConstraintSpec, Mask};
use crate::grid::{stream, Action, EntityKind, EpisodeState, GenConfig, GridMap, Observation};
use crate::interpreter::{
    collect_interpreter_data, train_interpreter, visited_indicator, ConstraintText, Interpreter,
    InterpreterConfig, TokenVocab, TrainHyper, TrainReport,
};
use crate::policy::{
    encode_policy_input, Policy, PolicyConfig, OBS_FEATURES, POLICY_INPUT_DIM,
};
use crate::rng::derive_rng;
use crate::safeopt::{pcpo_update, penalized_trpo_update, trpo_update, TrustRegionConfig};
use rand::Rng;

use super::manifest::{DatasetManifest, ResolvedEntry, Split};
use super::metrics::{compute_metrics, EpisodeStats, MetricsReport, TrainingLogRecord};
use super::rollout::{
    collect_batch, collect_episodes, CostModel, InputAblation, PolicyInputMode, RolloutConfig,
    RolloutContext,
};
use super::HarnessError;

/// Interpreter-learning settings (data collection plus SGD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub n_trajectories: usize,
    pub trajectory_len: usize,
    pub model: InterpreterConfig,
    pub hyper: TrainHyper,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            n_trajectories: 4000,
            trajectory_len: 50,
            model: InterpreterConfig::default(),
            hyper: TrainHyper::default(),
        }
    }
}

/// Policy-learning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub updates: usize,
    pub rollout: RolloutConfig,
    pub trust_region: TrustRegionConfig,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            updates: 300,
            rollout: RolloutConfig::default(),
            trust_region: TrustRegionConfig::default(),
        }
    }
}

/// Where Stage 2's cost stream comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSourceConfig {
    /// Train an interpreter in Stage 1 and use its predictions.
    Interpreter,
    /// Use ground-truth masks and thresholds (skips Stage 1).
    OracleMask,
}

/// Full safety-training configuration. Defaults are the desk-scale settings
/// (7x7 maps, 4 cost cells per kind, 2,000-step batches, 300 updates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyConfig {
    pub map_side: usize,
    pub cost_cells_per_kind: usize,
    pub seed: u64,
    pub cost_source: CostSourceConfig,
    pub ablation: InputAblation,
    /// Hidden width for the policy network (`None` = linear softmax).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_hidden: Option<usize>,
    /// Penalty weight for the penalized-TRPO baseline.
    pub penalty_weight: f64,
    /// Episodes per final evaluation.
    pub eval_episodes: usize,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            map_side: 7,
            cost_cells_per_kind: 4,
            seed: 0,
            cost_source: CostSourceConfig::Interpreter,
            ablation: InputAblation::default(),
            policy_hidden: None,
            penalty_weight: 1.0,
            eval_episodes: 200,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
        }
    }
}

impl SafetyConfig {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig::square(self.map_side, self.cost_cells_per_kind)
    }
}

/// How a trained policy consumes its inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Masked { ablation: InputAblation },
    Fusion { vocab: TokenVocab },
}

/// A policy together with its input convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedAgent {
    pub policy: Policy,
    pub kind: AgentKind,
}

const AGENT_CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct AgentCheckpoint {
    version: u32,
    agent: TrainedAgent,
}

impl TrainedAgent {
    /// Fresh mask-conditioned agent (uniform until trained).
    pub fn new_masked(
        ablation: InputAblation,
        hidden: Option<usize>,
        init_seed: u64,
    ) -> TrainedAgent {
        let mut config = PolicyConfig::linear(POLICY_INPUT_DIM);
        config.hidden = hidden;
        let mut policy = Policy::new(config);
        if hidden.is_some() {
            policy.init_hidden(init_seed);
        }
        TrainedAgent {
            policy,
            kind: AgentKind::Masked { ablation },
        }
    }

    /// Fresh text-fusion agent over the given vocabulary.
    pub fn new_fusion(vocab: TokenVocab, hidden: Option<usize>, init_seed: u64) -> TrainedAgent {
        let mut config = PolicyConfig::linear(OBS_FEATURES + vocab.len());
        config.hidden = hidden;
        let mut policy = Policy::new(config);
        if hidden.is_some() {
            policy.init_hidden(init_seed);
        }
        TrainedAgent {
            policy,
            kind: AgentKind::Fusion { vocab },
        }
    }

    pub fn input_mode(&self) -> PolicyInputMode<'_> {
        match &self.kind {
            AgentKind::Masked { ablation } => PolicyInputMode::Masked(*ablation),
            AgentKind::Fusion { vocab } => PolicyInputMode::Fusion(vocab),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), HarnessError> {
        let checkpoint = AgentCheckpoint {
            version: AGENT_CHECKPOINT_VERSION,
            agent: self.clone(),
        };
        let json = serde_json::to_string_pretty(&checkpoint)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<TrainedAgent, HarnessError> {
        let json = std::fs::read_to_string(path)?;
        let checkpoint: AgentCheckpoint = serde_json::from_str(&json)?;
        if checkpoint.version != AGENT_CHECKPOINT_VERSION {
            return Err(HarnessError::Invalid(format!(
                "agent checkpoint version {} (expected {AGENT_CHECKPOINT_VERSION})",
                checkpoint.version
            )));
        }
        Ok(checkpoint.agent)
    }
}

/// Everything safety training produces.
#[derive(Debug, Clone)]
pub struct SafetyOutcome {
    /// The interpreter trained in Stage 1 (`None` when a pre-trained one was
    /// supplied or the oracle-mask mode skipped Stage 1).
    pub interpreter: Option<Interpreter>,
    pub stage1_report: Option<TrainReport>,
    pub agent: TrainedAgent,
    pub log: Vec<TrainingLogRecord>,
}

/// Stage 1 alone: collect labeled random-walk data from the manifest's
/// constraints and fit the interpreter.
pub fn train_stage1(
    manifest: &DatasetManifest,
    cfg: &SafetyConfig,
) -> Result<(Interpreter, TrainReport), HarnessError> {
    let resolved = manifest.resolve()?;
    let pool: Vec<(ConstraintSpec, ConstraintText)> = resolved
        .iter()
        .map(|e| {
            (
                e.spec.clone(),
                ConstraintText {
                    template_id: e.template_id,
                    text: e.text.clone(),
                },
            )
        })
        .collect();
    let examples = collect_interpreter_data(
        &cfg.gen_config(),
        &pool,
        cfg.stage1.n_trajectories,
        cfg.stage1.trajectory_len,
        cfg.seed,
    )?;
    let (interp, report) = train_interpreter(&examples, cfg.stage1.model.clone(), &cfg.stage1.hyper)?;
    Ok((interp, report))
}

#[derive(Clone, Copy)]
enum Algo {
    Pcpo,
    TrpoRewardOnly,
    Penalized(f64),
}

struct TrainLoop<'a> {
    gen: &'a GenConfig,
    tasks: &'a [ResolvedEntry],
    rewards: &'a crate::grid::RewardTable,
    split: Split,
    input: PolicyInputMode<'a>,
    cost: CostModel<'a>,
    trust_region: &'a TrustRegionConfig,
    batch_steps: usize,
    updates: usize,
    seed: u64,
    algo: Algo,
}

/// The shared optimize loop: collect a batch, apply one update inside an
/// optimizer section, log. Oracle reads are confined to the rollout.
fn run_training(policy: &mut Policy, lp: &TrainLoop) -> Result<Vec<TrainingLogRecord>, HarnessError> {
    let mut log = Vec::with_capacity(lp.updates);
    for i in 0..lp.updates {
        let t0 = Instant::now();
        let out = {
            let ctx = RolloutContext {
                gen: lp.gen,
                tasks: lp.tasks,
                rewards: lp.rewards,
                split: lp.split,
                policy: &*policy,
                input: lp.input,
                cost: lp.cost,
            };
            collect_batch(&ctx, lp.batch_steps, lp.seed, i as u64)?
        };
        let report = {
            let _section = meter::optimizer_section();
            match lp.algo {
                Algo::Pcpo => pcpo_update(policy, &out.batch, lp.trust_region)?,
                Algo::TrpoRewardOnly => trpo_update(policy, &out.batch, lp.trust_region)?,
                Algo::Penalized(w) => penalized_trpo_update(policy, &out.batch, w, lp.trust_region)?,
            }
        };
        let n = out.stats.len() as f64;
        let j_c_oracle = out.stats.iter().map(|s| s.cost).sum::<f64>() / n;
        let mean_h = out.stats.iter().map(|s| s.threshold).sum::<f64>() / n;
        log.push(TrainingLogRecord {
            iter: i,
            j_r: report.j_r,
            j_c_train: report.j_c,
            j_c_oracle,
            delta_c_oracle: (j_c_oracle - mean_h).max(0.0),
            mean_kl: report.mean_kl,
            projection_active: report.projection_active,
            recovery: report.recovery,
            safeguard_halvings: report.safeguard_halvings,
            h_d: report.h_d,
            wall_time_s: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

/// Stage 1 + Stage 2. Pass `pretrained` to reuse an interpreter (it is not
/// retrained); otherwise the interpreter-cost mode trains one here.
pub fn safety_training(
    manifest: &DatasetManifest,
    cfg: &SafetyConfig,
    pretrained: Option<&Interpreter>,
) -> Result<SafetyOutcome, HarnessError> {
    let tasks = manifest.resolve()?;
    let gen = cfg.gen_config();
    let (trained, stage1_report) = match (cfg.cost_source, pretrained) {
        (CostSourceConfig::OracleMask, _) | (CostSourceConfig::Interpreter, Some(_)) => {
            (None, None)
        }
        (CostSourceConfig::Interpreter, None) => {
            let (interp, report) = train_stage1(manifest, cfg)?;
            (Some(interp), Some(report))
        }
    };
    let interp_ref = pretrained.or(trained.as_ref());
    let cost = match cfg.cost_source {
        CostSourceConfig::Interpreter => CostModel::Interpreter(
            interp_ref.expect("interpreter-cost mode always has an interpreter"),
        ),
        CostSourceConfig::OracleMask => CostModel::OracleMask,
    };
    let mut agent = TrainedAgent::new_masked(cfg.ablation, cfg.policy_hidden, cfg.seed);
    let rewards = manifest.reward_table(cfg.stage2.rollout.rollout_len);
    let log = run_training(
        &mut agent.policy,
        &TrainLoop {
            gen: &gen,
            tasks: &tasks,
            rewards: &rewards,
            split: manifest.split,
            input: PolicyInputMode::Masked(cfg.ablation),
            cost,
            trust_region: &cfg.stage2.trust_region,
            batch_steps: cfg.stage2.rollout.batch_steps,
            updates: cfg.stage2.updates,
            seed: cfg.seed,
            algo: Algo::Pcpo,
        },
    )?;
    Ok(SafetyOutcome {
        interpreter: trained,
        stage1_report,
        agent,
        log,
    })
}

/// Rolls out `cfg.eval_episodes` episodes with the agent's input convention
/// and returns oracle-scored stats. Masked agents read masks from the
/// interpreter when one is given, else from the ground truth.
pub fn evaluate_agent(
    agent: &TrainedAgent,
    interpreter: Option<&Interpreter>,
    manifest: &DatasetManifest,
    cfg: &SafetyConfig,
) -> Result<Vec<EpisodeStats>, HarnessError> {
    let tasks = manifest.resolve()?;
    let gen = cfg.gen_config();
    let rewards = manifest.reward_table(cfg.stage2.rollout.rollout_len);
    let cost = match (&agent.kind, interpreter) {
        (AgentKind::Fusion { .. }, _) => CostModel::Zero,
        (AgentKind::Masked { .. }, Some(interp)) => CostModel::Interpreter(interp),
        (AgentKind::Masked { .. }, None) => CostModel::OracleMask,
    };
    let ctx = RolloutContext {
        gen: &gen,
        tasks: &tasks,
        rewards: &rewards,
        split: manifest.split,
        policy: &agent.policy,
        input: agent.input_mode(),
        cost,
    };
    let out = collect_episodes(&ctx, cfg.eval_episodes, cfg.seed, 0)?;
    Ok(out.stats)
}

fn mean_threshold(stats: &[EpisodeStats]) -> f64 {
    if stats.is_empty() {
        return 0.0;
    }
    stats.iter().map(|s| s.threshold).sum::<f64>() / stats.len() as f64
}

/// Builds the aggregate report for a stat set, measuring the violation
/// excess against the episodes' mean true threshold.
pub fn report_episodes(
    stats: &[EpisodeStats],
    seeds: &[u64],
) -> Result<MetricsReport, HarnessError> {
    compute_metrics(stats, mean_threshold(stats), seeds)
}

/// Transfer protocol: fine-tune the trained policy on the evaluation
/// manifest's reward function (the key becomes undesirable), with costs
/// still coming only from interpreter predictions, then report oracle
/// metrics. `fine_tune_updates = 0` is pure zero-shot evaluation.
pub fn eval_transfer(
    agent: &TrainedAgent,
    interpreter: Option<&Interpreter>,
    eval_manifest: &DatasetManifest,
    cfg: &SafetyConfig,
    fine_tune_updates: usize,
) -> Result<(MetricsReport, TrainedAgent, Vec<TrainingLogRecord>), HarnessError> {
    let tasks = eval_manifest.resolve()?;
    let gen = cfg.gen_config();
    let rewards = eval_manifest.reward_table(cfg.stage2.rollout.rollout_len);
    let mut tuned = agent.clone();
    let log = if fine_tune_updates > 0 {
        let (input, cost, algo) = match &tuned.kind {
            AgentKind::Masked { ablation } => {
                let interp = interpreter.ok_or_else(|| {
                    HarnessError::Invalid(
                        "fine-tuning a mask-conditioned agent requires an interpreter".to_string(),
                    )
                })?;
                (
                    PolicyInputMode::Masked(*ablation),
                    CostModel::Interpreter(interp),
                    Algo::Pcpo,
                )
            }
            // Fusion baselines have no cost predictor; they adapt on reward
            // alone.
            AgentKind::Fusion { vocab } => (
                PolicyInputMode::Fusion(vocab),
                CostModel::Zero,
                Algo::TrpoRewardOnly,
            ),
        };
        let lp = TrainLoop {
            gen: &gen,
            tasks: &tasks,
            rewards: &rewards,
            split: eval_manifest.split,
            input,
            cost,
            trust_region: &cfg.stage2.trust_region,
            batch_steps: cfg.stage2.rollout.batch_steps,
            updates: fine_tune_updates,
            seed: cfg.seed,
            algo,
        };
        let mut policy = tuned.policy.clone();
        let log = run_training(&mut policy, &lp)?;
        tuned.policy = policy;
        log
    } else {
        Vec::new()
    };
    let stats = evaluate_agent(&tuned, interpreter, eval_manifest, cfg)?;
    let report = report_episodes(&stats, &[cfg.seed])?;
    Ok((report, tuned, log))
}

/// Multi-constraint evaluation output: the conservative aggregate (summed
/// oracle costs against the smallest threshold) plus per-constraint reports.
#[derive(Debug, Clone)]
pub struct MultiEvalReport {
    pub aggregate: MetricsReport,
    pub per_spec: Vec<MetricsReport>,
}

/// Imposes several constraints at once: the policy sees the OR-merge of the
/// per-constraint predicted masks and the smallest predicted threshold. No
/// fine-tuning; the manifest's own reward function is kept.
pub fn eval_multi(
    agent: &TrainedAgent,
    interpreter: &Interpreter,
    manifest: &DatasetManifest,
    cfg: &SafetyConfig,
    specs: &[(ConstraintSpec, String)],
    n_episodes: usize,
) -> Result<MultiEvalReport, HarnessError> {
    if specs.len() < 2 {
        return Err(HarnessError::Invalid(
            "multi-constraint evaluation needs at least two constraints".to_string(),
        ));
    }
    let ablation = match &agent.kind {
        AgentKind::Masked { ablation } => *ablation,
        AgentKind::Fusion { .. } => {
            return Err(HarnessError::Invalid(
                "multi-constraint evaluation requires a mask-conditioned agent".to_string(),
            ))
        }
    };
    let tasks = manifest.resolve()?;
    let gen = cfg.gen_config();
    let rewards = manifest.reward_table(cfg.stage2.rollout.rollout_len);
    let thresholds: Vec<f64> = specs
        .iter()
        .map(|(_, text)| interpreter.predict_threshold(text))
        .collect();
    let min_predicted = thresholds.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_true = specs
        .iter()
        .map(|(s, _)| s.threshold() as f64)
        .fold(f64::INFINITY, f64::min);

    let mut rng = derive_rng(cfg.seed, &[stream::EVAL, MULTI_EVAL_TAG]);
    let mut stats = Vec::with_capacity(n_episodes);
    let mut per_spec_costs: Vec<Vec<f64>> = vec![Vec::with_capacity(n_episodes); specs.len()];
    for _ in 0..n_episodes {
        let entry = &tasks[rng.gen_range(0..tasks.len())];
        let map = GridMap::generate(entry.map_seed, &gen)?;
        let mut state = EpisodeState::new(map);
        let mut reward_sum = 0.0;
        let mut oracle_sums = vec![0.0; specs.len()];
        let mut collected = std::collections::BTreeSet::new();
        let mut steps = 0usize;
        while !state.is_done() {
            let obs = state.observe();
            let vis = visited_indicator(state.visited_kinds());
            let masks: Vec<Mask> = specs
                .iter()
                .map(|(_, text)| interpreter.predict_mask(text, &obs, &vis))
                .collect();
            let merged = merge_masks(&masks)?;
            let input_mask = if ablation.drop_mask {
                Mask::zero()
            } else {
                merged.clone()
            };
            let budget = if ablation.drop_budget {
                crate::constraint::budget_mask(&Mask::zero(), 0.0, 0.0)
            } else {
                crate::constraint::budget_mask(&merged, state.cumulative_cost(), min_predicted)
            };
            let threshold_in = if ablation.drop_threshold { 0.0 } else { min_predicted };
            let features = encode_policy_input(&obs, &input_mask, &budget, threshold_in);
            let dist = agent.policy.forward(&features);
            let action_idx = dist.sample(&mut rng);
            let action = Action::from_index(action_idx).expect("action index in range");
            let prev = state.clone();
            let outcome = state.step(action, &rewards)?;
            for (sum, (spec, _)) in oracle_sums.iter_mut().zip(specs) {
                *sum += step_cost(spec, &prev, action, &state);
            }
            let moved = state.agent_pos() != prev.agent_pos();
            let (r, c) = Observation::neighbor_of_center(action);
            if moved && merged.get(r, c) {
                state.add_cost(1.0);
            }
            reward_sum += outcome.reward;
            if let Some(kind) = outcome.events.collected {
                collected.insert(kind);
            }
            steps += 1;
        }
        let success = match manifest.split {
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
        let total_cost: f64 = oracle_sums.iter().sum();
        for (costs, &sum) in per_spec_costs.iter_mut().zip(&oracle_sums) {
            costs.push(sum);
        }
        stats.push(EpisodeStats {
            reward: reward_sum,
            cost: total_cost,
            threshold: min_true,
            success,
            steps,
        });
    }

    let aggregate = compute_metrics(&stats, min_true, &[cfg.seed])?;
    let per_spec = specs
        .iter()
        .zip(&per_spec_costs)
        .map(|((spec, _), costs)| {
            let spec_stats: Vec<EpisodeStats> = stats
                .iter()
                .zip(costs)
                .map(|(s, &c)| EpisodeStats {
                    cost: c,
                    threshold: spec.threshold() as f64,
                    ..s.clone()
                })
                .collect();
            compute_metrics(&spec_stats, spec.threshold() as f64, &[cfg.seed])
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MultiEvalReport { aggregate, per_spec })
}

const MULTI_EVAL_TAG: u64 = 0x4d55_4c54;

/// The comparison agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Untrained uniform policy.
    RandomWalk,
    /// Text-fusion policy trained on reward alone (ignores all constraints).
    CfTrpo,
    /// Text-fusion policy trained end-to-end with projection updates on the
    /// true cost function.
    CfPcpo,
    /// Text-fusion policy trained on reward minus a fixed cost penalty.
    PenalizedTrpo,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::RandomWalk => "random_walk",
            BaselineKind::CfTrpo => "cf_trpo",
            BaselineKind::CfPcpo => "cf_pcpo",
            BaselineKind::PenalizedTrpo => "penalized_trpo",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random_walk" => Ok(BaselineKind::RandomWalk),
            "cf_trpo" => Ok(BaselineKind::CfTrpo),
            "cf_pcpo" => Ok(BaselineKind::CfPcpo),
            "penalized_trpo" => Ok(BaselineKind::PenalizedTrpo),
            other => Err(format!(
                "unknown baseline '{other}' (expected random_walk, cf_trpo, cf_pcpo, or penalized_trpo)"
            )),
        }
    }
}

/// Trains (where applicable) and evaluates one baseline on the manifest.
pub fn run_baseline(
    kind: BaselineKind,
    manifest: &DatasetManifest,
    cfg: &SafetyConfig,
) -> Result<(MetricsReport, TrainedAgent, Vec<TrainingLogRecord>), HarnessError> {
    let tasks = manifest.resolve()?;
    let gen = cfg.gen_config();
    let rewards = manifest.reward_table(cfg.stage2.rollout.rollout_len);
    let (agent, log) = match kind {
        BaselineKind::RandomWalk => (
            TrainedAgent::new_masked(InputAblation::default(), None, cfg.seed),
            Vec::new(),
        ),
        BaselineKind::CfTrpo | BaselineKind::CfPcpo | BaselineKind::PenalizedTrpo => {
            let vocab = TokenVocab::build(tasks.iter().map(|t| t.text.as_str()));
            let mut agent = TrainedAgent::new_fusion(vocab, cfg.policy_hidden, cfg.seed);
            let (cost, algo) = match kind {
                BaselineKind::CfTrpo => (CostModel::Zero, Algo::TrpoRewardOnly),
                BaselineKind::CfPcpo => (CostModel::OracleCost, Algo::Pcpo),
                BaselineKind::PenalizedTrpo => {
                    (CostModel::OracleCost, Algo::Penalized(cfg.penalty_weight))
                }
                BaselineKind::RandomWalk => unreachable!(),
            };
            let vocab_ref = match &agent.kind {
                AgentKind::Fusion { vocab } => vocab.clone(),
                AgentKind::Masked { .. } => unreachable!(),
            };
            let lp = TrainLoop {
                gen: &gen,
                tasks: &tasks,
                rewards: &rewards,
                split: manifest.split,
                input: PolicyInputMode::Fusion(&vocab_ref),
                cost,
                trust_region: &cfg.stage2.trust_region,
                batch_steps: cfg.stage2.rollout.batch_steps,
                updates: cfg.stage2.updates,
                seed: cfg.seed,
                algo,
            };
            let log = run_training(&mut agent.policy, &lp)?;
            (agent, log)
        }
    };
    let stats = evaluate_agent(&agent, None, manifest, cfg)?;
    let report = report_episodes(&stats, &[cfg.seed])?;
    Ok((report, agent, log))
}
