//! Analytical trust-region steps, safety projections, and the batch-level
//! policy updates built from them.

use crate::policy::{ActionDistribution, Policy, PolicyConfig, ValueHead};
use crate::vecmath::{axpy, dot, norm2, SparseVec};

use super::cg::{conjugate_gradient, LinearOperator};
use super::fisher::FisherOp;
use super::gae::{discounted_returns, gae_episode};
use super::{
    ConstraintLin, OptimError, ProjectionMetric, RolloutBatch, TrustRegionConfig, UpdateReport,
};

/// Per-step advantage estimates for the reward and cost streams.
#[derive(Debug, Clone)]
pub struct Advantages {
    pub reward: Vec<f64>,
    pub cost: Vec<f64>,
}

/// Surrogate linearization at the current parameters: reward gradient `g`,
/// cost gradient `a` (episode-sum units), and constraint slack `b`.
#[derive(Debug, Clone)]
pub struct SurrogateGrads {
    pub g: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
}

/// Refits both value heads on the batch's discounted returns, then computes
/// generalized advantage estimates per episode: `(gamma, lambda_r)` for the
/// reward stream, `(gamma_c, lambda_c)` for the cost stream. Episodes are
/// complete, so the terminal bootstrap value is zero.
pub fn estimate_advantages(
    policy: &mut Policy,
    batch: &RolloutBatch,
    cfg: &TrustRegionConfig,
) -> Result<Advantages, OptimError> {
    batch.validate()?;
    let d = policy.config().input_dim;
    for s in &batch.steps {
        if s.features.dim() != d {
            return Err(OptimError::DimensionMismatch {
                expected: d,
                got: s.features.dim(),
            });
        }
    }
    let xs: Vec<&SparseVec> = batch.steps.iter().map(|s| &s.features).collect();
    let n = batch.num_steps();
    let mut reward_targets = Vec::with_capacity(n);
    let mut cost_targets = Vec::with_capacity(n);
    for e in 0..batch.num_episodes() {
        let steps = batch.episode_steps(e);
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let costs: Vec<f64> = steps.iter().map(|s| s.cost).collect();
        reward_targets.extend(discounted_returns(&rewards, cfg.gamma));
        cost_targets.extend(discounted_returns(&costs, cfg.gamma_c));
    }
    policy.fit_value(ValueHead::Reward, &xs, &reward_targets, &cfg.value_fit);
    policy.fit_value(ValueHead::Cost, &xs, &cost_targets, &cfg.value_fit);

    let mut adv_r = Vec::with_capacity(n);
    let mut adv_c = Vec::with_capacity(n);
    for e in 0..batch.num_episodes() {
        let steps = batch.episode_steps(e);
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let costs: Vec<f64> = steps.iter().map(|s| s.cost).collect();
        let v_r: Vec<f64> = steps
            .iter()
            .map(|s| policy.value(ValueHead::Reward, &s.features))
            .collect();
        let v_c: Vec<f64> = steps
            .iter()
            .map(|s| policy.value(ValueHead::Cost, &s.features))
            .collect();
        adv_r.extend(gae_episode(&rewards, &v_r, cfg.gamma, cfg.lambda_r));
        adv_c.extend(gae_episode(&costs, &v_c, cfg.gamma_c, cfg.lambda_c));
    }
    Ok(Advantages {
        reward: adv_r,
        cost: adv_c,
    })
}

/// Computes the surrogate gradients at `theta`:
///
/// - `g = (1/N) sum_t grad log pi(a_t) * adv_reward[t]` (per-step mean),
/// - `a = (1/E) sum_t grad log pi(a_t) * adv_cost[t]` (per-episode mean, so
///   `a . step` carries episode-cost units),
/// - `b = mean over episodes of (episode cost sum - threshold)`.
///
/// The per-episode normalization of `a` keeps the linear model `a . step + b`
/// dimensionally consistent: `b` is measured in cost per episode, so the
/// gradient must be the derivative of the *episode* cost, which is the
/// per-step sum divided by the number of episodes.
pub fn surrogate_grads(
    config: &PolicyConfig,
    theta: &[f64],
    batch: &RolloutBatch,
    adv_reward: &[f64],
    adv_cost: &[f64],
) -> Result<SurrogateGrads, OptimError> {
    batch.validate()?;
    let n = batch.num_steps();
    if adv_reward.len() != n || adv_cost.len() != n {
        return Err(OptimError::DimensionMismatch {
            expected: n,
            got: adv_reward.len().min(adv_cost.len()),
        });
    }
    let p = config.policy_dim();
    let mut g = vec![0.0; p];
    let mut a = vec![0.0; p];
    let n_f = n as f64;
    let e_f = batch.num_episodes() as f64;
    for (step, (&ar, &ac)) in batch
        .steps
        .iter()
        .zip(adv_reward.iter().zip(adv_cost.iter()))
    {
        let dist = config.forward(theta, &step.features);
        if ar != 0.0 {
            config.add_log_prob_grad_with(&dist, theta, &step.features, step.action, ar / n_f, &mut g);
        }
        if ac != 0.0 {
            config.add_log_prob_grad_with(&dist, theta, &step.features, step.action, ac / e_f, &mut a);
        }
    }
    let b = batch.mean_cost_slack();
    if !b.is_finite()
        || g.iter().any(|v| !v.is_finite())
        || a.iter().any(|v| !v.is_finite())
    {
        return Err(OptimError::NonFiniteGradient);
    }
    Ok(SurrogateGrads { g, a, b })
}

/// Analytical trust-region reward step `sqrt(2 delta / g^T F^-1 g) F^-1 g`,
/// with `F^-1 g` from conjugate gradient. A zero gradient yields a zero step;
/// non-positive curvature (a failed Fisher estimate) is an error.
pub fn trpo_step_core(
    fvp: &dyn LinearOperator,
    g: &[f64],
    delta: f64,
    cg_iters: usize,
    cg_tol: f64,
) -> Result<Vec<f64>, OptimError> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFiniteGradient);
    }
    if norm2(g) == 0.0 {
        return Ok(vec![0.0; g.len()]);
    }
    let x = conjugate_gradient(fvp, g, cg_iters, cg_tol)?;
    let q = dot(g, &x);
    if !q.is_finite() || q <= 0.0 {
        return Err(OptimError::NonPositiveCurvature { q });
    }
    let scale = (2.0 * delta / q).sqrt();
    Ok(x.iter().map(|v| scale * v).collect())
}

/// Projection coefficient `max(0, (grad . step + slack) / (grad . l_inv_grad))`.
/// Errors when the constraint is violated but the gradient direction is
/// numerically unusable.
fn correction_coef(
    step: &[f64],
    lin: &ConstraintLin,
    l_inv_grad: &[f64],
) -> Result<f64, OptimError> {
    let violation = dot(&lin.grad, step) + lin.slack;
    if !violation.is_finite() {
        return Err(OptimError::NonFiniteGradient);
    }
    if violation <= 0.0 {
        return Ok(0.0);
    }
    let denom = dot(&lin.grad, l_inv_grad);
    if !denom.is_finite() || denom <= 1e-12 {
        return Err(OptimError::InfeasibleConstraint { slack: lin.slack });
    }
    Ok(violation / denom)
}

/// Projects `step` onto the half-space `grad . step + slack <= 0` in the
/// metric whose inverse maps `grad` to `l_inv_grad`:
/// `step - max(0, (grad . step + slack) / (grad . l_inv_grad)) * l_inv_grad`.
/// Returns the projected step and whether the correction was active.
pub fn project_core(
    step: &[f64],
    lin: &ConstraintLin,
    l_inv_grad: &[f64],
) -> Result<(Vec<f64>, bool), OptimError> {
    let coef = correction_coef(step, lin, l_inv_grad)?;
    let mut out = step.to_vec();
    if coef == 0.0 {
        return Ok((out, false));
    }
    axpy(-coef, l_inv_grad, &mut out);
    Ok((out, true))
}

/// Combined two-projection step: both correction coefficients are evaluated
/// against the *unprojected* reward step and subtracted together,
/// `step - c_near * L^-1 a_near - c_cost * L^-1 a_cost`. Returns the
/// combined step plus (near-constraint active, cost-constraint active).
pub fn three_step_core(
    reward_step: &[f64],
    near: &ConstraintLin,
    near_l_inv: &[f64],
    cost: &ConstraintLin,
    cost_l_inv: &[f64],
) -> Result<(Vec<f64>, bool, bool), OptimError> {
    let near_coef = correction_coef(reward_step, near, near_l_inv)?;
    let cost_coef = correction_coef(reward_step, cost, cost_l_inv)?;
    let mut out = reward_step.to_vec();
    axpy(-near_coef, near_l_inv, &mut out);
    axpy(-cost_coef, cost_l_inv, &mut out);
    Ok((out, near_coef > 0.0, cost_coef > 0.0))
}

/// `L^-1 grad` for the configured projection metric: the gradient itself for
/// L2, a conjugate-gradient Fisher solve for KL.
fn metric_inverse(
    fvp: &dyn LinearOperator,
    grad: &[f64],
    cfg: &TrustRegionConfig,
) -> Result<Vec<f64>, OptimError> {
    match cfg.metric {
        ProjectionMetric::L2 => Ok(grad.to_vec()),
        ProjectionMetric::Kl => conjugate_gradient(fvp, grad, cfg.cg_iters, cfg.cg_tol),
    }
}

fn forward_all(
    config: &PolicyConfig,
    theta: &[f64],
    batch: &RolloutBatch,
) -> Vec<ActionDistribution> {
    batch
        .steps
        .iter()
        .map(|s| config.forward(theta, &s.features))
        .collect()
}

/// Mean KL(old || new) over the batch states.
fn sampled_kl(
    config: &PolicyConfig,
    theta_new: &[f64],
    batch: &RolloutBatch,
    dists_old: &[ActionDistribution],
) -> f64 {
    let mut total = 0.0;
    for (step, old) in batch.steps.iter().zip(dists_old) {
        let new = config.forward(theta_new, &step.features);
        total += old.kl_to(&new);
    }
    total / batch.num_steps().max(1) as f64
}

struct AppliedStep {
    mean_kl: f64,
    step_norm: f64,
    safeguard_halvings: u32,
}

/// Applies `step` to the policy, optionally halving it while the sampled KL
/// exceeds `2 * delta` (at most 10 halvings), and writes the new parameters.
fn apply_step(
    policy: &mut Policy,
    theta_old: &[f64],
    step: &[f64],
    batch: &RolloutBatch,
    dists_old: &[ActionDistribution],
    cfg: &TrustRegionConfig,
) -> Result<AppliedStep, OptimError> {
    if step.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFiniteIterate);
    }
    let config = policy.config().clone();
    let mut scale = 1.0;
    let mut halvings = 0u32;
    loop {
        let theta_new: Vec<f64> = theta_old
            .iter()
            .zip(step)
            .map(|(t, s)| t + scale * s)
            .collect();
        let kl = sampled_kl(&config, &theta_new, batch, dists_old);
        // An infinite KL just means the step saturated the softmax; the
        // safeguard shrinks it like any other oversized step. NaN means the
        // evaluation itself broke.
        if kl.is_nan() {
            return Err(OptimError::NonFiniteIterate);
        }
        if cfg.kl_safeguard && kl > 2.0 * cfg.delta && halvings < 10 {
            scale *= 0.5;
            halvings += 1;
            continue;
        }
        policy
            .set_policy_block(&theta_new)
            .expect("step has policy dimension");
        let scaled_norm = scale * norm2(step);
        return Ok(AppliedStep {
            mean_kl: kl,
            step_norm: scaled_norm,
            safeguard_halvings: halvings,
        });
    }
}

fn report_for(
    batch: &RolloutBatch,
    applied: AppliedStep,
    projection_active: bool,
    recovery: bool,
    h_d: Option<f64>,
) -> UpdateReport {
    UpdateReport {
        j_r: batch.mean_episode_reward(),
        j_c: batch.mean_episode_cost(),
        mean_kl: applied.mean_kl,
        projection_active,
        recovery,
        step_norm: applied.step_norm,
        safeguard_halvings: applied.safeguard_halvings,
        h_d,
    }
}

/// Plain trust-region reward update (no safety projection).
pub fn trpo_update(
    policy: &mut Policy,
    batch: &RolloutBatch,
    cfg: &TrustRegionConfig,
) -> Result<UpdateReport, OptimError> {
    let adv = estimate_advantages(policy, batch, cfg)?;
    let config = policy.config().clone();
    let theta = policy.policy_block().to_vec();
    let sg = surrogate_grads(&config, &theta, batch, &adv.reward, &adv.cost)?;
    let fvp = fisher_for(&config, &theta, batch, cfg);
    let dists_old = forward_all(&config, &theta, batch);
    let step = trpo_step_core(&fvp, &sg.g, cfg.delta, cfg.cg_iters, cfg.cg_tol)?;
    let applied = apply_step(policy, &theta, &step, batch, &dists_old, cfg)?;
    Ok(report_for(batch, applied, false, false, None))
}

/// Trust-region update on `reward - penalty_weight * cost` (penalty baseline;
/// the cost stream itself is left untouched so reports stay meaningful).
pub fn penalized_trpo_update(
    policy: &mut Policy,
    batch: &RolloutBatch,
    penalty_weight: f64,
    cfg: &TrustRegionConfig,
) -> Result<UpdateReport, OptimError> {
    let mut shaped = batch.clone();
    for s in &mut shaped.steps {
        s.reward -= penalty_weight * s.cost;
    }
    let mut report = trpo_update(policy, &shaped, cfg)?;
    report.j_r = batch.mean_episode_reward();
    report.j_c = batch.mean_episode_cost();
    Ok(report)
}

/// Projection-corrected safe update: the trust-region reward step followed by
/// an analytical projection onto the linearized cost constraint. When the
/// constraint is violated with a numerically unusable gradient, the update
/// falls back to a pure cost-descent trust-region step (recovery).
pub fn pcpo_update(
    policy: &mut Policy,
    batch: &RolloutBatch,
    cfg: &TrustRegionConfig,
) -> Result<UpdateReport, OptimError> {
    let adv = estimate_advantages(policy, batch, cfg)?;
    let config = policy.config().clone();
    let theta = policy.policy_block().to_vec();
    let sg = surrogate_grads(&config, &theta, batch, &adv.reward, &adv.cost)?;
    let fvp = fisher_for(&config, &theta, batch, cfg);
    let dists_old = forward_all(&config, &theta, batch);
    let reward_step = trpo_step_core(&fvp, &sg.g, cfg.delta, cfg.cg_iters, cfg.cg_tol)?;
    let lin = ConstraintLin {
        grad: sg.a.clone(),
        slack: sg.b,
    };
    let violation = dot(&lin.grad, &reward_step) + lin.slack;
    let (step, active, recovery) = if violation <= 0.0 {
        (reward_step, false, false)
    } else {
        let l_inv_a = metric_inverse(&fvp, &lin.grad, cfg)?;
        match project_core(&reward_step, &lin, &l_inv_a) {
            Ok((projected, active)) => (projected, active, false),
            Err(OptimError::InfeasibleConstraint { .. }) => {
                let descend: Vec<f64> = sg.a.iter().map(|v| -v).collect();
                let rec = trpo_step_core(&fvp, &descend, cfg.delta, cfg.cg_iters, cfg.cg_tol)?;
                (rec, false, true)
            }
            Err(e) => return Err(e),
        }
    };
    let applied = apply_step(policy, &theta, &step, batch, &dists_old, cfg)?;
    Ok(report_for(batch, applied, active, recovery, None))
}

/// Two-projection safe update against a fixed baseline policy: the reward
/// step is corrected both toward the baseline-divergence budget `h_d`
/// (KL(current || baseline) <= h_d, linearized) and onto the cost
/// constraint, with both corrections evaluated against the unprojected
/// reward step. Cost-side infeasibility falls back to the recovery step;
/// divergence-side infeasibility is a hard error.
pub fn space_update(
    policy: &mut Policy,
    batch: &RolloutBatch,
    baseline_theta: &[f64],
    h_d: f64,
    cfg: &TrustRegionConfig,
) -> Result<UpdateReport, OptimError> {
    let adv = estimate_advantages(policy, batch, cfg)?;
    let config = policy.config().clone();
    let theta = policy.policy_block().to_vec();
    if baseline_theta.len() != theta.len() {
        return Err(OptimError::DimensionMismatch {
            expected: theta.len(),
            got: baseline_theta.len(),
        });
    }
    let sg = surrogate_grads(&config, &theta, batch, &adv.reward, &adv.cost)?;
    let fvp = fisher_for(&config, &theta, batch, cfg);
    let dists_old = forward_all(&config, &theta, batch);

    // Linearized divergence constraint: mean KL(current || baseline) - h_d
    // plus its gradient. Per state the logit-space derivative is
    // p_c * ((log p_c - log q_c) - KL).
    let n_f = batch.num_steps() as f64;
    let mut kl_grad = vec![0.0; config.policy_dim()];
    let mut kl_mean = 0.0;
    for (step, cur) in batch.steps.iter().zip(&dists_old) {
        let base = config.forward(baseline_theta, &step.features);
        let kl_i = cur.kl_to(&base);
        kl_mean += kl_i / n_f;
        let mut coefs = [0.0; 4];
        for (c, coef) in coefs.iter_mut().enumerate() {
            if cur.probs[c] > 0.0 {
                *coef = cur.probs[c] * ((cur.log_prob(c) - base.log_prob(c)) - kl_i) / n_f;
            }
        }
        config.add_logit_grad(&theta, &step.features, &coefs, &mut kl_grad);
    }
    if !kl_mean.is_finite() || kl_grad.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFiniteGradient);
    }
    let near = ConstraintLin {
        grad: kl_grad,
        slack: kl_mean - h_d,
    };
    let cost = ConstraintLin {
        grad: sg.a.clone(),
        slack: sg.b,
    };

    let reward_step = trpo_step_core(&fvp, &sg.g, cfg.delta, cfg.cg_iters, cfg.cg_tol)?;
    let near_l_inv = metric_inverse(&fvp, &near.grad, cfg)?;
    let near_coef = correction_coef(&reward_step, &near, &near_l_inv)?;
    let cost_l_inv = metric_inverse(&fvp, &cost.grad, cfg)?;
    let (step, active, recovery) = match correction_coef(&reward_step, &cost, &cost_l_inv) {
        Ok(cost_coef) => {
            let mut out = reward_step.clone();
            axpy(-near_coef, &near_l_inv, &mut out);
            axpy(-cost_coef, &cost_l_inv, &mut out);
            (out, near_coef > 0.0 || cost_coef > 0.0, false)
        }
        Err(OptimError::InfeasibleConstraint { .. }) => {
            let descend: Vec<f64> = sg.a.iter().map(|v| -v).collect();
            let rec = trpo_step_core(&fvp, &descend, cfg.delta, cfg.cg_iters, cfg.cg_tol)?;
            (rec, near_coef > 0.0, true)
        }
        Err(e) => return Err(e),
    };
    let applied = apply_step(policy, &theta, &step, batch, &dists_old, cfg)?;
    Ok(report_for(batch, applied, active, recovery, Some(h_d)))
}

fn fisher_for<'a>(
    config: &'a PolicyConfig,
    theta: &'a [f64],
    batch: &'a RolloutBatch,
    cfg: &TrustRegionConfig,
) -> FisherOp<'a> {
    FisherOp::new(
        config,
        theta,
        batch.steps.iter().map(|s| &s.features),
        batch.steps.iter().map(|s| s.action),
        cfg.damping,
        cfg.fvp_subsample,
    )
}

/// Grows the divergence budget after a regression:
/// `10 * (j_c - h_c)^2 + h_d` if `regressed`, else `h_d` unchanged. Never
/// decreases the budget.
pub fn update_h_d(j_c: f64, h_c: f64, h_d: f64, regressed: bool) -> f64 {
    if regressed {
        10.0 * (j_c - h_c) * (j_c - h_c) + h_d
    } else {
        h_d
    }
}

/// Window-3 regression test over per-update histories: true when the latest
/// window's mean cost rose above the preceding window's, or its mean reward
/// fell below. Histories shorter than two full windows report false.
pub fn regressed_windowed(j_r_history: &[f64], j_c_history: &[f64]) -> bool {
    const W: usize = 3;
    if j_r_history.len() < 2 * W || j_c_history.len() < 2 * W {
        return false;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (r_n, c_n) = (j_r_history.len(), j_c_history.len());
    let jr_new = mean(&j_r_history[r_n - W..]);
    let jr_prev = mean(&j_r_history[r_n - 2 * W..r_n - W]);
    let jc_new = mean(&j_c_history[c_n - W..]);
    let jc_prev = mean(&j_c_history[c_n - 2 * W..c_n - W]);
    jc_new > jc_prev || jr_new < jr_prev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Policy;
    use crate::rng::derive_rng;
    use crate::safeopt::cg::{DenseOp, IdentityOp};
    use crate::safeopt::StepRecord;
    use rand::Rng;

    #[test]
    fn trpo_step_identity_metric_matches_hand_solution() {
        // F = I, g = (1, 0), delta = 0.5 -> step = sqrt(2*0.5/1) * (1,0).
        let op = IdentityOp(2);
        let step = trpo_step_core(&op, &[1.0, 0.0], 0.5, 10, 1e-14).unwrap();
        assert!((step[0] - 1.0).abs() < 1e-12);
        assert!(step[1].abs() < 1e-12);
    }

    #[test]
    fn trpo_step_zero_gradient_is_zero() {
        let op = IdentityOp(3);
        let step = trpo_step_core(&op, &[0.0, 0.0, 0.0], 0.5, 10, 1e-14).unwrap();
        assert!(step.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trpo_step_exhausts_kl_budget_under_quadratic_model() {
        // Random SPD F: half step^T F step must equal delta.
        let mut rng = derive_rng(31, &[1]);
        let dim = 5;
        let mut m = vec![vec![0.0; dim]; dim];
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen::<f64>() - 0.5;
            }
        }
        let mut f = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            for j in 0..dim {
                for (k, row) in m.iter().enumerate() {
                    f[i][j] += row[i] * m[k][j];
                }
            }
            f[i][i] += 0.5;
        }
        let op = DenseOp { mat: f };
        let g: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        let delta = 1e-3;
        let step = trpo_step_core(&op, &g, delta, 100, 1e-24).unwrap();
        let f_step = op.apply(&step);
        let quad = 0.5 * dot(&step, &f_step);
        assert!((quad - delta).abs() < 1e-8, "quad {quad} vs delta {delta}");
    }

    #[test]
    fn projection_matches_hand_examples() {
        // L = I: step (1,0), constraint grad (0,1), slack 0.5.
        let lin = ConstraintLin {
            grad: vec![0.0, 1.0],
            slack: 0.5,
        };
        let (out, active) = project_core(&[1.0, 0.0], &lin, &[0.0, 1.0]).unwrap();
        assert!(active);
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!((out[1] + 0.5).abs() < 1e-12);

        // Inactive constraint: returned unchanged.
        let slack_neg = ConstraintLin {
            grad: vec![0.0, 1.0],
            slack: -1.0,
        };
        let (out, active) = project_core(&[1.0, 0.0], &slack_neg, &[0.0, 1.0]).unwrap();
        assert!(!active);
        assert_eq!(out, vec![1.0, 0.0]);

        // L = 2I: l_inv_grad = grad / 2; same output as the hand solution.
        let (out, active) = project_core(&[1.0, 0.0], &lin, &[0.0, 0.5]).unwrap();
        assert!(active);
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!((out[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent_and_lands_on_boundary() {
        let mut rng = derive_rng(32, &[2]);
        for _ in 0..20 {
            let step: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() - 0.5).collect();
            let grad: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() - 0.5).collect();
            let slack = rng.gen::<f64>() - 0.2;
            let lin = ConstraintLin {
                grad: grad.clone(),
                slack,
            };
            let (once, active) = project_core(&step, &lin, &grad).unwrap();
            if active {
                let boundary = dot(&grad, &once) + slack;
                assert!(boundary.abs() < 1e-10, "boundary residual {boundary}");
            }
            let (twice, again) = project_core(&once, &lin, &grad).unwrap();
            if active {
                assert!(!again || (dot(&grad, &once) + slack).abs() < 1e-10);
            }
            for (a, b) in once.iter().zip(&twice) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projection_with_zero_gradient_and_positive_slack_is_infeasible() {
        let lin = ConstraintLin {
            grad: vec![0.0, 0.0],
            slack: 0.5,
        };
        let err = project_core(&[1.0, 0.0], &lin, &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, OptimError::InfeasibleConstraint { .. }));
    }

    #[test]
    fn pure_restoration_composes_zero_reward_step_with_projection() {
        // g = 0 -> zero reward step; projection then moves along -l_inv_grad.
        let op = IdentityOp(2);
        let zero_step = trpo_step_core(&op, &[0.0, 0.0], 0.5, 10, 1e-14).unwrap();
        let lin = ConstraintLin {
            grad: vec![0.0, 2.0],
            slack: 1.0,
        };
        let (out, active) = project_core(&zero_step, &lin, &[0.0, 2.0]).unwrap();
        assert!(active);
        // coef = 1 / 4, step = -(1/4) * (0, 2) = (0, -0.5).
        assert!((out[0]).abs() < 1e-12);
        assert!((out[1] + 0.25 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn three_step_reduces_to_single_projection_when_near_constraint_inactive() {
        let step = [1.0, 0.0, 0.5];
        let near = ConstraintLin {
            grad: vec![1.0, 0.0, 0.0],
            slack: -10.0,
        };
        let cost = ConstraintLin {
            grad: vec![0.0, 1.0, 0.0],
            slack: 0.25,
        };
        let (combined, near_active, cost_active) =
            three_step_core(&step, &near, &near.grad.clone(), &cost, &cost.grad.clone()).unwrap();
        assert!(!near_active);
        assert!(cost_active);
        let (single, _) = project_core(&step, &cost, &cost.grad.clone()).unwrap();
        for (a, b) in combined.iter().zip(&single) {
            assert!((a - b).abs() < 1e-14);
        }

        // Both inactive -> unchanged reward step.
        let loose = ConstraintLin {
            grad: vec![0.0, 1.0, 0.0],
            slack: -5.0,
        };
        let (unchanged, na, ca) =
            three_step_core(&step, &near, &near.grad.clone(), &loose, &loose.grad.clone())
                .unwrap();
        assert!(!na && !ca);
        assert_eq!(unchanged, step.to_vec());
    }

    // ---- batch-level tests ----

    fn toy_batch(dim: usize, costs: &[f64], threshold: f64) -> RolloutBatch {
        let mut batch = RolloutBatch::default();
        let mut rng = derive_rng(77, &[5]);
        let steps: Vec<StepRecord> = costs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut pairs = [(i % dim, 1.0), ((i + 1) % dim, rng.gen::<f64>())];
                pairs.sort_by_key(|&(idx, _)| idx);
                StepRecord {
                    features: SparseVec::from_pairs(dim, pairs),
                    action: i % 4,
                    reward: (i as f64 * 0.7).sin(),
                    cost: c,
                }
            })
            .collect();
        let half = steps.len() / 2;
        let mut iter = steps.into_iter();
        let first: Vec<StepRecord> = iter.by_ref().take(half).collect();
        let second: Vec<StepRecord> = iter.collect();
        batch.push_episode(first, threshold);
        batch.push_episode(second, threshold);
        batch
    }

    #[test]
    fn zero_advantages_give_zero_surrogate_gradients() {
        let batch = toy_batch(4, &[0.0; 6], 1.0);
        let policy = Policy::new(PolicyConfig::linear(4));
        let zeros = vec![0.0; batch.num_steps()];
        let sg = surrogate_grads(
            policy.config(),
            policy.policy_block(),
            &batch,
            &zeros,
            &zeros,
        )
        .unwrap();
        assert!(sg.g.iter().all(|&v| v == 0.0));
        assert!(sg.a.iter().all(|&v| v == 0.0));
        // Costs all zero, threshold 1 -> slack -1 per episode.
        assert!((sg.b + 1.0).abs() < 1e-12);
    }

    #[test]
    fn slack_is_zero_at_the_constraint_boundary() {
        // Each episode accumulates cost exactly equal to its threshold.
        let batch = toy_batch(4, &[1.0, 0.0, 1.0, 0.5, 0.5, 1.0], 2.0);
        assert!((batch.mean_cost_slack()).abs() < 1e-12);
    }

    #[test]
    fn pcpo_with_slack_constraint_equals_plain_trpo() {
        // Thresholds far above any cost -> projection inactive.
        let batch = toy_batch(4, &[0.1, 0.0, 0.2, 0.0, 0.1, 0.0], 100.0);
        let cfg = TrustRegionConfig::default();
        let mut p1 = Policy::new(PolicyConfig::linear(4));
        let mut p2 = Policy::new(PolicyConfig::linear(4));
        let r1 = trpo_update(&mut p1, &batch, &cfg).unwrap();
        let r2 = pcpo_update(&mut p2, &batch, &cfg).unwrap();
        assert!(!r2.projection_active);
        assert!(!r2.recovery);
        for (a, b) in p1.policy_block().iter().zip(p2.policy_block()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((r1.mean_kl - r2.mean_kl).abs() < 1e-15);
    }

    #[test]
    fn penalized_update_with_zero_weight_equals_plain_trpo() {
        let batch = toy_batch(4, &[0.5, 0.0, 1.0, 0.0, 0.5, 0.5], 1.0);
        let cfg = TrustRegionConfig::default();
        let mut p1 = Policy::new(PolicyConfig::linear(4));
        let mut p2 = Policy::new(PolicyConfig::linear(4));
        trpo_update(&mut p1, &batch, &cfg).unwrap();
        penalized_trpo_update(&mut p2, &batch, 0.0, &cfg).unwrap();
        assert_eq!(p1.policy_block(), p2.policy_block());
    }

    #[test]
    fn penalized_update_reports_unshaped_returns() {
        let batch = toy_batch(4, &[1.0; 6], 0.0);
        let cfg = TrustRegionConfig::default();
        let mut p = Policy::new(PolicyConfig::linear(4));
        let report = penalized_trpo_update(&mut p, &batch, 5.0, &cfg).unwrap();
        assert!((report.j_r - batch.mean_episode_reward()).abs() < 1e-12);
        assert!((report.j_c - 3.0).abs() < 1e-12);
    }

    #[test]
    fn space_with_current_baseline_and_large_budget_equals_pcpo() {
        let batch = toy_batch(4, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 0.0);
        let cfg = TrustRegionConfig::default();
        let mut p1 = Policy::new(PolicyConfig::linear(4));
        let mut p2 = Policy::new(PolicyConfig::linear(4));
        let baseline = p2.policy_block().to_vec();
        let r1 = pcpo_update(&mut p1, &batch, &cfg).unwrap();
        let r2 = space_update(&mut p2, &batch, &baseline, 1e6, &cfg).unwrap();
        assert_eq!(r2.h_d, Some(1e6));
        for (a, b) in p1.policy_block().iter().zip(p2.policy_block()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((r1.mean_kl - r2.mean_kl).abs() < 1e-12);
    }

    #[test]
    fn update_h_d_examples() {
        assert_eq!(update_h_d(2.0, 2.0, 5.0, true), 5.0);
        assert_eq!(update_h_d(3.0, 2.0, 5.0, true), 15.0);
        assert_eq!(update_h_d(9.0, 2.0, 5.0, false), 5.0);
        // Never decreases.
        for jc in [0.0, 1.0, 5.0] {
            assert!(update_h_d(jc, 2.0, 5.0, true) >= 5.0);
        }
    }

    #[test]
    fn regressed_windowed_detects_cost_rise_and_reward_fall() {
        let flat = [1.0; 6];
        assert!(!regressed_windowed(&flat, &flat));
        // Too short.
        assert!(!regressed_windowed(&[1.0; 5], &[1.0; 5]));
        // Cost rose in the last window.
        let cost_rise = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert!(regressed_windowed(&flat, &cost_rise));
        // Reward fell in the last window.
        let reward_fall = [2.0, 2.0, 2.0, 1.0, 1.0, 1.0];
        assert!(regressed_windowed(&reward_fall, &flat));
        // Improvement in both -> not regressed.
        let reward_rise = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];
        let cost_fall = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        assert!(!regressed_windowed(&reward_rise, &cost_fall));
    }

    #[test]
    fn estimate_advantages_rejects_mismatched_feature_dims() {
        let mut batch = RolloutBatch::default();
        batch.push_episode(
            [StepRecord {
                features: SparseVec::from_pairs(7, [(0, 1.0)]),
                action: 0,
                reward: 1.0,
                cost: 0.0,
            }],
            0.0,
        );
        let mut policy = Policy::new(PolicyConfig::linear(4));
        let err = estimate_advantages(&mut policy, &batch, &TrustRegionConfig::default())
            .unwrap_err();
        assert!(matches!(err, OptimError::DimensionMismatch { .. }));
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        // Central-difference check of g against the surrogate objective
        // (1/N) sum log pi(a_t) * adv_t at fixed advantages.
        let batch = toy_batch(3, &[0.3, 0.0, 0.7, 0.0, 0.2, 0.1], 1.0);
        let config = PolicyConfig::linear(3);
        let mut rng = derive_rng(55, &[9]);
        let theta: Vec<f64> = (0..config.policy_dim())
            .map(|_| rng.gen::<f64>() - 0.5)
            .collect();
        let adv_r: Vec<f64> = (0..batch.num_steps())
            .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
            .collect();
        let adv_c: Vec<f64> = (0..batch.num_steps())
            .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
            .collect();
        let sg = surrogate_grads(&config, &theta, &batch, &adv_r, &adv_c).unwrap();
        let n = batch.num_steps() as f64;
        let e = batch.num_episodes() as f64;
        let objective = |th: &[f64], adv: &[f64], denom: f64| -> f64 {
            batch
                .steps
                .iter()
                .zip(adv)
                .map(|(s, &a)| config.forward(th, &s.features).log_prob(s.action) * a)
                .sum::<f64>()
                / denom
        };
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            let fd_g = (objective(&plus, &adv_r, n) - objective(&minus, &adv_r, n)) / (2.0 * h);
            let fd_a = (objective(&plus, &adv_c, e) - objective(&minus, &adv_c, e)) / (2.0 * h);
            assert!((sg.g[i] - fd_g).abs() < 1e-7, "g[{i}]: {} vs {fd_g}", sg.g[i]);
            assert!((sg.a[i] - fd_a).abs() < 1e-7, "a[{i}]: {} vs {fd_a}", sg.a[i]);
        }
    }

    #[test]
    fn kl_safeguard_halves_oversized_steps() {
        // A subsampled Fisher that misses the dominant state underestimates
        // curvature; the safeguard must clamp the sampled KL back toward the
        // trust region.
        let mut batch = RolloutBatch::default();
        batch.push_episode(
            [
                StepRecord {
                    features: SparseVec::from_pairs(2, [(0, 0.05)]),
                    action: 0,
                    reward: 1.0,
                    cost: 0.0,
                },
                StepRecord {
                    features: SparseVec::from_pairs(2, [(1, 12.0)]),
                    action: 1,
                    reward: -1.0,
                    cost: 0.0,
                },
            ],
            10.0,
        );
        let mut with_guard = Policy::new(PolicyConfig::linear(2));
        let cfg = TrustRegionConfig {
            delta: 0.01,
            fvp_subsample: 2,
            damping: 1e-8,
            cg_iters: 50,
            // Keep the value heads at zero so the advantages are the raw
            // returns (a two-parameter head would interpolate two states).
            value_fit: crate::policy::ValueFitConfig { ridge: 1e-6, iters: 0 },
            ..TrustRegionConfig::default()
        };
        let report = trpo_update(&mut with_guard, &batch, &cfg).unwrap();
        let mut unguarded_cfg = cfg.clone();
        unguarded_cfg.kl_safeguard = false;
        let mut without_guard = Policy::new(PolicyConfig::linear(2));
        let unguarded = trpo_update(&mut without_guard, &batch, &unguarded_cfg).unwrap();
        assert!(
            unguarded.mean_kl > 2.0 * cfg.delta,
            "test setup: unguarded KL {} should overshoot",
            unguarded.mean_kl
        );
        assert!(report.safeguard_halvings > 0);
        assert!(report.mean_kl <= 2.0 * cfg.delta || report.safeguard_halvings == 10);
    }
}
