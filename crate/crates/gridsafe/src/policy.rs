//! Policy and value-function parameterizations.
//!
//! The agent's policy is a softmax over the four movement actions, computed
//! from a feature encoding of the current observation together with the
//! constraint interpreter's outputs: the binary cost mask, the running budget
//! mask, and a one-hot embedding of the (floored) predicted threshold. The
//! default parameterization is linear in the features; an optional single
//! tanh hidden layer is available. Reward and cost value baselines are linear
//! heads over the same features, fitted by ridge-regularized least squares.
//!
//! The fusion baseline policy ("concatenate text with the observation")
//! shares the same softmax machinery over an observation ⊕ bag-of-words
//! encoding and never sees masks.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::{BudgetMask, Mask};
use crate::grid::{Observation, NUM_ACTIONS, WINDOW};
use crate::rng::derive_rng;
use crate::vecmath::{dot, ParamVector, SparseVec};

/// Number of entity kinds in the per-cell one-hot encoding.
pub const KINDS: usize = 8;
/// Flattened observation one-hot width: 49 cells x 8 kinds.
pub const OBS_FEATURES: usize = WINDOW * WINDOW * KINDS;
/// Thresholds 0..=5 get a one-hot embedding.
pub const THRESHOLD_BUCKETS: usize = 6;
/// Width of the mask-conditioned policy input.
pub const POLICY_INPUT_DIM: usize = OBS_FEATURES + 2 * WINDOW * WINDOW + THRESHOLD_BUCKETS;

/// Encodes an observation plus interpreter outputs into the policy's feature
/// vector: [obs one-hots | cost mask | budget mask | threshold one-hot].
pub fn encode_policy_input(
    obs: &Observation,
    mask: &Mask,
    budget: &BudgetMask,
    threshold: f64,
) -> SparseVec {
    let mut x = SparseVec::new(POLICY_INPUT_DIM);
    for (i, kind) in obs.cells().iter().enumerate() {
        x.push(i * KINDS + kind.index(), 1.0);
    }
    let mask_base = OBS_FEATURES;
    for i in 0..WINDOW * WINDOW {
        if mask.get_flat(i) {
            x.push(mask_base + i, 1.0);
        }
    }
    let budget_base = OBS_FEATURES + WINDOW * WINDOW;
    for (i, &b) in budget.cells().iter().enumerate() {
        if b != 0.0 {
            x.push(budget_base + i, b);
        }
    }
    let threshold_base = OBS_FEATURES + 2 * WINDOW * WINDOW;
    let bucket = (threshold.floor().max(0.0) as usize).min(THRESHOLD_BUCKETS - 1);
    x.push(threshold_base + bucket, 1.0);
    x
}

/// Encodes an observation plus a text feature vector for the fusion baseline:
/// [obs one-hots | text features]. The text vector is typically a normalized
/// bag-of-words produced by the interpreter vocabulary.
pub fn encode_fusion_input(obs: &Observation, text: &SparseVec) -> SparseVec {
    let mut x = SparseVec::new(OBS_FEATURES + text.dim());
    for (i, kind) in obs.cells().iter().enumerate() {
        x.push(i * KINDS + kind.index(), 1.0);
    }
    for (i, v) in text.iter() {
        x.push(OBS_FEATURES + i, v);
    }
    x
}

/// Categorical distribution over the four actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution {
    pub logits: [f64; NUM_ACTIONS],
    pub probs: [f64; NUM_ACTIONS],
}

impl ActionDistribution {
    /// Stable softmax.
    pub fn from_logits(logits: [f64; NUM_ACTIONS]) -> ActionDistribution {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = [0.0; NUM_ACTIONS];
        let mut sum = 0.0;
        for (p, &l) in probs.iter_mut().zip(&logits) {
            *p = (l - max).exp();
            sum += *p;
        }
        for p in probs.iter_mut() {
            *p /= sum;
        }
        ActionDistribution { logits, probs }
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.probs[action].ln()
    }

    /// Inverse-CDF sampling: a single uniform draw walks the cumulative
    /// probabilities in action order.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        for (a, &p) in self.probs.iter().enumerate() {
            cum += p;
            if u < cum {
                return a;
            }
        }
        NUM_ACTIONS - 1
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// KL(self || other).
    pub fn kl_to(&self, other: &ActionDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &q)| p * (p.ln() - q.ln()))
            .sum()
    }
}

/// Shape of the policy parameterization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub input_dim: usize,
    /// Width of the optional tanh hidden layer; `None` means linear.
    pub hidden: Option<usize>,
}

impl PolicyConfig {
    pub fn linear(input_dim: usize) -> PolicyConfig {
        PolicyConfig {
            input_dim,
            hidden: None,
        }
    }

    /// Number of policy parameters (excludes value heads).
    pub fn policy_dim(&self) -> usize {
        match self.hidden {
            None => NUM_ACTIONS * self.input_dim,
            Some(h) => h * self.input_dim + h + NUM_ACTIONS * h + NUM_ACTIONS,
        }
    }

    /// Action distribution under policy parameters `theta`.
    pub fn forward(&self, theta: &[f64], x: &SparseVec) -> ActionDistribution {
        debug_assert_eq!(theta.len(), self.policy_dim());
        debug_assert_eq!(x.dim(), self.input_dim);
        let mut logits = [0.0; NUM_ACTIONS];
        match self.hidden {
            None => {
                for (a, logit) in logits.iter_mut().enumerate() {
                    *logit = x.dot_dense(&theta[a * self.input_dim..(a + 1) * self.input_dim]);
                }
            }
            Some(h) => {
                let (w1, b1, w2, b2) = self.split_mlp(theta);
                for a in 0..NUM_ACTIONS {
                    logits[a] = b2[a];
                }
                for k in 0..h {
                    let z = (x.dot_dense(&w1[k * self.input_dim..(k + 1) * self.input_dim])
                        + b1[k])
                        .tanh();
                    for (a, logit) in logits.iter_mut().enumerate() {
                        *logit += w2[a * h + k] * z;
                    }
                }
            }
        }
        ActionDistribution::from_logits(logits)
    }

    /// Accumulates `coef * d log pi(action | x) / d theta` into `acc`.
    pub fn add_log_prob_grad(
        &self,
        theta: &[f64],
        x: &SparseVec,
        action: usize,
        coef: f64,
        acc: &mut [f64],
    ) {
        debug_assert_eq!(acc.len(), self.policy_dim());
        let dist = self.forward(theta, x);
        self.add_log_prob_grad_with(&dist, theta, x, action, coef, acc);
    }

    /// Same as [`Self::add_log_prob_grad`] with the forward pass supplied by
    /// the caller (the optimizer caches distributions per batch).
    pub fn add_log_prob_grad_with(
        &self,
        dist: &ActionDistribution,
        theta: &[f64],
        x: &SparseVec,
        action: usize,
        coef: f64,
        acc: &mut [f64],
    ) {
        let mut coefs = [0.0; NUM_ACTIONS];
        for (a, c) in coefs.iter_mut().enumerate() {
            *c = coef * (((a == action) as u8 as f64) - dist.probs[a]);
        }
        self.add_logit_grad(theta, x, &coefs, acc);
    }

    /// Accumulates `sum_a coefs[a] * d logits[a] / d theta` into `acc`,
    /// backpropagating arbitrary per-logit coefficients through the network.
    /// This is the shared core behind score and KL-divergence gradients.
    pub fn add_logit_grad(
        &self,
        theta: &[f64],
        x: &SparseVec,
        coefs: &[f64; NUM_ACTIONS],
        acc: &mut [f64],
    ) {
        match self.hidden {
            None => {
                for (a, &c) in coefs.iter().enumerate() {
                    if c != 0.0 {
                        let row = &mut acc[a * self.input_dim..(a + 1) * self.input_dim];
                        x.axpy_into(c, row);
                    }
                }
            }
            Some(h) => {
                let d = self.input_dim;
                let (w1, b1, w2, _) = self.split_mlp(theta);
                // Recompute hidden activations.
                let mut z = vec![0.0; h];
                for k in 0..h {
                    z[k] = (x.dot_dense(&w1[k * d..(k + 1) * d]) + b1[k]).tanh();
                }
                let (o_w1, o_b1, o_w2, o_b2) = self.mlp_offsets(h);
                for (a, &c) in coefs.iter().enumerate() {
                    acc[o_b2 + a] += c;
                    for k in 0..h {
                        acc[o_w2 + a * h + k] += c * z[k];
                    }
                }
                for k in 0..h {
                    let mut dz = 0.0;
                    for (a, &c) in coefs.iter().enumerate() {
                        dz += c * w2[a * h + k];
                    }
                    let dh = dz * (1.0 - z[k] * z[k]);
                    if dh != 0.0 {
                        acc[o_b1 + k] += dh;
                        let row = &mut acc[o_w1 + k * d..o_w1 + (k + 1) * d];
                        x.axpy_into(dh, row);
                    }
                }
            }
        }
    }

    fn mlp_offsets(&self, h: usize) -> (usize, usize, usize, usize) {
        let d = self.input_dim;
        let o_w1 = 0;
        let o_b1 = o_w1 + h * d;
        let o_w2 = o_b1 + h;
        let o_b2 = o_w2 + NUM_ACTIONS * h;
        (o_w1, o_b1, o_w2, o_b2)
    }

    fn split_mlp<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let h = self.hidden.expect("split_mlp on linear config");
        let (o_w1, o_b1, o_w2, o_b2) = self.mlp_offsets(h);
        (
            &theta[o_w1..o_b1],
            &theta[o_b1..o_w2],
            &theta[o_w2..o_b2],
            &theta[o_b2..o_b2 + NUM_ACTIONS],
        )
    }
}

/// Which value head an operation addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueHead {
    Reward,
    Cost,
}

impl ValueHead {
    fn segment_name(self) -> &'static str {
        match self {
            ValueHead::Reward => "v_reward",
            ValueHead::Cost => "v_cost",
        }
    }
}

/// Least-squares configuration for value fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFitConfig {
    /// Ridge regularization added to the normal equations.
    pub ridge: f64,
    /// Conjugate-gradient iterations (warm-started from the current head).
    pub iters: usize,
}

impl Default for ValueFitConfig {
    fn default() -> Self {
        ValueFitConfig {
            ridge: 1e-6,
            iters: 50,
        }
    }
}

/// Policy parameters plus reward/cost value heads over a shared feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    config: PolicyConfig,
    params: ParamVector,
}

/// File-format version for policy checkpoints.
const POLICY_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("parameter slice length {found} does not match policy dimension {expected}")]
    DimensionMismatch { found: usize, expected: usize },
}

#[derive(Serialize, Deserialize)]
struct PolicyCheckpoint {
    version: u32,
    policy: Policy,
}

impl Policy {
    /// Zero-initialized policy (uniform action distribution) with zero value
    /// heads. The policy parameter block occupies the front of the vector.
    pub fn new(config: PolicyConfig) -> Policy {
        let d = config.input_dim;
        let params = ParamVector::new(&[
            ("policy", config.policy_dim()),
            ("v_reward", d),
            ("v_cost", d),
        ]);
        Policy { config, params }
    }

    /// Randomizes the hidden-layer weights (required for a tanh hidden layer:
    /// an all-zero initialization has zero gradient). No-op for linear.
    pub fn init_hidden(&mut self, seed: u64) {
        let d = self.config.input_dim;
        if let Some(h) = self.config.hidden {
            let mut rng = derive_rng(seed, &[crate::grid::stream::INIT]);
            let w1_scale = 1.0 / (d as f64).sqrt();
            let theta = self.params.segment_mut("policy").unwrap();
            for v in theta[..h * d].iter_mut() {
                *v = w1_scale * (rng.gen::<f64>() * 2.0 - 1.0);
            }
            let o_w2 = h * d + h;
            for v in theta[o_w2..o_w2 + NUM_ACTIONS * h].iter_mut() {
                *v = 0.1 * (rng.gen::<f64>() * 2.0 - 1.0);
            }
        }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// The policy parameter block the optimizer updates.
    pub fn policy_block(&self) -> &[f64] {
        self.params.segment("policy").unwrap()
    }

    pub fn set_policy_block(&mut self, theta: &[f64]) -> Result<(), PolicyError> {
        let seg = self.params.segment_mut("policy").unwrap();
        if theta.len() != seg.len() {
            return Err(PolicyError::DimensionMismatch {
                found: theta.len(),
                expected: seg.len(),
            });
        }
        seg.copy_from_slice(theta);
        Ok(())
    }

    pub fn forward(&self, x: &SparseVec) -> ActionDistribution {
        self.config.forward(self.policy_block(), x)
    }

    pub fn value(&self, head: ValueHead, x: &SparseVec) -> f64 {
        x.dot_dense(self.params.segment(head.segment_name()).unwrap())
    }

    /// Fits a value head to `targets` by ridge least squares, solved with
    /// conjugate gradient on the normal equations and warm-started from the
    /// current head parameters.
    pub fn fit_value(
        &mut self,
        head: ValueHead,
        xs: &[&SparseVec],
        targets: &[f64],
        fit: &ValueFitConfig,
    ) {
        assert_eq!(xs.len(), targets.len());
        if xs.is_empty() {
            return;
        }
        let d = self.config.input_dim;
        let n = xs.len() as f64;
        // b = (1/N) X^T y
        let mut b = vec![0.0; d];
        for (x, &y) in xs.iter().zip(targets) {
            x.axpy_into(y / n, &mut b);
        }
        let apply = |v: &[f64], out: &mut Vec<f64>| {
            out.clear();
            out.resize(d, 0.0);
            for x in xs {
                let s = x.dot_dense(v) / n;
                x.axpy_into(s, out);
            }
            for (o, vi) in out.iter_mut().zip(v) {
                *o += fit.ridge * vi;
            }
        };

        // Conjugate gradient from the current parameters.
        let w = self.params.segment_mut(head.segment_name()).unwrap();
        let mut applied = Vec::new();
        apply(w, &mut applied);
        let mut r: Vec<f64> = b.iter().zip(&applied).map(|(bi, ai)| bi - ai).collect();
        let mut p = r.clone();
        let mut rs = dot(&r, &r);
        if rs == 0.0 {
            return;
        }
        for _ in 0..fit.iters {
            apply(&p, &mut applied);
            let denom = dot(&p, &applied);
            if denom <= 0.0 {
                break;
            }
            let alpha = rs / denom;
            for i in 0..d {
                w[i] += alpha * p[i];
                r[i] -= alpha * applied[i];
            }
            let rs_new = dot(&r, &r);
            if rs_new < 1e-24 {
                break;
            }
            let beta = rs_new / rs;
            rs = rs_new;
            for i in 0..d {
                p[i] = r[i] + beta * p[i];
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let checkpoint = PolicyCheckpoint {
            version: POLICY_CHECKPOINT_VERSION,
            policy: self.clone(),
        };
        let json = serde_json::to_string_pretty(&checkpoint)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Policy, PolicyError> {
        let text = fs::read_to_string(path)?;
        let checkpoint: PolicyCheckpoint = serde_json::from_str(&text)?;
        if checkpoint.version != POLICY_CHECKPOINT_VERSION {
            return Err(PolicyError::Version {
                found: checkpoint.version,
                expected: POLICY_CHECKPOINT_VERSION,
            });
        }
        Ok(checkpoint.policy)
    }
}
