//! Damped Fisher-vector products for the categorical policy, matrix-free.

use crate::policy::{ActionDistribution, PolicyConfig};
use crate::vecmath::SparseVec;

use super::cg::LinearOperator;

/// Matrix-free `(F + damping I) v` over a batch of states.
///
/// For the linear-softmax family the per-sample Fisher has the closed form
/// `(diag(pi) - pi pi^T) (x) x x^T` (expectation over actions taken
/// analytically). With a hidden layer, the empirical Fisher built from score
/// outer products at the sampled actions is used instead. `stride` applies
/// the product over every `stride`-th sample, a standard cost reduction for
/// large batches.
pub struct FisherOp<'a> {
    config: &'a PolicyConfig,
    theta: &'a [f64],
    features: Vec<&'a SparseVec>,
    actions: Vec<usize>,
    dists: Vec<ActionDistribution>,
    damping: f64,
    stride: usize,
}

impl<'a> FisherOp<'a> {
    pub fn new(
        config: &'a PolicyConfig,
        theta: &'a [f64],
        features: impl IntoIterator<Item = &'a SparseVec>,
        actions: impl IntoIterator<Item = usize>,
        damping: f64,
        stride: usize,
    ) -> FisherOp<'a> {
        let stride = stride.max(1);
        let all_features: Vec<&SparseVec> = features.into_iter().collect();
        let all_actions: Vec<usize> = actions.into_iter().collect();
        debug_assert_eq!(all_features.len(), all_actions.len());
        let features: Vec<&SparseVec> = all_features.iter().step_by(stride).copied().collect();
        let actions: Vec<usize> = all_actions.iter().step_by(stride).copied().collect();
        let dists = features
            .iter()
            .map(|x| config.forward(theta, x))
            .collect();
        FisherOp {
            config,
            theta,
            features,
            actions,
            dists,
            damping,
            stride,
        }
    }

    /// Number of samples the product averages over.
    pub fn samples_used(&self) -> usize {
        self.features.len()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }
}

impl LinearOperator for FisherOp<'_> {
    fn dim(&self) -> usize {
        self.config.policy_dim()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let p = self.config.policy_dim();
        debug_assert_eq!(v.len(), p);
        let mut out = vec![0.0; p];
        let n = self.features.len().max(1) as f64;
        match self.config.hidden {
            None => {
                let d = self.config.input_dim;
                for (x, dist) in self.features.iter().zip(&self.dists) {
                    let mut t = [0.0; 4];
                    for (a, ta) in t.iter_mut().enumerate() {
                        *ta = x.dot_dense(&v[a * d..(a + 1) * d]);
                    }
                    let mean: f64 = dist.probs.iter().zip(&t).map(|(p, ta)| p * ta).sum();
                    for a in 0..4 {
                        let u = dist.probs[a] * (t[a] - mean);
                        if u != 0.0 {
                            x.axpy_into(u / n, &mut out[a * d..(a + 1) * d]);
                        }
                    }
                }
            }
            Some(_) => {
                let mut score = vec![0.0; p];
                for ((x, &action), dist) in
                    self.features.iter().zip(&self.actions).zip(&self.dists)
                {
                    score.iter_mut().for_each(|s| *s = 0.0);
                    self.config
                        .add_log_prob_grad_with(dist, self.theta, x, action, 1.0, &mut score);
                    let c: f64 = score.iter().zip(v).map(|(s, vi)| s * vi).sum();
                    if c != 0.0 {
                        for (o, s) in out.iter_mut().zip(&score) {
                            *o += c * s / n;
                        }
                    }
                }
            }
        }
        for (o, vi) in out.iter_mut().zip(v) {
            *o += self.damping * vi;
        }
        out
    }
}
