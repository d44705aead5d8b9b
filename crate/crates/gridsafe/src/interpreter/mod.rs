//! Constraint interpreter: maps constraint text plus the current observation
//! (and the episode's visited-entity memory) to a predicted cost mask over
//! the 7x7 window and a predicted scalar cost budget.
//!
//! The mask head scores each window cell with a bilinear form
//! `sigmoid(t^T W phi)` where `t` stacks two pooled views of the text's
//! token embeddings — a plain mean and a position-weighted mean — plus a
//! bias slot, and `phi` is the cell's feature vector: its own entity
//! one-hot, one-hots for every neighbor within Manhattan distance 2 (cells
//! beyond the window edge read as wall), the visited indicator for the three
//! cost entities, and a bias. The bilinear form lets the text select which
//! cell features matter — an additive encoding cannot represent
//! entity-conditioned masks at all. The position-weighted view breaks
//! bag-of-words symmetry: conditional phrasings mention the trigger and the
//! forbidden entity in a fixed order, and a pure mean would map the swapped
//! pair to the same vector even though their masks differ.
//!
//! The threshold head is a small tanh network over a separate mean-embedding
//! of the text; a purely linear bag-of-words head cannot express "the digit's
//! value when the phrasing is budgetary, zero otherwise", which is exactly
//! the target function here.
//!
//! Both heads train by stochastic gradient descent on hand-derived gradients
//! (binary cross-entropy per cell for the mask, squared error for the
//! threshold); see [`train`]. [`OracleInterpreter`] short-circuits both
//! predictions to the exact ground truth for ablations.

pub mod data;
pub mod text;
pub mod train;

pub use data::{collect_interpreter_data, ConstraintText, InterpreterExample};
pub use text::{tokenize, TokenVocab};
pub use train::{train_interpreter, TrainHyper, TrainReport};

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::{ground_truth_mask, ConstraintSpec, Mask};
use crate::grid::{EntityKind, Observation, WINDOW};
use crate::rng::derive_rng;
use crate::vecmath::{ParamVector, SparseVec};

/// Entity kinds per one-hot block.
const KINDS: usize = EntityKind::ALL.len();

/// Neighbor offsets within Manhattan distance 2 of a cell (excluding the
/// cell itself), in sorted order.
const RING_OFFSETS: [(i32, i32); 12] = [
    (-2, 0),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -2),
    (0, -1),
    (0, 1),
    (0, 2),
    (1, -1),
    (1, 0),
    (1, 1),
    (2, 0),
];

/// Per-cell feature width: self one-hot, ring one-hots, visited flags, bias.
pub const CELL_FEATURES: usize = KINDS + RING_OFFSETS.len() * KINDS + EntityKind::COSTS.len() + 1;

const VISITED_BASE: usize = KINDS + RING_OFFSETS.len() * KINDS;
const CELLS: usize = WINDOW * WINDOW;

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Format(#[from] serde_json::Error),
    #[error("dataset line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite {head} loss at epoch {epoch}")]
    NonFiniteLoss { head: &'static str, epoch: usize },
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("example does not decode: {0}")]
    BadExample(String),
}

/// Model-shape settings (training settings live in [`TrainHyper`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpreterConfig {
    /// Token-embedding width for both heads.
    pub emb_dim: usize,
    /// Hidden width of the threshold head.
    pub threshold_hidden: usize,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        InterpreterConfig {
            emb_dim: 16,
            threshold_hidden: 16,
        }
    }
}

/// A dataset example decoded into model-ready arrays (token ids, observation,
/// binary targets). Produced by [`Interpreter::prepare`].
#[derive(Debug, Clone)]
pub struct PreparedExample {
    ids: Vec<usize>,
    obs: Observation,
    visited: [bool; 3],
    mask_targets: [f64; CELLS],
    threshold: f64,
}

impl PreparedExample {
    pub fn threshold_target(&self) -> f64 {
        self.threshold
    }

    pub fn mask_targets(&self) -> &[f64; CELLS] {
        &self.mask_targets
    }
}

/// Trained (or zero-initialized) interpreter parameters plus the vocabulary
/// they were trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpreter {
    config: InterpreterConfig,
    vocab: TokenVocab,
    mask_params: ParamVector,
    threshold_params: ParamVector,
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct InterpreterCheckpoint {
    version: u32,
    interpreter: Interpreter,
}

impl Interpreter {
    /// Zero-parameter interpreter: every mask probability is exactly 0.5 and
    /// every threshold prediction exactly 0.
    pub fn new(config: InterpreterConfig, vocab: TokenVocab) -> Interpreter {
        let v = vocab.len();
        let e = config.emb_dim;
        let h = config.threshold_hidden;
        let mask_params =
            ParamVector::new(&[("emb", v * e), ("bilinear", (2 * e + 1) * CELL_FEATURES)]);
        let threshold_params = ParamVector::new(&[
            ("emb", v * e),
            ("w1", h * e),
            ("b1", h),
            ("w2", h),
            ("b2", 1),
        ]);
        Interpreter {
            config,
            vocab,
            mask_params,
            threshold_params,
        }
    }

    /// Randomizes the symmetry-breaking parameters (embeddings and the
    /// threshold head's weight matrices) ahead of training. The bilinear
    /// matrix and all biases stay zero, so predictions are unchanged until
    /// the first gradient step: an all-zero start is a saddle point for both
    /// heads (every embedding gradient is zero when the downstream weights
    /// are zero, and vice versa).
    ///
    /// The mask head's embeddings use `init_scale` directly: they enter a
    /// bilinear form, so the text-conditioned gradients scale with their
    /// magnitude and need O(1) values to train at a fixed step size. The
    /// threshold head's random parameters use a tenth of it — its tanh
    /// network memorizes the training texts when started large.
    pub fn init_random(&mut self, seed: u64, init_scale: f64) {
        let e = self.config.emb_dim;
        let threshold_scale = 0.1 * init_scale;
        let mut rng = derive_rng(seed, &[crate::grid::stream::INIT, 0]);
        for v in self.mask_params.segment_mut("emb").unwrap() {
            *v = init_scale * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        let mut rng = derive_rng(seed, &[crate::grid::stream::INIT, 1]);
        for v in self.threshold_params.segment_mut("emb").unwrap() {
            *v = threshold_scale * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        let w1_scale = 1.0 / (e as f64).sqrt();
        let mut rng = derive_rng(seed, &[crate::grid::stream::INIT, 2]);
        for v in self.threshold_params.segment_mut("w1").unwrap() {
            *v = w1_scale * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        let mut rng = derive_rng(seed, &[crate::grid::stream::INIT, 3]);
        for v in self.threshold_params.segment_mut("w2").unwrap() {
            *v = threshold_scale * (rng.gen::<f64>() * 2.0 - 1.0);
        }
    }

    pub fn config(&self) -> &InterpreterConfig {
        &self.config
    }

    pub fn vocab(&self) -> &TokenVocab {
        &self.vocab
    }

    pub fn mask_params(&self) -> &ParamVector {
        &self.mask_params
    }

    pub fn mask_params_mut(&mut self) -> &mut ParamVector {
        &mut self.mask_params
    }

    pub fn threshold_params(&self) -> &ParamVector {
        &self.threshold_params
    }

    pub fn threshold_params_mut(&mut self) -> &mut ParamVector {
        &mut self.threshold_params
    }

    /// Two pooled views of the token embeddings — the plain mean in slots
    /// `[0, e)` and a position-weighted mean (token at index `i` of `n`
    /// weighted by `(i + 1) / n`) in slots `[e, 2e)` — with a trailing bias
    /// slot. The weighted view makes token order observable, which a bag of
    /// words alone cannot provide.
    fn text_vector(&self, ids: &[usize], emb: &[f64]) -> Vec<f64> {
        let e = self.config.emb_dim;
        let mut t = vec![0.0; 2 * e + 1];
        if !ids.is_empty() {
            let inv = 1.0 / ids.len() as f64;
            for (pos, &id) in ids.iter().enumerate() {
                let pw = (pos as f64 + 1.0) * inv * inv;
                for (k, val) in emb[id * e..(id + 1) * e].iter().enumerate() {
                    t[k] += inv * val;
                    t[e + k] += pw * val;
                }
            }
        }
        t[2 * e] = 1.0;
        t
    }

    /// Per-cell mask probabilities for `text` at `obs` given which cost
    /// entities the episode has visited (row-major over the window).
    pub fn predict_mask_probs(
        &self,
        text: &str,
        obs: &Observation,
        visited: &[bool; 3],
    ) -> [f64; CELLS] {
        let ids = self.vocab.encode(text);
        let emb = self.mask_params.segment("emb").unwrap();
        let w = self.mask_params.segment("bilinear").unwrap();
        let t = self.text_vector(&ids, emb);
        // v = t^T W, one weight per cell feature.
        let mut v = vec![0.0; CELL_FEATURES];
        for (i, &ti) in t.iter().enumerate() {
            if ti != 0.0 {
                let row = &w[i * CELL_FEATURES..(i + 1) * CELL_FEATURES];
                for (vj, wj) in v.iter_mut().zip(row) {
                    *vj += ti * wj;
                }
            }
        }
        let mut probs = [0.0; CELLS];
        for r in 0..WINDOW {
            for c in 0..WINDOW {
                let phi = cell_features(obs, visited, r, c);
                let z = phi.dot_dense(&v);
                probs[r * WINDOW + c] = sigmoid(z);
            }
        }
        probs
    }

    /// Binarized mask: probability strictly above 0.5 marks the cell.
    pub fn predict_mask(&self, text: &str, obs: &Observation, visited: &[bool; 3]) -> Mask {
        let probs = self.predict_mask_probs(text, obs, visited);
        let mut mask = Mask::zero();
        for r in 0..WINDOW {
            for c in 0..WINDOW {
                mask.set(r, c, probs[r * WINDOW + c] > 0.5);
            }
        }
        mask
    }

    /// Scalar cost-budget prediction for `text` (unclamped; downstream
    /// integer use floors it).
    pub fn predict_threshold(&self, text: &str) -> f64 {
        let ids = self.vocab.encode(text);
        self.threshold_from_ids(&ids)
    }

    fn threshold_from_ids(&self, ids: &[usize]) -> f64 {
        let e = self.config.emb_dim;
        let h = self.config.threshold_hidden;
        let emb = self.threshold_params.segment("emb").unwrap();
        let w1 = self.threshold_params.segment("w1").unwrap();
        let b1 = self.threshold_params.segment("b1").unwrap();
        let w2 = self.threshold_params.segment("w2").unwrap();
        let b2 = self.threshold_params.segment("b2").unwrap();
        let mut mean = vec![0.0; e];
        if !ids.is_empty() {
            let inv = 1.0 / ids.len() as f64;
            for &id in ids {
                for (slot, val) in mean.iter_mut().zip(&emb[id * e..(id + 1) * e]) {
                    *slot += inv * val;
                }
            }
        }
        let mut out = b2[0];
        for k in 0..h {
            let pre: f64 = w1[k * e..(k + 1) * e]
                .iter()
                .zip(&mean)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + b1[k];
            out += w2[k] * pre.tanh();
        }
        out
    }

    /// Decodes a dataset example against this interpreter's vocabulary.
    pub fn prepare(&self, example: &InterpreterExample) -> Result<PreparedExample, InterpError> {
        let obs = Observation::from_compact_string(&example.obs)
            .map_err(|e| InterpError::BadExample(e.to_string()))?;
        let mask = Mask::from_bit_string(&example.mask)
            .ok_or_else(|| InterpError::BadExample(format!("bad mask bits: {}", example.mask)))?;
        let mut mask_targets = [0.0; CELLS];
        for (i, t) in mask_targets.iter_mut().enumerate() {
            *t = if mask.get_flat(i) { 1.0 } else { 0.0 };
        }
        Ok(PreparedExample {
            ids: self.vocab.encode(&example.text),
            obs,
            visited: example.visited,
            mask_targets,
            threshold: example.threshold,
        })
    }

    /// Per-example binary cross-entropy (summed over the window's cells)
    /// averaged over the batch, with its gradient in the layout of
    /// `mask_params`. Summing rather than averaging over cells keeps the
    /// gradient scale comparable to a single-output head, which matters
    /// because the step size is fixed.
    pub fn mask_loss_grad(
        &self,
        batch: &[PreparedExample],
    ) -> Result<(f64, Vec<f64>), InterpError> {
        if batch.is_empty() {
            return Err(InterpError::EmptyDataset);
        }
        let e = self.config.emb_dim;
        let emb = self.mask_params.segment("emb").unwrap();
        let w = self.mask_params.segment("bilinear").unwrap();
        let emb_len = emb.len();
        let mut grad = vec![0.0; self.mask_params.len()];
        let inv = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for ex in batch {
            let t = self.text_vector(&ex.ids, emb);
            let mut v = vec![0.0; CELL_FEATURES];
            for (i, &ti) in t.iter().enumerate() {
                if ti != 0.0 {
                    let row = &w[i * CELL_FEATURES..(i + 1) * CELL_FEATURES];
                    for (vj, wj) in v.iter_mut().zip(row) {
                        *vj += ti * wj;
                    }
                }
            }
            // Accumulate d(loss)/d(phi weights) over the 49 cells, then push
            // through the bilinear factorization once.
            let mut dphi = [0.0; CELL_FEATURES];
            for r in 0..WINDOW {
                for c in 0..WINDOW {
                    let y = ex.mask_targets[r * WINDOW + c];
                    let phi = cell_features(&ex.obs, &ex.visited, r, c);
                    let z = phi.dot_dense(&v);
                    loss += inv * bce_with_logit(z, y);
                    let dz = inv * (sigmoid(z) - y);
                    phi.axpy_into(dz, &mut dphi);
                }
            }
            // dW = t (outer) dphi; dt = W dphi.
            let gw = &mut grad[emb_len..];
            let mut dt = vec![0.0; 2 * e + 1];
            for (i, &ti) in t.iter().enumerate() {
                let row = &w[i * CELL_FEATURES..(i + 1) * CELL_FEATURES];
                let grow = &mut gw[i * CELL_FEATURES..(i + 1) * CELL_FEATURES];
                let mut acc = 0.0;
                for j in 0..CELL_FEATURES {
                    grow[j] += ti * dphi[j];
                    acc += row[j] * dphi[j];
                }
                dt[i] = acc;
            }
            if !ex.ids.is_empty() {
                let tok_inv = 1.0 / ex.ids.len() as f64;
                for (pos, &id) in ex.ids.iter().enumerate() {
                    let pw = (pos as f64 + 1.0) * tok_inv * tok_inv;
                    for (k, slot) in grad[id * e..(id + 1) * e].iter_mut().enumerate() {
                        *slot += tok_inv * dt[k] + pw * dt[e + k];
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(InterpError::NonFiniteLoss {
                head: "mask",
                epoch: 0,
            });
        }
        Ok((loss, grad))
    }

    /// Mean squared error of the threshold head over the batch, with its
    /// gradient in the layout of `threshold_params`.
    pub fn threshold_loss_grad(
        &self,
        batch: &[PreparedExample],
    ) -> Result<(f64, Vec<f64>), InterpError> {
        if batch.is_empty() {
            return Err(InterpError::EmptyDataset);
        }
        let e = self.config.emb_dim;
        let h = self.config.threshold_hidden;
        let emb = self.threshold_params.segment("emb").unwrap();
        let w1 = self.threshold_params.segment("w1").unwrap();
        let b1 = self.threshold_params.segment("b1").unwrap();
        let w2 = self.threshold_params.segment("w2").unwrap();
        let b2 = self.threshold_params.segment("b2").unwrap();
        let emb_len = emb.len();
        let o_w1 = emb_len;
        let o_b1 = o_w1 + h * e;
        let o_w2 = o_b1 + h;
        let o_b2 = o_w2 + h;
        let mut grad = vec![0.0; self.threshold_params.len()];
        let inv = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for ex in batch {
            let mut mean = vec![0.0; e];
            if !ex.ids.is_empty() {
                let tok_inv = 1.0 / ex.ids.len() as f64;
                for &id in &ex.ids {
                    for (slot, val) in mean.iter_mut().zip(&emb[id * e..(id + 1) * e]) {
                        *slot += tok_inv * val;
                    }
                }
            }
            let mut hidden = vec![0.0; h];
            let mut out = b2[0];
            for k in 0..h {
                let pre: f64 = w1[k * e..(k + 1) * e]
                    .iter()
                    .zip(&mean)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + b1[k];
                hidden[k] = pre.tanh();
                out += w2[k] * hidden[k];
            }
            let err = out - ex.threshold;
            loss += inv * err * err;
            let dy = inv * 2.0 * err;
            grad[o_b2] += dy;
            let mut dmean = vec![0.0; e];
            for k in 0..h {
                grad[o_w2 + k] += dy * hidden[k];
                let dpre = dy * w2[k] * (1.0 - hidden[k] * hidden[k]);
                grad[o_b1 + k] += dpre;
                for j in 0..e {
                    grad[o_w1 + k * e + j] += dpre * mean[j];
                    dmean[j] += dpre * w1[k * e + j];
                }
            }
            if !ex.ids.is_empty() {
                let tok_inv = 1.0 / ex.ids.len() as f64;
                for &id in &ex.ids {
                    for (slot, dv) in grad[id * e..(id + 1) * e].iter_mut().zip(&dmean) {
                        *slot += tok_inv * dv;
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(InterpError::NonFiniteLoss {
                head: "threshold",
                epoch: 0,
            });
        }
        Ok((loss, grad))
    }

    pub fn save(&self, path: &Path) -> Result<(), InterpError> {
        let checkpoint = InterpreterCheckpoint {
            version: CHECKPOINT_VERSION,
            interpreter: self.clone(),
        };
        let json = serde_json::to_string(&checkpoint)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Interpreter, InterpError> {
        let json = fs::read_to_string(path)?;
        let checkpoint: InterpreterCheckpoint = serde_json::from_str(&json)?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(InterpError::Version {
                found: checkpoint.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(checkpoint.interpreter)
    }
}

/// Exact-ground-truth stand-in for a trained interpreter (ablation mode).
#[derive(Debug, Clone)]
pub struct OracleInterpreter {
    spec: ConstraintSpec,
}

impl OracleInterpreter {
    pub fn new(spec: ConstraintSpec) -> OracleInterpreter {
        OracleInterpreter { spec }
    }

    pub fn spec(&self) -> &ConstraintSpec {
        &self.spec
    }

    /// Probabilities exactly 0 or 1, matching the ground-truth mask.
    pub fn predict_mask_probs(&self, obs: &Observation, visited: &[bool; 3]) -> [f64; CELLS] {
        let mask = self.predict_mask(obs, visited);
        let mut probs = [0.0; CELLS];
        for (i, p) in probs.iter_mut().enumerate() {
            *p = if mask.get_flat(i) { 1.0 } else { 0.0 };
        }
        probs
    }

    pub fn predict_mask(&self, obs: &Observation, visited: &[bool; 3]) -> Mask {
        ground_truth_mask(obs, &self.spec, &indicator_to_set(visited))
    }

    pub fn predict_threshold(&self) -> f64 {
        self.spec.threshold() as f64
    }
}

/// Visited-cost-entity indicator in `EntityKind::COSTS` order.
pub fn visited_indicator(visited: &BTreeSet<EntityKind>) -> [bool; 3] {
    let mut out = [false; 3];
    for (slot, kind) in out.iter_mut().zip(EntityKind::COSTS) {
        *slot = visited.contains(&kind);
    }
    out
}

fn indicator_to_set(indicator: &[bool; 3]) -> BTreeSet<EntityKind> {
    EntityKind::COSTS
        .iter()
        .zip(indicator)
        .filter(|(_, &v)| v)
        .map(|(&k, _)| k)
        .collect()
}

/// Feature vector for one window cell (sparse; at most 17 active features).
fn cell_features(obs: &Observation, visited: &[bool; 3], r: usize, c: usize) -> SparseVec {
    let mut pairs = Vec::with_capacity(17);
    pairs.push((obs.get(r, c).index(), 1.0));
    for (s, &(dr, dc)) in RING_OFFSETS.iter().enumerate() {
        let rr = r as i32 + dr;
        let cc = c as i32 + dc;
        let in_window =
            rr >= 0 && rr < WINDOW as i32 && cc >= 0 && cc < WINDOW as i32;
        let kind = if in_window {
            obs.get(rr as usize, cc as usize)
        } else {
            // Beyond the egocentric window everything reads as wall, same as
            // the observation's own padding convention.
            EntityKind::Wall
        };
        pairs.push((KINDS + s * KINDS + kind.index(), 1.0));
    }
    for (i, &flag) in visited.iter().enumerate() {
        if flag {
            pairs.push((VISITED_BASE + i, 1.0));
        }
    }
    pairs.push((CELL_FEATURES - 1, 1.0));
    SparseVec::from_pairs(CELL_FEATURES, pairs)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy from the logit:
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GenConfig, GridMap};

    fn tiny_interp(corpus: &[&str]) -> Interpreter {
        let vocab = TokenVocab::build(corpus.iter().copied());
        Interpreter::new(InterpreterConfig::default(), vocab)
    }

    fn some_observation() -> Observation {
        let map = GridMap::generate(7, &GenConfig::square(7, 2)).unwrap();
        let state = crate::grid::EpisodeState::new(map);
        state.observe()
    }

    #[test]
    fn untrained_interpreter_predicts_half_everywhere_and_zero_threshold() {
        let interp = tiny_interp(&["avoid lava entirely"]);
        let obs = some_observation();
        let probs = interp.predict_mask_probs("avoid lava entirely", &obs, &[false; 3]);
        assert!(probs.iter().all(|&p| p == 0.5));
        let mask = interp.predict_mask("avoid lava entirely", &obs, &[false; 3]);
        assert_eq!(mask.count(), 0);
        assert_eq!(interp.predict_threshold("avoid lava entirely"), 0.0);
    }

    #[test]
    fn cell_features_have_expected_active_slots() {
        let obs = some_observation();
        // Center cell: the agent stands there; self one-hot is whatever kind
        // the center holds, plus 12 ring slots, plus bias (no visited flags).
        let phi = cell_features(&obs, &[false; 3], 3, 3);
        assert_eq!(phi.nnz(), 1 + 12 + 1);
        // Corner cell: ring offsets fall outside and read as wall.
        let phi = cell_features(&obs, &[true, false, true], 0, 0);
        assert_eq!(phi.nnz(), 1 + 12 + 2 + 1);
        let dense = phi.to_dense();
        assert_eq!(dense[VISITED_BASE], 1.0);
        assert_eq!(dense[VISITED_BASE + 1], 0.0);
        assert_eq!(dense[VISITED_BASE + 2], 1.0);
        assert_eq!(dense[CELL_FEATURES - 1], 1.0);
        // Offset (-2, 0) from (0,0) is outside: its slot must read Wall.
        let wall_slot = KINDS + EntityKind::Wall.index();
        assert_eq!(dense[wall_slot], 1.0);
    }

    #[test]
    fn mask_gradient_matches_central_differences() {
        let corpus = [
            "do not step on lava more than 2 times",
            "after touching grass water becomes unsafe",
        ];
        let mut interp = tiny_interp(&corpus);
        interp.init_random(5, 0.1);
        // Give the bilinear block nonzero values too, so the check exercises
        // every term.
        {
            let mut rng = derive_rng(9, &[1]);
            for v in interp.mask_params_mut().segment_mut("bilinear").unwrap() {
                *v = 0.2 * (rng.gen::<f64>() * 2.0 - 1.0);
            }
        }
        let spec = ConstraintSpec::budgetary(EntityKind::Lava, 2).unwrap();
        let examples: Vec<InterpreterExample> = collect_interpreter_data(
            &GenConfig::square(7, 2),
            &[(
                spec,
                ConstraintText {
                    template_id: 0,
                    text: corpus[0].to_string(),
                },
            )],
            2,
            8,
            42,
        )
        .unwrap();
        let prepared: Vec<PreparedExample> =
            examples.iter().map(|e| interp.prepare(e).unwrap()).collect();
        let batch = &prepared[..6.min(prepared.len())];
        let (_, grad) = interp.mask_loss_grad(batch).unwrap();
        let h = 1e-5;
        // Spot-check a spread of coordinates (full sweep is slow).
        let dim = interp.mask_params().len();
        for i in (0..dim).step_by(97) {
            let orig = interp.mask_params().as_slice()[i];
            interp.mask_params_mut().as_mut_slice()[i] = orig + h;
            let (lp, _) = interp.mask_loss_grad(batch).unwrap();
            interp.mask_params_mut().as_mut_slice()[i] = orig - h;
            let (lm, _) = interp.mask_loss_grad(batch).unwrap();
            interp.mask_params_mut().as_mut_slice()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                (grad[i] - fd).abs() / denom < 1e-4,
                "coord {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn threshold_gradient_matches_central_differences() {
        let corpus = ["no more than 4 entries onto water", "keep away from grass"];
        let mut interp = tiny_interp(&corpus);
        interp.init_random(11, 0.1);
        let spec = ConstraintSpec::budgetary(EntityKind::Water, 4).unwrap();
        let examples: Vec<InterpreterExample> = collect_interpreter_data(
            &GenConfig::square(7, 2),
            &[(
                spec,
                ConstraintText {
                    template_id: 0,
                    text: corpus[0].to_string(),
                },
            )],
            1,
            6,
            43,
        )
        .unwrap();
        let prepared: Vec<PreparedExample> =
            examples.iter().map(|e| interp.prepare(e).unwrap()).collect();
        let (_, grad) = interp.threshold_loss_grad(&prepared).unwrap();
        let h = 1e-5;
        let dim = interp.threshold_params().len();
        for i in (0..dim).step_by(31) {
            let orig = interp.threshold_params().as_slice()[i];
            interp.threshold_params_mut().as_mut_slice()[i] = orig + h;
            let (lp, _) = interp.threshold_loss_grad(&prepared).unwrap();
            interp.threshold_params_mut().as_mut_slice()[i] = orig - h;
            let (lm, _) = interp.threshold_loss_grad(&prepared).unwrap();
            interp.threshold_params_mut().as_mut_slice()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                (grad[i] - fd).abs() / denom < 1e-4,
                "coord {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn oracle_interpreter_reproduces_ground_truth_exactly() {
        let spec = ConstraintSpec::sequential(EntityKind::Grass, EntityKind::Water, 0).unwrap();
        let oracle = OracleInterpreter::new(spec.clone());
        let obs = some_observation();
        // Before the trigger: mask must be all zero.
        let before = oracle.predict_mask(&obs, &[false, false, false]);
        assert_eq!(before.count(), 0);
        // After visiting grass, mask equals the ground truth.
        let after = oracle.predict_mask(&obs, &[false, false, true]);
        let mut set = BTreeSet::new();
        set.insert(EntityKind::Grass);
        assert_eq!(after, ground_truth_mask(&obs, &spec, &set));
        assert_eq!(oracle.predict_threshold(), 0.0);
        let budget = OracleInterpreter::new(ConstraintSpec::budgetary(EntityKind::Lava, 5).unwrap());
        assert_eq!(budget.predict_threshold(), 5.0);
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let mut interp = tiny_interp(&["some words here", "and more words"]);
        interp.init_random(3, 0.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("interp.json");
        interp.save(&path).unwrap();
        let loaded = Interpreter::load(&path).unwrap();
        assert_eq!(loaded, interp);
    }

    #[test]
    fn visited_indicator_follows_cost_kind_order() {
        let mut set = BTreeSet::new();
        set.insert(EntityKind::Water);
        set.insert(EntityKind::Empty);
        assert_eq!(visited_indicator(&set), [false, true, false]);
        assert_eq!(indicator_to_set(&[true, false, true]).len(), 2);
    }
}
