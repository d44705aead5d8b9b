//! Minibatch SGD-with-momentum training for the interpreter, plus held-out
//! evaluation metrics.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::grid::stream;
use crate::rng::derive_rng;

use super::{
    Interpreter, InterpError, InterpreterConfig, InterpreterExample, PreparedExample, TokenVocab,
};

/// Training settings (model shape lives in [`InterpreterConfig`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Scale of the random symmetry-breaking initialization.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-3,
            epochs: 10,
            batch_size: 256,
            momentum: 0.9,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

/// Losses observed during training (per-epoch means weighted by batch size).
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub examples: usize,
    pub epochs_run: usize,
    pub final_mask_loss: f64,
    pub final_threshold_loss: f64,
    pub mask_loss_by_epoch: Vec<f64>,
    pub threshold_loss_by_epoch: Vec<f64>,
}

/// Held-out quality of a trained interpreter.
#[derive(Debug, Clone, Serialize)]
pub struct InterpEvalStats {
    /// Fraction of window cells whose binarized prediction matches the
    /// ground-truth mask, over all examples.
    pub cell_accuracy: f64,
    /// Fraction of examples whose entire 49-cell mask matches exactly.
    pub exact_mask_rate: f64,
    /// Mean squared error of the threshold prediction.
    pub threshold_mse: f64,
    pub examples: usize,
}

/// Builds the vocabulary from the dataset, initializes an interpreter, and
/// runs minibatch SGD with momentum on both heads. Fully determined by
/// `hyper.seed`.
pub fn train_interpreter(
    examples: &[InterpreterExample],
    config: InterpreterConfig,
    hyper: &TrainHyper,
) -> Result<(Interpreter, TrainReport), InterpError> {
    if examples.is_empty() {
        return Err(InterpError::EmptyDataset);
    }
    let vocab = TokenVocab::build(examples.iter().map(|e| e.text.as_str()));
    let mut interp = Interpreter::new(config, vocab);
    interp.init_random(hyper.seed, hyper.init_scale);
    let mut prepared = examples
        .iter()
        .map(|e| interp.prepare(e))
        .collect::<Result<Vec<PreparedExample>, _>>()?;

    let mut mask_vel = vec![0.0; interp.mask_params().len()];
    let mut threshold_vel = vec![0.0; interp.threshold_params().len()];
    let mut mask_curve = Vec::with_capacity(hyper.epochs);
    let mut threshold_curve = Vec::with_capacity(hyper.epochs);
    let batch_size = hyper.batch_size.max(1);

    for epoch in 0..hyper.epochs {
        let mut rng = derive_rng(hyper.seed, &[stream::SHUFFLE, epoch as u64]);
        prepared.shuffle(&mut rng);
        let mut mask_sum = 0.0;
        let mut threshold_sum = 0.0;
        for batch in prepared.chunks(batch_size) {
            let (mask_loss, mask_grad) =
                interp.mask_loss_grad(batch).map_err(|e| at_epoch(e, epoch))?;
            let (threshold_loss, threshold_grad) = interp
                .threshold_loss_grad(batch)
                .map_err(|e| at_epoch(e, epoch))?;
            mask_sum += mask_loss * batch.len() as f64;
            threshold_sum += threshold_loss * batch.len() as f64;
            momentum_step(
                interp.mask_params_mut().as_mut_slice(),
                &mut mask_vel,
                &mask_grad,
                hyper,
            );
            momentum_step(
                interp.threshold_params_mut().as_mut_slice(),
                &mut threshold_vel,
                &threshold_grad,
                hyper,
            );
        }
        mask_curve.push(mask_sum / prepared.len() as f64);
        threshold_curve.push(threshold_sum / prepared.len() as f64);
    }

    let report = TrainReport {
        examples: prepared.len(),
        epochs_run: hyper.epochs,
        final_mask_loss: mask_curve.last().copied().unwrap_or(f64::NAN),
        final_threshold_loss: threshold_curve.last().copied().unwrap_or(f64::NAN),
        mask_loss_by_epoch: mask_curve,
        threshold_loss_by_epoch: threshold_curve,
    };
    Ok((interp, report))
}

fn momentum_step(params: &mut [f64], velocity: &mut [f64], grad: &[f64], hyper: &TrainHyper) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = hyper.momentum * *v - hyper.lr * g;
        *p += *v;
    }
}

fn at_epoch(err: InterpError, epoch: usize) -> InterpError {
    match err {
        InterpError::NonFiniteLoss { head, .. } => InterpError::NonFiniteLoss { head, epoch },
        other => other,
    }
}

/// Scores an interpreter against labeled examples (typically held out from
/// training).
pub fn evaluate_interpreter(
    interp: &Interpreter,
    examples: &[InterpreterExample],
) -> Result<InterpEvalStats, InterpError> {
    if examples.is_empty() {
        return Err(InterpError::EmptyDataset);
    }
    let mut cell_hits = 0usize;
    let mut exact = 0usize;
    let mut sq_err = 0.0;
    for ex in examples {
        let obs = ex.observation()?;
        let target = ex.target_mask()?;
        let predicted = interp.predict_mask(&ex.text, &obs, &ex.visited);
        let mut all = true;
        for i in 0..crate::grid::WINDOW * crate::grid::WINDOW {
            if predicted.get_flat(i) == target.get_flat(i) {
                cell_hits += 1;
            } else {
                all = false;
            }
        }
        if all {
            exact += 1;
        }
        let err = interp.predict_threshold(&ex.text) - ex.threshold;
        sq_err += err * err;
    }
    let cells = examples.len() * crate::grid::WINDOW * crate::grid::WINDOW;
    Ok(InterpEvalStats {
        cell_accuracy: cell_hits as f64 / cells as f64,
        exact_mask_rate: exact as f64 / examples.len() as f64,
        threshold_mse: sq_err / examples.len() as f64,
        examples: examples.len(),
    })
}
