//! Interpreter training data: random-walk trajectories under randomly drawn
//! constraints, each step labeled with the exact ground-truth mask and the
//! constraint's threshold.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{ground_truth_mask, ConstraintSpec, Mask};
use crate::grid::{stream, Action, EpisodeState, GenConfig, GridMap, Observation, RewardTable};
use crate::rng::{derive_rng, derive_seed};

use super::{visited_indicator, InterpError};

/// A constraint's natural-language rendering plus which template produced it
/// (template ids partition into train and held-out sets).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintText {
    pub template_id: usize,
    pub text: String,
}

/// One labeled step of a data-collection trajectory. Stored one JSON object
/// per line; the observation is the 49-character window encoding and the
/// mask a 49-character bit string, both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpreterExample {
    /// Seed the trajectory's map was generated from.
    pub map_seed: u64,
    /// Machine-readable form of the constraint being rendered.
    pub dsl: String,
    /// Which template rendered the text.
    pub template_id: usize,
    /// Step index within the trajectory.
    pub timestep: usize,
    /// The rendered constraint text (model input).
    pub text: String,
    /// Compact window encoding (model input).
    pub obs: String,
    /// Visited indicator for the three cost entities (model input).
    pub visited: [bool; 3],
    /// Ground-truth mask bits (training target).
    pub mask: String,
    /// Ground-truth cost budget (training target).
    pub threshold: f64,
}

impl InterpreterExample {
    pub fn observation(&self) -> Result<Observation, InterpError> {
        Observation::from_compact_string(&self.obs)
            .map_err(|e| InterpError::BadExample(e.to_string()))
    }

    pub fn target_mask(&self) -> Result<Mask, InterpError> {
        Mask::from_bit_string(&self.mask)
            .ok_or_else(|| InterpError::BadExample(format!("bad mask bits: {}", self.mask)))
    }
}

/// Rolls out `n_trajectories` uniform-random walks, each on a fresh map with
/// a constraint drawn uniformly from `pool`, recording one example per step
/// (labeled before the action is taken). Fully determined by `seed`.
pub fn collect_interpreter_data(
    gen: &GenConfig,
    pool: &[(ConstraintSpec, ConstraintText)],
    n_trajectories: usize,
    trajectory_len: usize,
    seed: u64,
) -> Result<Vec<InterpreterExample>, InterpError> {
    if pool.is_empty() || n_trajectories == 0 || trajectory_len == 0 {
        return Err(InterpError::EmptyDataset);
    }
    let rewards = RewardTable::train(trajectory_len as u32);
    let mut out = Vec::with_capacity(n_trajectories * trajectory_len);
    for i in 0..n_trajectories as u64 {
        let map_seed = derive_seed(seed, &[stream::DATASET, i, 0]);
        let mut rng = derive_rng(seed, &[stream::DATASET, i, 1]);
        let (spec, text) = &pool[rng.gen_range(0..pool.len())];
        let map = GridMap::generate(map_seed, gen)
            .map_err(|e| InterpError::BadExample(e.to_string()))?;
        let mut state = EpisodeState::new(map);
        for t in 0..trajectory_len {
            let obs = state.observe();
            let mask = ground_truth_mask(&obs, spec, state.visited_kinds());
            out.push(InterpreterExample {
                map_seed,
                dsl: spec.to_dsl(),
                template_id: text.template_id,
                timestep: t,
                text: text.text.clone(),
                obs: obs.to_compact_string(),
                visited: visited_indicator(state.visited_kinds()),
                mask: mask.to_bit_string(),
                threshold: spec.threshold() as f64,
            });
            let action = Action::from_index(rng.gen_range(0..4)).unwrap();
            state
                .step(action, &rewards)
                .map_err(|e| InterpError::BadExample(e.to_string()))?;
            if state.is_done() {
                break;
            }
        }
    }
    if out.is_empty() {
        return Err(InterpError::EmptyDataset);
    }
    Ok(out)
}

/// Writes examples as one JSON object per line.
pub fn write_examples_jsonl(path: &Path, examples: &[InterpreterExample]) -> Result<(), InterpError> {
    let mut buf = String::new();
    for ex in examples {
        buf.push_str(&serde_json::to_string(ex)?);
        buf.push('\n');
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a JSONL example file, reporting the first malformed line.
pub fn read_examples_jsonl(path: &Path) -> Result<Vec<InterpreterExample>, InterpError> {
    let content = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex = serde_json::from_str(line).map_err(|e| InterpError::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    if out.is_empty() {
        return Err(InterpError::EmptyDataset);
    }
    Ok(out)
}
