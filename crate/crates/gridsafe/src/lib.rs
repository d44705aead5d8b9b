//! Safe reinforcement learning on grid worlds with natural-language cost
//! constraints.
//!
//! The pipeline has two stages. Stage 1 trains a constraint interpreter that
//! reads a free-text safety instruction and predicts, for each observation,
//! which visible cells are unsafe (a cost mask) and how many violations are
//! tolerated (a threshold). Stage 2 trains a policy with projection-based
//! constrained policy optimization, using only the interpreter's predictions
//! as the cost signal; ground-truth costs are reserved for final reporting.
//!
//! Module map:
//! - [`grid`]: the grid-world environment (maps, episodes, observations)
//! - [`constraint`]: constraint expressions, parsing, cost semantics, masks
//! - [`interpreter`]: the text-to-(mask, threshold) interpreter and training
//! - [`policy`]: softmax policies and value baselines
//! - [`safeopt`]: advantage estimation and trust-region/projection updates
//! - [`harness`]: dataset manifests, training loops, evaluation, metrics
//! - [`vecmath`]: parameter vectors and sparse/dense helpers
//! - [`rng`]: deterministic seed derivation

pub mod constraint;
pub mod grid;
pub mod harness;
pub mod interpreter;
pub mod policy;
pub mod rng;
pub mod safeopt;
pub mod vecmath;
