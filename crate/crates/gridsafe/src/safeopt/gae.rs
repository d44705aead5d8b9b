//! Generalized advantage estimation.

/// Discounted return targets for one episode (terminal value zero).
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Generalized advantage estimates for one episode.
///
/// `values[t]` is the baseline prediction for the state visited at step `t`;
/// the value after the final step is taken to be zero (episodes in a batch
/// are complete: they ended by collection or by the step limit). Advantages
/// follow the usual backward recursion over one-step temporal differences
/// with discount `gamma` and mixing parameter `lambda`.
pub fn gae_episode(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    let t = rewards.len();
    let mut adv = vec![0.0; t];
    let mut acc = 0.0;
    for i in (0..t).rev() {
        let next_value = if i + 1 < t { values[i + 1] } else { 0.0 };
        let delta = rewards[i] + gamma * next_value - values[i];
        acc = delta + gamma * lambda * acc;
        adv[i] = acc;
    }
    adv
}
