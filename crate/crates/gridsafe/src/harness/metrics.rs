//! Episode summaries, aggregate metric reports, the comma-separated results
//! table, and per-update training logs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Oracle-scored summary of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    /// Undiscounted reward sum.
    pub reward: f64,
    /// Undiscounted ground-truth cost sum.
    pub cost: f64,
    /// The episode constraint's true threshold.
    pub threshold: f64,
    /// Task success (all rewards collected; under transfer rewards, ball and
    /// box collected with the key avoided).
    pub success: bool,
    pub steps: usize,
}

/// Aggregate metrics over a set of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub j_r: f64,
    pub j_c: f64,
    /// The budget the excess was measured against.
    pub h_c: f64,
    /// `max(0, j_c - h_c)`.
    pub delta_c: f64,
    pub success_rate: f64,
    pub n_episodes: usize,
    pub seeds: Vec<u64>,
}

/// Means over episodes, with the violation excess measured against `h_c`.
pub fn compute_metrics(
    episodes: &[EpisodeStats],
    h_c: f64,
    seeds: &[u64],
) -> Result<MetricsReport, HarnessError> {
    if episodes.is_empty() {
        return Err(HarnessError::EmptyEpisodes);
    }
    let n = episodes.len() as f64;
    let j_r = episodes.iter().map(|e| e.reward).sum::<f64>() / n;
    let j_c = episodes.iter().map(|e| e.cost).sum::<f64>() / n;
    let successes = episodes.iter().filter(|e| e.success).count();
    Ok(MetricsReport {
        j_r,
        j_c,
        h_c,
        delta_c: (j_c - h_c).max(0.0),
        success_rate: successes as f64 / n,
        n_episodes: episodes.len(),
        seeds: seeds.to_vec(),
    })
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub algo: String,
    pub split: String,
    pub h_c: f64,
    pub seed: u64,
    pub j_r: f64,
    pub j_c: f64,
    pub delta_c: f64,
    pub success_rate: f64,
    pub episodes: usize,
}

impl MetricsRow {
    pub fn new(algo: &str, split: &str, seed: u64, report: &MetricsReport) -> MetricsRow {
        MetricsRow {
            algo: algo.to_string(),
            split: split.to_string(),
            h_c: report.h_c,
            seed,
            j_r: report.j_r,
            j_c: report.j_c,
            delta_c: report.delta_c,
            success_rate: report.success_rate,
            episodes: report.n_episodes,
        }
    }
}

pub const METRICS_HEADER: &str = "algo,split,h_C,seed,J_R,J_C,delta_C,success_rate,episodes";

/// Renders rows as a comma-separated table with a header. Floats print in
/// shortest-round-trip form, so identical runs yield identical bytes.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.algo, r.split, r.h_c, r.seed, r.j_r, r.j_c, r.delta_c, r.success_rate, r.episodes
        ));
    }
    out
}

/// Parses a table produced by [`metrics_csv`] (header required).
pub fn parse_metrics_csv(content: &str) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(HarnessError::MetricsFormat {
                line: 1,
                message: format!("expected header '{METRICS_HEADER}'"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(HarnessError::MetricsFormat {
                line: i + 1,
                message: format!("expected 9 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| HarnessError::MetricsFormat {
                line: i + 1,
                message: format!("bad {what}: {s}"),
            })
        };
        let parse_u = |s: &str, what: &str| {
            s.parse::<u64>().map_err(|_| HarnessError::MetricsFormat {
                line: i + 1,
                message: format!("bad {what}: {s}"),
            })
        };
        rows.push(MetricsRow {
            algo: fields[0].to_string(),
            split: fields[1].to_string(),
            h_c: parse_f(fields[2], "h_C")?,
            seed: parse_u(fields[3], "seed")?,
            j_r: parse_f(fields[4], "J_R")?,
            j_c: parse_f(fields[5], "J_C")?,
            delta_c: parse_f(fields[6], "delta_C")?,
            success_rate: parse_f(fields[7], "success_rate")?,
            episodes: parse_u(fields[8], "episodes")? as usize,
        });
    }
    Ok(rows)
}

/// One per-update line of a training log (stored as JSONL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRecord {
    pub iter: usize,
    /// Mean episode reward in the update's batch.
    pub j_r: f64,
    /// Mean episode cost of the stream the optimizer saw (predicted costs
    /// during safety training).
    pub j_c_train: f64,
    /// Mean ground-truth episode cost (reporting only).
    pub j_c_oracle: f64,
    /// `max(0, j_c_oracle - h_C)` against the batch's true thresholds.
    pub delta_c_oracle: f64,
    pub mean_kl: f64,
    pub projection_active: bool,
    pub recovery: bool,
    pub safeguard_halvings: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h_d: Option<f64>,
    pub wall_time_s: f64,
}

pub fn write_training_log(path: &Path, log: &[TrainingLogRecord]) -> Result<(), HarnessError> {
    let mut buf = String::new();
    for record in log {
        buf.push_str(&serde_json::to_string(record)?);
        buf.push('\n');
    }
    fs::write(path, buf)?;
    Ok(())
}
