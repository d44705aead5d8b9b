//! Dataset manifests: per-episode (map seed, constraint, surface text)
//! records split into a training set and an evaluation set with disjoint
//! template ids and disjoint map seeds.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{parse_dsl, ConstraintSpec, TemplateBank};
use crate::grid::{stream, RewardTable};
use crate::rng::{derive_rng, derive_seed};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// Which reward function episodes from a manifest use. The evaluation split
/// is bound to the transfer rewards (collecting the key is penalized).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTableId {
    Train,
    Eval,
}

impl RewardTableId {
    pub fn table(self, max_steps: u32) -> RewardTable {
        match self {
            RewardTableId::Train => RewardTable::train(max_steps),
            RewardTableId::Eval => RewardTable::eval(max_steps),
        }
    }
}

/// One manifest record, as stored on disk (one JSON object per line).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub map_seed: u64,
    pub dsl: String,
    pub template_id: usize,
    pub text: String,
}

/// A manifest entry with its constraint parsed, ready for episode rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedEntry {
    pub map_seed: u64,
    pub spec: ConstraintSpec,
    pub template_id: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: Split,
    pub reward_table_id: RewardTableId,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Checks structural soundness: non-empty, consistent split tags,
    /// parseable constraints, and the split-to-reward-table binding.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.entries.is_empty() {
            return Err(HarnessError::EmptyManifest);
        }
        let expected_table = match self.split {
            Split::Train => RewardTableId::Train,
            Split::Eval => RewardTableId::Eval,
        };
        if self.reward_table_id != expected_table {
            return Err(HarnessError::Invalid(format!(
                "{} manifest bound to the wrong reward table",
                self.split.as_str()
            )));
        }
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.split != self.split {
                return Err(HarnessError::Manifest {
                    line: i + 1,
                    message: format!(
                        "entry tagged {} inside a {} manifest",
                        entry.split.as_str(),
                        self.split.as_str()
                    ),
                });
            }
            parse_dsl(&entry.dsl).map_err(|e| HarnessError::Manifest {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Parses every entry's constraint.
    pub fn resolve(&self) -> Result<Vec<ResolvedEntry>, HarnessError> {
        self.validate()?;
        self.entries
            .iter()
            .map(|e| {
                Ok(ResolvedEntry {
                    map_seed: e.map_seed,
                    spec: parse_dsl(&e.dsl)?,
                    template_id: e.template_id,
                    text: e.text.clone(),
                })
            })
            .collect()
    }

    pub fn reward_table(&self, max_steps: u32) -> RewardTable {
        self.reward_table_id.table(max_steps)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), HarnessError> {
        let mut buf = String::new();
        for entry in &self.entries {
            buf.push_str(&serde_json::to_string(entry)?);
            buf.push('\n');
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<DatasetManifest, HarnessError> {
        let content = fs::read_to_string(path)?;
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(line).map_err(|e| HarnessError::Manifest {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if let Some(first) = entries.first() {
                if entry.split != first.split {
                    return Err(HarnessError::Manifest {
                        line: i + 1,
                        message: "mixed splits in one manifest file".to_string(),
                    });
                }
            }
            entries.push(entry);
        }
        let split = entries.first().ok_or(HarnessError::EmptyManifest)?.split;
        let manifest = DatasetManifest {
            split,
            reward_table_id: match split {
                Split::Train => RewardTableId::Train,
                Split::Eval => RewardTableId::Eval,
            },
            entries,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Generates the train and eval manifests: `n_train_maps` /
/// `n_eval_maps` entries, constraints drawn uniformly from `pool`, surface
/// text rendered through the built-in template bank with its training
/// templates for the train split and its held-out templates for the eval
/// split. Map seeds are disjoint across splits by construction (train seeds
/// even, eval seeds odd). Deterministic in `seed`.
pub fn gen_dataset(
    seed: u64,
    n_train_maps: usize,
    n_eval_maps: usize,
    pool: &[ConstraintSpec],
) -> Result<(DatasetManifest, DatasetManifest), HarnessError> {
    if pool.is_empty() {
        return Err(HarnessError::PoolTooSmall);
    }
    let bank = TemplateBank::default_bank();
    // Every variant in the pool must have templates on both sides of the
    // split, or one split could never phrase that constraint.
    for spec in pool {
        if bank.split_ids(spec.variant(), false).is_empty()
            || bank.split_ids(spec.variant(), true).is_empty()
        {
            return Err(HarnessError::PoolTooSmall);
        }
    }
    let train = build_manifest(seed, Split::Train, n_train_maps, pool, &bank)?;
    let eval = build_manifest(seed, Split::Eval, n_eval_maps, pool, &bank)?;
    Ok((train, eval))
}

fn build_manifest(
    seed: u64,
    split: Split,
    n: usize,
    pool: &[ConstraintSpec],
    bank: &TemplateBank,
) -> Result<DatasetManifest, HarnessError> {
    let (split_idx, parity) = match split {
        Split::Train => (0u64, 0u64),
        Split::Eval => (1u64, 1u64),
    };
    let mut rng = derive_rng(seed, &[stream::MAP_GEN, split_idx]);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let map_seed = (derive_seed(seed, &[stream::MAP_GEN, split_idx, i]) & !1) | parity;
        let spec = &pool[rng.gen_range(0..pool.len())];
        let ids = bank.split_ids(spec.variant(), split == Split::Eval);
        let template_id = ids[rng.gen_range(0..ids.len())];
        let text = bank.render(spec, template_id)?;
        entries.push(ManifestEntry {
            split,
            map_seed,
            dsl: spec.to_dsl(),
            template_id,
            text,
        });
    }
    let manifest = DatasetManifest {
        split,
        reward_table_id: match split {
            Split::Train => RewardTableId::Train,
            Split::Eval => RewardTableId::Eval,
        },
        entries,
    };
    manifest.validate()?;
    Ok(manifest)
}
