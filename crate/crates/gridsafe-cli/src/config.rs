//! Run configuration: a TOML file with one section per pipeline stage.
//! Every field has a desk-scale default, unknown keys are rejected, and the
//! effective config (defaults + file + flag overrides) is echoed into the
//! output directory so a run can be reproduced from its artifacts alone.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gridsafe::constraint::Variant;
use gridsafe::harness::SafetyConfig;

/// Top-level configuration for every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker-count hint; execution is currently single-threaded, the value
    /// is validated and recorded for forward compatibility.
    pub workers: usize,
    pub dataset: DatasetConfig,
    pub safety: SafetyConfig,
    pub transfer: TransferConfig,
    pub multi: MultiConfig,
    pub inputs: InputsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            workers: 1,
            dataset: DatasetConfig::default(),
            safety: SafetyConfig::default(),
            transfer: TransferConfig::default(),
            multi: MultiConfig::default(),
            inputs: InputsConfig::default(),
        }
    }
}

/// Manifest-generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub train_maps: usize,
    pub eval_maps: usize,
    /// Constraint variants to include: any of `budgetary`, `relational`,
    /// `sequential`.
    pub variants: Vec<String>,
    /// Restrict the pool to constraints with this exact threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u32>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            train_maps: 200,
            eval_maps: 50,
            variants: vec![
                "budgetary".to_string(),
                "relational".to_string(),
                "sequential".to_string(),
            ],
            threshold: None,
        }
    }
}

impl DatasetConfig {
    pub fn parsed_variants(&self) -> Result<Vec<Variant>> {
        let mut out = Vec::new();
        for name in &self.variants {
            let v = match name.as_str() {
                "budgetary" => Variant::Budgetary,
                "relational" => Variant::Relational,
                "sequential" => Variant::Sequential,
                other => bail!(
                    "unknown constraint variant '{other}' (expected budgetary, relational, or sequential)"
                ),
            };
            if !out.contains(&v) {
                out.push(v);
            }
        }
        if out.is_empty() {
            bail!("dataset.variants must name at least one constraint variant");
        }
        Ok(out)
    }
}

/// Transfer-evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// Policy updates on the new reward function (0 = zero-shot).
    pub fine_tune_updates: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            fine_tune_updates: 50,
        }
    }
}

/// Multi-constraint evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiConfig {
    pub n_episodes: usize,
    /// Constraints to impose simultaneously, written in the constraint DSL.
    pub constraints: Vec<String>,
}

impl Default for MultiConfig {
    fn default() -> Self {
        MultiConfig {
            n_episodes: 200,
            constraints: Vec::new(),
        }
    }
}

/// Input artifact paths, so the echoed config names everything a rerun needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interpreter: Option<PathBuf>,
}

impl RunConfig {
    /// Loads the file if given, otherwise starts from defaults.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config file {}", p.display()))
            }
        }
    }

    /// Writes the effective configuration into the output directory.
    pub fn echo(&self, out_dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing effective config")?;
        let path = out_dir.join("config.toml");
        std::fs::write(&path, text)
            .with_context(|| format!("writing effective config {}", path.display()))?;
        Ok(())
    }
}
