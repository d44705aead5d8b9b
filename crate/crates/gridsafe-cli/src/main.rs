//! `gridsafe` — command-line driver for the constrained-gridworld pipeline:
//! dataset generation, interpreter and policy training, transfer and
//! multi-constraint evaluation, baselines, and report merging.
//!
//! Every subcommand reads a TOML config (all fields defaulted, unknown keys
//! rejected), applies flag overrides, echoes the effective config into its
//! output directory, and writes artifacts only there. The default output
//! root is `$GRIDSAFE_OUT_ROOT` (falling back to `runs/`).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use gridsafe::harness::BaselineKind;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "gridsafe", version, about = "Constrained-gridworld training pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every pipeline subcommand.
#[derive(Args)]
struct Common {
    /// TOML config file; missing sections take desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `$GRIDSAFE_OUT_ROOT/<subcommand>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides both the dataset seed and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-count hint; execution is currently single-threaded.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn effective(&self, subcommand: &str) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.dataset.seed = seed;
            cfg.safety.seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        if cfg.workers == 0 {
            bail!("--workers must be at least 1");
        }
        let out = match &self.out {
            Some(path) => path.clone(),
            None => {
                let root = std::env::var_os("GRIDSAFE_OUT_ROOT")
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("runs"));
                root.join(subcommand)
            }
        };
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/eval task manifests over disjoint map seeds and
    /// disjoint phrasing templates.
    GenDataset {
        #[command(flatten)]
        common: Common,
        /// Number of training tasks.
        #[arg(long)]
        train_maps: Option<usize>,
        /// Number of evaluation tasks.
        #[arg(long)]
        eval_maps: Option<usize>,
        /// Comma-separated constraint variants (budgetary,relational,sequential).
        #[arg(long)]
        variants: Option<String>,
        /// Keep only constraints with this exact threshold.
        #[arg(long)]
        threshold: Option<u32>,
    },
    /// Fit the constraint interpreter on labeled random-walk trajectories.
    TrainInterpreter {
        #[command(flatten)]
        common: Common,
        /// Training manifest (JSONL).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Two-stage safety training: interpreter, then constrained policy
    /// updates driven by its predictions.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training manifest (JSONL).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Reuse a saved interpreter instead of training one.
        #[arg(long)]
        interpreter: Option<PathBuf>,
        /// Policy updates to run.
        #[arg(long)]
        updates: Option<usize>,
        /// Cost stream for policy updates: `interpreter` or `oracle_mask`.
        #[arg(long)]
        cost_source: Option<String>,
        /// Label for the metrics table (default from the cost source).
        #[arg(long)]
        algo: Option<String>,
    },
    /// Adapt a trained agent to the evaluation reward function, with costs
    /// still predicted from text, then score it.
    EvalTransfer {
        #[command(flatten)]
        common: Common,
        /// Evaluation manifest (JSONL).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Agent checkpoint to adapt.
        #[arg(long)]
        agent: Option<PathBuf>,
        /// Interpreter checkpoint (required when fine-tuning a masked agent).
        #[arg(long)]
        interpreter: Option<PathBuf>,
        /// Policy updates on the new reward (0 = zero-shot).
        #[arg(long)]
        fine_tune_updates: Option<usize>,
        /// Label for the metrics table.
        #[arg(long)]
        algo: Option<String>,
    },
    /// Score an agent under several constraints imposed at once.
    EvalMulti {
        #[command(flatten)]
        common: Common,
        /// Manifest supplying maps and the reward function (JSONL).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Agent checkpoint.
        #[arg(long)]
        agent: Option<PathBuf>,
        /// Interpreter checkpoint.
        #[arg(long)]
        interpreter: Option<PathBuf>,
        /// Semicolon-separated constraint DSL strings (at least two).
        #[arg(long)]
        constraints: Option<String>,
        /// Episodes to score.
        #[arg(long)]
        episodes: Option<usize>,
        /// Label prefix for the metrics table.
        #[arg(long)]
        algo: Option<String>,
    },
    /// Train and score a comparison agent.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Training manifest (JSONL).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// One of random_walk, cf_trpo, cf_pcpo, penalized_trpo.
        #[arg(long)]
        kind: String,
    },
    /// Merge per-run metric tables into one summary table.
    Report {
        /// Directory scanned recursively for metrics.csv files.
        #[arg(long = "in")]
        in_dir: PathBuf,
        /// Summary CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset {
            common,
            train_maps,
            eval_maps,
            variants,
            threshold,
        } => {
            let (mut cfg, out) = common.effective("gen-dataset")?;
            if let Some(n) = train_maps {
                cfg.dataset.train_maps = n;
            }
            if let Some(n) = eval_maps {
                cfg.dataset.eval_maps = n;
            }
            if let Some(list) = variants {
                cfg.dataset.variants = list
                    .split(',')
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect();
            }
            if let Some(h) = threshold {
                cfg.dataset.threshold = Some(h);
            }
            commands::gen_dataset(&cfg, &out)
        }
        Command::TrainInterpreter { common, manifest } => {
            let (mut cfg, out) = common.effective("train-interpreter")?;
            if let Some(path) = manifest {
                cfg.inputs.manifest = Some(path);
            }
            commands::train_interpreter(&cfg, &out)
        }
        Command::Train {
            common,
            manifest,
            interpreter,
            updates,
            cost_source,
            algo,
        } => {
            let (mut cfg, out) = common.effective("train")?;
            if let Some(path) = manifest {
                cfg.inputs.manifest = Some(path);
            }
            if let Some(path) = interpreter {
                cfg.inputs.interpreter = Some(path);
            }
            if let Some(n) = updates {
                cfg.safety.stage2.updates = n;
            }
            if let Some(source) = cost_source {
                cfg.safety.cost_source = match source.as_str() {
                    "interpreter" => gridsafe::harness::CostSourceConfig::Interpreter,
                    "oracle_mask" => gridsafe::harness::CostSourceConfig::OracleMask,
                    other => bail!("unknown cost source '{other}' (expected interpreter or oracle_mask)"),
                };
            }
            commands::train(&cfg, &out, algo.as_deref())
        }
        Command::EvalTransfer {
            common,
            manifest,
            agent,
            interpreter,
            fine_tune_updates,
            algo,
        } => {
            let (mut cfg, out) = common.effective("eval-transfer")?;
            if let Some(path) = manifest {
                cfg.inputs.manifest = Some(path);
            }
            if let Some(path) = agent {
                cfg.inputs.agent = Some(path);
            }
            if let Some(path) = interpreter {
                cfg.inputs.interpreter = Some(path);
            }
            if let Some(n) = fine_tune_updates {
                cfg.transfer.fine_tune_updates = n;
            }
            commands::eval_transfer(&cfg, &out, algo.as_deref())
        }
        Command::EvalMulti {
            common,
            manifest,
            agent,
            interpreter,
            constraints,
            episodes,
            algo,
        } => {
            let (mut cfg, out) = common.effective("eval-multi")?;
            if let Some(path) = manifest {
                cfg.inputs.manifest = Some(path);
            }
            if let Some(path) = agent {
                cfg.inputs.agent = Some(path);
            }
            if let Some(path) = interpreter {
                cfg.inputs.interpreter = Some(path);
            }
            if let Some(list) = constraints {
                cfg.multi.constraints = list
                    .split(';')
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect();
            }
            if let Some(n) = episodes {
                cfg.multi.n_episodes = n;
            }
            commands::eval_multi(&cfg, &out, algo.as_deref())
        }
        Command::Baseline {
            common,
            manifest,
            kind,
        } => {
            let (mut cfg, out) = common.effective("baseline")?;
            if let Some(path) = manifest {
                cfg.inputs.manifest = Some(path);
            }
            let kind: BaselineKind = kind.parse().map_err(anyhow::Error::msg)?;
            commands::baseline(&cfg, &out, kind)
        }
        Command::Report { in_dir, out } => commands::report(&in_dir, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
