//! Subcommand implementations. Every command writes its artifacts — and the
//! effective configuration — only under its resolved output directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use gridsafe::constraint::{parse_dsl, ConstraintSpec, TemplateBank};
use gridsafe::harness::{
    self, metrics_csv, parse_metrics_csv, write_training_log, AgentKind, BaselineKind,
    CostSourceConfig, DatasetManifest, MetricsRow, TrainedAgent,
};
use gridsafe::interpreter::Interpreter;

use crate::config::RunConfig;

fn ensure_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg
        .inputs
        .manifest
        .as_ref()
        .context("no manifest given (pass --manifest or set inputs.manifest)")?;
    DatasetManifest::read_jsonl(path)
        .with_context(|| format!("reading manifest {}", path.display()))
}

fn load_agent(cfg: &RunConfig) -> Result<TrainedAgent> {
    let path = cfg
        .inputs
        .agent
        .as_ref()
        .context("no agent given (pass --agent or set inputs.agent)")?;
    TrainedAgent::load(path).with_context(|| format!("reading agent {}", path.display()))
}

fn load_interpreter(cfg: &RunConfig) -> Result<Option<Interpreter>> {
    match &cfg.inputs.interpreter {
        None => Ok(None),
        Some(path) => Ok(Some(
            Interpreter::load(path)
                .with_context(|| format!("reading interpreter {}", path.display()))?,
        )),
    }
}

fn write_metrics(out: &Path, rows: &[MetricsRow]) -> Result<()> {
    let path = out.join("metrics.csv");
    std::fs::write(&path, metrics_csv(rows))
        .with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let path = out.join(name);
    let json = serde_json::to_string_pretty(value).context("serializing report")?;
    std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))
}

/// Builds the constraint pool the dataset section asks for.
fn build_pool(cfg: &RunConfig) -> Result<Vec<ConstraintSpec>> {
    let variants = cfg.dataset.parsed_variants()?;
    let pool: Vec<ConstraintSpec> = ConstraintSpec::default_pool()
        .into_iter()
        .filter(|s| variants.contains(&s.variant()))
        .filter(|s| cfg.dataset.threshold.map_or(true, |h| s.threshold() == h))
        .collect();
    if pool.is_empty() {
        bail!(
            "the requested variants/threshold leave an empty constraint pool \
             (note: relational and sequential constraints all have threshold 0)"
        );
    }
    Ok(pool)
}

/// Default metrics label for a trained run.
fn default_train_label(source: CostSourceConfig) -> &'static str {
    match source {
        CostSourceConfig::Interpreter => "masked",
        CostSourceConfig::OracleMask => "masked_oracle",
    }
}

pub fn gen_dataset(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let pool = build_pool(cfg)?;
    let (train, eval) = harness::gen_dataset(
        cfg.dataset.seed,
        cfg.dataset.train_maps,
        cfg.dataset.eval_maps,
        &pool,
    )?;
    train.write_jsonl(&out.join("train.jsonl"))?;
    eval.write_jsonl(&out.join("eval.jsonl"))?;
    cfg.echo(out)?;
    println!(
        "wrote {} train and {} eval tasks to {}",
        train.entries.len(),
        eval.entries.len(),
        out.display()
    );
    Ok(())
}

pub fn train_interpreter(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let manifest = load_manifest(cfg)?;
    let (interp, report) = harness::train_stage1(&manifest, &cfg.safety)?;
    interp.save(&out.join("interpreter.json"))?;
    write_json(out, "stage1_report.json", &report)?;
    cfg.echo(out)?;
    println!(
        "trained interpreter on {} examples (final mask loss {:.4}, threshold loss {:.4})",
        report.examples, report.final_mask_loss, report.final_threshold_loss
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path, algo: Option<&str>) -> Result<()> {
    ensure_out(out)?;
    let manifest = load_manifest(cfg)?;
    let pretrained = load_interpreter(cfg)?;
    let outcome = harness::safety_training(&manifest, &cfg.safety, pretrained.as_ref())?;
    outcome.agent.save(&out.join("agent.json"))?;
    if let Some(interp) = &outcome.interpreter {
        interp.save(&out.join("interpreter.json"))?;
    }
    if let Some(report) = &outcome.stage1_report {
        write_json(out, "stage1_report.json", report)?;
    }
    write_training_log(&out.join("log.jsonl"), &outcome.log)?;
    let eval_interp = pretrained.as_ref().or(outcome.interpreter.as_ref());
    let stats = harness::evaluate_agent(&outcome.agent, eval_interp, &manifest, &cfg.safety)?;
    let report = harness::report_episodes(&stats, &[cfg.safety.seed])?;
    let label = algo.unwrap_or(default_train_label(cfg.safety.cost_source));
    let row = MetricsRow::new(label, manifest.split.as_str(), cfg.safety.seed, &report);
    write_metrics(out, &[row])?;
    cfg.echo(out)?;
    println!(
        "{label}: J_R {:.3}, J_C {:.3}, violation excess {:.3} over {} episodes",
        report.j_r, report.j_c, report.delta_c, report.n_episodes
    );
    Ok(())
}

pub fn eval_transfer(cfg: &RunConfig, out: &Path, algo: Option<&str>) -> Result<()> {
    ensure_out(out)?;
    let manifest = load_manifest(cfg)?;
    let agent = load_agent(cfg)?;
    let interp = load_interpreter(cfg)?;
    let (report, tuned, log) = harness::eval_transfer(
        &agent,
        interp.as_ref(),
        &manifest,
        &cfg.safety,
        cfg.transfer.fine_tune_updates,
    )?;
    tuned.save(&out.join("agent.json"))?;
    write_training_log(&out.join("log.jsonl"), &log)?;
    let label = algo.unwrap_or(match &agent.kind {
        AgentKind::Masked { .. } => "masked",
        AgentKind::Fusion { .. } => "fusion",
    });
    let row = MetricsRow::new(label, manifest.split.as_str(), cfg.safety.seed, &report);
    write_metrics(out, &[row])?;
    cfg.echo(out)?;
    println!(
        "{label} transfer ({} fine-tune updates): J_R {:.3}, J_C {:.3}, violation excess {:.3}",
        cfg.transfer.fine_tune_updates, report.j_r, report.j_c, report.delta_c
    );
    Ok(())
}

pub fn eval_multi(cfg: &RunConfig, out: &Path, algo: Option<&str>) -> Result<()> {
    ensure_out(out)?;
    let manifest = load_manifest(cfg)?;
    let agent = load_agent(cfg)?;
    let interp = load_interpreter(cfg)?
        .context("multi-constraint evaluation needs --interpreter (mask predictions drive it)")?;
    if cfg.multi.constraints.len() < 2 {
        bail!("multi.constraints must list at least two DSL constraints (or pass --constraints)");
    }
    let bank = TemplateBank::default_bank();
    let mut specs = Vec::new();
    for dsl in &cfg.multi.constraints {
        let spec = parse_dsl(dsl).with_context(|| format!("parsing constraint '{dsl}'"))?;
        let template = bank.split_ids(spec.variant(), false)[0];
        let text = bank.render(&spec, template)?;
        specs.push((spec, text));
    }
    let report = harness::eval_multi(
        &agent,
        &interp,
        &manifest,
        &cfg.safety,
        &specs,
        cfg.multi.n_episodes,
    )?;
    let label = algo.unwrap_or("masked");
    let split = manifest.split.as_str();
    let mut rows = vec![MetricsRow::new(
        &format!("{label}_multi"),
        split,
        cfg.safety.seed,
        &report.aggregate,
    )];
    for (i, spec_report) in report.per_spec.iter().enumerate() {
        rows.push(MetricsRow::new(
            &format!("{label}_multi_{i}"),
            split,
            cfg.safety.seed,
            spec_report,
        ));
    }
    write_metrics(out, &rows)?;
    cfg.echo(out)?;
    println!(
        "{label} under {} constraints: J_R {:.3}, summed J_C {:.3}, violation excess {:.3}",
        specs.len(),
        report.aggregate.j_r,
        report.aggregate.j_c,
        report.aggregate.delta_c
    );
    Ok(())
}

pub fn baseline(cfg: &RunConfig, out: &Path, kind: BaselineKind) -> Result<()> {
    ensure_out(out)?;
    let manifest = load_manifest(cfg)?;
    let (report, agent, log) = harness::run_baseline(kind, &manifest, &cfg.safety)?;
    agent.save(&out.join("agent.json"))?;
    write_training_log(&out.join("log.jsonl"), &log)?;
    let row = MetricsRow::new(kind.name(), manifest.split.as_str(), cfg.safety.seed, &report);
    write_metrics(out, &[row])?;
    cfg.echo(out)?;
    println!(
        "{}: J_R {:.3}, J_C {:.3}, violation excess {:.3} over {} episodes",
        kind.name(),
        report.j_r,
        report.j_c,
        report.delta_c,
        report.n_episodes
    );
    Ok(())
}

pub const SUMMARY_HEADER: &str =
    "algo,split,h_C,runs,median_J_R,median_J_C,median_delta_C,mean_success_rate";

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Merges every `metrics.csv` under `in_dir` (recursively) into one table
/// with per-(algo, split, h_C) medians over seeds, ready for bar charts of
/// J_R and the violation excess per threshold.
pub fn report(in_dir: &Path, out_file: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_metrics_files(in_dir, &mut files)
        .with_context(|| format!("scanning {}", in_dir.display()))?;
    if files.is_empty() {
        bail!("no metrics.csv files found under {}", in_dir.display());
    }
    files.sort();
    let mut rows = Vec::new();
    for file in &files {
        let text = std::fs::read_to_string(file)
            .with_context(|| format!("reading {}", file.display()))?;
        rows.extend(
            parse_metrics_csv(&text).with_context(|| format!("parsing {}", file.display()))?,
        );
    }
    // Group by (algo, split, h_C), keying h_C through its printed form so
    // grouping matches the tables exactly.
    let mut groups: std::collections::BTreeMap<(String, String, String), Vec<MetricsRow>> =
        std::collections::BTreeMap::new();
    for row in rows {
        let key = (row.algo.clone(), row.split.clone(), row.h_c.to_string());
        groups.entry(key).or_default().push(row);
    }
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for ((algo, split, _), group) in groups {
        let mut j_r: Vec<f64> = group.iter().map(|r| r.j_r).collect();
        let mut j_c: Vec<f64> = group.iter().map(|r| r.j_c).collect();
        let mut delta: Vec<f64> = group.iter().map(|r| r.delta_c).collect();
        let mean_success = group.iter().map(|r| r.success_rate).sum::<f64>() / group.len() as f64;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            algo,
            split,
            group[0].h_c,
            group.len(),
            median(&mut j_r),
            median(&mut j_c),
            median(&mut delta),
            mean_success
        ));
    }
    if let Some(parent) = out_file.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(out_file, out).with_context(|| format!("writing {}", out_file.display()))?;
    println!(
        "merged {} metric file(s) into {}",
        files.len(),
        out_file.display()
    );
    Ok(())
}

fn collect_metrics_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_metrics_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.csv") {
            out.push(path);
        }
    }
    Ok(())
}
