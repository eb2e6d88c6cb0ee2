//! Multi-run batteries: the selection-ratio sweep and the ablation set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_records, run_experiment, ExperimentConfig, RoundRecord, RunOptions, CONFIG_FILE};
use crate::aggregate::{DeaConfig, DeaVariant};
use crate::error::{Error, Result};
use crate::metrics::DeltaReport;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.json";
pub const ABLATION_FILE: &str = "ablation.csv";

fn final_scores(config: &ExperimentConfig, records: &[RoundRecord]) -> Result<Vec<f64>> {
    let last = records
        .last()
        .ok_or_else(|| Error::Analysis("run produced no round records".into()))?;
    config
        .metric_defs()
        .iter()
        .map(|m| {
            last.per_task_val_metrics
                .get(&m.name)
                .copied()
                .ok_or_else(|| Error::Analysis(format!("metric `{}` missing from records", m.name)))
        })
        .collect()
}

fn delta_vs(config: &ExperimentConfig, base: &[f64], enhanced: &[f64]) -> Result<DeltaReport> {
    let names: Vec<String> = config.metric_defs().into_iter().map(|m| m.name).collect();
    DeltaReport::compute(Some(&names), base, enhanced, &config.alphas())
}

fn sub_config(config: &ExperimentConfig, dea: DeaConfig, dir: PathBuf) -> ExperimentConfig {
    let mut c = config.clone();
    c.policy.dea = dea;
    c.out_dir = dir;
    c
}

/// Runs the base (decoupling off) configuration in `dir`, or reuses a
/// completed run already there with the identical config.
fn base_records(config: &ExperimentConfig, dir: &Path, opts: RunOptions) -> Result<Vec<RoundRecord>> {
    let mut base = config.base_variant();
    base.out_dir = dir.to_path_buf();
    if let Ok(existing) = ExperimentConfig::load(dir.join(CONFIG_FILE)) {
        if existing.config_hash() == base.config_hash() {
            if let Ok(records) = read_records(dir) {
                if records.len() == base.rounds && dir.join(super::CHECKPOINT_FILE).exists() {
                    return Ok(records);
                }
            }
        }
    }
    Ok(run_experiment(&base, opts)?.records)
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub metrics: Vec<f64>,
    pub delta_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metric_names: Vec<String>,
    pub base_metrics: Vec<f64>,
    pub rows: Vec<SweepRow>,
    /// The largest Δ sits strictly inside the grid (not at either end).
    pub interior_max: bool,
    pub argmax_rho: f64,
}

/// Index of the first maximum.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One full run per selection ratio in `grid` (plus a base run), all with
/// the same seeds. Writes `sweep.csv` and `sweep_summary.json` to
/// `config.out_dir` and each run under `rho_<ρ>/`.
pub fn sweep_rho(config: &ExperimentConfig, grid: &[f64], opts: RunOptions) -> Result<SweepReport> {
    config.validate()?;
    if grid.is_empty() {
        return Err(Error::Config("rho grid is empty".into()));
    }
    if let Some(r) = grid.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::Config(format!("grid value {r} not in (0, 1]")));
    }
    let labels: Vec<String> = grid.iter().map(|r| format!("rho_{r:.3}")).collect();
    let mut seen = labels.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != labels.len() {
        return Err(Error::Config("rho grid contains duplicate values".into()));
    }

    let root = &config.out_dir;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let base = base_records(config, &root.join("base"), opts)?;
    let base_scores = final_scores(config, &base)?;

    let template = if config.policy.dea.enabled {
        config.policy.dea.clone()
    } else {
        DeaConfig::full(1.0)
    };
    let mut rows = Vec::with_capacity(grid.len());
    for (&rho, label) in grid.iter().zip(&labels) {
        let dea = DeaConfig { enabled: true, rho, ..template.clone() };
        let run = run_experiment(&sub_config(config, dea, root.join(label)), opts)?;
        let scores = final_scores(config, &run.records)?;
        let delta = delta_vs(config, &base_scores, &scores)?.delta_percent;
        rows.push(SweepRow { rho, metrics: scores, delta_percent: delta });
    }

    let deltas: Vec<f64> = rows.iter().map(|r| r.delta_percent).collect();
    let best = argmax(&deltas);
    let report = SweepReport {
        metric_names: config.metric_defs().into_iter().map(|m| m.name).collect(),
        base_metrics: base_scores,
        interior_max: best != 0 && best != rows.len() - 1,
        argmax_rho: rows[best].rho,
        rows,
    };

    let mut header = vec!["rho".to_string()];
    header.extend(report.metric_names.iter().cloned());
    header.push("delta_percent".into());
    let table: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.rho.to_string()];
            cells.extend(r.metrics.iter().map(f64::to_string));
            cells.push(r.delta_percent.to_string());
            cells
        })
        .collect();
    write_table(&root.join(SWEEP_FILE), &header, &table)?;
    let summary = root.join(SWEEP_SUMMARY_FILE);
    std::fs::write(&summary, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(|e| Error::io(&summary, e))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metrics: Vec<f64>,
    pub delta_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rho: f64,
    pub metric_names: Vec<String>,
    /// `base` first, then the four decoupling variants.
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn delta(&self, variant: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.delta_percent)
    }
}

/// Base run plus full decoupling and its three ablations (smallest-magnitude
/// mask, no rescaling, random mask) at the config's ρ, identical seeds.
/// Writes `ablation.csv` to `config.out_dir`.
pub fn run_ablation(config: &ExperimentConfig, opts: RunOptions) -> Result<AblationReport> {
    config.validate()?;
    let root = &config.out_dir;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let rho = config.policy.dea.rho;
    let base = base_records(config, &root.join("base"), opts)?;
    let base_scores = final_scores(config, &base)?;
    let mut rows = vec![AblationRow {
        variant: "base".into(),
        metrics: base_scores.clone(),
        delta_percent: 0.0,
    }];
    for v in DeaVariant::ALL {
        let dea = DeaConfig {
            scope: config.policy.dea.scope,
            exact_fraction: config.policy.dea.exact_fraction,
            random_seed: config.policy.dea.random_seed,
            ..DeaConfig::variant(v, rho)
        };
        let run = run_experiment(&sub_config(config, dea, root.join(v.label())), opts)?;
        let scores = final_scores(config, &run.records)?;
        let delta = delta_vs(config, &base_scores, &scores)?.delta_percent;
        rows.push(AblationRow { variant: v.label().into(), metrics: scores, delta_percent: delta });
    }
    let report = AblationReport {
        rho,
        metric_names: config.metric_defs().into_iter().map(|m| m.name).collect(),
        rows,
    };
    let mut header = vec!["variant".to_string(), "rho".to_string()];
    header.extend(report.metric_names.iter().cloned());
    header.push("delta_percent".into());
    let table: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.variant.clone(), rho.to_string()];
            cells.extend(r.metrics.iter().map(f64::to_string));
            cells.push(r.delta_percent.to_string());
            cells
        })
        .collect();
    write_table(&root.join(ABLATION_FILE), &header, &table)?;
    Ok(report)
}
