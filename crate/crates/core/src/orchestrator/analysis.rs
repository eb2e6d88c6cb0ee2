//! Post-hoc analysis of stored run directories.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{delta_path, read_records, ExperimentConfig, CONFIG_FILE, DELTAS_DIR};
use crate::error::{Error, Result};
use crate::metrics::{activation_set, mean_off_diagonal, overlap_matrix, DeltaReport};
use crate::params::read_checkpoint;

/// Segment analysed when none is named: the first trunk layer's weights.
pub const DEFAULT_ANALYSIS_SEGMENT: &str = "trunk.0.weight";
pub const DELTA_REPORT_FILE: &str = "delta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOverlap {
    pub round: usize,
    pub matrix: Vec<Vec<f64>>,
    pub mean_off_diagonal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub q: f64,
    /// Layout segment the activation sets were computed over, or `all`.
    pub segment: String,
    pub rounds: Vec<RoundOverlap>,
}

/// Top-`q` activation sets of every client's stored update and their
/// pairwise Jaccard overlap, for each listed round. Writes
/// `overlap_r<round>.csv` into `run_dir`.
///
/// `segment = None` uses [`DEFAULT_ANALYSIS_SEGMENT`] when the layout has
/// it and the whole vector otherwise; `Some("all")` forces the whole vector.
pub fn analyze_masks(run_dir: &Path, q: f64, rounds: &[usize], segment: Option<&str>) -> Result<OverlapReport> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("q must lie in (0, 1], got {q}")));
    }
    if !run_dir.join(DELTAS_DIR).is_dir() {
        return Err(Error::Analysis(format!(
            "{} has no stored client updates; rerun the experiment with store_deltas=true",
            run_dir.display()
        )));
    }
    let config = ExperimentConfig::load(run_dir.join(CONFIG_FILE))?;
    let clients = config.clients.len();
    let mut out = Vec::with_capacity(rounds.len());
    let mut used_segment = String::new();
    for &round in rounds {
        let mut sets = Vec::with_capacity(clients);
        for c in 0..clients {
            let path = delta_path(run_dir, round, c);
            if !path.exists() {
                return Err(Error::Analysis(format!(
                    "missing stored update {}; was round {round} run with store_deltas=true?",
                    path.display()
                )));
            }
            let delta = read_checkpoint(&path)?;
            let (name, values) = match segment {
                Some("all") => ("all".to_string(), delta.values()),
                Some(name) => (name.to_string(), delta.segment_slice(name)?),
                None => match delta.segment_slice(DEFAULT_ANALYSIS_SEGMENT) {
                    Ok(v) => (DEFAULT_ANALYSIS_SEGMENT.to_string(), v),
                    Err(_) => ("all".to_string(), delta.values()),
                },
            };
            used_segment = name;
            sets.push(activation_set(values, q)?);
        }
        let matrix = overlap_matrix(&sets)?;
        let csv_path = run_dir.join(format!("overlap_r{round}.csv"));
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Analysis(e.to_string()))?;
        let mut header = vec!["client".to_string()];
        header.extend((0..clients).map(|c| format!("c{c}")));
        w.write_record(&header).map_err(|e| Error::Analysis(e.to_string()))?;
        for (i, row) in matrix.iter().enumerate() {
            let mut cells = vec![format!("c{i}")];
            cells.extend(row.iter().map(f64::to_string));
            w.write_record(&cells).map_err(|e| Error::Analysis(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        out.push(RoundOverlap {
            round,
            mean_off_diagonal: mean_off_diagonal(&matrix),
            matrix,
        });
    }
    Ok(OverlapReport { q, segment: used_segment, rounds: out })
}

/// Relative gain of `enhanced_dir`'s final validation metrics over
/// `base_dir`'s. The two configs must agree once decoupling and PCGrad are
/// stripped. Writes `delta.json` into `enhanced_dir`.
pub fn delta_report(base_dir: &Path, enhanced_dir: &Path) -> Result<DeltaReport> {
    let base_cfg = ExperimentConfig::load(base_dir.join(CONFIG_FILE))?;
    let enh_cfg = ExperimentConfig::load(enhanced_dir.join(CONFIG_FILE))?;
    if base_cfg.pairing_hash() != enh_cfg.pairing_hash() {
        return Err(Error::Config(format!(
            "{} and {} are not comparable: configs differ beyond the aggregation add-ons",
            base_dir.display(),
            enhanced_dir.display()
        )));
    }
    let last = |dir: &Path| -> Result<_> {
        read_records(dir)?
            .pop()
            .ok_or_else(|| Error::Analysis(format!("{} has no round records", dir.display())))
    };
    let (b, e) = (last(base_dir)?, last(enhanced_dir)?);
    let defs = enh_cfg.metric_defs();
    let mut names = Vec::new();
    let mut base = Vec::new();
    let mut enhanced = Vec::new();
    for d in &defs {
        let get = |r: &super::RoundRecord| {
            r.per_task_val_metrics
                .get(&d.name)
                .copied()
                .ok_or_else(|| Error::Analysis(format!("metric `{}` missing", d.name)))
        };
        names.push(d.name.clone());
        base.push(get(&b)?);
        enhanced.push(get(&e)?);
    }
    let alphas: Vec<f64> = defs.iter().map(|d| d.direction.alpha()).collect();
    let report = DeltaReport::compute(Some(&names), &base, &enhanced, &alphas)?;
    let path = enhanced_dir.join(DELTA_REPORT_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
