//! Experiment driver: broadcast, local training, aggregation, logging.
//!
//! A run directory contains
//! - `config.json` (the experiment config as run)
//! - `metrics.jsonl` (one [`RoundRecord`] per line)
//! - `timing.csv` (wall-clock per round; kept out of the JSONL so that log
//!   is byte-identical across reruns)
//! - `final.ckpt`
//! - `deltas/r<round>_c<client>.ckpt` when `store_deltas` is set

mod analysis;
mod batteries;
mod config;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, MaskStats};
use crate::client::{local_train, ClientUpdate, TrainContext};
use crate::data::{gen_synthetic_task, load_csv, split, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{task_metric, MetricDef};
use crate::model::{forward, init_params, LossKind};
use crate::params::{write_checkpoint, ParamVector};
use crate::seed::derive_seed;

pub use analysis::{analyze_masks, delta_report, OverlapReport, RoundOverlap, DEFAULT_ANALYSIS_SEGMENT};
pub use batteries::{run_ablation, sweep_rho, AblationReport, AblationRow, SweepReport, SweepRow};
pub use config::{metric_name, ClientSpec, CsvTask, ExperimentConfig};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const TIMING_FILE: &str = "timing.csv";
pub const DELTAS_DIR: &str = "deltas";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for client training; `None` uses rayon's default.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub per_task_val_metrics: BTreeMap<String, f64>,
    /// Keyed by client id.
    pub train_losses: BTreeMap<usize, f64>,
    pub mask_stats: Vec<MaskStats>,
    /// Hex digest of the global parameters after this round.
    pub global_checksum: String,
    #[serde(skip)]
    pub wall_ms: u64,
}

struct PreparedClient {
    client_id: usize,
    task_id: usize,
    train: Dataset,
}

/// A validated config with its datasets materialized.
pub struct Experiment {
    config: ExperimentConfig,
    clients: Vec<PreparedClient>,
    /// Validation data indexed by task id.
    val: Vec<Dataset>,
    metrics: Vec<MetricDef>,
    pool: Option<rayon::ThreadPool>,
}

#[derive(Debug, Clone)]
pub struct ExperimentState {
    pub theta: ParamVector,
    /// Rounds completed so far.
    pub round: usize,
    pub records: Vec<RoundRecord>,
}

fn adapt_targets(data: Dataset, loss: LossKind) -> Result<Dataset> {
    match loss {
        LossKind::Bce => data.with_binary_targets(),
        _ => Ok(data),
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig, opts: RunOptions) -> Result<Self> {
        config.validate()?;
        let num_tasks = config.model.num_tasks();
        let mut train_sets: Vec<Option<Dataset>> = vec![None; num_tasks];
        let mut val_sets: Vec<Option<Dataset>> = vec![None; num_tasks];

        let mut full: Vec<Dataset> = Vec::with_capacity(num_tasks);
        for t in &config.tasks {
            full.push(gen_synthetic_task(t, config.model.input_dim)?);
        }
        for c in &config.csv_tasks {
            let d = load_csv(&c.path, &c.schema)?;
            if d.input_dim() != config.model.input_dim {
                return Err(Error::Config(format!(
                    "{} has {} input columns but the model expects {}",
                    c.path.display(),
                    d.input_dim(),
                    config.model.input_dim
                )));
            }
            full.push(d);
        }
        for d in full {
            let head = config.model.head(d.task_id)?;
            let d = adapt_targets(d, head.loss)?;
            if d.targets.ncols() != head.output_dim {
                return Err(Error::Config(format!(
                    "task {} has {} target columns but its head has {} outputs",
                    d.task_id,
                    d.targets.ncols(),
                    head.output_dim
                )));
            }
            let (train, val) = split(&d, config.val_fraction, derive_seed(&[config.seed, 0x5B]))?;
            let val = if val.is_empty() { train.clone() } else { val };
            let t = d.task_id;
            train_sets[t] = Some(train);
            val_sets[t] = Some(val);
        }

        let clients = config
            .clients
            .iter()
            .enumerate()
            .map(|(client_id, c)| {
                let train = train_sets[c.task_id].as_ref().expect("validated task");
                let train = match c.n_samples {
                    Some(n) => train.truncated(n),
                    None => train.clone(),
                };
                PreparedClient { client_id, task_id: c.task_id, train }
            })
            .collect();
        let pool = match opts.threads {
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?,
            ),
            None => None,
        };
        Ok(Experiment {
            metrics: config.metric_defs(),
            config,
            clients,
            val: val_sets.into_iter().map(|v| v.expect("every task has data")).collect(),
            pool,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn metric_defs(&self) -> &[MetricDef] {
        &self.metrics
    }

    pub fn initial_state(&self) -> Result<ExperimentState> {
        Ok(ExperimentState {
            theta: init_params(&self.config.model, self.config.seed)?,
            round: 0,
            records: Vec::new(),
        })
    }

    /// Validation metric of every task under `theta`, keyed by metric name.
    pub fn evaluate(&self, theta: &ParamVector) -> Result<BTreeMap<String, f64>> {
        self.metrics
            .iter()
            .zip(&self.val)
            .map(|(def, val)| {
                let out = forward(&self.config.model, theta, val.inputs.view(), val.task_id)?;
                Ok((def.name.clone(), task_metric(out.view(), val.targets.view(), def.kind)?))
            })
            .collect()
    }

    fn train_clients(&self, theta: &ParamVector, round: usize) -> Result<Vec<ClientUpdate>> {
        let cfg = &self.config;
        let training = cfg.local_training();
        let work = || {
            self.clients
                .par_iter()
                .map(|c| {
                    let ctx = TrainContext {
                        experiment_seed: cfg.seed,
                        client_id: c.client_id,
                        round,
                    };
                    local_train(&cfg.model, theta, &c.train, c.task_id, &cfg.optimizer, &training, ctx)
                        .map_err(|e| match e {
                            Error::Numerical(m) => Error::Numerical(format!(
                                "round {round}, client {}: {m}",
                                c.client_id
                            )),
                            other => other,
                        })
                })
                .collect::<Result<Vec<_>>>()
        };
        match &self.pool {
            Some(pool) => pool.install(work),
            None => work(),
        }
    }

    /// One communication round. Every client starts from the same `θ`; the
    /// updates are reduced in client-id order. Returns the raw updates.
    pub fn run_round(&self, state: &mut ExperimentState) -> Result<Vec<ClientUpdate>> {
        let started = Instant::now();
        let round = state.round + 1;
        let updates = self.train_clients(&state.theta, round)?;
        let round_seed = derive_seed(&[self.config.seed, round as u64]);
        let (theta, mask_stats) = aggregate(&state.theta, &updates, &self.config.policy, round_seed)
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("round {round}, aggregation: {m}")),
                other => other,
            })?;
        let record = RoundRecord {
            round,
            per_task_val_metrics: self.evaluate(&theta)?,
            train_losses: updates.iter().map(|u| (u.client_id, u.train_loss)).collect(),
            mask_stats,
            global_checksum: format!("{:016x}", theta.checksum()),
            wall_ms: started.elapsed().as_millis() as u64,
        };
        state.theta = theta;
        state.round = round;
        state.records.push(record);
        Ok(updates)
    }
}

/// Held for the lifetime of a run; removes the lock file on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::io(
                        &path,
                        std::io::Error::new(e.kind(), "experiment directory is locked by another run"),
                    )
                } else {
                    Error::io(&path, e)
                }
            })?;
        Ok(DirLock(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_params: ParamVector,
    pub records: Vec<RoundRecord>,
    pub dir: PathBuf,
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_line(w: &mut impl Write, path: &Path, line: &str) -> Result<()> {
    w.write_all(line.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

pub fn delta_path(run_dir: &Path, round: usize, client_id: usize) -> PathBuf {
    run_dir.join(DELTAS_DIR).join(format!("r{round}_c{client_id}.ckpt"))
}

/// Runs every round and writes the run directory at `config.out_dir`.
///
/// The directory is created and locked before any training starts, so an
/// unwritable location fails fast with an I/O error.
pub fn run_experiment(config: &ExperimentConfig, opts: RunOptions) -> Result<RunOutput> {
    config.validate()?;
    let dir = config.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let _lock = DirLock::acquire(&dir)?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_json_pretty()).map_err(|e| Error::io(&config_path, e))?;
    if config.store_deltas {
        let d = dir.join(DELTAS_DIR);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics = create_file(&metrics_path)?;
    let timing_path = dir.join(TIMING_FILE);
    let mut timing = create_file(&timing_path)?;
    write_line(&mut timing, &timing_path, "round,wall_ms")?;

    let experiment = Experiment::new(config.clone(), opts)?;
    let mut state = experiment.initial_state()?;
    for _ in 0..config.rounds {
        let updates = experiment.run_round(&mut state)?;
        let record = state.records.last().expect("round appended a record");
        let line = serde_json::to_string(record).expect("record serializes");
        write_line(&mut metrics, &metrics_path, &line)?;
        write_line(&mut timing, &timing_path, &format!("{},{}", record.round, record.wall_ms))?;
        if config.store_deltas {
            for u in &updates {
                write_checkpoint(delta_path(&dir, record.round, u.client_id), &u.delta)?;
            }
        }
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    timing.flush().map_err(|e| Error::io(&timing_path, e))?;
    write_checkpoint(dir.join(CHECKPOINT_FILE), &state.theta)?;

    Ok(RunOutput {
        final_params: state.theta,
        records: state.records,
        dir,
    })
}

pub fn read_records(run_dir: &Path) -> Result<Vec<RoundRecord>> {
    let path = run_dir.join(METRICS_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&line).map_err(|e| {
                Error::Analysis(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}
