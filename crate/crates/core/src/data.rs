//! Synthetic multi-task data and CSV ingestion.
//!
//! Each synthetic task's target is a fixed random two-layer network of only
//! its `relevant_features`; all other input coordinates are pure noise for
//! that task. With disjoint feature sets the tasks' useful update directions
//! in the first trunk layer are disjoint as well.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::seed::rng_from;

const TARGET_HIDDEN: usize = 16;
const TARGET_GAIN: f64 = 1.5;
const REFERENCE_SAMPLES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    /// Binary labels, stored as one-hot rows `[1-c, c]`.
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: usize,
    pub kind: TaskKind,
    pub relevant_features: Vec<usize>,
    pub samples: usize,
    #[serde(default)]
    pub noise_std: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.relevant_features.is_empty() {
            return Err(Error::Config(format!(
                "task {}: relevant_features is empty",
                self.task_id
            )));
        }
        if let Some(&f) = self.relevant_features.iter().find(|&&f| f >= input_dim) {
            return Err(Error::Config(format!(
                "task {}: relevant feature {f} outside input_dim {input_dim}",
                self.task_id
            )));
        }
        let unique: BTreeSet<_> = self.relevant_features.iter().collect();
        if unique.len() != self.relevant_features.len() {
            return Err(Error::Config(format!(
                "task {}: duplicate relevant features",
                self.task_id
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config(format!("task {}: samples must be >= 1", self.task_id)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "task {}: noise_std must be finite and >= 0",
                self.task_id
            )));
        }
        Ok(())
    }
}

/// Errors if any two tasks share a relevant feature.
pub fn check_disjoint(tasks: &[TaskSpec]) -> Result<()> {
    for (i, a) in tasks.iter().enumerate() {
        let sa: BTreeSet<_> = a.relevant_features.iter().collect();
        for b in &tasks[i + 1..] {
            if let Some(f) = b.relevant_features.iter().find(|f| sa.contains(f)) {
                return Err(Error::Config(format!(
                    "tasks {} and {} share relevant feature {f} in disjoint mode",
                    a.task_id, b.task_id
                )));
            }
        }
    }
    Ok(())
}

/// `K` tasks over `input_dim` features with `per_task` disjoint relevant
/// features each, alternating regression and classification.
pub fn disjoint_tasks(
    num_tasks: usize,
    input_dim: usize,
    per_task: usize,
    samples: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<TaskSpec>> {
    if num_tasks * per_task > input_dim {
        return Err(Error::Config(format!(
            "{num_tasks} tasks x {per_task} features do not fit in {input_dim} inputs"
        )));
    }
    let mut features: Vec<usize> = (0..input_dim).collect();
    features.shuffle(&mut rng_from(&[seed, 0xFEA7]));
    Ok((0..num_tasks)
        .map(|t| {
            let mut relevant = features[t * per_task..(t + 1) * per_task].to_vec();
            relevant.sort_unstable();
            TaskSpec {
                task_id: t,
                kind: if t % 2 == 0 {
                    TaskKind::Regression
                } else {
                    TaskKind::Classification
                },
                relevant_features: relevant,
                samples,
                noise_std,
                seed: crate::seed::derive_seed(&[seed, t as u64]),
            }
        })
        .collect())
}

/// The noiseless target function of one synthetic task.
#[derive(Debug, Clone)]
pub struct TargetFunction {
    relevant: Vec<usize>,
    /// `(TARGET_HIDDEN, |relevant|)`
    inner: Array2<f64>,
    outer: Array1<f64>,
    scale: f64,
}

impl TargetFunction {
    pub fn new(spec: &TaskSpec, input_dim: usize) -> Result<Self> {
        spec.validate(input_dim)?;
        let r = spec.relevant_features.len();
        let mut rng = rng_from(&[spec.seed, spec.task_id as u64, 0xF00]);
        let gain = TARGET_GAIN / (r as f64).sqrt();
        let inner = Array2::from_shape_fn((TARGET_HIDDEN, r), |_| {
            {
            let z: f64 = StandardNormal.sample(&mut rng);
            gain * z
        }
        });
        let outer = Array1::from_shape_fn(TARGET_HIDDEN, |_| StandardNormal.sample(&mut rng));
        let mut f = TargetFunction {
            relevant: spec.relevant_features.clone(),
            inner,
            outer,
            scale: 1.0,
        };
        // Normalize to unit spread on a fixed reference sample.
        let mut ref_rng = rng_from(&[spec.seed, spec.task_id as u64, 0x5CA1E]);
        let mut sq = 0.0;
        let mut x = vec![0.0; input_dim];
        for _ in 0..REFERENCE_SAMPLES {
            for v in x.iter_mut() {
                *v = StandardNormal.sample(&mut ref_rng);
            }
            sq += f.eval(&x).powi(2);
        }
        let rms = (sq / REFERENCE_SAMPLES as f64).sqrt();
        if rms > 0.0 {
            f.scale = 1.0 / rms;
        }
        Ok(f)
    }

    /// Reads only the relevant coordinates of `x`. Odd in `x`, so the
    /// classification threshold at 0 gives balanced classes.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let sel: Vec<f64> = self.relevant.iter().map(|&i| x[i]).collect();
        let hidden = self.inner.dot(&Array1::from(sel)).mapv(f64::tanh);
        self.scale * hidden.dot(&self.outer)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub task_id: usize,
    pub kind: TaskKind,
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Dataset {
    pub fn new(task_id: usize, kind: TaskKind, inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::Structural(format!(
                "{} input rows but {} target rows",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Dataset { task_id, kind, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            task_id: self.task_id,
            kind: self.kind,
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
        }
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
            task_id: self.task_id,
        }
    }

    pub fn full_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            task_id: self.task_id,
        }
    }

    /// First `n` samples (all of them if `n >= len`).
    pub fn truncated(&self, n: usize) -> Dataset {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&rows)
    }

    /// Replaces one-hot binary targets by the positive-class column, the
    /// layout a single-logit `bce` head expects.
    pub fn with_binary_targets(&self) -> Result<Dataset> {
        match self.targets.ncols() {
            1 => Ok(self.clone()),
            2 => Ok(Dataset {
                targets: self.targets.slice(ndarray::s![.., 1..2]).to_owned(),
                ..self.clone()
            }),
            c => Err(Error::Structural(format!(
                "cannot reduce {c}-column targets to a single binary column"
            ))),
        }
    }
}

pub fn gen_synthetic_task(spec: &TaskSpec, input_dim: usize) -> Result<Dataset> {
    let target = TargetFunction::new(spec, input_dim)?;
    let n = spec.samples;
    let mut rng = rng_from(&[spec.seed, spec.task_id as u64, 0xDA7A]);
    let inputs = Array2::from_shape_fn((n, input_dim), |_| StandardNormal.sample(&mut rng));
    let mut noise_rng = rng_from(&[spec.seed, spec.task_id as u64, 0x0153]);
    let values: Vec<f64> = inputs
        .outer_iter()
        .map(|row| {
            let eps: f64 = StandardNormal.sample(&mut noise_rng);
            target.eval(row.as_slice().expect("row-major")) + spec.noise_std * eps
        })
        .collect();
    let targets = match spec.kind {
        TaskKind::Regression => Array2::from_shape_vec((n, 1), values).expect("n x 1"),
        TaskKind::Classification => Array2::from_shape_fn((n, 2), |(i, c)| {
            let positive = values[i] > 0.0;
            if (c == 1) == positive {
                1.0
            } else {
                0.0
            }
        }),
    };
    Dataset::new(spec.task_id, spec.kind, inputs, targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub input_cols: Vec<String>,
    pub target_cols: Vec<String>,
    pub task_id: usize,
    #[serde(default = "default_kind")]
    pub kind: TaskKind,
}

fn default_kind() -> TaskKind {
    TaskKind::Regression
}

/// Loads a headered, comma-separated file. Rows keep file order; data rows
/// are numbered from 1 in error messages.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let locate = |col: &String| {
        headers
            .iter()
            .position(|h| h.trim() == col)
            .ok_or_else(|| Error::Schema(format!("column `{col}` not found in {}", path.display())))
    };
    let input_idx = schema.input_cols.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let target_idx = schema.target_cols.iter().map(locate).collect::<Result<Vec<_>>>()?;
    if input_idx.is_empty() || target_idx.is_empty() {
        return Err(Error::Schema("schema needs at least one input and one target column".into()));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingestion {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Ingestion {
                row,
                column: headers.get(idx).unwrap_or("").to_string(),
                message: format!("`{raw}` is not a finite number"),
            })
        };
        for &idx in &input_idx {
            xs.push(cell(idx)?);
        }
        for &idx in &target_idx {
            ys.push(cell(idx)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::NoSamples(format!("no samples in {}", path.display())));
    }
    let inputs = Array2::from_shape_vec((rows, input_idx.len()), xs).expect("row count matches");
    let targets = Array2::from_shape_vec((rows, target_idx.len()), ys).expect("row count matches");
    Dataset::new(schema.task_id, schema.kind, inputs, targets)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

/// Seeded shuffle, then the first `round(val_fraction · n)` shuffled rows
/// become validation and the rest training.
pub fn split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction {val_fraction} not in [0, 1)")));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(&[seed, dataset.task_id as u64, 0x5B17]));
    let n_val = ((val_fraction * n as f64).round() as usize).min(n);
    let (val, train) = order.split_at(n_val);
    Ok((dataset.subset(train), dataset.subset(val)))
}
