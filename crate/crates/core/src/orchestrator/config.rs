use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{AggregationPolicy, DeaConfig};
use crate::client::{LocalTraining, OptimizerConfig};
use crate::data::{check_disjoint, disjoint_tasks, CsvSchema, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::metrics::{MetricDef, MetricKind};
use crate::model::{Activation, HeadSpec, LossKind, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub task_id: usize,
    /// Use only the first `n_samples` training rows when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
}

/// A task whose samples come from a CSV file instead of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvTask {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

fn default_val_fraction() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    pub model: ModelSpec,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub csv_tasks: Vec<CsvTask>,
    pub clients: Vec<ClientSpec>,
    pub optimizer: OptimizerConfig,
    pub local_epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub prox_mu: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub policy: AggregationPolicy,
    /// Require synthetic tasks to use pairwise-disjoint feature sets.
    #[serde(default = "default_true")]
    pub disjoint_features: bool,
    /// Keep every client's raw update of every round under `deltas/`.
    #[serde(default)]
    pub store_deltas: bool,
    #[serde(default)]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Default desk-scale setting: 4 disjoint-feature tasks over 32 inputs
    /// (8 relevant features each, alternating regression/classification),
    /// 512 train + 128 validation samples per task, a 48-32 tanh trunk,
    /// 20 rounds of 2 local epochs, plain FedAvg aggregation.
    pub fn default_synthetic(seed: u64) -> Self {
        let tasks = disjoint_tasks(4, 32, 8, 640, 0.1, seed).expect("default tasks fit");
        let heads = tasks
            .iter()
            .map(|t| match t.kind {
                TaskKind::Regression => HeadSpec { task_id: t.task_id, output_dim: 1, loss: LossKind::Mse },
                TaskKind::Classification => HeadSpec { task_id: t.task_id, output_dim: 2, loss: LossKind::SoftmaxCe },
            })
            .collect();
        ExperimentConfig {
            seed,
            rounds: 20,
            model: ModelSpec {
                input_dim: 32,
                trunk_widths: vec![48, 32],
                activation: Activation::Tanh,
                heads,
                bias: true,
            },
            clients: tasks.iter().map(|t| ClientSpec { task_id: t.task_id, n_samples: None }).collect(),
            tasks,
            csv_tasks: Vec::new(),
            optimizer: OptimizerConfig::sgd(0.02, 0.9),
            local_epochs: 2,
            batch_size: 32,
            prox_mu: 0.0,
            val_fraction: 0.2,
            policy: AggregationPolicy::default(),
            disjoint_features: true,
            store_deltas: false,
            out_dir: PathBuf::new(),
        }
    }

    pub fn local_training(&self) -> LocalTraining {
        LocalTraining {
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            prox_mu: self.prox_mu,
        }
    }

    pub fn task_kind(&self, task_id: usize) -> Option<TaskKind> {
        self.tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .map(|t| t.kind)
            .or_else(|| self.csv_tasks.iter().find(|c| c.schema.task_id == task_id).map(|c| c.schema.kind))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        self.optimizer.validate()?;
        self.local_training().validate()?;
        self.policy.validate()?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} not in [0, 1)", self.val_fraction)));
        }
        for t in &self.tasks {
            t.validate(self.model.input_dim)?;
        }
        if self.disjoint_features {
            check_disjoint(&self.tasks)?;
        }

        let mut ids: Vec<usize> = self.tasks.iter().map(|t| t.task_id).collect();
        ids.extend(self.csv_tasks.iter().map(|c| c.schema.task_id));
        let unique: BTreeSet<usize> = ids.iter().copied().collect();
        if unique.len() != ids.len() {
            return Err(Error::Config("a task id is defined more than once".into()));
        }
        let heads: BTreeSet<usize> = self.model.heads.iter().map(|h| h.task_id).collect();
        if unique != heads {
            return Err(Error::Config(format!(
                "tasks {unique:?} do not match model heads {heads:?}"
            )));
        }
        for h in &self.model.heads {
            let kind = self.task_kind(h.task_id).expect("checked above");
            let ok = match (kind, h.loss) {
                (TaskKind::Regression, LossKind::Mse) => true,
                (TaskKind::Classification, LossKind::SoftmaxCe) => h.output_dim == 2,
                (TaskKind::Classification, LossKind::Bce) => h.output_dim == 1,
                _ => false,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "head {} ({:?}, {} outputs) does not fit a {:?} task",
                    h.task_id, h.loss, h.output_dim, kind
                )));
            }
        }

        if self.clients.is_empty() {
            return Err(Error::Config("no clients configured".into()));
        }
        let client_tasks: Vec<usize> = self.clients.iter().map(|c| c.task_id).collect();
        let client_set: BTreeSet<usize> = client_tasks.iter().copied().collect();
        if client_set.len() != client_tasks.len() || client_set != heads {
            return Err(Error::Config(format!(
                "expected exactly one client per task {heads:?}, got {client_tasks:?}"
            )));
        }
        if self.clients.iter().any(|c| c.n_samples == Some(0)) {
            return Err(Error::Config("client n_samples override must be >= 1".into()));
        }
        Ok(())
    }

    /// Validation metric of every task, in task-id order.
    pub fn metric_defs(&self) -> Vec<MetricDef> {
        let mut ids: Vec<usize> = self.model.heads.iter().map(|h| h.task_id).collect();
        ids.sort_unstable();
        ids.into_iter()
            .map(|t| {
                let kind = match self.task_kind(t) {
                    Some(TaskKind::Classification) => MetricKind::Accuracy,
                    _ => MetricKind::Mse,
                };
                MetricDef {
                    name: metric_name(t, kind),
                    direction: kind.direction(),
                    kind,
                }
            })
            .collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.metric_defs().iter().map(|m| m.direction.alpha()).collect()
    }

    /// SHA-256 of the canonical JSON form with `out_dir` removed.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().expect("object").remove("out_dir");
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&value).expect("value serializes"));
        hex::encode(h.finalize())
    }

    /// Hash identifying the base run this config should be compared with:
    /// the decoupling stage and PCGrad are reset before hashing.
    pub fn pairing_hash(&self) -> String {
        self.base_variant().config_hash()
    }

    /// Same experiment with decoupling and PCGrad switched off.
    pub fn base_variant(&self) -> Self {
        let mut base = self.clone();
        base.policy.dea = DeaConfig::default();
        base.policy.pcgrad = false;
        base
    }
}

pub fn metric_name(task_id: usize, kind: MetricKind) -> String {
    format!("task{task_id}_{}", kind.label())
}

