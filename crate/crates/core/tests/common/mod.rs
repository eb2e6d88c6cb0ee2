#![allow(dead_code)]

use std::sync::Arc;

use feddea::client::{local_train, ClientUpdate, LocalTraining, OptimizerConfig, TrainContext};
use feddea::data::{disjoint_tasks, gen_synthetic_task, Dataset, TaskKind};
use feddea::model::{init_params, Activation, Batch, HeadSpec, LossKind, ModelSpec};
use feddea::orchestrator::ExperimentConfig;
use feddea::params::{ParamLayout, ParamVector};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn flat(values: Vec<f64>) -> ParamVector {
    ParamVector::flat(values).unwrap()
}

pub fn update(client_id: usize, delta: ParamVector, n_samples: usize, local_steps: usize) -> ClientUpdate {
    ClientUpdate { client_id, task_id: client_id, delta, n_samples, local_steps, train_loss: 0.0 }
}

pub fn random_values(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Small random model spec with `k` heads over `input_dim` inputs.
pub fn random_spec(rng: &mut ChaCha8Rng, input_dim: usize, k: usize) -> ModelSpec {
    let depth = rng.random_range(0..3usize);
    let trunk_widths = (0..depth).map(|_| rng.random_range(2..6usize)).collect();
    let activation = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu };
    let heads = (0..k)
        .map(|t| {
            let loss = [LossKind::Mse, LossKind::SoftmaxCe, LossKind::Bce][rng.random_range(0..3usize)];
            let output_dim = match loss {
                LossKind::SoftmaxCe => rng.random_range(2..4usize),
                _ => rng.random_range(1..3usize),
            };
            HeadSpec { task_id: t, output_dim, loss }
        })
        .collect();
    ModelSpec { input_dim, trunk_widths, activation, heads, bias: rng.random_bool(0.8) }
}

/// Random inputs and loss-appropriate targets for one head.
pub fn random_batch(rng: &mut ChaCha8Rng, spec: &ModelSpec, task_id: usize, rows: usize) -> Batch {
    let head = spec.head(task_id).unwrap();
    let m = head.output_dim;
    let inputs = Array2::from_shape_fn((rows, spec.input_dim), |_| rng.random_range(-1.5..1.5));
    let targets = match head.loss {
        LossKind::Mse => Array2::from_shape_fn((rows, m), |_| rng.random_range(-1.0..1.0)),
        LossKind::Bce => Array2::from_shape_fn((rows, m), |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }),
        LossKind::SoftmaxCe => {
            let mut t = Array2::zeros((rows, m));
            for r in 0..rows {
                t[[r, rng.random_range(0..m)]] = 1.0;
            }
            t
        }
    };
    Batch { inputs, targets, task_id }
}

/// A freshly initialized model and one real local update per task, trained on
/// synthetic disjoint-feature data. Heads are mse/softmax_ce to match the
/// generated targets.
pub struct Instance {
    pub spec: ModelSpec,
    pub theta: ParamVector,
    pub updates: Vec<ClientUpdate>,
}

pub fn trained_instance(seed: u64) -> Instance {
    let mut rng = feddea::seed::rng_from(&[seed, 0x7E57]);
    let k = rng.random_range(2..5usize);
    let per_task = rng.random_range(1..4usize);
    let input_dim = k * per_task + rng.random_range(0..4usize);
    let tasks = disjoint_tasks(k, input_dim, per_task, rng.random_range(16..48usize), 0.1, seed).unwrap();
    let heads = tasks
        .iter()
        .map(|t| match t.kind {
            TaskKind::Regression => HeadSpec { task_id: t.task_id, output_dim: 1, loss: LossKind::Mse },
            TaskKind::Classification => HeadSpec { task_id: t.task_id, output_dim: 2, loss: LossKind::SoftmaxCe },
        })
        .collect();
    let depth = rng.random_range(0..3usize);
    let spec = ModelSpec {
        input_dim,
        trunk_widths: (0..depth).map(|_| rng.random_range(2..8usize)).collect(),
        activation: if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu },
        heads,
        bias: true,
    };
    let theta = init_params(&spec, seed).unwrap();
    let opt = OptimizerConfig::sgd(rng.random_range(0.005..0.05), 0.9);
    let training = LocalTraining { epochs: rng.random_range(1..3usize), batch_size: rng.random_range(4..16usize), prox_mu: 0.0 };
    let updates = tasks
        .iter()
        .map(|t| {
            let data: Dataset = gen_synthetic_task(t, input_dim).unwrap();
            let ctx = TrainContext { experiment_seed: seed, client_id: t.task_id, round: 1 };
            local_train(&spec, &theta, &data, t.task_id, &opt, &training, ctx).unwrap()
        })
        .collect();
    Instance { spec, theta, updates }
}

/// Default synthetic config shrunk so whole runs take a few milliseconds.
pub fn tiny_config(seed: u64, rounds: usize) -> ExperimentConfig {
    let mut config = ExperimentConfig::default_synthetic(seed);
    config.rounds = rounds;
    for t in &mut config.tasks {
        t.samples = 60;
    }
    config.model.trunk_widths = vec![8];
    config
}

pub fn layout_of(dims: &[(&str, usize)]) -> Arc<ParamLayout> {
    Arc::new(ParamLayout::new(dims.iter().map(|&(n, d)| (n, d))).unwrap())
}
