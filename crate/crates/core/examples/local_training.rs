//! One client's local round on a synthetic task: plain SGD, AdamW, and the
//! proximal term at increasing strength. Prints the update norm and how much
//! of it lands on the input weights of the task's own features.
//!
//! ```bash
//! cargo run --release -p feddea --example local_training -- [SEED]
//! ```

use feddea::client::{local_train, LocalTraining, OptimizerConfig, TrainContext};
use feddea::data::gen_synthetic_task;
use feddea::model::{init_params, ModelSpec};
use feddea::orchestrator::ExperimentConfig;
use feddea::params::norms;

fn main() -> feddea::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = ExperimentConfig::default_synthetic(seed);
    let task = &config.tasks[0];
    let data = gen_synthetic_task(task, config.model.input_dim)?;
    let theta = init_params(&config.model, seed)?;
    let ctx = TrainContext { experiment_seed: seed, client_id: 0, round: 1 };
    let width = config.model.trunk_widths[0];
    let input_dim = config.model.input_dim;

    let runs = [
        ("sgd", OptimizerConfig::sgd(0.02, 0.9), 0.0),
        ("adamw", OptimizerConfig::adamw(1e-3), 0.0),
        ("sgd mu=0.1", OptimizerConfig::sgd(0.02, 0.9), 0.1),
        ("sgd mu=1", OptimizerConfig::sgd(0.02, 0.9), 1.0),
        ("sgd mu=10", OptimizerConfig::sgd(0.02, 0.9), 10.0),
    ];
    println!("task 0 relevant features {:?}", task.relevant_features);
    for (name, opt, prox_mu) in runs {
        let training = LocalTraining { epochs: 2, batch_size: 32, prox_mu };
        let u = local_train(&config.model, &theta, &data, 0, &opt, &training, ctx)?;
        let w = u.delta.segment_slice(&ModelSpec::trunk_weight_name(0))?;
        let total: f64 = w.iter().map(|v| v * v).sum();
        let own: f64 = (0..width)
            .flat_map(|r| task.relevant_features.iter().map(move |&c| r * input_dim + c))
            .map(|i| w[i] * w[i])
            .sum();
        println!(
            "{name:<12} steps={} loss={:.4} |delta|={:.4} own-feature share of layer-0 energy={:.2}",
            u.local_steps,
            u.train_loss,
            norms(&u.delta).l2,
            own / total
        );
    }
    Ok(())
}
