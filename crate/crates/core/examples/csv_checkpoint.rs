//! Federated run on tasks loaded from CSV files, then a checkpoint
//! round-trip of the final parameters.
//!
//! ```bash
//! cargo run --release -p feddea --example csv_checkpoint -- [OUT_DIR]
//! ```

use std::fmt::Write as _;

use feddea::aggregate::DeaConfig;
use feddea::data::{CsvSchema, TaskKind};
use feddea::model::{Activation, HeadSpec, LossKind, ModelSpec};
use feddea::orchestrator::{run_experiment, ClientSpec, CsvTask, ExperimentConfig, RunOptions, CHECKPOINT_FILE};
use feddea::params::read_checkpoint;
use feddea::seed::rng_from;
use rand::Rng;

/// Two tasks on four columns: `y0 = sin(x0) + x1`, `y1 = [x2 + x3 > 0]`.
fn write_task(path: &std::path::Path, task: usize) -> feddea::Result<()> {
    let mut rng = rng_from(&[task as u64, 11]);
    let mut text = String::from("x0,x1,x2,x3,y\n");
    for _ in 0..300 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = if task == 0 { x[0].sin() + x[1] } else { f64::from(x[2] + x[3] > 0.0) };
        writeln!(text, "{},{},{},{},{y}", x[0], x[1], x[2], x[3]).unwrap();
    }
    std::fs::write(path, text).map_err(|e| feddea::Error::Io { path: path.into(), source: e })
}

fn main() -> feddea::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/csv".into()));
    std::fs::create_dir_all(&out).map_err(|e| feddea::Error::Io { path: out.clone(), source: e })?;
    let cols: Vec<String> = ["x0", "x1", "x2", "x3"].map(String::from).to_vec();
    let mut csv_tasks = Vec::new();
    for (task, kind) in [(0, TaskKind::Regression), (1, TaskKind::Classification)] {
        let path = out.join(format!("task{task}.csv"));
        write_task(&path, task)?;
        csv_tasks.push(CsvTask {
            path,
            schema: CsvSchema { input_cols: cols.clone(), target_cols: vec!["y".into()], task_id: task, kind },
        });
    }

    let mut config = ExperimentConfig::default_synthetic(0);
    config.tasks.clear();
    config.csv_tasks = csv_tasks;
    config.model = ModelSpec {
        input_dim: 4,
        trunk_widths: vec![16],
        activation: Activation::Tanh,
        heads: vec![
            HeadSpec { task_id: 0, output_dim: 1, loss: LossKind::Mse },
            HeadSpec { task_id: 1, output_dim: 1, loss: LossKind::Bce },
        ],
        bias: true,
    };
    config.clients = (0..2).map(|t| ClientSpec { task_id: t, n_samples: None }).collect();
    config.policy.dea = DeaConfig::full(0.5);
    config.out_dir = out.join("run");

    let run = run_experiment(&config, RunOptions::default())?;
    for r in [run.records.first(), run.records.last()].into_iter().flatten() {
        println!("round {:>2}: {:?}", r.round, r.per_task_val_metrics);
    }
    let restored = read_checkpoint(run.dir.join(CHECKPOINT_FILE))?;
    println!(
        "checkpoint: {} params in {} segments, identical to memory: {}",
        restored.len(),
        restored.layout().segments().len(),
        restored.bitwise_eq(&run.final_params)
    );
    Ok(())
}
