//! Trains the default synthetic federation under each aggregation baseline,
//! with and without decoupling, and prints each pair's relative gain.
//!
//! ```bash
//! cargo run --release -p feddea --example baselines -- [SEED] [OUT_DIR]
//! ```

use feddea::aggregate::{BaseRule, DeaConfig};
use feddea::client::OptimizerConfig;
use feddea::orchestrator::{delta_report, run_experiment, ExperimentConfig, RunOptions};

fn main() -> feddea::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| format!("runs/baselines_s{seed}")));

    let fedavg = ExperimentConfig::default_synthetic(seed);
    let mut fedprox = fedavg.clone();
    fedprox.prox_mu = 0.01;
    let mut fednova = fedavg.clone();
    fednova.policy.base = BaseRule::Fednova;
    // Unequal local step counts so the normalization matters.
    fednova.clients[0].n_samples = Some(128);
    fednova.clients[2].n_samples = Some(256);
    let mut adamw = fedavg.clone();
    adamw.optimizer = OptimizerConfig::adamw(2e-3);

    for (name, base) in [("fedavg", fedavg), ("fedprox", fedprox), ("fednova", fednova), ("fedavg_adamw", adamw)] {
        let mut pcgrad = base.clone();
        pcgrad.policy.pcgrad = true;
        let mut dea = base.clone();
        dea.policy.dea = DeaConfig::full(0.25);
        let mut dirs = Vec::new();
        for (label, mut c) in [("base", base), ("pcgrad", pcgrad), ("dea", dea)] {
            c.out_dir = out.join(name).join(label);
            dirs.push(run_experiment(&c, RunOptions::default())?.dir);
        }
        for (label, dir) in [("+pcgrad", &dirs[1]), ("+dea", &dirs[2])] {
            let report = delta_report(&dirs[0], dir)?;
            println!("{name:<13} {label:<8} delta={:+7.2}%", report.delta_percent);
        }
    }
    Ok(())
}
