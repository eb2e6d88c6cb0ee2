//! Sweeps the selection ratio ρ over 0.1..=1.0 on the default synthetic
//! setting and reports where the relative gain over plain averaging peaks.
//!
//! ```bash
//! cargo run --release -p feddea --example rho_sweep -- [SEED] [OUT_DIR]
//! ```

use feddea::orchestrator::{sweep_rho, ExperimentConfig, RunOptions};

fn main() -> feddea::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = args.next().unwrap_or_else(|| format!("runs/sweep_s{seed}"));

    let mut config = ExperimentConfig::default_synthetic(seed);
    config.out_dir = out.into();
    let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();

    let report = sweep_rho(&config, &grid, RunOptions::default())?;
    for row in &report.rows {
        let bar = "#".repeat((row.delta_percent.max(0.0) * 2.0).round() as usize);
        println!("rho={:<4} delta={:+7.2}% {bar}", row.rho, row.delta_percent);
    }
    println!("peak at rho={} (interior: {})", report.argmax_rho, report.interior_max);
    Ok(())
}
