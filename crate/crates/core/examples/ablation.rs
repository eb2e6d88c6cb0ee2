//! Runs the ablation battery (base, full decoupling, small-mask, no-rescale,
//! random-mask) on the default synthetic setting and prints each variant's
//! relative gain over the base run.
//!
//! ```bash
//! cargo run --release -p feddea --example ablation -- [SEED] [OUT_DIR]
//! ```

use feddea::aggregate::DeaConfig;
use feddea::orchestrator::{run_ablation, ExperimentConfig, RunOptions};

fn main() -> feddea::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = args.next().unwrap_or_else(|| format!("runs/ablation_s{seed}"));

    let mut config = ExperimentConfig::default_synthetic(seed);
    config.policy.dea = DeaConfig { enabled: false, ..DeaConfig::full(0.25) };
    config.out_dir = out.into();

    let report = run_ablation(&config, RunOptions::default())?;
    println!("rho = {}", report.rho);
    for row in &report.rows {
        let metrics: Vec<String> = report
            .metric_names
            .iter()
            .zip(&row.metrics)
            .map(|(n, v)| format!("{n}={v:.4}"))
            .collect();
        println!("{:<20} delta={:+8.2}%  {}", row.variant, row.delta_percent, metrics.join(" "));
    }
    Ok(())
}
