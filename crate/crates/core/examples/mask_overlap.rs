//! Trains the default synthetic federation with stored client updates and
//! measures how much the clients' top-10% update coordinates overlap, at
//! the first and the last round.
//!
//! ```bash
//! cargo run --release -p feddea --example mask_overlap -- [SEED] [OUT_DIR]
//! ```

use feddea::aggregate::DeaConfig;
use feddea::orchestrator::{analyze_masks, run_experiment, ExperimentConfig, RunOptions};

fn main() -> feddea::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = args.next().unwrap_or_else(|| format!("runs/overlap_s{seed}"));

    let mut config = ExperimentConfig::default_synthetic(seed);
    config.policy.dea = DeaConfig::full(0.25);
    config.store_deltas = true;
    config.out_dir = out.into();
    let run = run_experiment(&config, RunOptions::default())?;

    let last = config.rounds;
    for segment in [None, Some("all")] {
        let report = analyze_masks(&run.dir, 0.10, &[1, last], segment)?;
        println!("segment {}", report.segment);
        for r in &report.rounds {
            println!("  round {:>3}: mean off-diagonal Jaccard {:.4}", r.round, r.mean_off_diagonal);
            for row in &r.matrix {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
                println!("    [{}]", cells.join(", "));
            }
        }
    }
    Ok(())
}
