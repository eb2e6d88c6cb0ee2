use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use feddea::orchestrator::{
    analyze_masks, delta_report, run_ablation, run_experiment, sweep_rho, ExperimentConfig, RunOptions,
};
use feddea::Error;

#[derive(Parser)]
#[command(name = "feddea", about = "Heterogeneous-task federated learning simulator")]
struct Cli {
    /// Worker threads for client training (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the selection ratio over a grid.
    SweepRho {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Base run plus the four decoupling variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise overlap of top-q update coordinates across clients.
    AnalyzeMasks {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        q: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        rounds: Vec<usize>,
        /// Layout segment to analyse, or `all` for the whole vector.
        #[arg(long)]
        segment: Option<String>,
    },
    /// Relative gain of one run over a paired base run; writes delta.json.
    DeltaReport {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        enhanced: PathBuf,
    },
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> feddea::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        config.out_dir = out;
    }
    if config.out_dir.as_os_str().is_empty() {
        return Err(Error::Config("no output directory: set out_dir or pass --out".into()));
    }
    Ok(config)
}

fn execute(cli: Cli) -> feddea::Result<()> {
    let opts = RunOptions { threads: cli.threads };
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut config = load(&config, out)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let run = run_experiment(&config, opts)?;
            if let Some(last) = run.records.last() {
                for (name, value) in &last.per_task_val_metrics {
                    println!("{name}\t{value}");
                }
                println!("checksum\t{}", last.global_checksum);
            }
            println!("wrote {}", run.dir.display());
        }
        Command::SweepRho { config, grid, out } => {
            let config = load(&config, out)?;
            let report = sweep_rho(&config, &grid, opts)?;
            for row in &report.rows {
                println!("rho={:<6} delta={:+.3}%", row.rho, row.delta_percent);
            }
            println!("interior_max\t{}", report.interior_max);
        }
        Command::Ablate { config, out } => {
            let config = load(&config, out)?;
            let report = run_ablation(&config, opts)?;
            for row in &report.rows {
                println!("{:<20} delta={:+.3}%", row.variant, row.delta_percent);
            }
        }
        Command::AnalyzeMasks { run, q, rounds, segment } => {
            let report = analyze_masks(&run, q, &rounds, segment.as_deref())?;
            println!("segment\t{}", report.segment);
            for r in &report.rounds {
                println!("round {}\tmean_off_diagonal={:.4}", r.round, r.mean_off_diagonal);
            }
        }
        Command::DeltaReport { base, enhanced } => {
            let report = delta_report(&base, &enhanced)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
