//! Relative multi-metric gain from two score tables. Reads
//! `name,direction,base,enhanced` rows (direction `higher` or `lower`) from a
//! CSV file, or uses a built-in four-metric table when no file is given.
//!
//! ```bash
//! cargo run -p feddea --example delta_metric -- [SCORES_CSV]
//! ```

use feddea::metrics::{DeltaReport, Direction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows: Vec<(String, Direction, f64, f64)> = match std::env::args().nth(1) {
        Some(path) => {
            let mut reader = csv::Reader::from_path(path)?;
            let mut rows = Vec::new();
            for record in reader.records() {
                let r = record?;
                let direction = match &r[1] {
                    "higher" => Direction::HigherBetter,
                    "lower" => Direction::LowerBetter,
                    other => return Err(format!("unknown direction `{other}`").into()),
                };
                rows.push((r[0].to_string(), direction, r[2].parse()?, r[3].parse()?));
            }
            rows
        }
        None => vec![
            ("segmentation_miou".into(), Direction::HigherBetter, 23.05, 30.78),
            ("depth_rmse".into(), Direction::LowerBetter, 0.7213, 0.7052),
            ("normals_error".into(), Direction::LowerBetter, 26.52, 24.62),
            ("edge_f".into(), Direction::HigherBetter, 75.19, 74.77),
        ],
    };
    let names: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    let alphas: Vec<f64> = rows.iter().map(|r| r.1.alpha()).collect();
    let base: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let enhanced: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let report = DeltaReport::compute(Some(&names), &base, &enhanced, &alphas)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
