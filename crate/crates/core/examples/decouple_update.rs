//! Decoupling and recalibration of client updates, step by step, followed by
//! one server aggregation of two clients whose updates touch disjoint
//! coordinates.
//!
//! ```bash
//! cargo run -p feddea --example decouple_update
//! ```

use feddea::aggregate::{aggregate, decouple, recalibrate, select_mask, AggregationPolicy, DeaConfig, Weighting};
use feddea::client::ClientUpdate;
use feddea::params::{norms, ParamVector};

fn client(client_id: usize, values: Vec<f64>) -> feddea::Result<ClientUpdate> {
    Ok(ClientUpdate {
        client_id,
        task_id: client_id,
        delta: ParamVector::flat(values)?,
        n_samples: 100,
        local_steps: 10,
        train_loss: 0.0,
    })
}

fn main() -> feddea::Result<()> {
    let delta = ParamVector::flat(vec![0.5, -0.1, 0.3, -0.4])?;
    let cfg = DeaConfig::full(0.5);
    let mask = select_mask(&delta, &cfg)?;
    let masked = decouple(&delta, &mask)?;
    let out = recalibrate(&masked, cfg.rho)?;
    println!("update      {:?}", delta.values());
    println!("mask        {:?} (k = {})", mask.indices(), mask.retained());
    println!("decoupled   {:?}", masked.values());
    println!("recalibrated {:?}", out.values());
    println!("l1 before {:.3}, after {:.3}", norms(&masked).l1, norms(&out).l1);

    let theta = ParamVector::flat(vec![0.0; 4])?;
    let updates = [client(0, vec![2.0, 0.0, 0.0, 0.0])?, client(1, vec![0.0, 0.0, 0.0, 4.0])?];
    let plain = AggregationPolicy { weighting: Weighting::Uniform, ..AggregationPolicy::default() };
    let decoupled = AggregationPolicy { dea: cfg, ..plain.clone() };
    let (a, _) = aggregate(&theta, &updates, &plain, 0)?;
    let (b, stats) = aggregate(&theta, &updates, &decoupled, 0)?;
    println!("averaged            {:?}", a.values());
    println!("decoupled + rescaled {:?}", b.values());
    for s in &stats {
        println!("  client {}: k={} mask {}", s.client_id, s.k, s.mask_digest);
    }
    Ok(())
}
