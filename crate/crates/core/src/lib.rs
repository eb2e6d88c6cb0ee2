//! Deterministic single-process simulator of heterogeneous-task federated
//! learning.
//!
//! Each client trains a shared-trunk, multi-head network on its own task and
//! uploads `Δ = θ_local − θ_global`. The server can run plain weighted
//! averaging, FedProx-style clients, FedNova step normalization, PCGrad
//! projection, and the decoupled aggregation stage in [`aggregate`]: keep
//! only the largest-magnitude `⌊ρd⌋` coordinates of each update, rescale
//! them by `1/ρ`, then average.
//!
//! Module map:
//! - [`params`]: flat parameter vectors, layouts, checkpoints
//! - [`model`]: dense network with hand-written gradients
//! - [`data`]: synthetic disjoint-feature tasks, CSV ingestion
//! - [`client`]: local training and optimizers
//! - [`aggregate`]: server pipeline
//! - [`metrics`]: task metrics, relative gain score, activation overlap
//! - [`orchestrator`]: run loop, logging, sweeps, ablations, analysis

pub mod aggregate;
pub mod client;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod params;
pub mod seed;
pub mod select;

pub use error::{Error, Result};
