//! Local client training producing `Δ = θ_local − θ_global`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, ModelSpec};
use crate::params::ParamVector;
use crate::seed::rng_from;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Anneals from `lr` to 0 across the local steps of a single round.
    Cosine,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Defaults: 0.05 for sgd, 1e-4 for adamw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Decoupled decay for adamw (default 1e-4), coupled L2 for sgd (default 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub schedule: Schedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::sgd(0.05, 0.9)
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: Some(lr),
            momentum,
            betas: default_betas(),
            eps: default_eps(),
            weight_decay: None,
            schedule: Schedule::Constant,
        }
    }

    pub fn adamw(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adamw,
            lr: Some(lr),
            momentum: 0.0,
            betas: default_betas(),
            eps: default_eps(),
            weight_decay: None,
            schedule: Schedule::Constant,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or(match self.kind {
            OptimizerKind::Sgd => 0.05,
            OptimizerKind::Adamw => 1e-4,
        })
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay.unwrap_or(match self.kind {
            OptimizerKind::Sgd => 0.0,
            OptimizerKind::Adamw => 1e-4,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be finite and > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas {:?} not in [0, 1)", self.betas)));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("eps must be > 0".into()));
        }
        let wd = self.weight_decay();
        if !(wd.is_finite() && wd >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {wd}")));
        }
        Ok(())
    }

    /// Learning rate for local step `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr(),
            Schedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                0.5 * self.lr() * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd { velocity: Vec<f64> },
    Adamw { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl OptimizerState {
    pub fn new(opt: &OptimizerConfig, dim: usize) -> Self {
        match opt.kind {
            OptimizerKind::Sgd => OptimizerState::Sgd { velocity: vec![0.0; dim] },
            OptimizerKind::Adamw => OptimizerState::Adamw {
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                t: 0,
            },
        }
    }
}

/// One optimizer update in place.
///
/// sgd: `v ← m·v + g; θ ← θ − lr·v`.
/// adamw: `θ ← θ − lr·wd·θ`, then the bias-corrected Adam step.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut [f64],
    grad: &[f64],
    opt: &OptimizerConfig,
    lr: f64,
) {
    assert_eq!(params.len(), grad.len(), "parameter/gradient length mismatch");
    match state {
        OptimizerState::Sgd { velocity } => {
            let wd = opt.weight_decay();
            for ((p, &g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                let g = if wd > 0.0 { g + wd * *p } else { g };
                *v = opt.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        OptimizerState::Adamw { m, v, t } => {
            *t += 1;
            let (b1, b2) = opt.betas;
            let c1 = 1.0 - b1.powi(*t as i32);
            let c2 = 1.0 - b2.powi(*t as i32);
            let wd = opt.weight_decay();
            for (((p, &g), mi), vi) in params.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *p -= lr * wd * *p;
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + opt.eps);
            }
        }
    }
}

/// One client's round product.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub task_id: usize,
    pub delta: ParamVector,
    /// `N_k`
    pub n_samples: usize,
    /// `τ_k`, the optimizer steps actually executed.
    pub local_steps: usize,
    /// Mean task loss over the local steps (proximal term excluded).
    pub train_loss: f64,
}

/// Local epochs, batch size and proximal strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub prox_mu: f64,
}

impl LocalTraining {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("local epochs and batch size must be >= 1".into()));
        }
        if !(self.prox_mu.is_finite() && self.prox_mu >= 0.0) {
            return Err(Error::Config(format!("prox_mu must be >= 0, got {}", self.prox_mu)));
        }
        Ok(())
    }
}

/// Where a local run sits in the experiment; drives the shuffling seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainContext {
    pub experiment_seed: u64,
    pub client_id: usize,
    pub round: usize,
}

/// Trains a copy of `global` on `dataset` and returns the difference.
///
/// Runs `epochs × ⌈n / batch_size⌉` steps on
/// `loss + (prox_mu / 2)·‖θ − θ_global‖²`, reshuffling every epoch with a
/// seed derived from `(experiment_seed, client_id, round, epoch)`.
pub fn local_train(
    spec: &ModelSpec,
    global: &ParamVector,
    dataset: &Dataset,
    task_id: usize,
    opt: &OptimizerConfig,
    training: &LocalTraining,
    ctx: TrainContext,
) -> Result<ClientUpdate> {
    opt.validate()?;
    training.validate()?;
    if dataset.task_id != task_id {
        return Err(Error::Config(format!(
            "client {} assigned task {task_id} but holds data for task {}",
            ctx.client_id, dataset.task_id
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Config(format!("client {} has no training samples", ctx.client_id)));
    }

    let n = dataset.len();
    let steps_per_epoch = n.div_ceil(training.batch_size);
    let total_steps = training.epochs * steps_per_epoch;
    let mut local = global.clone();
    let mut state = OptimizerState::new(opt, local.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_sum = 0.0;
    let mut step = 0;

    for epoch in 0..training.epochs {
        let mut rng = rng_from(&[
            ctx.experiment_seed,
            ctx.client_id as u64,
            ctx.round as u64,
            epoch as u64,
        ]);
        order.shuffle(&mut rng);
        for rows in order.chunks(training.batch_size) {
            let batch = dataset.batch(rows);
            let (loss, mut grad) = loss_and_grad(spec, &local, &batch)
                .map_err(|e| numerical_at(e, step))?;
            if training.prox_mu > 0.0 {
                let mu = training.prox_mu;
                for ((g, p), p0) in grad.values_mut().iter_mut().zip(local.values()).zip(global.values()) {
                    *g += mu * (p - p0);
                }
            }
            let lr = opt.lr_at(step, total_steps);
            optimizer_step(&mut state, local.values_mut(), grad.values(), opt, lr);
            if let Err(e) = local.check_finite("parameters") {
                return Err(numerical_at(e, step));
            }
            loss_sum += loss;
            step += 1;
        }
    }
    debug_assert_eq!(step, total_steps);

    Ok(ClientUpdate {
        client_id: ctx.client_id,
        task_id,
        delta: local.sub(global)?,
        n_samples: n,
        local_steps: step,
        train_loss: loss_sum / step as f64,
    })
}

fn numerical_at(e: Error, step: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("local step {step}: {msg}")),
        other => other,
    }
}
