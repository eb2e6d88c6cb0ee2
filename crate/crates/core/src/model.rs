//! Shared-trunk, multi-head dense network with hand-written backprop.
//!
//! The trunk is a stack of affine layers each followed by the configured
//! activation; every task owns a linear head on top of the trunk output.
//! Weights are stored row-major as `(out, in)` matrices inside a flat
//! [`ParamVector`] laid out as trunk layers in order, then heads in task-id
//! order.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamLayout, ParamVector};
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given pre-activation `z` and output `a`. ReLU'(0) = 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(1/n) Σ_rows ½‖ŷ − y‖²`
    Mse,
    /// Mean over rows of `−Σ_c y_c log softmax(ŷ)_c`.
    SoftmaxCe,
    /// Mean over all entries of the logistic loss on logits.
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub task_id: usize,
    pub output_dim: usize,
    pub loss: LossKind,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Hidden widths of the shared trunk. May be empty, in which case every
    /// head is a linear model of the raw input.
    pub trunk_widths: Vec<usize>,
    pub activation: Activation,
    pub heads: Vec<HeadSpec>,
    #[serde(default = "default_true")]
    pub bias: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("model input_dim must be at least 1".into()));
        }
        if self.trunk_widths.contains(&0) {
            return Err(Error::Config("trunk widths must be at least 1".into()));
        }
        if self.heads.is_empty() {
            return Err(Error::Config("model needs at least one head".into()));
        }
        let mut ids: Vec<usize> = self.heads.iter().map(|h| h.task_id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &t)| i != t) {
            return Err(Error::Config(format!(
                "head task ids must be unique and dense 0..K-1, got {ids:?}"
            )));
        }
        for h in &self.heads {
            if h.output_dim == 0 {
                return Err(Error::Config(format!(
                    "head {} has output_dim 0",
                    h.task_id
                )));
            }
            if h.loss == LossKind::SoftmaxCe && h.output_dim < 2 {
                return Err(Error::Config(format!(
                    "softmax_ce head {} needs output_dim >= 2",
                    h.task_id
                )));
            }
        }
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn head(&self, task_id: usize) -> Result<&HeadSpec> {
        self.heads
            .iter()
            .find(|h| h.task_id == task_id)
            .ok_or_else(|| Error::Structural(format!("model has no head for task {task_id}")))
    }

    pub fn trunk_output_dim(&self) -> usize {
        self.trunk_widths.last().copied().unwrap_or(self.input_dim)
    }

    pub fn trunk_weight_name(layer: usize) -> String {
        format!("trunk.{layer}.weight")
    }

    pub fn trunk_bias_name(layer: usize) -> String {
        format!("trunk.{layer}.bias")
    }

    pub fn head_weight_name(task: usize) -> String {
        format!("head.{task}.weight")
    }

    pub fn head_bias_name(task: usize) -> String {
        format!("head.{task}.bias")
    }

    /// Canonical layout: trunk layers in order, then heads by task id.
    pub fn layout(&self) -> Result<ParamLayout> {
        self.validate()?;
        let mut parts = Vec::new();
        let mut fan_in = self.input_dim;
        for (l, &w) in self.trunk_widths.iter().enumerate() {
            parts.push((Self::trunk_weight_name(l), w * fan_in));
            if self.bias {
                parts.push((Self::trunk_bias_name(l), w));
            }
            fan_in = w;
        }
        let mut heads: Vec<&HeadSpec> = self.heads.iter().collect();
        heads.sort_by_key(|h| h.task_id);
        for h in heads {
            parts.push((Self::head_weight_name(h.task_id), h.output_dim * fan_in));
            if self.bias {
                parts.push((Self::head_bias_name(h.task_id), h.output_dim));
            }
        }
        ParamLayout::new(parts)
    }

    /// Affine layers traversed for `task_id`: (weight, bias, fan_in, fan_out).
    fn path(&self, task_id: usize) -> Result<Vec<LayerRef>> {
        let head = self.head(task_id)?;
        let mut layers = Vec::with_capacity(self.trunk_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for (l, &w) in self.trunk_widths.iter().enumerate() {
            layers.push(LayerRef {
                weight: Self::trunk_weight_name(l),
                bias: self.bias.then(|| Self::trunk_bias_name(l)),
                fan_in,
                fan_out: w,
            });
            fan_in = w;
        }
        layers.push(LayerRef {
            weight: Self::head_weight_name(task_id),
            bias: self.bias.then(|| Self::head_bias_name(task_id)),
            fan_in,
            fan_out: head.output_dim,
        });
        Ok(layers)
    }
}

struct LayerRef {
    weight: String,
    bias: Option<String>,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub task_id: usize,
}

/// Seeded init: weights `U(−1/√fan_in, 1/√fan_in)`, biases zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    let layout = Arc::new(spec.layout()?);
    let mut params = ParamVector::zeros(layout);
    let mut rng = rng_from(&[seed, 0x1a17]);
    let mut fill = |params: &mut ParamVector, name: &str, fan_in: usize| -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for w in params.segment_slice_mut(name)? {
            *w = rng.random_range(-bound..bound);
        }
        Ok(())
    };
    let mut fan_in = spec.input_dim;
    for (l, &w) in spec.trunk_widths.iter().enumerate() {
        fill(&mut params, &ModelSpec::trunk_weight_name(l), fan_in)?;
        fan_in = w;
    }
    let mut heads: Vec<usize> = spec.heads.iter().map(|h| h.task_id).collect();
    heads.sort_unstable();
    for t in heads {
        fill(&mut params, &ModelSpec::head_weight_name(t), fan_in)?;
    }
    Ok(params)
}

struct Trace {
    /// Layer inputs; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Trunk pre-activations, one per trunk layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

fn check_params(spec: &ModelSpec, params: &ParamVector) -> Result<()> {
    let expected = spec.layout()?;
    if **params.layout() != expected {
        return Err(Error::Structural(format!(
            "parameter layout ({} entries) does not match model spec ({} entries)",
            params.len(),
            expected.total_dim()
        )));
    }
    Ok(())
}

fn weight_view<'a>(params: &'a ParamVector, layer: &LayerRef) -> Result<ArrayView2<'a, f64>> {
    let w = params.segment_slice(&layer.weight)?;
    ArrayView2::from_shape((layer.fan_out, layer.fan_in), w)
        .map_err(|e| Error::Structural(format!("{}: {e}", layer.weight)))
}

fn affine(params: &ParamVector, layer: &LayerRef, x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut z = x.dot(&weight_view(params, layer)?.t());
    if let Some(b) = &layer.bias {
        z += &ArrayView1::from(params.segment_slice(b)?);
    }
    Ok(z)
}

fn run(spec: &ModelSpec, params: &ParamVector, inputs: ArrayView2<f64>, task_id: usize) -> Result<Trace> {
    check_params(spec, params)?;
    if inputs.ncols() != spec.input_dim {
        return Err(Error::Structural(format!(
            "inputs have {} columns but model expects {}",
            inputs.ncols(),
            spec.input_dim
        )));
    }
    let path = spec.path(task_id)?;
    let (head, trunk) = path.split_last().expect("path always has a head");
    let mut layer_inputs = vec![inputs.to_owned()];
    let mut pre = Vec::with_capacity(trunk.len());
    for layer in trunk {
        let z = affine(params, layer, layer_inputs.last().unwrap())?;
        let a = z.mapv(|v| spec.activation.apply(v));
        pre.push(z);
        layer_inputs.push(a);
    }
    let output = affine(params, head, layer_inputs.last().unwrap())?;
    Ok(Trace {
        inputs: layer_inputs,
        pre,
        output,
    })
}

/// Raw head outputs (logits for classification heads) for `task_id`.
///
/// Reads only trunk parameters and the parameters of that task's head.
pub fn forward(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: ArrayView2<f64>,
    task_id: usize,
) -> Result<Array2<f64>> {
    Ok(run(spec, params, inputs, task_id)?.output)
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Loss value and its gradient with respect to the head outputs.
pub(crate) fn loss_and_output_grad(
    kind: LossKind,
    output: &Array2<f64>,
    targets: &Array2<f64>,
) -> (f64, Array2<f64>) {
    let n = output.nrows() as f64;
    match kind {
        LossKind::Mse => {
            let resid = output - targets;
            let loss = 0.5 * resid.mapv(|r| r * r).sum() / n;
            (loss, resid / n)
        }
        LossKind::SoftmaxCe => {
            let mut grad = Array2::zeros(output.raw_dim());
            let mut loss = 0.0;
            for ((z, y), mut g) in output
                .outer_iter()
                .zip(targets.outer_iter())
                .zip(grad.outer_iter_mut())
            {
                let lse = log_sum_exp(z);
                let mass = y.sum();
                for ((gi, &zi), &yi) in g.iter_mut().zip(z.iter()).zip(y.iter()) {
                    loss -= yi * (zi - lse);
                    *gi = ((zi - lse).exp() * mass - yi) / n;
                }
            }
            (loss / n, grad)
        }
        LossKind::Bce => {
            let count = output.len() as f64;
            let mut loss = 0.0;
            let grad = ndarray::Zip::from(output)
                .and(targets)
                .map_collect(|&z, &y| {
                    loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                    (1.0 / (1.0 + (-z).exp()) - y) / count
                });
            (loss / count, grad)
        }
    }
}

fn check_batch(spec: &ModelSpec, batch: &Batch) -> Result<LossKind> {
    let head = spec.head(batch.task_id)?;
    if batch.inputs.nrows() == 0 {
        return Err(Error::Structural("empty batch".into()));
    }
    if batch.targets.nrows() != batch.inputs.nrows() || batch.targets.ncols() != head.output_dim {
        return Err(Error::Structural(format!(
            "targets are {}x{} but batch has {} rows and head {} has {} outputs",
            batch.targets.nrows(),
            batch.targets.ncols(),
            batch.inputs.nrows(),
            batch.task_id,
            head.output_dim
        )));
    }
    Ok(head.loss)
}

/// Mean task loss on `batch` and its gradient over the full layout.
///
/// Gradient entries belonging to other tasks' heads are exactly zero.
pub fn loss_and_grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    let kind = check_batch(spec, batch)?;
    let trace = run(spec, params, batch.inputs.view(), batch.task_id)?;
    let (loss, mut delta) = loss_and_output_grad(kind, &trace.output, &batch.targets);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("loss is {loss}")));
    }

    let mut grad = ParamVector::zeros(params.layout().clone());
    let path = spec.path(batch.task_id)?;
    for (i, layer) in path.iter().enumerate().rev() {
        let x = &trace.inputs[i];
        let dw = delta.t().dot(x);
        // `dw` may come back column-major; copy in logical (row-major) order.
        for (g, &v) in grad.segment_slice_mut(&layer.weight)?.iter_mut().zip(dw.iter()) {
            *g = v;
        }
        if let Some(b) = &layer.bias {
            let db: Array1<f64> = delta.sum_axis(Axis(0));
            grad.segment_slice_mut(b)?.copy_from_slice(db.as_slice().unwrap());
        }
        if i > 0 {
            let upstream = delta.dot(&weight_view(params, layer)?);
            let z = &trace.pre[i - 1];
            let a = &trace.inputs[i];
            delta = ndarray::Zip::from(&upstream)
                .and(z)
                .and(a)
                .map_collect(|&g, &z, &a| g * spec.activation.derivative(z, a));
        }
    }
    grad.check_finite("gradient")?;
    Ok((loss, grad))
}

/// Mean task loss only.
pub fn loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    let kind = check_batch(spec, batch)?;
    let out = forward(spec, params, batch.inputs.view(), batch.task_id)?;
    Ok(loss_and_output_grad(kind, &out, &batch.targets).0)
}
