//! Server-side aggregation pipeline.
//!
//! Order of operations for one round:
//! 1. FedNova step normalization (when `base = fednova`)
//! 2. PCGrad pairwise projection (when enabled)
//! 3. per-client decoupling: keep `max(1, ⌊ρd⌋)` coordinates of each update,
//!    zero the rest, optionally rescale the survivors by `1/ρ`
//! 4. `θ' = θ + server_lr · Σ_k w_k Δ̃_k`, reduced in client order

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::ClientUpdate;
use crate::error::{Error, Result};
use crate::params::{norms_of, weighted_sum, ParamVector};
use crate::seed::{derive_seed, rng_from};
use crate::select::{retained_count, select_by_magnitude, Rank};

/// Full index lists are logged only for vectors up to this size.
pub const MASK_INDEX_LOG_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskVariant {
    /// Largest magnitudes.
    Topk,
    /// Smallest magnitudes.
    Small,
    /// Seeded uniform choice of coordinates.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    #[default]
    Global,
    /// Select `max(1, ⌊ρ·len⌋)` coordinates inside every layout segment.
    PerSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeaConfig {
    pub enabled: bool,
    pub rho: f64,
    pub variant: MaskVariant,
    pub rescale: bool,
    pub scope: MaskScope,
    /// Rescale by the realized `d/k` instead of the nominal `1/ρ`.
    pub exact_fraction: bool,
    pub random_seed: u64,
}

impl Default for DeaConfig {
    fn default() -> Self {
        DeaConfig {
            enabled: false,
            rho: 0.25,
            variant: MaskVariant::Topk,
            rescale: true,
            scope: MaskScope::Global,
            exact_fraction: false,
            random_seed: 0,
        }
    }
}

/// Named configurations of the decoupling stage used by the ablation battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeaVariant {
    /// Top-k magnitudes with `1/ρ` rescaling.
    Full,
    /// Smallest magnitudes, rescaled.
    SmallMask,
    /// Top-k magnitudes without rescaling.
    NoRescale,
    /// Random coordinates, rescaled.
    RandomMask,
}

impl DeaVariant {
    pub const ALL: [DeaVariant; 4] = [
        DeaVariant::Full,
        DeaVariant::SmallMask,
        DeaVariant::NoRescale,
        DeaVariant::RandomMask,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DeaVariant::Full => "dea",
            DeaVariant::SmallMask => "dea_a_small_mask",
            DeaVariant::NoRescale => "dea_b_no_rescale",
            DeaVariant::RandomMask => "dea_c_random_mask",
        }
    }
}

impl DeaConfig {
    pub fn full(rho: f64) -> Self {
        Self::variant(DeaVariant::Full, rho)
    }

    pub fn variant(variant: DeaVariant, rho: f64) -> Self {
        let (v, rescale) = match variant {
            DeaVariant::Full => (MaskVariant::Topk, true),
            DeaVariant::SmallMask => (MaskVariant::Small, true),
            DeaVariant::NoRescale => (MaskVariant::Topk, false),
            DeaVariant::RandomMask => (MaskVariant::Random, true),
        };
        DeaConfig {
            enabled: true,
            rho,
            variant: v,
            rescale,
            ..DeaConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
    retained: usize,
}

impl Mask {
    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut bits = vec![false; len];
        for &i in indices {
            bits[i] = true;
        }
        let retained = bits.iter().filter(|&&b| b).count();
        Mask { bits, retained }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn retained(&self) -> usize {
        self.retained
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// First 16 hex chars of SHA-256 over the retained indices (u64 LE).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for i in self.indices() {
            h.update((i as u64).to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

fn select_in(values: &[f64], k: usize, cfg: &DeaConfig, salt: u64) -> Vec<usize> {
    match cfg.variant {
        MaskVariant::Topk => select_by_magnitude(values, k, Rank::Largest),
        MaskVariant::Small => select_by_magnitude(values, k, Rank::Smallest),
        MaskVariant::Random => {
            let mut idx: Vec<usize> = (0..values.len()).collect();
            idx.shuffle(&mut rng_from(&[cfg.random_seed, salt]));
            idx.truncate(k);
            idx.sort_unstable();
            idx
        }
    }
}

/// Chooses which coordinates of `delta` survive decoupling.
pub fn select_mask(delta: &ParamVector, cfg: &DeaConfig) -> Result<Mask> {
    check_rho(cfg.rho)?;
    delta.check_finite("select_mask input")?;
    let values = delta.values();
    let indices = match cfg.scope {
        MaskScope::Global => select_in(values, retained_count(cfg.rho, values.len()), cfg, 0),
        MaskScope::PerSegment => {
            let mut all = Vec::new();
            for (s, seg) in delta.layout().segments().iter().enumerate() {
                let local = &values[seg.range()];
                let k = retained_count(cfg.rho, local.len());
                all.extend(select_in(local, k, cfg, s as u64 + 1).into_iter().map(|i| i + seg.offset));
            }
            all
        }
    };
    Ok(Mask::from_indices(values.len(), &indices))
}

/// `m ⊙ Δ`: retained entries bitwise unchanged, the rest exactly zero.
pub fn decouple(delta: &ParamVector, mask: &Mask) -> Result<ParamVector> {
    if mask.len() != delta.len() {
        return Err(Error::Structural(format!(
            "mask of length {} applied to vector of length {}",
            mask.len(),
            delta.len()
        )));
    }
    let values = delta
        .values()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &keep)| if keep { v } else { 0.0 })
        .collect();
    Ok(ParamVector::from_raw(delta.layout().clone(), values))
}

/// Multiplies every entry by `1/ρ`.
pub fn recalibrate(masked: &ParamVector, rho: f64) -> Result<ParamVector> {
    check_rho(rho)?;
    let out = masked.scaled(1.0 / rho);
    out.check_finite("recalibrate")?;
    Ok(out)
}

/// Per-client record of what decoupling kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub client_id: usize,
    pub k: usize,
    pub l1_retained_fraction: f64,
    pub l2_retained_fraction: f64,
    pub mask_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
}

fn fraction(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        part / whole
    } else {
        1.0
    }
}

impl MaskStats {
    fn new(client_id: usize, delta: &ParamVector, masked: &ParamVector, mask: &Mask) -> Self {
        let full = norms_of(delta.values());
        let kept = norms_of(masked.values());
        MaskStats {
            client_id,
            k: mask.retained(),
            l1_retained_fraction: fraction(kept.l1, full.l1),
            l2_retained_fraction: fraction(kept.l2, full.l2),
            mask_digest: mask.digest(),
            indices: (mask.len() <= MASK_INDEX_LOG_LIMIT).then(|| mask.indices()),
        }
    }
}

fn rescale(masked: ParamVector, mask: &Mask, cfg: &DeaConfig) -> Result<ParamVector> {
    if !cfg.exact_fraction {
        return recalibrate(&masked, cfg.rho);
    }
    let layout = masked.layout().clone();
    let mut values = masked.into_values();
    let ranges: Vec<std::ops::Range<usize>> = match cfg.scope {
        MaskScope::Global => std::iter::once(0..values.len()).collect(),
        MaskScope::PerSegment => layout.segments().iter().map(|s| s.range()).collect(),
    };
    for r in ranges {
        let k = mask.bits()[r.clone()].iter().filter(|&&b| b).count();
        let factor = r.len() as f64 / k as f64;
        for v in &mut values[r] {
            *v *= factor;
        }
    }
    let out = ParamVector::from_raw(layout, values);
    out.check_finite("recalibrate")?;
    Ok(out)
}

/// Decoupling then (optionally) recalibration of one client update.
///
/// A disabled config returns the update untouched and no stats.
pub fn dea_transform(update: &ClientUpdate, cfg: &DeaConfig) -> Result<(ClientUpdate, Option<MaskStats>)> {
    if !cfg.enabled {
        return Ok((update.clone(), None));
    }
    cfg.validate()?;
    let mask = select_mask(&update.delta, cfg)?;
    let masked = decouple(&update.delta, &mask)?;
    let stats = MaskStats::new(update.client_id, &update.delta, &masked, &mask);
    let delta = if cfg.rescale { rescale(masked, &mask, cfg)? } else { masked };
    Ok((ClientUpdate { delta, ..update.clone() }, Some(stats)))
}

/// Pairwise gradient-surgery projection.
///
/// Each delta is projected, in a seeded random order over the other clients'
/// original deltas, off every direction it conflicts with:
/// `g ← g − (g·g_j / ‖g_j‖²) g_j` whenever `g·g_j < 0`. Zero-norm deltas are
/// skipped. Non-conflicting inputs come back bitwise unchanged.
pub fn pcgrad_project(updates: &[ClientUpdate], seed: u64) -> Result<Vec<ClientUpdate>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Protocol("pcgrad_project needs at least one update".into()))?;
    for u in updates {
        first.delta.check_layout(&u.delta)?;
    }
    let sq_norms: Vec<f64> = updates.iter().map(|u| norms_of(u.delta.values()).l2.powi(2)).collect();
    let mut out = Vec::with_capacity(updates.len());
    for (i, u) in updates.iter().enumerate() {
        let mut others: Vec<usize> = (0..updates.len()).filter(|&j| j != i).collect();
        others.shuffle(&mut rng_from(&[seed, i as u64, 0x9C6]));
        let mut g = u.delta.clone();
        for j in others {
            if sq_norms[j] == 0.0 {
                continue;
            }
            let gj = &updates[j].delta;
            let dot = g.dot(gj)?;
            if dot < 0.0 {
                g.add_scaled(gj, -dot / sq_norms[j])?;
            }
        }
        g.check_finite("pcgrad")?;
        out.push(ClientUpdate { delta: g, ..u.clone() });
    }
    Ok(out)
}

/// Step normalization: `Δ_k ← (τ_eff / τ_k) Δ_k` with `τ_eff = Σ w_k τ_k / Σ w_k`.
///
/// Equal step counts leave every update bitwise unchanged.
pub fn fednova_normalize(updates: &[ClientUpdate], weights: &[f64]) -> Result<Vec<ClientUpdate>> {
    if weights.len() != updates.len() {
        return Err(Error::Structural(format!(
            "{} weights for {} updates",
            weights.len(),
            updates.len()
        )));
    }
    if updates.iter().any(|u| u.local_steps == 0) {
        return Err(Error::Protocol("fednova requires local_steps >= 1 for every client".into()));
    }
    let Some(tau0) = updates.first().map(|u| u.local_steps) else {
        return Ok(Vec::new());
    };
    if updates.iter().all(|u| u.local_steps == tau0) {
        return Ok(updates.to_vec());
    }
    let wsum: f64 = weights.iter().sum();
    if wsum.is_nan() || wsum <= 0.0 {
        return Err(Error::Config("fednova weights sum to zero".into()));
    }
    let tau_eff = updates
        .iter()
        .zip(weights)
        .map(|(u, w)| w * u.local_steps as f64)
        .sum::<f64>()
        / wsum;
    Ok(updates
        .iter()
        .map(|u| ClientUpdate {
            delta: u.delta.scaled(tau_eff / u.local_steps as f64),
            ..u.clone()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseRule {
    #[default]
    Fedavg,
    Fednova,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `w_k = N_k / Σ_j N_j`
    #[default]
    DataSize,
    Uniform,
}

fn default_server_lr() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationPolicy {
    #[serde(default)]
    pub base: BaseRule,
    #[serde(default)]
    pub dea: DeaConfig,
    #[serde(default)]
    pub pcgrad: bool,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
}

impl Default for AggregationPolicy {
    fn default() -> Self {
        AggregationPolicy {
            base: BaseRule::Fedavg,
            dea: DeaConfig::default(),
            pcgrad: false,
            weighting: Weighting::DataSize,
            server_lr: 1.0,
        }
    }
}

impl AggregationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.server_lr.is_finite() && self.server_lr > 0.0) {
            return Err(Error::Config(format!(
                "server_lr must be finite and > 0, got {}",
                self.server_lr
            )));
        }
        self.dea.validate()
    }
}

pub fn aggregation_weights(updates: &[ClientUpdate], weighting: Weighting) -> Result<Vec<f64>> {
    match weighting {
        Weighting::Uniform => Ok(vec![1.0 / updates.len() as f64; updates.len()]),
        Weighting::DataSize => {
            let total: usize = updates.iter().map(|u| u.n_samples).sum();
            if total == 0 {
                return Err(Error::Config("aggregation weights degenerate: total sample count is 0".into()));
            }
            Ok(updates
                .iter()
                .map(|u| u.n_samples as f64 / total as f64)
                .collect())
        }
    }
}

/// One server step. `round_seed` feeds the PCGrad ordering and random masks.
pub fn aggregate(
    theta: &ParamVector,
    updates: &[ClientUpdate],
    policy: &AggregationPolicy,
    round_seed: u64,
) -> Result<(ParamVector, Vec<MaskStats>)> {
    if updates.is_empty() {
        return Err(Error::Protocol("aggregate called with no client updates".into()));
    }
    policy.validate()?;
    for u in updates {
        theta.check_layout(&u.delta)?;
    }
    let weights = aggregation_weights(updates, policy.weighting)?;

    let mut stage = match policy.base {
        BaseRule::Fedavg => updates.to_vec(),
        BaseRule::Fednova => fednova_normalize(updates, &weights)?,
    };
    if policy.pcgrad {
        stage = pcgrad_project(&stage, derive_seed(&[round_seed, 0x9C6]))?;
    }
    let mut transformed = Vec::with_capacity(stage.len());
    let mut stats = Vec::new();
    for u in &stage {
        let cfg = DeaConfig {
            random_seed: derive_seed(&[policy.dea.random_seed, round_seed, u.client_id as u64]),
            ..policy.dea.clone()
        };
        let (t, s) = dea_transform(u, &cfg)?;
        transformed.push(t.delta);
        stats.extend(s);
    }

    let refs: Vec<&ParamVector> = transformed.iter().collect();
    let step = weighted_sum(&refs, &weights)?;
    let mut next = theta.clone();
    next.add_scaled(&step, policy.server_lr)?;
    next.check_finite("aggregated parameters")?;
    Ok((next, stats))
}
