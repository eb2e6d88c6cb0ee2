//! Flat parameter vectors with a named layout.
//!
//! Every model parameter, local update and aggregated update in the simulator
//! is a [`ParamVector`]: a dense `f64` buffer paired with a [`ParamLayout`]
//! mapping component names (`trunk.0.weight`, `head.2.bias`, ...) onto
//! contiguous index ranges.

mod checkpoint;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub length: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.length
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LayoutRepr", into = "LayoutRepr")]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct LayoutRepr {
    segments: Vec<Segment>,
    total_dim: usize,
}

impl TryFrom<LayoutRepr> for ParamLayout {
    type Error = Error;

    fn try_from(repr: LayoutRepr) -> Result<Self> {
        let layout = ParamLayout::from_segments(repr.segments)?;
        if layout.total_dim != repr.total_dim {
            return Err(Error::Structural(format!(
                "layout declares total_dim {} but segments cover {}",
                repr.total_dim, layout.total_dim
            )));
        }
        Ok(layout)
    }
}

impl From<ParamLayout> for LayoutRepr {
    fn from(layout: ParamLayout) -> Self {
        LayoutRepr {
            segments: layout.segments,
            total_dim: layout.total_dim,
        }
    }
}

impl ParamLayout {
    /// Builds a contiguous layout from `(name, length)` pairs in order.
    pub fn new<S: Into<String>>(parts: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut offset = 0;
        let segments = parts
            .into_iter()
            .map(|(name, length)| {
                let seg = Segment {
                    name: name.into(),
                    offset,
                    length,
                };
                offset += length;
                seg
            })
            .collect();
        Self::from_segments(segments)
    }

    /// A single anonymous segment named `flat`.
    pub fn flat(dim: usize) -> Self {
        Self::new([("flat", dim)]).expect("single segment layout is valid")
    }

    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut expected = 0;
        for (i, seg) in segments.iter().enumerate() {
            if seg.offset != expected {
                return Err(Error::Structural(format!(
                    "segment `{}` starts at {} but previous segments end at {}",
                    seg.name, seg.offset, expected
                )));
            }
            if seg.length == 0 {
                return Err(Error::Structural(format!("segment `{}` is empty", seg.name)));
            }
            if segments[..i].iter().any(|s| s.name == seg.name) {
                return Err(Error::Structural(format!(
                    "duplicate segment name `{}`",
                    seg.name
                )));
            }
            expected += seg.length;
        }
        Ok(ParamLayout {
            segments,
            total_dim: expected,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Result<&Segment> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::UnknownSegment(name.to_string()))
    }
}

/// Dense parameter (or update) vector tied to a layout.
///
/// Public constructors reject non-finite values, so any `ParamVector`
/// obtained through this API is finite.
#[derive(Debug, Clone)]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.bitwise_eq(other)
    }
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![0.0; layout.total_dim()];
        ParamVector { layout, values }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_dim() {
            return Err(Error::Structural(format!(
                "vector has {} entries but layout expects {}",
                values.len(),
                layout.total_dim()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(ParamVector { layout, values })
    }

    /// Convenience for tests and examples: a vector with a one-segment layout.
    pub fn flat(values: Vec<f64>) -> Result<Self> {
        Self::from_values(Arc::new(ParamLayout::flat(values.len())), values)
    }

    /// Rewraps already-validated buffers without rechecking finiteness.
    pub(crate) fn from_raw(layout: Arc<ParamLayout>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), layout.total_dim());
        ParamVector { layout, values }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn bitwise_eq(&self, other: &ParamVector) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn segment_slice(&self, name: &str) -> Result<&[f64]> {
        let seg = self.layout.segment(name)?;
        Ok(&self.values[seg.range()])
    }

    pub(crate) fn segment_slice_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let range = self.layout.segment(name)?.range();
        Ok(&mut self.values[range])
    }

    pub(crate) fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Structural(format!(
                "layout mismatch: {} vs {} parameters",
                self.len(),
                other.len()
            )))
        }
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numerical(format!(
                "{what}: non-finite value {} at index {i}",
                self.values[i]
            ))),
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ParamVector::from_raw(self.layout.clone(), values))
    }

    /// `self + scale * other`, elementwise, in place.
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        let values = self.values.iter().map(|v| v * factor).collect();
        ParamVector::from_raw(self.layout.clone(), values)
    }

    /// 64-bit digest of the little-endian value bytes.
    pub fn checksum(&self) -> u64 {
        let mut hasher = Sha256::new();
        for v in &self.values {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

pub fn norms(v: &ParamVector) -> Norms {
    norms_of(v.values())
}

pub(crate) fn norms_of(values: &[f64]) -> Norms {
    let mut l1 = 0.0;
    let mut sq = 0.0;
    let mut linf: f64 = 0.0;
    for &x in values {
        let a = x.abs();
        l1 += a;
        sq += x * x;
        linf = linf.max(a);
    }
    Norms {
        l1,
        l2: sq.sqrt(),
        linf,
    }
}

/// `Σ_k weights[k] · vectors[k]`, reduced in index order.
///
/// When every input vector is bitwise identical the result is `v · Σw`,
/// so weights whose floating-point sum is exactly 1 return `v` unchanged.
pub fn weighted_sum(vectors: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Structural("weighted_sum of zero vectors".into()))?;
    if weights.len() != vectors.len() {
        return Err(Error::Structural(format!(
            "{} weights for {} vectors",
            weights.len(),
            vectors.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Input(format!("invalid aggregation weight {w}")));
    }
    for v in vectors {
        first.check_layout(v)?;
        if v.values.iter().any(|x| x.is_nan()) {
            return Err(Error::Input("NaN in weighted_sum input".into()));
        }
    }

    let out = if vectors[1..].iter().all(|v| v.bitwise_eq(first)) {
        let total: f64 = weights.iter().sum();
        first.scaled(total)
    } else {
        let mut acc = vec![0.0; first.len()];
        for (v, &w) in vectors.iter().zip(weights) {
            for (a, x) in acc.iter_mut().zip(&v.values) {
                *a += w * x;
            }
        }
        ParamVector::from_raw(first.layout.clone(), acc)
    };
    out.check_finite("weighted_sum")?;
    Ok(out)
}
