//! Task metrics, the cross-task relative gain score and activation overlap.

use std::collections::BTreeSet;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::select::{retained_count, select_by_magnitude, Rank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Mean over all entries of `(pred − target)²`, no ½ factor.
    Mse,
    /// Fraction of rows whose argmax matches. Single-column outputs are
    /// treated as logits thresholded at 0 against targets thresholded at ½.
    Accuracy,
}

impl MetricKind {
    pub fn direction(self) -> Direction {
        match self {
            MetricKind::Mse => Direction::LowerBetter,
            MetricKind::Accuracy => Direction::HigherBetter,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    pub fn alpha(self) -> f64 {
        match self {
            Direction::HigherBetter => 1.0,
            Direction::LowerBetter => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDef {
    pub name: String,
    pub direction: Direction,
    pub kind: MetricKind,
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn task_metric(pred: ArrayView2<f64>, target: ArrayView2<f64>, kind: MetricKind) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Structural(format!(
            "prediction shape {:?} vs target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Metric("metric over empty input".into()));
    }
    let n = pred.nrows() as f64;
    Ok(match kind {
        MetricKind::Mse => {
            pred.iter().zip(target.iter()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
        }
        MetricKind::Accuracy if pred.ncols() == 1 => {
            let hits = pred
                .iter()
                .zip(target.iter())
                .filter(|(&p, &t)| (p > 0.0) == (t > 0.5))
                .count();
            hits as f64 / n
        }
        MetricKind::Accuracy => {
            let hits = pred
                .outer_iter()
                .zip(target.outer_iter())
                .filter(|(p, t)| argmax(p.view()) == argmax(t.view()))
                .count();
            hits as f64 / n
        }
    })
}

/// Mean signed relative change, in percent:
/// `(1/T) Σ_t α_t (enhanced_t − base_t) / base_t × 100`.
pub fn delta_score(base: &[f64], enhanced: &[f64], alphas: &[f64]) -> Result<f64> {
    Ok(DeltaReport::compute(None, base, enhanced, alphas)?.delta_percent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub name: String,
    pub alpha: f64,
    pub base: f64,
    pub enhanced: f64,
    pub relative_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub metrics: Vec<DeltaEntry>,
    pub delta_percent: f64,
}

impl DeltaReport {
    /// `names` defaults to `m0, m1, ...` when absent.
    pub fn compute(names: Option<&[String]>, base: &[f64], enhanced: &[f64], alphas: &[f64]) -> Result<Self> {
        let t = base.len();
        if t == 0 || enhanced.len() != t || alphas.len() != t || names.is_some_and(|n| n.len() != t) {
            return Err(Error::Structural(format!(
                "delta score needs equal non-empty lengths, got base={t} enhanced={} alphas={}",
                enhanced.len(),
                alphas.len()
            )));
        }
        if let Some(a) = alphas.iter().find(|a| a.abs() != 1.0) {
            return Err(Error::Metric(format!("alpha must be +1 or -1, got {a}")));
        }
        let mut metrics = Vec::with_capacity(t);
        for i in 0..t {
            if base[i] == 0.0 {
                return Err(Error::Metric(format!("base score for metric {i} is zero")));
            }
            let relative = alphas[i] * (enhanced[i] - base[i]) / base[i] * 100.0;
            metrics.push(DeltaEntry {
                name: names.map_or_else(|| format!("m{i}"), |n| n[i].clone()),
                alpha: alphas[i],
                base: base[i],
                enhanced: enhanced[i],
                relative_percent: relative,
            });
        }
        let delta_percent = metrics.iter().map(|m| m.relative_percent).sum::<f64>() / t as f64;
        if !delta_percent.is_finite() {
            return Err(Error::Metric("delta score is not finite".into()));
        }
        Ok(DeltaReport { metrics, delta_percent })
    }
}

/// Indices of the `max(1, ⌊q·d⌋)` largest-magnitude coordinates.
pub fn activation_set(delta: &[f64], q: f64) -> Result<BTreeSet<usize>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("q must lie in (0, 1], got {q}")));
    }
    let k = retained_count(q, delta.len());
    Ok(select_by_magnitude(delta, k, Rank::Largest).into_iter().collect())
}

/// `activation_set` over a whole parameter vector.
pub fn activation_set_of(delta: &ParamVector, q: f64) -> Result<BTreeSet<usize>> {
    activation_set(delta.values(), q)
}

/// Pairwise Jaccard index `|S_i ∩ S_j| / |S_i ∪ S_j|`; an empty union counts as 0.
pub fn overlap_matrix(sets: &[BTreeSet<usize>]) -> Result<Vec<Vec<f64>>> {
    if sets.len() < 2 {
        return Err(Error::Analysis("overlap needs at least two sets".into()));
    }
    let k = sets.len();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        m[i][i] = 1.0;
        for j in i + 1..k {
            let inter = sets[i].intersection(&sets[j]).count();
            let union = sets[i].union(&sets[j]).count();
            let v = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

pub fn mean_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let k = m.len();
    if k < 2 {
        return 0.0;
    }
    let total: f64 = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[i][j])
        .sum();
    total / (k * (k - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn task_metric_examples() {
        assert_eq!(task_metric(array![[1.0, 2.0]].view(), array![[1.0, 2.0]].view(), MetricKind::Mse).unwrap(), 0.0);
        assert_eq!(task_metric(array![[0.0]].view(), array![[2.0]].view(), MetricKind::Mse).unwrap(), 4.0);
        let onehot = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        assert_eq!(task_metric(onehot.view(), onehot.view(), MetricKind::Accuracy).unwrap(), 1.0);
        let logits = array![[0.3], [-1.0], [2.0], [-0.1]];
        let labels = array![[1.0], [0.0], [0.0], [0.0]];
        assert_eq!(task_metric(logits.view(), labels.view(), MetricKind::Accuracy).unwrap(), 0.75);
        let empty = ndarray::Array2::<f64>::zeros((0, 1));
        assert!(matches!(task_metric(empty.view(), empty.view(), MetricKind::Mse), Err(Error::Metric(_))));
    }

    #[test]
    fn delta_identity_and_errors() {
        assert_eq!(delta_score(&[1.0, 2.0], &[1.0, 2.0], &[1.0, -1.0]).unwrap(), 0.0);
        assert!(matches!(delta_score(&[0.0], &[1.0], &[1.0]), Err(Error::Metric(_))));
        assert!(matches!(delta_score(&[1.0, 2.0], &[1.0], &[1.0, 1.0]), Err(Error::Structural(_))));
        assert!(delta_score(&[], &[], &[]).is_err());
    }

    #[test]
    fn delta_report_json_shape() {
        let names = vec!["a".to_string(), "b".to_string()];
        let r = DeltaReport::compute(Some(&names), &[2.0, 4.0], &[3.0, 3.0], &[1.0, -1.0]).unwrap();
        assert_eq!(r.metrics[0].relative_percent, 50.0);
        assert_eq!(r.metrics[1].relative_percent, 25.0);
        assert_eq!(r.delta_percent, 37.5);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["metrics"][1]["name"], "b");
        assert_eq!(v["metrics"][1]["alpha"], -1.0);
        assert_eq!(v["delta_percent"], 37.5);
    }

    #[test]
    fn activation_set_examples() {
        let s: Vec<usize> = activation_set(&[3.0, -1.0, 0.5, 2.0], 0.5).unwrap().into_iter().collect();
        assert_eq!(s, [0, 3]);
        assert_eq!(activation_set(&[3.0, -1.0, 0.5, 2.0], 1.0).unwrap().len(), 4);
        let z: Vec<usize> = activation_set(&[0.0; 4], 0.25).unwrap().into_iter().collect();
        assert_eq!(z, [0]);
        assert!(activation_set(&[1.0], 0.0).is_err());
    }

    #[test]
    fn overlap_examples() {
        let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        let m = overlap_matrix(&[s(&[0, 3]), s(&[1, 2])]).unwrap();
        assert_eq!(m, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m = overlap_matrix(&[s(&[0, 1]), s(&[0, 1])]).unwrap();
        assert_eq!(m[0][1], 1.0);
        let m = overlap_matrix(&[s(&[0, 1]), s(&[1, 2])]).unwrap();
        assert!((m[0][1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(overlap_matrix(&[s(&[0])]).is_err());
    }

    proptest! {
        #[test]
        fn delta_sign_correct(
            base in prop::collection::vec(0.1f64..100.0, 1..6),
            pick in 0usize..6,
            bump in 0.01f64..0.5,
            higher in any::<bool>(),
        ) {
            let i = pick % base.len();
            let mut alphas = vec![1.0; base.len()];
            let mut enhanced = base.clone();
            if higher {
                enhanced[i] *= 1.0 + bump;
            } else {
                alphas[i] = -1.0;
                enhanced[i] *= 1.0 - bump;
            }
            prop_assert_eq!(delta_score(&base, &base, &alphas).unwrap(), 0.0);
            prop_assert!(delta_score(&base, &enhanced, &alphas).unwrap() > 0.0);
        }

        #[test]
        fn overlap_is_symmetric_unit_diagonal(
            raw in prop::collection::vec(prop::collection::btree_set(0usize..30, 1..10), 2..6)
        ) {
            let m = overlap_matrix(&raw).unwrap();
            for (i, row) in m.iter().enumerate() {
                prop_assert_eq!(row[i], 1.0);
                for (j, &v) in row.iter().enumerate() {
                    prop_assert_eq!(v, m[j][i]);
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
