//! Deterministic magnitude-ranked selection of vector coordinates.

use std::cmp::Ordering;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Largest,
    Smallest,
}

/// `max(1, ⌊fraction · len⌋)`, capped at `len`.
pub fn retained_count(fraction: f64, len: usize) -> usize {
    let k = (fraction * len as f64).floor() as usize;
    k.clamp(1, len.max(1)).min(len)
}

/// Indices of the `k` entries with the largest (or smallest) absolute value,
/// returned in ascending index order. Equal magnitudes go to the lower index.
pub fn select_by_magnitude(values: &[f64], k: usize, rank: Rank) -> Vec<usize> {
    let k = k.min(values.len());
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < values.len() {
        let cmp = |&a: &usize, &b: &usize| -> Ordering {
            let (ma, mb) = (values[a].abs(), values[b].abs());
            let by_mag = match rank {
                Rank::Largest => mb.total_cmp(&ma),
                Rank::Smallest => ma.total_cmp(&mb),
            };
            by_mag.then(a.cmp(&b))
        };
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(select_by_magnitude(&[0.5, -0.1, 0.3, -0.4], 2, Rank::Largest), [0, 3]);
        assert_eq!(select_by_magnitude(&[0.5, -0.1, 0.3, -0.4], 2, Rank::Smallest), [1, 2]);
        assert_eq!(select_by_magnitude(&[1.0; 4], 2, Rank::Largest), [0, 1]);
        assert_eq!(select_by_magnitude(&[1.0; 4], 2, Rank::Smallest), [0, 1]);
        assert_eq!(select_by_magnitude(&[0.0, -0.0, 0.0], 1, Rank::Largest), [0]);
        assert_eq!(retained_count(0.25, 4), 1);
        assert_eq!(retained_count(0.1, 4), 1);
        assert_eq!(retained_count(1.0, 7), 7);
    }

    proptest! {
        #[test]
        fn matches_full_sort(values in prop::collection::vec(-3i32..3, 1..40), frac in 0.01f64..1.0) {
            let v: Vec<f64> = values.iter().map(|&x| x as f64 * 0.5).collect();
            let k = retained_count(frac, v.len());
            let mut order: Vec<usize> = (0..v.len()).collect();
            order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
            let mut expect = order[..k].to_vec();
            expect.sort();
            prop_assert_eq!(select_by_magnitude(&v, k, Rank::Largest), expect);
        }
    }
}
