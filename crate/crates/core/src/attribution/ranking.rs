use serde::{Deserialize, Serialize};

use crate::attribution::grouping::GroupingAxis;
use crate::attribution::AttributionMatrix;
use crate::error::{Error, Result};

/// Groups ordered by mean absolute attribution, most important first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub axis: GroupingAxis,
    pub group_ids: Vec<usize>,
    /// Aggregated score of each entry of `group_ids`.
    pub scores: Vec<f64>,
}

impl ImportanceRanking {
    pub fn len(&self) -> usize {
        self.group_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_ids.is_empty()
    }

    /// The `k` highest-ranked groups.
    pub fn most_important(&self, k: usize) -> &[usize] {
        &self.group_ids[..k.min(self.len())]
    }

    /// The `k` lowest-ranked groups.
    pub fn least_important(&self, k: usize) -> &[usize] {
        &self.group_ids[self.len() - k.min(self.len())..]
    }
}

/// Mean of `|score|` over samples, sorted descending; ties go to the lower
/// stable id.
pub fn aggregate_rank(m: &AttributionMatrix) -> Result<ImportanceRanking> {
    if m.n_samples() == 0 || m.n_groups() == 0 {
        return Err(Error::Attribution("cannot rank an empty attribution matrix".into()));
    }
    let g = m.n_groups();
    let mut sums = vec![0f64; g];
    for row in m.scores.chunks_exact(g) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v.abs() as f64;
        }
    }
    let n = m.n_samples() as f64;
    let mut entries: Vec<(usize, f64)> = m
        .group_ids
        .iter()
        .zip(sums)
        .map(|(&id, s)| (id, s / n))
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ImportanceRanking {
        axis: m.axis,
        group_ids: entries.iter().map(|e| e.0).collect(),
        scores: entries.iter().map(|e| e.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(scores: Vec<f32>, groups: usize) -> AttributionMatrix {
        AttributionMatrix {
            sample_ids: (0..scores.len() / groups).collect(),
            axis: GroupingAxis::ByBand,
            group_ids: (0..groups).collect(),
            scores,
            estimator: "test".into(),
        }
    }

    #[test]
    fn absolute_means_decide_order() {
        let r = aggregate_rank(&matrix(vec![1.0, -3.0, -1.0, 3.0], 2)).unwrap();
        assert_eq!(r.group_ids, vec![1, 0]);
        assert_eq!(r.scores, vec![3.0, 1.0]);
    }

    #[test]
    fn all_zero_falls_back_to_ids() {
        let r = aggregate_rank(&matrix(vec![0.0; 8], 4)).unwrap();
        assert_eq!(r.group_ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_sample() {
        let r = aggregate_rank(&matrix(vec![0.5, -2.0, 1.0], 3)).unwrap();
        assert_eq!(r.group_ids, vec![1, 2, 0]);
    }

    #[test]
    fn empty_rejected() {
        assert!(aggregate_rank(&matrix(vec![], 2)).is_err());
    }

    #[test]
    fn extremes() {
        let r = aggregate_rank(&matrix(vec![4.0, 3.0, 2.0, 1.0], 4)).unwrap();
        assert_eq!(r.most_important(1), &[0]);
        assert_eq!(r.least_important(2), &[2, 3]);
    }

    proptest! {
        #[test]
        fn invariant_under_sample_order_and_scale(
            rows in proptest::collection::vec(proptest::collection::vec(-8i32..8, 4), 1..6),
            shift in 0usize..6,
            scale in 1u32..9,
        ) {
            let flat: Vec<f32> = rows.iter().flatten().map(|&v| v as f32 / 4.0).collect();
            let base = aggregate_rank(&matrix(flat.clone(), 4)).unwrap();

            let mut rotated = rows.clone();
            let len = rotated.len();
            rotated.rotate_left(shift % len);
            let rotated: Vec<f32> = rotated.iter().flatten().map(|&v| v as f32 / 4.0).collect();
            prop_assert_eq!(&aggregate_rank(&matrix(rotated, 4)).unwrap().group_ids, &base.group_ids);

            let scaled: Vec<f32> = flat.iter().map(|v| v * scale as f32).collect();
            prop_assert_eq!(&aggregate_rank(&matrix(scaled, 4)).unwrap().group_ids, &base.group_ids);
        }
    }
}
