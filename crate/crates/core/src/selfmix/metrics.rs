use std::collections::BTreeSet;

/// Noise-detection quality of a split: "unlabeled" is the positive (noisy) prediction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SelectionMetrics {
    pub fn from_sets(predicted_noisy: &BTreeSet<usize>, flipped: &BTreeSet<usize>) -> Self {
        let hit = predicted_noisy.intersection(flipped).count() as f64;
        let ratio = |den: usize| if den == 0 { 0.0 } else { hit / den as f64 };
        let precision = ratio(predicted_noisy.len());
        let recall = ratio(flipped.len());
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SelectionMetrics {
            precision,
            recall,
            f1,
        }
    }
}

/// Fraction of `predicted` equal to `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let flipped: BTreeSet<usize> = (0..40).collect();
        let m = SelectionMetrics::from_sets(&flipped, &flipped);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));

        let m = SelectionMetrics::from_sets(&BTreeSet::new(), &flipped);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));

        let all: BTreeSet<usize> = (0..100).collect();
        let m = SelectionMetrics::from_sets(&all, &flipped);
        assert!((m.precision - 0.4).abs() < 1e-15);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 4.0 / 7.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn prop_matches_brute_force(
            noisy in proptest::collection::vec(any::<bool>(), 0..80),
            flipped in proptest::collection::vec(any::<bool>(), 0..80),
        ) {
            let n = noisy.len().min(flipped.len());
            let a: BTreeSet<usize> = (0..n).filter(|&i| noisy[i]).collect();
            let b: BTreeSet<usize> = (0..n).filter(|&i| flipped[i]).collect();
            let m = SelectionMetrics::from_sets(&a, &b);
            let mut tp = 0usize;
            for i in 0..n { if noisy[i] && flipped[i] { tp += 1; } }
            let p = if a.is_empty() { 0.0 } else { tp as f64 / a.len() as f64 };
            let r = if b.is_empty() { 0.0 } else { tp as f64 / b.len() as f64 };
            prop_assert!((m.precision - p).abs() < 1e-15);
            prop_assert!((m.recall - r).abs() < 1e-15);
            for v in [m.precision, m.recall, m.f1] { prop_assert!((0.0..=1.0).contains(&v)); }
            if p + r > 0.0 {
                prop_assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
            } else {
                prop_assert_eq!(m.f1, 0.0);
            }
        }
    }
}
