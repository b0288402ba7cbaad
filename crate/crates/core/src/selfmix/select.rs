//! Loss-based clean/noisy split.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::gmm::{fit_gmm_with, posterior_clean, GmmOptions, GmmParams};

/// Partition of the training ids into a labeled (likely clean) set and an
/// unlabeled (likely noisy) set.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DataSplit {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    /// Clean posterior per id.
    pub posteriors: Vec<f64>,
    pub tau: f64,
    pub epoch: usize,
    pub gmm: Option<GmmParams>,
}

impl DataSplit {
    /// Split by `w_i >= tau`.
    pub fn from_posteriors(posteriors: Vec<f64>, tau: f64, epoch: usize) -> Self {
        let (labeled, unlabeled) = (0..posteriors.len()).partition(|&i| posteriors[i] >= tau);
        DataSplit {
            labeled,
            unlabeled,
            posteriors,
            tau,
            epoch,
            gmm: None,
        }
    }

    /// Every id labeled, used when the scores carry no separating signal.
    pub fn all_labeled(n: usize, tau: f64, epoch: usize) -> Self {
        Self::from_posteriors(vec![1.0; n], tau, epoch)
    }

    pub fn len(&self) -> usize {
        self.posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posteriors.is_empty()
    }

    pub fn labeled_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for &i in &self.labeled {
            mask[i] = true;
        }
        mask
    }

    pub fn unlabeled_set(&self) -> BTreeSet<usize> {
        self.unlabeled.iter().copied().collect()
    }
}

/// Fit a two-component GMM to `scores` and split at clean posterior `tau`.
pub fn select_split(
    scores: &[f64],
    tau: f64,
    options: GmmOptions,
    epoch: usize,
) -> Result<DataSplit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::arg(format!("threshold {tau} not in (0, 1)")));
    }
    let gmm = fit_gmm_with(scores, options)?.params;
    let posteriors = scores.iter().map(|&s| posterior_clean(&gmm, s)).collect();
    let mut split = DataSplit::from_posteriors(posteriors, tau, epoch);
    split.gmm = Some(gmm);
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selfmix::metrics::SelectionMetrics;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn bimodal() -> (Vec<f64>, BTreeSet<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let clean = Normal::new(0.5, 0.1).unwrap();
        let noisy = Normal::new(3.0, 0.5).unwrap();
        let mut v = Vec::new();
        let mut flipped = BTreeSet::new();
        for i in 0..2000 {
            if i % 2 == 0 {
                v.push(clean.sample(&mut rng));
            } else {
                v.push(noisy.sample(&mut rng));
                flipped.insert(i);
            }
        }
        (v, flipped)
    }

    #[test]
    fn bimodal_split_f1() {
        let (v, flipped) = bimodal();
        let split = select_split(&v, 0.5, GmmOptions::default(), 0).unwrap();
        let m = SelectionMetrics::from_sets(&split.unlabeled_set(), &flipped);
        assert!(m.f1 >= 0.95, "{m:?}");
    }

    #[test]
    fn tau_boundaries() {
        let v: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let split = select_split(&v, 1e-12, GmmOptions::default(), 0).unwrap();
        assert!(split.unlabeled.is_empty());
        assert!(split.posteriors.iter().all(|&w| w > 0.0 && w < 1.0));
        let hi = 1.0 - 1e-12;
        let split = select_split(&v, hi, GmmOptions::default(), 0).unwrap();
        assert!(split.labeled.is_empty());
        assert!(select_split(&v, 1.0, GmmOptions::default(), 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn prop_partition_and_tau_monotone(
            posteriors in proptest::collection::vec(0.0f64..=1.0, 0..100),
            t1 in 0.001f64..0.999, t2 in 0.001f64..0.999,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = DataSplit::from_posteriors(posteriors.clone(), lo, 0);
            let b = DataSplit::from_posteriors(posteriors.clone(), hi, 0);
            for s in [&a, &b] {
                let mut all: Vec<usize> = s.labeled.iter().chain(&s.unlabeled).copied().collect();
                all.sort();
                prop_assert_eq!(all, (0..posteriors.len()).collect::<Vec<_>>());
                for &i in &s.labeled { prop_assert!(s.posteriors[i] >= s.tau); }
                for &i in &s.unlabeled { prop_assert!(s.posteriors[i] < s.tau); }
            }
            // Raising tau never moves an id from unlabeled to labeled.
            let b_labeled: BTreeSet<usize> = b.labeled.iter().copied().collect();
            for i in &a.unlabeled { prop_assert!(!b_labeled.contains(i)); }
        }
    }
}
