//! Two-component, one-dimensional Gaussian mixture fit by EM.
//!
//! Component 0 is always the lower-mean one. For per-sample losses it is the
//! "clean" component and [`posterior_clean`] is the selection score.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const VAR_FLOOR: f64 = 1e-6;
pub const WEIGHT_FLOOR: f64 = 1e-4;
/// Means closer than this are treated as one component.
pub const MEAN_COINCIDENCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GmmParams {
    pub weight: [f64; 2],
    pub mean: [f64; 2],
    pub var: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub max_iter: usize,
    /// An EM step is kept only if it raises the log-likelihood by at least this much.
    pub tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// Result of a fit plus the log-likelihood of every EM iterate evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub params: GmmParams,
    /// `trace[0]` is the initialization; later entries include the final,
    /// rejected step when the fit stopped on `tol`.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

impl GmmParams {
    pub fn validate(&self) -> Result<()> {
        let ok_w = self.weight.iter().all(|w| *w >= 0.0)
            && ((self.weight[0] + self.weight[1]) - 1.0).abs() <= 1e-9;
        let ok_v = self.var.iter().all(|v| *v >= VAR_FLOOR);
        let ok_m = self.mean.iter().all(|m| m.is_finite());
        if ok_w && ok_v && ok_m {
            Ok(())
        } else {
            Err(Error::arg(format!("invalid GMM parameters {self:?}")))
        }
    }

    /// True when the two means coincide and selection carries no signal.
    pub fn is_degenerate(&self) -> bool {
        (self.mean[1] - self.mean[0]).abs() < MEAN_COINCIDENCE
    }

    fn log_joint(&self, k: usize, x: f64) -> f64 {
        self.weight[k].ln() + log_normal(x, self.mean[k], self.var[k])
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_likelihood(gmm: &GmmParams, values: &[f64]) -> f64 {
    values
        .iter()
        .map(|&x| log_add(gmm.log_joint(0, x), gmm.log_joint(1, x)))
        .sum()
}

/// Posterior probability that `value` belongs to the lower-mean component.
pub fn posterior_clean(gmm: &GmmParams, value: f64) -> f64 {
    if gmm.is_degenerate() {
        return 1.0;
    }
    let a = gmm.log_joint(0, value);
    let b = gmm.log_joint(1, value);
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return 0.5;
    }
    // Logistic of (a - b), evaluated on the side that cannot overflow.
    if a >= b {
        1.0 / (1.0 + (b - a).exp())
    } else {
        let r = (a - b).exp();
        r / (1.0 + r)
    }
}

pub fn posterior_noisy(gmm: &GmmParams, value: f64) -> f64 {
    1.0 - posterior_clean(gmm, value)
}

/// Fit with default options.
pub fn fit_gmm(values: &[f64]) -> Result<GmmParams> {
    Ok(fit_gmm_with(values, GmmOptions::default())?.params)
}

/// Fit a two-component mixture, initialized from the lower and upper halves of the sorted values.
pub fn fit_gmm_with(values: &[f64], options: GmmOptions) -> Result<GmmFit> {
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::arg(format!("non-finite value {bad} in GMM input")));
    }
    if options.tol.is_nan() || options.tol < 0.0 {
        return Err(Error::arg(format!(
            "tolerance {} must be >= 0",
            options.tol
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::Degenerate(format!(
            "GMM needs at least 2 distinct values, got {} values",
            values.len()
        )));
    }

    let half = sorted.len() / 2;
    let (lo, hi) = sorted.split_at(half);
    let (m0, v0) = mean_var(lo);
    let (m1, v1) = mean_var(hi);
    let mut params = GmmParams {
        weight: [0.5, 0.5],
        mean: [m0, m1],
        var: [v0.max(VAR_FLOOR), v1.max(VAR_FLOOR)],
    };

    let mut ll = log_likelihood(&params, values);
    let mut trace = vec![ll];
    let mut iterations = 0;
    for _ in 0..options.max_iter {
        let candidate = em_step(&params, values);
        let next = log_likelihood(&candidate, values);
        trace.push(next);
        if !(next - ll >= options.tol) {
            break;
        }
        params = candidate;
        ll = next;
        iterations += 1;
    }

    if params.mean[0] > params.mean[1] {
        params.weight.swap(0, 1);
        params.mean.swap(0, 1);
        params.var.swap(0, 1);
    }
    Ok(GmmFit {
        params,
        trace,
        iterations,
    })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn em_step(params: &GmmParams, values: &[f64]) -> GmmParams {
    let mut resp_sum = [0.0; 2];
    let mut weighted = [0.0; 2];
    let mut resp = Vec::with_capacity(values.len());
    for &x in values {
        let a = params.log_joint(0, x);
        let b = params.log_joint(1, x);
        let norm = log_add(a, b);
        let r0 = (a - norm).exp();
        let r = [r0, 1.0 - r0];
        for k in 0..2 {
            resp_sum[k] += r[k];
            weighted[k] += r[k] * x;
        }
        resp.push(r);
    }

    let n = values.len() as f64;
    let mut next = *params;
    for k in 0..2 {
        if resp_sum[k] > f64::MIN_POSITIVE {
            next.mean[k] = weighted[k] / resp_sum[k];
        }
    }
    for k in 0..2 {
        if resp_sum[k] > f64::MIN_POSITIVE {
            let ss: f64 = values
                .iter()
                .zip(&resp)
                .map(|(&x, r)| r[k] * (x - next.mean[k]) * (x - next.mean[k]))
                .sum();
            next.var[k] = (ss / resp_sum[k]).max(VAR_FLOOR);
        }
    }
    let mut w = [
        (resp_sum[0] / n).max(WEIGHT_FLOOR),
        (resp_sum[1] / n).max(WEIGHT_FLOOR),
    ];
    let total = w[0] + w[1];
    w.iter_mut().for_each(|x| *x /= total);
    next.weight = w;
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn bimodal(seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(0.5, 0.1).unwrap();
        let b = Normal::new(3.0, 0.5).unwrap();
        let mut v = Vec::new();
        let mut noisy = Vec::new();
        for _ in 0..1000 {
            v.push(a.sample(&mut rng));
            noisy.push(false);
            v.push(b.sample(&mut rng));
            noisy.push(true);
        }
        (v, noisy)
    }

    #[test]
    fn recovers_bimodal_mixture() {
        let (v, _) = bimodal(42);
        let fit = fit_gmm_with(&v, GmmOptions::default()).unwrap();
        let p = fit.params;
        assert!((p.mean[0] - 0.5).abs() <= 0.05, "{p:?}");
        assert!((p.mean[1] - 3.0).abs() <= 0.05, "{p:?}");
        assert!((p.weight[0] - 0.5).abs() <= 0.03);
        assert!((p.weight[1] - 0.5).abs() <= 0.03);
        p.validate().unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn zero_spread_clusters_hit_exact_means() {
        let v: Vec<f64> = (0..40)
            .map(|i| if i % 2 == 0 { 1.25 } else { 7.5 })
            .collect();
        let p = fit_gmm(&v).unwrap();
        assert_eq!(p.mean, [1.25, 7.5]);
        assert_eq!(p.var, [VAR_FLOOR, VAR_FLOOR]);
    }

    #[test]
    fn infinite_tol_returns_initialization() {
        let v = [0.0, 1.0, 2.0, 10.0, 11.0, 13.0];
        let fit = fit_gmm_with(
            &v,
            GmmOptions {
                max_iter: 50,
                tol: f64::INFINITY,
            },
        )
        .unwrap();
        assert_eq!(fit.iterations, 0);
        assert_eq!(fit.params.weight, [0.5, 0.5]);
        assert_eq!(fit.params.mean, [1.0, 34.0 / 3.0]);
        assert!((fit.params.var[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(fit_gmm(&[]), Err(Error::Degenerate(_))));
        assert!(matches!(fit_gmm(&[3.0]), Err(Error::Degenerate(_))));
        assert!(matches!(fit_gmm(&[2.0; 10]), Err(Error::Degenerate(_))));
        assert!(matches!(fit_gmm(&[1.0, f64::NAN]), Err(Error::Argument(_))));
    }

    #[test]
    fn log_likelihood_cases() {
        let single = GmmParams {
            weight: [1.0, 0.0],
            mean: [2.0, 50.0],
            var: [1.0, 1.0],
        };
        let expect = -(2.0 * PI).sqrt().ln();
        assert!((log_likelihood(&single, &[2.0]) - expect).abs() < 1e-12);
        assert!((expect + 0.9189).abs() < 1e-4);

        let twin = GmmParams {
            weight: [0.3, 0.7],
            mean: [1.0, 1.0],
            var: [2.0, 2.0],
        };
        let xs = [0.0, 1.5, 4.0];
        let one: f64 = xs.iter().map(|&x| log_normal(x, 1.0, 2.0)).sum();
        assert!((log_likelihood(&twin, &xs) - one).abs() < 1e-12);

        let base = [0.1, 0.2, 3.0];
        let p = fit_gmm(&base).unwrap();
        let far = [0.1, 0.2, 3.0, 1e3];
        assert!(log_likelihood(&p, &far) < log_likelihood(&p, &base));
    }

    #[test]
    fn posterior_cases() {
        let g = GmmParams {
            weight: [0.5, 0.5],
            mean: [1.0, 3.0],
            var: [1.0, 1.0],
        };
        assert!((posterior_clean(&g, 2.0) - 0.5).abs() < 1e-15);
        assert!(posterior_clean(&g, 1.0) > 0.5 && posterior_clean(&g, 3.0) < 0.5);

        let far = GmmParams {
            mean: [0.0, 10.0],
            ..g
        };
        // logit = 10 * (0 - 5) / 1 = -50 on the noisy side.
        let expect = 1.0 - 1.0 / (1.0 + 50f64.exp());
        assert!((posterior_clean(&far, 0.0) - expect).abs() < 1e-15);

        let same = GmmParams {
            mean: [2.0, 2.0],
            ..g
        };
        assert_eq!(posterior_clean(&same, 100.0), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn prop_em_monotone_and_deterministic(
            values in proptest::collection::vec(-5.0f64..5.0, 3..80),
        ) {
            prop_assume!(values.iter().any(|v| *v != values[0]));
            let opts = GmmOptions { max_iter: 60, tol: 0.0 };
            let fit = fit_gmm_with(&values, opts).unwrap();
            for w in fit.trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", fit.trace);
            }
            prop_assert!(fit.params.mean[0] <= fit.params.mean[1]);
            fit.params.validate().unwrap();
            prop_assert_eq!(fit, fit_gmm_with(&values, opts).unwrap());
        }

        #[test]
        fn prop_posterior_bounds(
            m0 in -5.0f64..5.0, gap in 0.0f64..5.0, v0 in 1e-3f64..4.0, v1 in 1e-3f64..4.0,
            w0 in 0.0f64..=1.0, x in -1e3f64..1e3,
        ) {
            let g = GmmParams { weight: [w0, 1.0 - w0], mean: [m0, m0 + gap], var: [v0, v1] };
            let c = posterior_clean(&g, x);
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!((c + posterior_noisy(&g, x) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn prop_equal_var_posterior_nonincreasing(
            m0 in -5.0f64..5.0, gap in 1e-3f64..5.0, var in 1e-2f64..4.0,
            x in -20.0f64..20.0, dx in 0.0f64..10.0,
        ) {
            let g = GmmParams { weight: [0.5, 0.5], mean: [m0, m0 + gap], var: [var, var] };
            prop_assert!(posterior_clean(&g, x + dx) <= posterior_clean(&g, x) + 1e-15);
        }
    }
}
