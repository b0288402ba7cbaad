//! Per-sample losses, label sharpening, embedding mixup and the three
//! training loss terms, as standalone functions over probabilities.
//!
//! The trainer computes the same quantities (with gradients) through
//! [`crate::encoder::backward`]; these functions are the reference values.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::data::ClassDistribution;
use crate::encoder::backward::{evaluate, Input, LossWeights, Objective, Term};
use crate::encoder::model::{log_softmax_vec, Dropout, ModelParams};
use crate::error::{Error, Result};
use crate::seed::mix_seed;
use crate::selfmix::corpus::Corpus;

/// Floor applied to probabilities before taking logs in [`rdrop_loss`].
pub const PROB_CLAMP: f64 = 1e-12;
/// Floor on per-class standard deviations in [`class_regularize`].
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Cross-entropy of each example against its observed label, dropout off.
pub fn per_sample_losses(model: &ModelParams, corpus: &Corpus) -> Result<Vec<f64>> {
    corpus
        .features
        .iter()
        .zip(&corpus.labels)
        .enumerate()
        .map(|(id, (f, &label))| {
            let e = model.encode(f)?;
            let logp = log_softmax_vec(&model.head_forward(&e, Dropout::Off));
            let loss = -logp[label];
            if loss.is_finite() {
                Ok(loss)
            } else {
                Err(Error::numeric(
                    format!("per-sample loss of example {id}"),
                    format!("{loss}"),
                ))
            }
        })
        .collect()
}

/// Standardize losses within each observed class: `(l - mean_c) / std_c`.
///
/// `std_c` is the population standard deviation, floored at [`SIGMA_FLOOR`].
pub fn class_regularize(losses: &[f64], labels: &[usize], num_classes: usize) -> Vec<f64> {
    assert_eq!(losses.len(), labels.len(), "one label per loss");
    let mut n = vec![0usize; num_classes];
    let mut sum = vec![0.0; num_classes];
    for (&l, &c) in losses.iter().zip(labels) {
        n[c] += 1;
        sum[c] += l;
    }
    let mean: Vec<f64> = sum
        .iter()
        .zip(&n)
        .map(|(s, &k)| if k > 0 { s / k as f64 } else { 0.0 })
        .collect();
    let mut ss = vec![0.0; num_classes];
    for (&l, &c) in losses.iter().zip(labels) {
        ss[c] += (l - mean[c]) * (l - mean[c]);
    }
    let sigma: Vec<f64> = ss
        .iter()
        .zip(&n)
        .map(|(s, &k)| {
            let sd = if k > 0 { (s / k as f64).sqrt() } else { 0.0 };
            sd.max(SIGMA_FLOOR)
        })
        .collect();
    losses
        .iter()
        .zip(labels)
        .map(|(&l, &c)| (l - mean[c]) / sigma[c])
        .collect()
}

/// Temperature sharpening: `p^(1/T)` renormalized.
pub fn sharpen(dist: &ClassDistribution, temperature: f64) -> Result<ClassDistribution> {
    sharpen_probs(dist.probs(), temperature).map(ClassDistribution::from_raw)
}

pub(crate) fn sharpen_probs(probs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::arg(format!("temperature {temperature} must be > 0")));
    }
    let max_log = probs
        .iter()
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_log.is_finite() {
        return Err(Error::numeric(
            "sharpen",
            "all-zero or invalid distribution",
        ));
    }
    let mut out: Vec<f64> = probs
        .iter()
        .map(|p| ((p.ln() - max_log) / temperature).exp())
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    Ok(out)
}

/// Draw `lambda ~ Beta(alpha, alpha)` and fold it to `max(lambda, 1 - lambda)`.
pub fn mix_coefficient<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta =
        Beta::new(alpha, alpha).map_err(|e| Error::arg(format!("Beta({alpha}, {alpha}): {e}")))?;
    let lambda: f64 = beta.sample(rng);
    Ok(lambda.max(1.0 - lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub embedding: Vec<f64>,
    pub target: ClassDistribution,
    pub lambda: f64,
}

/// EmbMix for one pair with a random coefficient.
pub fn embmix<R: Rng + ?Sized>(
    e_i: &[f64],
    y_i: &ClassDistribution,
    e_j: &[f64],
    y_j: &ClassDistribution,
    alpha: f64,
    rng: &mut R,
) -> Result<MixedSample> {
    let lambda = mix_coefficient(alpha, rng)?;
    embmix_with(e_i, y_i, e_j, y_j, lambda)
}

/// EmbMix with a given raw coefficient (folded to `max(lambda, 1 - lambda)`).
pub fn embmix_with(
    e_i: &[f64],
    y_i: &ClassDistribution,
    e_j: &[f64],
    y_j: &ClassDistribution,
    lambda: f64,
) -> Result<MixedSample> {
    if e_i.len() != e_j.len() {
        return Err(Error::arg(format!(
            "embedding widths differ: {} vs {}",
            e_i.len(),
            e_j.len()
        )));
    }
    if y_i.num_classes() != y_j.num_classes() {
        return Err(Error::arg("target widths differ"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::arg(format!(
            "mix coefficient {lambda} not in [0, 1]"
        )));
    }
    let lambda = lambda.max(1.0 - lambda);
    let embedding = e_i
        .iter()
        .zip(e_j)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let target = mix_targets(y_i.probs(), y_j.probs(), lambda);
    Ok(MixedSample {
        embedding,
        target: ClassDistribution::from_raw(target),
        lambda,
    })
}

pub(crate) fn mix_targets(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect()
}

/// A batch of mixed embeddings and their targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MixedBatch {
    pub embeddings: Vec<Vec<f64>>,
    pub targets: Vec<ClassDistribution>,
    pub lambdas: Vec<f64>,
}

impl MixedBatch {
    pub fn push(&mut self, sample: MixedSample) {
        self.embeddings.push(sample.embedding);
        self.targets.push(sample.target);
        self.lambdas.push(sample.lambda);
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Mean cross-entropy of head predictions on mixed embeddings.
///
/// Element `k` uses the dropout mask seeded by `mix_seed(dropout_seed, k)`.
pub fn mix_loss(mixed: &MixedBatch, model: &ModelParams, dropout_seed: u64) -> Result<f64> {
    let terms = mixed
        .embeddings
        .iter()
        .zip(&mixed.targets)
        .enumerate()
        .map(|(k, (e, y))| Term::CrossEntropy {
            input: Input::Embedding(e),
            target: y.probs(),
            dropout: Dropout::Seeded(mix_seed(dropout_seed, k as u64)),
        })
        .collect();
    let objective = Objective {
        terms,
        weights: LossWeights::default(),
        ..Default::default()
    };
    Ok(evaluate(&objective, model)?.cross_entropy)
}

/// Mean of `-log p[argmax p]`; zero for an empty set.
pub fn pseudo_loss(outputs: &[ClassDistribution]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let sum: f64 = outputs.iter().map(|p| -p.probs()[p.argmax()].ln()).sum();
    sum / outputs.len() as f64
}

/// Symmetric KL divergence `(KL(p1||p2) + KL(p2||p1)) / 2`.
pub fn rdrop_loss(p1: &ClassDistribution, p2: &ClassDistribution) -> f64 {
    p1.probs()
        .iter()
        .zip(p2.probs())
        .map(|(&a, &b)| {
            let (a, b) = (a.max(PROB_CLAMP), b.max(PROB_CLAMP));
            0.5 * (a - b) * (a.ln() - b.ln())
        })
        .sum()
}

/// Mean symmetric KL over pairs; zero for an empty set.
pub fn rdrop_batch(pairs: &[(ClassDistribution, ClassDistribution)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(a, b)| rdrop_loss(a, b)).sum::<f64>() / pairs.len() as f64
}

pub fn total_loss(l_mix: f64, l_p: f64, l_r: f64, lambda_p: f64, lambda_r: f64) -> Result<f64> {
    let total = l_mix + lambda_p * l_p + lambda_r * l_r;
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::numeric(
            "total loss",
            format!("mix={l_mix} pseudo={l_p} consistency={l_r}"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{one_hot, Dataset};
    use crate::encoder::model::{softmax, Dims};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> ClassDistribution {
        ClassDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn per_sample_losses_closed_forms() {
        let ds = Dataset::from_labeled("t", 4, [("a b", 0), ("c", 3), ("d e f", 2)]).unwrap();
        let corpus = Corpus::from_dataset(&ds, 32);
        // Zero head weights give uniform predictions.
        let mut m = ModelParams::init(Dims::new(32, 4, 4), 0.3, 0).unwrap();
        m.weights.w2.fill(0.0);
        for l in per_sample_losses(&m, &corpus).unwrap() {
            assert!((l - 4f64.ln()).abs() < 1e-12);
            assert!((l - 1.3863).abs() < 1e-4);
        }
        // Huge bias on class 0 gives loss ~0 for the class-0 example.
        m.weights.b2 = vec![800.0, 0.0, 0.0, 0.0];
        assert!(per_sample_losses(&m, &corpus).unwrap()[0] < 1e-300);
    }

    #[test]
    fn per_sample_losses_permute_with_dataset() {
        let rows = [("x y", 0), ("y z", 1), ("z w", 0), ("w x", 1)];
        let ds = Dataset::from_labeled("a", 2, rows).unwrap();
        let rev: Vec<_> = rows.iter().rev().cloned().collect();
        let ds_rev = Dataset::from_labeled("b", 2, rev).unwrap();
        let m = ModelParams::init(Dims::new(64, 6, 2), 0.2, 9).unwrap();
        let a = per_sample_losses(&m, &Corpus::from_dataset(&ds, 64)).unwrap();
        let mut b = per_sample_losses(&m, &Corpus::from_dataset(&ds_rev, 64)).unwrap();
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn class_regularize_examples() {
        let out = class_regularize(&[1.0, 2.0, 3.0], &[0, 0, 0], 1);
        // mean 2, population std sqrt(2/3).
        let s = (2.0f64 / 3.0).sqrt();
        let expect = [-1.0 / s, 0.0, 1.0 / s];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-12);
        }
        assert!((out[0] + 1.2247).abs() < 1e-4 && (out[2] - 1.2247).abs() < 1e-4);

        let flat = class_regularize(&[0.7, 0.7, 5.0, 6.0], &[1, 1, 0, 0], 2);
        assert_eq!(&flat[..2], &[0.0, 0.0]);
    }

    #[test]
    fn sharpen_examples() {
        let p = dist(&[0.3, 0.7]);
        let same = sharpen(&p, 1.0).unwrap();
        for (a, b) in same.probs().iter().zip(p.probs()) {
            assert!((a - b).abs() < 1e-15);
        }

        let s = sharpen(&dist(&[0.8, 0.2]), 0.5).unwrap();
        assert!((s.probs()[0] - 0.64 / 0.68).abs() < 1e-12);
        assert!((s.probs()[0] - 0.9412).abs() < 1e-4 && (s.probs()[1] - 0.0588).abs() < 1e-4);

        for t in [0.1, 0.5, 3.0] {
            assert_eq!(
                sharpen(&ClassDistribution::uniform(4), t).unwrap().probs(),
                &[0.25; 4]
            );
        }
        assert!(sharpen(&p, 0.0).is_err());
        assert!(matches!(
            sharpen_probs(&[0.0, 0.0], 0.5),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn embmix_examples() {
        let (ei, ej) = ([1.0, 2.0], [-1.0, 4.0]);
        let (yi, yj) = (one_hot(0, 2).unwrap(), one_hot(1, 2).unwrap());

        let m = embmix_with(&ei, &yi, &ej, &yj, 1.0).unwrap();
        assert_eq!(m.embedding, ei);
        assert_eq!(m.target, yi);

        let m = embmix_with(&ei, &yi, &ej, &yj, 0.3).unwrap();
        assert!((m.lambda - 0.7).abs() < 1e-15);
        let e_expect = [0.7 * 1.0 + 0.3 * -1.0, 0.7 * 2.0 + 0.3 * 4.0];
        for (a, b) in m.embedding.iter().zip(e_expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((m.target.probs()[0] - 0.7).abs() < 1e-12);
        assert!((m.target.probs()[1] - 0.3).abs() < 1e-12);

        assert!(matches!(
            embmix_with(&[1.0], &yi, &ej, &yj, 0.5),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn mix_loss_matches_direct_recomputation() {
        let m = ModelParams::init(Dims::new(8, 5, 3), 0.25, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut batch = MixedBatch::default();
        for k in 0..4 {
            let e_i: Vec<f64> = (0..5).map(|d| (k * 5 + d) as f64 * 0.1 - 1.0).collect();
            let e_j: Vec<f64> = e_i.iter().map(|x| -x * 0.5).collect();
            let y_i = one_hot(k % 3, 3).unwrap();
            let y_j = dist(&[0.2, 0.5, 0.3]);
            batch.push(embmix(&e_i, &y_i, &e_j, &y_j, 0.75, &mut rng).unwrap());
        }
        let direct: f64 = batch
            .embeddings
            .iter()
            .zip(&batch.targets)
            .enumerate()
            .map(|(k, (e, y))| {
                let p =
                    softmax(&m.head_forward(e, Dropout::Seeded(mix_seed(77, k as u64)))).unwrap();
                -y.probs()
                    .iter()
                    .zip(p.probs())
                    .map(|(y, p)| y * p.ln())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / batch.len() as f64;
        let got = mix_loss(&batch, &m, 77).unwrap();
        assert!((got - direct).abs() < 1e-12);

        // Target equal to the prediction: loss is the prediction's entropy.
        let e = vec![0.3; 5];
        let p = softmax(&m.head_forward(&e, Dropout::Seeded(mix_seed(5, 0)))).unwrap();
        let entropy = -p.probs().iter().map(|q| q * q.ln()).sum::<f64>();
        let one = MixedBatch {
            embeddings: vec![e.clone()],
            targets: vec![p.clone()],
            lambdas: vec![1.0],
        };
        assert!((mix_loss(&one, &m, 5).unwrap() - entropy).abs() < 1e-12);
    }

    #[test]
    fn pseudo_loss_examples() {
        assert_eq!(pseudo_loss(&[one_hot(2, 4).unwrap()]), 0.0);
        let u = pseudo_loss(&[ClassDistribution::uniform(4)]);
        assert!((u - 4f64.ln()).abs() < 1e-12);
        assert_eq!(pseudo_loss(&[]), 0.0);
    }

    #[test]
    fn rdrop_examples() {
        let p = dist(&[0.9, 0.1]);
        let q = dist(&[0.1, 0.9]);
        assert_eq!(rdrop_loss(&p, &p), 0.0);
        let expect = 0.8 * 9f64.ln();
        assert!((rdrop_loss(&p, &q) - expect).abs() < 1e-12);
        assert!((rdrop_loss(&p, &q) - 1.7578).abs() < 1e-4);
        assert_eq!(rdrop_loss(&p, &q), rdrop_loss(&q, &p));
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.5, 9.0, 9.0, 0.0, 0.0).unwrap(), 1.5);
        assert_eq!(total_loss(1.0, 2.0, 3.0, 0.2, 0.3).unwrap(), 2.3);
        assert!(total_loss(f64::NAN, 0.0, 0.0, 0.1, 0.1).is_err());
    }

    fn arb_dist(c: usize) -> impl Strategy<Value = ClassDistribution> {
        proptest::collection::vec(1e-6f64..1.0, c).prop_map(|v| {
            let s: f64 = v.iter().sum();
            ClassDistribution::from_raw(v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn prop_sharpen_on_simplex(p in arb_dist(5), t in 0.05f64..5.0) {
            let s = sharpen(&p, t).unwrap();
            prop_assert!(s.is_on_simplex());
            prop_assert_eq!(s.argmax(), p.argmax());
        }

        #[test]
        fn prop_embmix_lambda_and_simplex(
            yi in arb_dist(3), yj in arb_dist(3), alpha in 0.05f64..4.0, seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = embmix(&[1.0, 0.0], &yi, &[0.0, 1.0], &yj, alpha, &mut rng).unwrap();
            prop_assert!((0.5..=1.0).contains(&m.lambda));
            prop_assert!(m.target.is_on_simplex());
        }

        #[test]
        fn prop_mixed_one_hot_keeps_first_class(
            a in 0usize..4, b in 0usize..4, lambda in 0.0f64..=1.0,
        ) {
            prop_assume!(a != b && lambda != 0.5);
            let (ya, yb) = (one_hot(a, 4).unwrap(), one_hot(b, 4).unwrap());
            let m = embmix_with(&[0.0], &ya, &[0.0], &yb, lambda).unwrap();
            prop_assert_eq!(m.target.argmax(), a);
        }

        #[test]
        fn prop_losses_nonnegative(p in arb_dist(4), q in arb_dist(4)) {
            prop_assert!(rdrop_loss(&p, &q) >= 0.0);
            prop_assert!((rdrop_loss(&p, &q) - rdrop_loss(&q, &p)).abs() < 1e-15);
            prop_assert!(pseudo_loss(&[p.clone(), q.clone()]) >= 0.0);
        }

        #[test]
        fn prop_total_loss_linear(
            m in 0.0f64..5.0, p in 0.0f64..5.0, r in 0.0f64..5.0,
            lp in 0.0f64..1.0, lr in 0.0f64..1.0, k in 0.0f64..3.0,
        ) {
            let base = total_loss(m, p, r, lp, lr).unwrap();
            let bumped = total_loss(m + k, p, r, lp, lr).unwrap();
            prop_assert!((bumped - base - k).abs() < 1e-9);
            let bumped = total_loss(m, p + k, r, lp, lr).unwrap();
            prop_assert!((bumped - base - lp * k).abs() < 1e-9);
        }

        #[test]
        fn prop_class_regularized_standardized(
            rows in proptest::collection::vec((0.0f64..10.0, 0usize..3), 6..60),
        ) {
            let (losses, labels): (Vec<f64>, Vec<usize>) = rows.into_iter().unzip();
            let out = class_regularize(&losses, &labels, 3);
            for c in 0..3 {
                let xs: Vec<f64> = out.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(x, _)| *x).collect();
                let raw: Vec<f64> = losses.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(x, _)| *x).collect();
                if raw.len() < 2 { continue; }
                let mean_raw = raw.iter().sum::<f64>() / raw.len() as f64;
                let var_raw = raw.iter().map(|x| (x - mean_raw).powi(2)).sum::<f64>() / raw.len() as f64;
                if var_raw < 1e-12 { continue; }
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }
}
