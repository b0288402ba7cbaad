//! Central finite-difference oracle for the analytic gradients.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfmix::encoder::{
    backward, evaluate, Dims, Dropout, FeatureVector, Input, LossWeights, ModelParams, Objective,
    Reduction, Term,
};

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-5;
/// Denominator floor. Below it the roundoff of a 1e-6 central difference
/// (about 1e-10 absolute) dominates, so tiny entries are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    CrossEntropy,
    Mix,
    Pseudo,
    Consistency,
    Composite,
}

pub const CASES: [Case; 5] = [
    Case::CrossEntropy,
    Case::Mix,
    Case::Pseudo,
    Case::Consistency,
    Case::Composite,
];

pub struct Instance {
    pub model: ModelParams,
    pub features: Vec<FeatureVector>,
    pub targets: Vec<Vec<f64>>,
    pub fixed_embedding: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub masks: Vec<u64>,
    pub weights: LossWeights,
    pub reduction: Reduction,
}

fn simplex(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    if rng.random_bool(0.5) {
        let mut v = vec![0.0; c];
        v[rng.random_range(0..c)] = 1.0;
        return v;
    }
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn features(rng: &mut ChaCha8Rng, b: usize) -> FeatureVector {
    let k = rng.random_range(1..=6.min(b));
    let mut idx: Vec<usize> = (0..k).map(|_| rng.random_range(0..b)).collect();
    idx.sort_unstable();
    idx.dedup();
    let raw: Vec<f64> = idx.iter().map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    FeatureVector::new(idx, raw.into_iter().map(|x| x / s).collect()).unwrap()
}

impl Instance {
    pub fn random(seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims::new(
            rng.random_range(4..=64),
            rng.random_range(2..=16),
            rng.random_range(2..=4),
        );
        let mut model = ModelParams::init(dims, rng.random_range(0.0..0.5), rng.random()).unwrap();
        for b in model
            .weights
            .b1
            .iter_mut()
            .chain(model.weights.b2.iter_mut())
        {
            *b = rng.random_range(-0.1..0.1);
        }
        let n = rng.random_range(1..=4);
        let features = (0..n).map(|_| features(&mut rng, dims.buckets)).collect();
        let targets = (0..n).map(|_| simplex(&mut rng, dims.classes)).collect();
        let fixed_embedding = (0..dims.hidden)
            .map(|_| rng.random_range(-0.3..0.3))
            .collect();
        let lambdas = (0..n).map(|_| rng.random_range(0.5..=1.0)).collect();
        let masks = (0..3 * n).map(|_| rng.random()).collect();
        let weights = LossWeights {
            cross_entropy: 1.0,
            pseudo: rng.random_range(0.0..1.0),
            consistency: rng.random_range(0.0..1.0),
        };
        let reduction = if rng.random_bool(0.5) {
            Reduction::Mean
        } else {
            Reduction::Sum
        };
        Instance {
            model,
            features,
            targets,
            fixed_embedding,
            lambdas,
            masks,
            weights,
            reduction,
        }
    }

    fn mask(&self, i: usize, pass: usize) -> Dropout {
        Dropout::Seeded(self.masks[3 * i + pass])
    }

    pub fn objective(&self, case: Case) -> Objective<'_> {
        let n = self.features.len();
        let mut terms = Vec::new();
        let ce = |i: usize| Term::CrossEntropy {
            input: Input::Features(&self.features[i]),
            target: &self.targets[i],
            dropout: self.mask(i, 0),
        };
        let mix = |i: usize| Term::CrossEntropy {
            input: Input::Mixed {
                first: &self.features[i],
                second: &self.features[(i + 1) % n],
                lambda: self.lambdas[i],
            },
            target: &self.targets[i],
            dropout: self.mask(i, 0),
        };
        let pseudo = |i: usize| Term::Pseudo {
            input: Input::Features(&self.features[i]),
            dropout: self.mask(i, 1),
        };
        let cons = |i: usize| Term::Consistency {
            input: Input::Features(&self.features[i]),
            first: self.mask(i, 1),
            second: self.mask(i, 2),
        };
        let mut weights = LossWeights {
            cross_entropy: 1.0,
            pseudo: 0.0,
            consistency: 0.0,
        };
        match case {
            Case::CrossEntropy => terms.extend((0..n).map(ce)),
            Case::Mix => {
                terms.extend((0..n).map(mix));
                terms.push(Term::CrossEntropy {
                    input: Input::Embedding(&self.fixed_embedding),
                    target: &self.targets[0],
                    dropout: self.mask(0, 2),
                });
            }
            Case::Pseudo => {
                weights = LossWeights {
                    cross_entropy: 0.0,
                    pseudo: 1.0,
                    consistency: 0.0,
                };
                terms.extend((0..n).map(pseudo));
            }
            Case::Consistency => {
                weights = LossWeights {
                    cross_entropy: 0.0,
                    pseudo: 0.0,
                    consistency: 1.0,
                };
                terms.extend((0..n).map(cons));
            }
            Case::Composite => {
                weights = self.weights;
                terms.extend((0..n).map(mix));
                terms.extend((0..n).map(pseudo));
                terms.extend((0..n).map(cons));
            }
        }
        Objective {
            terms,
            weights,
            reduction: if case == Case::Composite {
                self.reduction
            } else {
                Reduction::Mean
            },
        }
    }

    /// True when no ReLU pre-activation or pseudo-label argmax sits close
    /// enough to a kink for a finite-difference step to cross it.
    pub fn is_smooth(&self) -> bool {
        let m = &self.model;
        let n = self.features.len();
        let enc: Vec<Vec<f64>> = self.features.iter().map(|f| m.encode(f).unwrap()).collect();
        let mut probes: Vec<(Vec<f64>, Dropout, bool)> = Vec::new();
        for i in 0..n {
            let l = self.lambdas[i];
            let mixed: Vec<f64> = enc[i]
                .iter()
                .zip(&enc[(i + 1) % n])
                .map(|(a, b)| l * a + (1.0 - l) * b)
                .collect();
            probes.push((enc[i].clone(), self.mask(i, 0), false));
            probes.push((mixed, self.mask(i, 0), false));
            probes.push((enc[i].clone(), self.mask(i, 1), true));
            probes.push((enc[i].clone(), self.mask(i, 2), false));
        }
        probes.push((self.fixed_embedding.clone(), self.mask(0, 2), false));
        probes.iter().all(|(e, d, argmax)| {
            let cache = m.head_forward_cached(e.clone(), *d);
            let relu_ok = cache.pre_activation.iter().all(|z| z.abs() > 1e-4);
            let mut sorted = cache.logits.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            relu_ok && (!argmax || sorted[0] - sorted[1] > 1e-4)
        })
    }

    /// Largest relative discrepancy between analytic and central-difference gradients.
    pub fn max_rel_error(&self, case: Case) -> f64 {
        let obj = self.objective(case);
        let (_, grads) = backward(&obj, &self.model).unwrap();
        let mut probe = self.model.clone();
        let mut worst: f64 = 0.0;
        for k in 0..grads.num_values() {
            let x = probe.weights.get_flat(k);
            probe.weights.set_flat(k, x + FD_STEP);
            let up = evaluate(&obj, &probe).unwrap().total;
            probe.weights.set_flat(k, x - FD_STEP);
            let down = evaluate(&obj, &probe).unwrap().total;
            probe.weights.set_flat(k, x);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.get_flat(k);
            let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
        worst
    }
}

/// The `count` smooth instances drawn from seeds `base, base + 1, ...`.
pub fn smooth_instances(base: u64, count: usize) -> Vec<Instance> {
    (base..)
        .map(Instance::random)
        .filter(Instance::is_smooth)
        .take(count)
        .collect()
}
