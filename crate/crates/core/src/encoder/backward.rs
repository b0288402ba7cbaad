//! Exact reverse-mode gradients for the composite training objective.
//!
//! An [`Objective`] is a list of loss [`Term`]s, grouped by kind:
//!
//! * cross-entropy against a soft target (plain CE and the mixup loss),
//! * pseudo-label loss `-log p[argmax p]`,
//! * symmetric KL between two dropout passes of the same input.
//!
//! Each kind is averaged over its own terms (or summed, see [`Reduction`])
//! and the three group values are combined with [`LossWeights`].

use crate::encoder::features::FeatureVector;
use crate::encoder::model::{
    log_softmax_vec, softmax_vec, Dims, Dropout, ForwardCache, Gradients, ModelParams,
};
use crate::error::{Error, Result};

/// What enters the model.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    /// Text features, passed through the encoder.
    Features(&'a FeatureVector),
    /// A fixed embedding fed straight to the head; no gradient reaches the encoder.
    Embedding(&'a [f64]),
    /// `lambda * encode(first) + (1 - lambda) * encode(second)`, fed to the head.
    /// Gradients flow into both encoders.
    Mixed {
        first: &'a FeatureVector,
        second: &'a FeatureVector,
        lambda: f64,
    },
}

#[derive(Debug, Clone)]
pub enum Term<'a> {
    CrossEntropy {
        input: Input<'a>,
        target: &'a [f64],
        dropout: Dropout,
    },
    Pseudo {
        input: Input<'a>,
        dropout: Dropout,
    },
    Consistency {
        input: Input<'a>,
        first: Dropout,
        second: Dropout,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cross_entropy: f64,
    pub pseudo: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cross_entropy: 1.0,
            pseudo: 0.0,
            consistency: 0.0,
        }
    }
}

/// How the pseudo and consistency groups are reduced over their terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Default)]
pub struct Objective<'a> {
    pub terms: Vec<Term<'a>>,
    pub weights: LossWeights,
    pub reduction: Reduction,
}

/// Unweighted group values and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub pseudo: f64,
    pub consistency: f64,
}

/// Loss value only.
pub fn evaluate(objective: &Objective<'_>, params: &ModelParams) -> Result<LossBreakdown> {
    run(objective, params, None)
}

/// Loss value and its gradient with respect to every parameter.
pub fn backward(
    objective: &Objective<'_>,
    params: &ModelParams,
) -> Result<(LossBreakdown, Gradients)> {
    let mut grads = Gradients::zeros(params.dims());
    let loss = run(objective, params, Some(&mut grads))?;
    Ok((loss, grads))
}

/// As [`backward`], accumulating into a caller-owned (zeroed) buffer.
pub fn backward_into(
    objective: &Objective<'_>,
    params: &ModelParams,
    grads: &mut Gradients,
) -> Result<LossBreakdown> {
    if grads.dims != params.dims() {
        return Err(Error::arg("gradient buffer shape does not match model"));
    }
    run(objective, params, Some(grads))
}

fn run(
    objective: &Objective<'_>,
    params: &ModelParams,
    mut grads: Option<&mut Gradients>,
) -> Result<LossBreakdown> {
    let mut counts = [0usize; 3];
    for t in &objective.terms {
        counts[kind(t)] += 1;
    }
    let scale = |k: usize, w: f64, reducible: bool| -> f64 {
        match (counts[k], reducible, objective.reduction) {
            (0, _, _) => 0.0,
            (_, true, Reduction::Sum) => w,
            (n, _, _) => w / n as f64,
        }
    };
    let w = objective.weights;
    let coef = [
        scale(0, w.cross_entropy, false),
        scale(1, w.pseudo, true),
        scale(2, w.consistency, true),
    ];
    let unit = [
        scale(0, 1.0, false),
        scale(1, 1.0, true),
        scale(2, 1.0, true),
    ];

    let mut group = [0.0f64; 3];
    for (idx, term) in objective.terms.iter().enumerate() {
        let k = kind(term);
        let value = match term {
            Term::CrossEntropy {
                input,
                target,
                dropout,
            } => {
                if target.len() != params.dims().classes {
                    return Err(Error::arg(format!(
                        "target width {} != {} classes",
                        target.len(),
                        params.dims().classes
                    )));
                }
                let cache = forward(params, input, *dropout)?;
                let logp = log_softmax_vec(&cache.logits);
                let loss = -target.iter().zip(&logp).map(|(y, lp)| y * lp).sum::<f64>();
                if let Some(g) = grads.as_deref_mut() {
                    let p = softmax_vec(&cache.logits);
                    let mass: f64 = target.iter().sum();
                    let dlogits: Vec<f64> = p
                        .iter()
                        .zip(target.iter())
                        .map(|(p, y)| coef[k] * (p * mass - y))
                        .collect();
                    backprop(params, input, &cache, &dlogits, g);
                }
                loss
            }
            Term::Pseudo { input, dropout } => {
                let cache = forward(params, input, *dropout)?;
                let logp = log_softmax_vec(&cache.logits);
                let top = crate::data::argmax(&logp);
                if let Some(g) = grads.as_deref_mut() {
                    let p = softmax_vec(&cache.logits);
                    let dlogits: Vec<f64> = p
                        .iter()
                        .enumerate()
                        .map(|(c, p)| coef[k] * (p - f64::from(u8::from(c == top))))
                        .collect();
                    backprop(params, input, &cache, &dlogits, g);
                }
                -logp[top]
            }
            Term::Consistency {
                input,
                first,
                second,
            } => {
                let c1 = forward(params, input, *first)?;
                let c2 = forward(params, input, *second)?;
                let (a, b) = (log_softmax_vec(&c1.logits), log_softmax_vec(&c2.logits));
                let (p1, p2) = (softmax_vec(&c1.logits), softmax_vec(&c2.logits));
                let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                let loss = 0.5
                    * p1.iter()
                        .zip(&p2)
                        .zip(&d)
                        .map(|((x, y), d)| (x - y) * d)
                        .sum::<f64>();
                if let Some(g) = grads.as_deref_mut() {
                    let m1: f64 = p1.iter().zip(&d).map(|(p, d)| p * d).sum();
                    let m2: f64 = p2.iter().zip(&d).map(|(p, d)| p * d).sum();
                    let g1: Vec<f64> = (0..p1.len())
                        .map(|c| coef[k] * 0.5 * (p1[c] * (d[c] - m1) + p1[c] - p2[c]))
                        .collect();
                    let g2: Vec<f64> = (0..p2.len())
                        .map(|c| coef[k] * 0.5 * (p2[c] * (m2 - d[c]) + p2[c] - p1[c]))
                        .collect();
                    backprop(params, input, &c1, &g1, g);
                    backprop(params, input, &c2, &g2, g);
                }
                loss
            }
        };
        if !value.is_finite() {
            return Err(Error::numeric(
                format!("{} term {idx}", kind_name(k)),
                format!("loss evaluated to {value}"),
            ));
        }
        group[k] += value;
    }

    let mut out = LossBreakdown {
        cross_entropy: group[0] * unit[0],
        pseudo: group[1] * unit[1],
        consistency: group[2] * unit[2],
        total: 0.0,
    };
    out.total = w.cross_entropy * out.cross_entropy
        + w.pseudo * out.pseudo
        + w.consistency * out.consistency;
    if let Some(g) = grads {
        if !g.all_finite() {
            return Err(Error::numeric("gradient", "non-finite gradient entry"));
        }
    }
    Ok(out)
}

fn kind(t: &Term<'_>) -> usize {
    match t {
        Term::CrossEntropy { .. } => 0,
        Term::Pseudo { .. } => 1,
        Term::Consistency { .. } => 2,
    }
}

fn kind_name(k: usize) -> &'static str {
    ["cross-entropy", "pseudo-label", "consistency"][k]
}

fn forward(params: &ModelParams, input: &Input<'_>, dropout: Dropout) -> Result<ForwardCache> {
    let e = match input {
        Input::Features(f) => params.encode(f)?,
        Input::Embedding(e) => {
            if e.len() != params.dims().hidden {
                return Err(Error::arg(format!(
                    "embedding width {} != hidden {}",
                    e.len(),
                    params.dims().hidden
                )));
            }
            e.to_vec()
        }
        Input::Mixed {
            first,
            second,
            lambda,
        } => {
            let a = params.encode(first)?;
            let b = params.encode(second)?;
            a.iter()
                .zip(&b)
                .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
                .collect()
        }
    };
    Ok(params.head_forward_cached(e, dropout))
}

fn backprop(
    params: &ModelParams,
    input: &Input<'_>,
    cache: &ForwardCache,
    dlogits: &[f64],
    g: &mut Gradients,
) {
    let Dims {
        hidden, classes, ..
    } = params.dims();
    let w = &params.weights;

    let mut dz1 = vec![0.0; hidden];
    for j in 0..hidden {
        let row = &w.w2[j * classes..(j + 1) * classes];
        let grow = &mut g.w2[j * classes..(j + 1) * classes];
        let hj = cache.hidden[j];
        let mut dh = 0.0;
        for c in 0..classes {
            grow[c] += hj * dlogits[c];
            dh += row[c] * dlogits[c];
        }
        if cache.pre_activation[j] > 0.0 {
            dz1[j] = dh * cache.mask[j];
        }
    }
    g.b2.iter_mut().zip(dlogits).for_each(|(b, d)| *b += d);
    g.b1.iter_mut().zip(&dz1).for_each(|(b, d)| *b += d);

    let mut de = vec![0.0; hidden];
    for i in 0..hidden {
        let row = &w.w1[i * hidden..(i + 1) * hidden];
        let grow = &mut g.w1[i * hidden..(i + 1) * hidden];
        let ei = cache.embedding[i];
        let mut acc = 0.0;
        for j in 0..hidden {
            grow[j] += ei * dz1[j];
            acc += row[j] * dz1[j];
        }
        de[i] = acc;
    }

    let mut scatter = |features: &FeatureVector, scale: f64| {
        for (f, wt) in features.iter() {
            let row = &mut g.embedding[f * hidden..(f + 1) * hidden];
            row.iter_mut()
                .zip(&de)
                .for_each(|(r, d)| *r += scale * wt * d);
        }
    };
    match input {
        Input::Features(f) => scatter(f, 1.0),
        Input::Embedding(_) => {}
        Input::Mixed {
            first,
            second,
            lambda,
        } => {
            scatter(first, *lambda);
            scatter(second, 1.0 - lambda);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::features::featurize_text;
    use crate::encoder::model::softmax;

    fn setup() -> (ModelParams, FeatureVector) {
        let m = ModelParams::init(Dims::new(16, 4, 3), 0.2, 1).unwrap();
        (m, featurize_text("alpha beta gamma", 16))
    }

    #[test]
    fn ce_gradient_vanishes_at_target_equal_prediction() {
        let (m, fv) = setup();
        let target = m.predict(&fv, Dropout::Off).unwrap();
        let obj = Objective {
            terms: vec![Term::CrossEntropy {
                input: Input::Features(&fv),
                target: target.probs(),
                dropout: Dropout::Off,
            }],
            ..Default::default()
        };
        let (_, g) = backward(&obj, &m).unwrap();
        assert!(g.b2.iter().all(|x| x.abs() < 1e-15), "{:?}", g.b2);
        assert!(g.arrays().iter().all(|a| a.iter().all(|x| x.abs() < 1e-14)));
    }

    #[test]
    fn duplicated_batch_is_invariant() {
        let (m, fv) = setup();
        let other = featurize_text("delta epsilon", 16);
        let y = [0.2, 0.3, 0.5];
        let terms = vec![
            Term::CrossEntropy {
                input: Input::Features(&fv),
                target: &y,
                dropout: Dropout::Seeded(4),
            },
            Term::Pseudo {
                input: Input::Features(&other),
                dropout: Dropout::Seeded(5),
            },
            Term::Consistency {
                input: Input::Features(&other),
                first: Dropout::Seeded(6),
                second: Dropout::Seeded(7),
            },
        ];
        let weights = LossWeights {
            cross_entropy: 1.0,
            pseudo: 0.2,
            consistency: 0.3,
        };
        let single = Objective {
            terms: terms.clone(),
            weights,
            reduction: Reduction::Mean,
        };
        let doubled = Objective {
            terms: terms.iter().chain(terms.iter()).cloned().collect(),
            weights,
            reduction: Reduction::Mean,
        };
        let (l1, g1) = backward(&single, &m).unwrap();
        let (l2, g2) = backward(&doubled, &m).unwrap();
        assert!((l1.total - l2.total).abs() < 1e-12);
        for (a, b) in g1.arrays().iter().zip(g2.arrays()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consistency_zero_without_dropout() {
        let (mut m, fv) = setup();
        m.dropout_rate = 0.0;
        let obj = Objective {
            terms: vec![Term::Consistency {
                input: Input::Features(&fv),
                first: Dropout::Seeded(1),
                second: Dropout::Seeded(2),
            }],
            weights: LossWeights {
                cross_entropy: 0.0,
                pseudo: 0.0,
                consistency: 1.0,
            },
            reduction: Reduction::Mean,
        };
        let (l, g) = backward(&obj, &m).unwrap();
        assert_eq!(l.consistency, 0.0);
        assert!(g.arrays().iter().all(|a| a.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn pseudo_value_is_neg_log_max() {
        let (m, fv) = setup();
        let p = softmax(&m.head_forward(&m.encode(&fv).unwrap(), Dropout::Off)).unwrap();
        let obj = Objective {
            terms: vec![Term::Pseudo {
                input: Input::Features(&fv),
                dropout: Dropout::Off,
            }],
            ..Default::default()
        };
        let l = evaluate(&obj, &m).unwrap();
        assert!((l.pseudo + p.probs()[p.argmax()].ln()).abs() < 1e-12);
    }

    #[test]
    fn embedding_input_width_checked() {
        let (m, _) = setup();
        let e = [0.0; 3];
        let y = [1.0, 0.0, 0.0];
        let obj = Objective {
            terms: vec![Term::CrossEntropy {
                input: Input::Embedding(&e),
                target: &y,
                dropout: Dropout::Off,
            }],
            ..Default::default()
        };
        assert!(matches!(evaluate(&obj, &m), Err(Error::Argument(_))));
    }
}
