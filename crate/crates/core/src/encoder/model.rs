//! Embedding-bag encoder with a two-layer MLP head.
//!
//! Layout, all row-major:
//!
//! * `embedding`: `B x H`, row `f` is the vector of hash bucket `f`
//! * `w1`: `H x H`, `z1[j] = sum_i e[i] * w1[i][j] + b1[j]`
//! * `w2`: `H x C`, `logit[c] = sum_j h[j] * w2[j][c] + b2[c]`

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::ClassDistribution;
use crate::encoder::features::FeatureVector;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SMX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub buckets: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Dims {
    pub fn new(buckets: usize, hidden: usize, classes: usize) -> Self {
        Dims {
            buckets,
            hidden,
            classes,
        }
    }

    fn check(&self) -> Result<()> {
        if self.buckets == 0 || self.hidden == 0 || self.classes < 2 {
            return Err(Error::arg(format!(
                "model dims need buckets >= 1, hidden >= 1, classes >= 2; got {self:?}"
            )));
        }
        Ok(())
    }

    fn lens(&self) -> [usize; 5] {
        let (b, h, c) = (self.buckets, self.hidden, self.classes);
        [b * h, h * h, h, h * c, c]
    }
}

/// A parameter-shaped set of arrays, used for weights, gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub dims: Dims,
    pub embedding: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Tensors {
    pub fn zeros(dims: Dims) -> Self {
        let [e, w1, b1, w2, b2] = dims.lens();
        Tensors {
            dims,
            embedding: vec![0.0; e],
            w1: vec![0.0; w1],
            b1: vec![0.0; b1],
            w2: vec![0.0; w2],
            b2: vec![0.0; b2],
        }
    }

    /// The five arrays in declaration order.
    pub fn arrays(&self) -> [&[f64]; 5] {
        [&self.embedding, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn arrays_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.embedding,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    pub fn fill_zero(&mut self) {
        for a in self.arrays_mut() {
            a.fill(0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays()
            .iter()
            .all(|a| a.iter().all(|x| x.is_finite()))
    }

    /// Flat view by global index across the five arrays (for gradient checks).
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for a in self.arrays() {
            if idx < a.len() {
                return a[idx];
            }
            idx -= a.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) {
        for a in self.arrays_mut() {
            if idx < a.len() {
                a[idx] = value;
                return;
            }
            idx -= a.len();
        }
        panic!("flat index out of range");
    }
}

pub type Gradients = Tensors;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub weights: Tensors,
    pub dropout_rate: f64,
}

/// Whether the head applies dropout, and with which mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dropout {
    Off,
    /// Inverted dropout with a mask drawn from this seed.
    Seeded(u64),
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub embedding: Vec<f64>,
    pub pre_activation: Vec<f64>,
    /// Per-unit dropout multiplier (0 or 1/(1-rate)); all ones with dropout off.
    pub mask: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ModelParams {
    /// Random initialization: embeddings ~ N(0, 0.1^2), He-scaled head weights, zero biases.
    pub fn init(dims: Dims, dropout_rate: f64, seed: u64) -> Result<Self> {
        dims.check()?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::arg(format!(
                "dropout rate {dropout_rate} not in [0, 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Tensors::zeros(dims);
        let fill = |a: &mut [f64], std: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, std).expect("positive std");
            a.iter_mut().for_each(|x| *x = normal.sample(rng));
        };
        fill(&mut w.embedding, 0.1, &mut rng);
        fill(&mut w.w1, (2.0 / dims.hidden as f64).sqrt(), &mut rng);
        fill(&mut w.w2, (1.0 / dims.hidden as f64).sqrt(), &mut rng);
        Ok(ModelParams {
            weights: w,
            dropout_rate,
        })
    }

    pub fn dims(&self) -> Dims {
        self.weights.dims
    }

    /// Pooled sentence representation: the weighted sum of bucket embeddings.
    pub fn encode(&self, features: &FeatureVector) -> Result<Vec<f64>> {
        let Dims {
            buckets, hidden, ..
        } = self.dims();
        let mut e = vec![0.0; hidden];
        for (f, w) in features.iter() {
            if f >= buckets {
                return Err(Error::arg(format!(
                    "feature index {f} >= {buckets} buckets"
                )));
            }
            let row = &self.weights.embedding[f * hidden..(f + 1) * hidden];
            e.iter_mut().zip(row).for_each(|(acc, r)| *acc += w * r);
        }
        Ok(e)
    }

    pub fn dropout_mask(&self, dropout: Dropout) -> Vec<f64> {
        let h = self.dims().hidden;
        match dropout {
            Dropout::Off => vec![1.0; h],
            Dropout::Seeded(seed) => {
                let keep = 1.0 - self.dropout_rate;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..h)
                    .map(|_| {
                        if rng.random::<f64>() < self.dropout_rate {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                    .collect()
            }
        }
    }

    /// Head forward pass keeping every intermediate.
    pub fn head_forward_cached(&self, embedding: Vec<f64>, dropout: Dropout) -> ForwardCache {
        let Dims {
            hidden, classes, ..
        } = self.dims();
        let w = &self.weights;
        let mut z1 = w.b1.clone();
        for (i, &ei) in embedding.iter().enumerate() {
            if ei == 0.0 {
                continue;
            }
            let row = &w.w1[i * hidden..(i + 1) * hidden];
            z1.iter_mut().zip(row).for_each(|(z, r)| *z += ei * r);
        }
        let mask = self.dropout_mask(dropout);
        let h: Vec<f64> = z1
            .iter()
            .zip(&mask)
            .map(|(&z, &m)| z.max(0.0) * m)
            .collect();
        let mut logits = w.b2.clone();
        for (j, &hj) in h.iter().enumerate() {
            if hj == 0.0 {
                continue;
            }
            let row = &w.w2[j * classes..(j + 1) * classes];
            logits.iter_mut().zip(row).for_each(|(l, r)| *l += hj * r);
        }
        ForwardCache {
            embedding,
            pre_activation: z1,
            mask,
            hidden: h,
            logits,
        }
    }

    pub fn head_forward(&self, embedding: &[f64], dropout: Dropout) -> Vec<f64> {
        self.head_forward_cached(embedding.to_vec(), dropout).logits
    }

    /// Class probabilities for one text's features.
    pub fn predict(&self, features: &FeatureVector, dropout: Dropout) -> Result<ClassDistribution> {
        let e = self.encode(features)?;
        softmax(&self.head_forward(&e, dropout))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, dropout_rate: f64) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_checkpoint(&mut f, dropout_rate)
    }

    /// `SMX1`, then B, H, C as u64, then the five arrays as f64, all little-endian.
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        let d = self.dims();
        out.write_all(CHECKPOINT_MAGIC)?;
        for v in [d.buckets, d.hidden, d.classes] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        for a in self.weights.arrays() {
            for x in a {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: &mut R, dropout_rate: f64) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let mut word = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            input.read_exact(&mut word)?;
            *d = usize::try_from(u64::from_le_bytes(word))
                .map_err(|_| Error::Format("checkpoint dimension overflows usize".into()))?;
        }
        let dims = Dims::new(dims[0], dims[1], dims[2]);
        dims.check()?;
        let mut weights = Tensors::zeros(dims);
        for a in weights.arrays_mut() {
            for x in a.iter_mut() {
                input.read_exact(&mut word)?;
                *x = f64::from_le_bytes(word);
            }
        }
        if !weights.all_finite() {
            return Err(Error::Format("checkpoint holds non-finite weights".into()));
        }
        Ok(ModelParams {
            weights,
            dropout_rate,
        })
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<ClassDistribution> {
    if logits.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    if let Some(bad) = logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::numeric("softmax", format!("non-finite logit {bad}")));
    }
    Ok(ClassDistribution::from_raw(softmax_vec(logits)))
}

pub(crate) fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

pub(crate) fn log_softmax_vec(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::features::featurize_text;
    use proptest::prelude::*;

    fn model(rate: f64) -> ModelParams {
        ModelParams::init(Dims::new(64, 8, 3), rate, 11).unwrap()
    }

    #[test]
    fn encode_identities() {
        let m = model(0.0);
        let h = m.dims().hidden;
        assert_eq!(m.encode(&FeatureVector::default()).unwrap(), vec![0.0; h]);

        let one = FeatureVector::new(vec![5], vec![1.0]).unwrap();
        assert_eq!(m.encode(&one).unwrap(), m.weights.embedding[5 * h..6 * h]);

        let two = FeatureVector::new(vec![1, 9], vec![0.5, 0.5]).unwrap();
        let e = m.encode(&two).unwrap();
        for k in 0..h {
            let mean = 0.5 * (m.weights.embedding[h + k] + m.weights.embedding[9 * h + k]);
            assert!((e[k] - mean).abs() < 1e-15);
        }

        let bad = FeatureVector::new(vec![64], vec![1.0]).unwrap();
        assert!(matches!(m.encode(&bad), Err(Error::Argument(_))));
    }

    #[test]
    fn head_dropout_contracts() {
        let m = model(0.5);
        let e = m.encode(&featurize_text("some words here", 64)).unwrap();
        assert_eq!(
            m.head_forward(&e, Dropout::Off),
            m.head_forward(&e, Dropout::Off)
        );
        assert_eq!(
            m.head_forward(&e, Dropout::Seeded(3)),
            m.head_forward(&e, Dropout::Seeded(3))
        );

        let zero = model(0.0);
        let e = zero.encode(&featurize_text("other words", 64)).unwrap();
        assert_eq!(
            zero.head_forward(&e, Dropout::Seeded(99)),
            zero.head_forward(&e, Dropout::Off)
        );
    }

    #[test]
    fn dropout_mask_values() {
        let m = ModelParams::init(Dims::new(4, 2000, 2), 0.3, 0).unwrap();
        let mask = m.dropout_mask(Dropout::Seeded(5));
        let kept = mask.iter().filter(|&&x| x > 0.0).count() as f64 / 2000.0;
        assert!((kept - 0.7).abs() < 0.05);
        assert!(mask
            .iter()
            .all(|&x| x == 0.0 || (x - 1.0 / 0.7).abs() < 1e-15));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap().probs(), &[0.5, 0.5]);
        for c in [-7.5, 0.0, 3.0, 1e6] {
            assert_eq!(softmax(&[c; 4]).unwrap().probs(), &[0.25; 4]);
        }
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p.probs()[0] - 1.0).abs() < 1e-15 && p.probs()[1] < 1e-300);
        assert!(matches!(
            softmax(&[f64::NAN, 0.0]),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn checkpoint_layout_and_roundtrip() {
        let m = model(0.3);
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SMX1");
        assert_eq!(u64::from_le_bytes(buf[4..12].try_into().unwrap()), 64);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 8);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 28 + 8 * m.weights.num_values());
        assert_eq!(
            f64::from_le_bytes(buf[28..36].try_into().unwrap()),
            m.weights.embedding[0]
        );
        let back = ModelParams::read_checkpoint(&mut buf.as_slice(), 0.3).unwrap();
        assert_eq!(back, m);

        buf[0] = b'X';
        assert!(matches!(
            ModelParams::read_checkpoint(&mut buf.as_slice(), 0.3),
            Err(Error::Format(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn prop_softmax_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..8),
            shift in -100.0f64..100.0,
        ) {
            let a = softmax(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let b = softmax(&shifted).unwrap();
            prop_assert!(a.is_on_simplex());
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn prop_dropout_off_is_pure(text in "[a-z ]{0,40}", seed in any::<u64>()) {
            let m = ModelParams::init(Dims::new(32, 4, 2), 0.4, seed).unwrap();
            let fv = featurize_text(&text, 32);
            let a = m.predict(&fv, Dropout::Off).unwrap();
            let b = m.clone().predict(&fv, Dropout::Off).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
