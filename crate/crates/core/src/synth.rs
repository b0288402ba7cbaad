//! Synthetic corpora and loss samples for experiments and tests.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::SeedTree;

/// Topic-style corpus: every class owns a vocabulary, and a large shared pool
/// of filler words gives each document idiosyncratic features a model can
/// memorize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Words owned by each class.
    pub class_vocab: usize,
    /// Filler words shared by all classes.
    pub shared_vocab: usize,
    pub doc_len: usize,
    /// Probability that a token is drawn from the shared pool.
    pub shared_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 4,
            train_size: 2000,
            test_size: 500,
            class_vocab: 50,
            shared_vocab: 5000,
            doc_len: 20,
            shared_fraction: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2
            || self.class_vocab == 0
            || self.shared_vocab == 0
            || self.doc_len == 0
        {
            return Err(Error::arg(
                "synthetic corpus needs >= 2 classes and non-empty vocabularies",
            ));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return Err(Error::arg("shared fraction must be in [0, 1]"));
        }
        Ok(())
    }

    fn document<R: Rng>(&self, class: usize, rng: &mut R) -> String {
        (0..self.doc_len)
            .map(|_| {
                if rng.random_bool(self.shared_fraction) {
                    format!("s{}", rng.random_range(0..self.shared_vocab))
                } else {
                    format!("c{class}w{}", rng.random_range(0..self.class_vocab))
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn split(&self, name: &str, size: usize, stream: &str) -> Result<Dataset> {
        let mut rng = SeedTree::new(self.seed).rng(stream);
        let rows: Vec<(String, usize)> = (0..size)
            .map(|i| {
                let class = i % self.num_classes;
                (self.document(class, &mut rng), class)
            })
            .collect();
        Dataset::from_labeled(name, self.num_classes, rows)
    }

    /// Clean, class-balanced train and test splits.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        Ok((
            self.split("synthetic-train", self.train_size, "synth.train")?,
            self.split("synthetic-test", self.test_size, "synth.test")?,
        ))
    }
}

/// Per-sample losses whose scale depends on the class, as instance-dependent
/// noise produces: class 0 has clean ~0.1 and noisy ~0.6, class 1 has clean
/// ~1.0 and noisy ~3.0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScaledLosses {
    pub losses: Vec<f64>,
    pub labels: Vec<usize>,
    pub noisy: Vec<bool>,
}

pub fn class_scaled_losses(n: usize, noise_fraction: f64, seed: u64) -> Result<ClassScaledLosses> {
    if !(0.0..1.0).contains(&noise_fraction) {
        return Err(Error::arg("noise fraction must be in [0, 1)"));
    }
    let mut rng = SeedTree::new(seed).rng("synth.losses");
    let params = [[(0.1, 0.05), (0.6, 0.1)], [(1.0, 0.2), (3.0, 0.5)]];
    let mut out = ClassScaledLosses {
        losses: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        noisy: Vec::with_capacity(n),
    };
    for i in 0..n {
        let class = i % 2;
        let noisy = rng.random_bool(noise_fraction);
        let (mean, sd) = params[class][noisy as usize];
        let v: f64 = Normal::new(mean, sd)
            .map_err(|e| Error::arg(e.to_string()))?
            .sample(&mut rng);
        out.losses.push(v.max(0.0));
        out.labels.push(class);
        out.noisy.push(noisy);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate;

    #[test]
    fn corpus_shape() {
        let cfg = SynthConfig {
            train_size: 40,
            test_size: 12,
            ..SynthConfig::default()
        };
        let (train, test) = cfg.generate().unwrap();
        assert_eq!(train.len(), 40);
        assert_eq!(test.len(), 12);
        assert_eq!(train.class_counts(), vec![10; 4]);
        assert!(validate(&train).is_valid());
        assert_eq!(cfg.generate().unwrap().0, train);
        let first = &train.examples()[1].text;
        assert_eq!(first.split(' ').count(), cfg.doc_len);
        assert!(first
            .split(' ')
            .all(|t| t.starts_with("c1w") || t.starts_with('s')));
    }

    #[test]
    fn loss_sample() {
        let s = class_scaled_losses(1000, 0.3, 1).unwrap();
        assert_eq!(s.losses.len(), 1000);
        assert!(s.losses.iter().all(|&l| l >= 0.0));
        let frac = s.noisy.iter().filter(|&&b| b).count() as f64 / 1000.0;
        assert!((frac - 0.3).abs() < 0.06);
    }
}
