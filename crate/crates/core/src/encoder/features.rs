//! Tokenization and feature hashing.

use std::collections::BTreeMap;

/// Separator byte placed between the two tokens of a hashed bigram.
pub const BIGRAM_SEPARATOR: u8 = 0x1F;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Lowercase and split on every non-alphanumeric codepoint.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sparse, L1-normalized bag of hashed unigrams and bigrams.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl FeatureVector {
    /// `indices` must be strictly increasing and the same length as `weights`.
    pub fn new(indices: Vec<usize>, weights: Vec<f64>) -> Option<Self> {
        let sorted = indices.windows(2).all(|w| w[0] < w[1]);
        (sorted && indices.len() == weights.len()).then_some(FeatureVector { indices, weights })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}

pub fn featurize<S: AsRef<str>>(tokens: &[S], num_buckets: usize) -> FeatureVector {
    assert!(num_buckets >= 1, "need at least one hash bucket");
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    let mut bump = |h: u64| *counts.entry((h % num_buckets as u64) as usize).or_default() += 1;

    for t in tokens {
        bump(fnv1a64(t.as_ref().as_bytes()));
    }
    let mut buf = Vec::new();
    for pair in tokens.windows(2) {
        buf.clear();
        buf.extend_from_slice(pair[0].as_ref().as_bytes());
        buf.push(BIGRAM_SEPARATOR);
        buf.extend_from_slice(pair[1].as_ref().as_bytes());
        bump(fnv1a64(&buf));
    }

    let total: u32 = counts.values().sum();
    let (indices, weights) = counts
        .into_iter()
        .map(|(i, c)| (i, c as f64 / total as f64))
        .unzip();
    FeatureVector { indices, weights }
}

/// Tokenize then featurize.
pub fn featurize_text(text: &str, num_buckets: usize) -> FeatureVector {
    featurize(&tokenize(text), num_buckets)
}
