use crate::data::Dataset;
use crate::encoder::features::{featurize_text, FeatureVector};

/// Featurized texts with their observed labels.
///
/// Built only from the training-safe part of a [`Dataset`]; the oracle view
/// never reaches a `Corpus`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Corpus {
    pub fn from_dataset(dataset: &Dataset, num_buckets: usize) -> Self {
        let (features, labels) = dataset
            .examples()
            .iter()
            .map(|e| (featurize_text(&e.text, num_buckets), e.label))
            .unzip();
        Corpus {
            features,
            labels,
            num_classes: dataset.num_classes(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
