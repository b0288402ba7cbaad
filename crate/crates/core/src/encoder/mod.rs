//! From-scratch differentiable text classifier.
//!
//! Texts are tokenized, hashed into a bag of unigram and bigram buckets,
//! pooled through an embedding table, and classified by a two-layer MLP head
//! with one inverted-dropout site on its hidden layer.

pub mod adam;
pub mod backward;
pub mod features;
pub mod model;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use backward::{
    backward, backward_into, evaluate, Input, LossBreakdown, LossWeights, Objective, Reduction,
    Term,
};
pub use features::{featurize, featurize_text, fnv1a64, tokenize, FeatureVector};
pub use model::{softmax, Dims, Dropout, ForwardCache, Gradients, ModelParams, Tensors};
