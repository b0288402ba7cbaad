//! Sample selection and semi-supervised self-training.

pub mod corpus;
pub mod losses;
pub mod metrics;
pub mod report;
pub mod select;
pub mod train;

pub use corpus::Corpus;
pub use losses::{
    class_regularize, embmix, embmix_with, mix_coefficient, mix_loss, per_sample_losses,
    pseudo_loss, rdrop_batch, rdrop_loss, sharpen, total_loss, MixedBatch, MixedSample,
};
pub use metrics::{accuracy, SelectionMetrics};
pub use report::{CurvePoint, EpochRecord, Phase, TrainReport};
pub use select::{select_split, DataSplit};
pub use train::{
    predict_all, test_accuracy, train_baseline, train_selfmix, warmup, Learner, ModelConfig,
    SelfMixConfig, TrainRun, WarmupBudget,
};
