//! Text classification under label noise.
//!
//! Training examples are split each epoch by a two-component Gaussian mixture
//! over their losses: the low-loss side keeps its labels, the rest is treated
//! as unlabeled and learned from sharpened pseudo-labels. Both sides are mixed
//! in embedding space, and a dropout-consistency term regularizes the
//! pseudo-labeled part.
//!
//! ```
//! use selfmix::encoder::{featurize_text, Dims, Dropout, ModelParams};
//!
//! let model = ModelParams::init(Dims::new(256, 8, 3), 0.3, 7).unwrap();
//! let p = model.predict(&featurize_text("a short review", 256), Dropout::Off).unwrap();
//! assert!(p.is_on_simplex());
//! ```

pub mod data;
pub mod encoder;
pub mod error;
pub mod gmm;
pub mod harness;
pub mod noise;
pub mod seed;
pub mod selfmix;
pub mod synth;

pub use data::{ClassDistribution, Dataset, Example, OracleLabel};
pub use error::{Error, Result};
pub use gmm::{fit_gmm, fit_gmm_with, posterior_clean, GmmOptions, GmmParams};
pub use noise::{CorruptionManifest, NoiseType, TransitionMap};
pub use selfmix::{train_baseline, train_selfmix, SelfMixConfig, TrainReport};

macro_rules! book_chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        )*
    };
}

book_chapters! {
    book_introduction => "introduction.md",
    book_noise => "noise.md",
    book_encoder => "encoder.md",
    book_selection => "selection.md",
    book_losses => "losses.md",
    book_training => "training.md",
    book_harness => "harness.md",
}
