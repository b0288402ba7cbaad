//! Warm-up, the SelfMix training loop and the plain cross-entropy baseline.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, one_hot, Dataset};
use crate::encoder::adam::{adam_step, AdamConfig, OptimizerState};
use crate::encoder::backward::{
    backward_into, Input, LossBreakdown, LossWeights, Objective, Reduction, Term,
};
use crate::encoder::model::{softmax_vec, Dims, Dropout, Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::gmm::GmmOptions;
use crate::seed::{mix_seed, SeedTree};
use crate::selfmix::corpus::Corpus;
use crate::selfmix::losses::{
    class_regularize, mix_coefficient, mix_targets, per_sample_losses, sharpen_probs,
};
use crate::selfmix::metrics::{accuracy, SelectionMetrics};
use crate::selfmix::report::{CurvePoint, EpochRecord, Phase, TrainReport};
use crate::selfmix::select::{select_split, DataSplit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub buckets: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub adam: AdamConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            buckets: 1 << 18,
            hidden: 64,
            dropout: 0.3,
            adam: AdamConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, classes: usize) -> Dims {
        Dims::new(self.buckets, self.hidden, classes)
    }
}

/// Length of the cross-entropy warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmupBudget {
    Epochs(usize),
    /// Number of training examples processed; the final warm-up epoch may be partial.
    Samples(usize),
}

impl WarmupBudget {
    /// Epochs (whole or partial) the warm-up occupies on a training set of `n` examples.
    pub fn epochs(&self, n: usize) -> usize {
        match *self {
            WarmupBudget::Epochs(e) => e,
            WarmupBudget::Samples(0) => 0,
            WarmupBudget::Samples(s) => s.div_ceil(n.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfMixConfig {
    /// Clean-posterior threshold for the labeled set.
    pub tau: f64,
    pub lambda_p: f64,
    pub lambda_r: f64,
    /// Beta(alpha, alpha) parameter of the mixup coefficient.
    pub alpha: f64,
    /// Sharpening temperature for pseudo-labels.
    pub temperature: f64,
    pub warmup: WarmupBudget,
    /// Includes the warm-up epochs.
    pub total_epochs: usize,
    pub batch_size: usize,
    /// Standardize losses per class before the GMM (instance-dependent noise).
    pub class_regularize: bool,
    pub seed: u64,
    /// Reduction of the pseudo and consistency terms over the unlabeled members of a batch.
    pub reduction: Reduction,
    pub model: ModelConfig,
    /// Record test accuracy every this many optimizer steps (0 disables).
    pub curve_interval: usize,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
}

impl Default for SelfMixConfig {
    fn default() -> Self {
        SelfMixConfig {
            tau: 0.5,
            lambda_p: 0.2,
            lambda_r: 0.3,
            alpha: 0.75,
            temperature: 0.5,
            warmup: WarmupBudget::Epochs(2),
            total_epochs: 6,
            batch_size: 32,
            class_regularize: false,
            seed: 0,
            reduction: Reduction::Mean,
            model: ModelConfig::default(),
            curve_interval: 50,
            gmm_max_iter: 100,
            gmm_tol: 1e-6,
        }
    }
}

impl SelfMixConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.tau > 0.0 && self.tau < 1.0) {
            problems.push(format!("tau {} not in (0, 1)", self.tau));
        }
        if !(self.lambda_p >= 0.0 && self.lambda_r >= 0.0) {
            problems.push("loss weights must be >= 0".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            problems.push(format!("alpha {} must be > 0", self.alpha));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            problems.push(format!("temperature {} must be > 0", self.temperature));
        }
        if self.batch_size < 2 {
            problems.push(format!("batch size {} must be >= 2", self.batch_size));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            problems.push(format!("dropout {} not in [0, 1)", self.model.dropout));
        }
        if self.model.buckets == 0 || self.model.hidden == 0 {
            problems.push("encoder buckets and hidden width must be >= 1".to_string());
        }
        if !(self.model.adam.learning_rate > 0.0) {
            problems.push("learning rate must be > 0".to_string());
        }
        if !(self.gmm_tol >= 0.0) {
            problems.push("gmm tolerance must be >= 0".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::arg(problems.join("; ")))
        }
    }

    fn gmm_options(&self) -> GmmOptions {
        GmmOptions {
            max_iter: self.gmm_max_iter,
            tol: self.gmm_tol,
        }
    }
}

/// A model with its optimizer state and a reusable gradient buffer.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: ModelParams,
    pub optimizer: OptimizerState,
    pub steps: u64,
    grads: Gradients,
}

impl Learner {
    pub fn new(model: ModelParams, adam: AdamConfig) -> Self {
        let optimizer = OptimizerState::new(&model, adam);
        let grads = Gradients::zeros(model.dims());
        Learner {
            model,
            optimizer,
            steps: 0,
            grads,
        }
    }

    /// One optimizer step on `objective`.
    pub fn step(&mut self, objective: &Objective<'_>) -> Result<LossBreakdown> {
        self.grads.fill_zero();
        let loss = backward_into(objective, &self.model, &mut self.grads)?;
        adam_step(&mut self.model, &self.grads, &mut self.optimizer)?;
        self.steps += 1;
        Ok(loss)
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub report: TrainReport,
    pub model: ModelParams,
    /// Per-sample training losses (dropout off) at the end of each epoch.
    pub loss_snapshots: Vec<Vec<f64>>,
    /// The split chosen at the start of each SelfMix epoch.
    pub splits: Vec<DataSplit>,
}

/// Predicted class of every example, dropout off.
pub fn predict_all(model: &ModelParams, corpus: &Corpus) -> Result<Vec<usize>> {
    corpus
        .features
        .iter()
        .map(|f| {
            let e = model.encode(f)?;
            Ok(argmax(&model.head_forward(&e, Dropout::Off)))
        })
        .collect()
}

pub fn test_accuracy(model: &ModelParams, test: &Corpus) -> Result<f64> {
    Ok(accuracy(&predict_all(model, test)?, &test.labels))
}

struct Streams {
    shuffle: ChaCha8Rng,
    mixup: ChaCha8Rng,
    dropout: u64,
}

impl Streams {
    fn new(seeds: &SeedTree) -> Self {
        Streams {
            shuffle: seeds.rng("shuffle"),
            mixup: seeds.rng("mixup"),
            dropout: seeds.derive("dropout"),
        }
    }

    fn mask(&self, step: u64, position: usize, pass: u64) -> Dropout {
        Dropout::Seeded(mix_seed(
            mix_seed(self.dropout, step),
            3 * position as u64 + pass,
        ))
    }

    fn order(&mut self, n: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut self.shuffle);
        ids
    }
}

struct Monitor<'a> {
    test: &'a Corpus,
    interval: usize,
    curve: Vec<CurvePoint>,
}

impl Monitor<'_> {
    fn after_step(&mut self, learner: &Learner) -> Result<()> {
        if self.interval > 0 && learner.steps.is_multiple_of(self.interval as u64) {
            self.curve.push(CurvePoint {
                step: learner.steps,
                test_acc: test_accuracy(&learner.model, self.test)?,
            });
        }
        Ok(())
    }

    fn take(&mut self) -> Vec<CurvePoint> {
        std::mem::take(&mut self.curve)
    }
}

/// One pass of plain cross-entropy over `order` (optionally truncated to `limit` examples).
/// Returns the mean batch loss.
fn cross_entropy_pass(
    learner: &mut Learner,
    corpus: &Corpus,
    order: &[usize],
    batch_size: usize,
    streams: &Streams,
    monitor: &mut Option<&mut Monitor<'_>>,
) -> Result<f64> {
    let targets: Vec<Vec<f64>> = (0..corpus.num_classes)
        .map(|c| one_hot(c, corpus.num_classes).map(|d| d.into_vec()))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut batches = 0;
    for batch in order.chunks(batch_size) {
        let step = learner.steps;
        let terms = batch
            .iter()
            .enumerate()
            .map(|(pos, &id)| Term::CrossEntropy {
                input: Input::Features(&corpus.features[id]),
                target: &targets[corpus.labels[id]],
                dropout: streams.mask(step, pos, 0),
            })
            .collect();
        let objective = Objective {
            terms,
            weights: LossWeights::default(),
            reduction: Reduction::Mean,
        };
        total += learner.step(&objective)?.total;
        batches += 1;
        if let Some(m) = monitor.as_deref_mut() {
            m.after_step(learner)?;
        }
    }
    Ok(if batches > 0 {
        total / batches as f64
    } else {
        0.0
    })
}

/// Plain cross-entropy warm-up of `model` on `dataset` with dropout on.
pub fn warmup(
    model: ModelParams,
    dataset: &Dataset,
    budget: WarmupBudget,
    batch_size: usize,
    adam: AdamConfig,
    seed: u64,
) -> Result<ModelParams> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be >= 1"));
    }
    let corpus = Corpus::from_dataset(dataset, model.dims().buckets);
    let mut learner = Learner::new(model, adam);
    let mut streams = Streams::new(&SeedTree::new(seed));
    let n = corpus.len();
    let mut remaining = match budget {
        WarmupBudget::Epochs(e) => e * n,
        WarmupBudget::Samples(s) => s,
    };
    while remaining > 0 && n > 0 {
        let order = streams.order(n);
        let take = remaining.min(n);
        cross_entropy_pass(
            &mut learner,
            &corpus,
            &order[..take],
            batch_size,
            &streams,
            &mut None,
        )?;
        remaining -= take;
    }
    Ok(learner.model)
}

fn check_inputs(config: &SelfMixConfig, train: &Dataset, test: &Dataset) -> Result<()> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::arg("empty training set"));
    }
    if train.num_classes() != test.num_classes() {
        return Err(Error::arg(format!(
            "train has {} classes, test has {}",
            train.num_classes(),
            test.num_classes()
        )));
    }
    let warm = config.warmup.epochs(train.len());
    if warm > config.total_epochs {
        return Err(Error::arg(format!(
            "warm-up spans {warm} epochs but only {} are budgeted",
            config.total_epochs
        )));
    }
    Ok(())
}

fn selection_metrics_for(train: &Dataset, split: &DataSplit) -> Option<SelectionMetrics> {
    // Oracle read for reporting only.
    let flipped = train.corrupted_ids()?;
    Some(SelectionMetrics::from_sets(
        &split.unlabeled_set(),
        &flipped.into_iter().collect(),
    ))
}

/// Plain cross-entropy training for `total_epochs`.
pub fn train_baseline(config: &SelfMixConfig, train: &Dataset, test: &Dataset) -> Result<TrainRun> {
    check_inputs(config, train, test)?;
    let train_corpus = Corpus::from_dataset(train, config.model.buckets);
    let test_corpus = Corpus::from_dataset(test, config.model.buckets);
    let seeds = SeedTree::new(config.seed);
    let model = ModelParams::init(
        config.model.dims(train.num_classes()),
        config.model.dropout,
        seeds.derive("init"),
    )?;
    let mut learner = Learner::new(model, config.model.adam);
    let mut streams = Streams::new(&seeds);
    let mut monitor = Monitor {
        test: &test_corpus,
        interval: config.curve_interval,
        curve: Vec::new(),
    };

    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    for epoch in 1..=config.total_epochs {
        let order = streams.order(train_corpus.len());
        let ce = cross_entropy_pass(
            &mut learner,
            &train_corpus,
            &order,
            config.batch_size,
            &streams,
            &mut Some(&mut monitor),
        )?;
        records.push(EpochRecord::plain(
            epoch,
            Phase::Baseline,
            test_accuracy(&learner.model, &test_corpus)?,
            ce,
            monitor.take(),
        ));
        snapshots.push(per_sample_losses(&learner.model, &train_corpus)?);
    }
    Ok(TrainRun {
        report: TrainReport::new("baseline", *config, records, Vec::new()),
        model: learner.model,
        loss_snapshots: snapshots,
        splits: Vec::new(),
    })
}

#[derive(Default)]
struct TermMeans {
    sums: [f64; 3],
    counts: [usize; 3],
}

impl TermMeans {
    fn add(&mut self, k: usize, v: f64) {
        self.sums[k] += v;
        self.counts[k] += 1;
    }

    fn mean(&self, k: usize) -> f64 {
        if self.counts[k] == 0 {
            0.0
        } else {
            self.sums[k] / self.counts[k] as f64
        }
    }
}

/// Full SelfMix: warm-up, then per epoch GMM selection followed by mixup
/// self-training with pseudo-label and consistency regularization.
pub fn train_selfmix(config: &SelfMixConfig, train: &Dataset, test: &Dataset) -> Result<TrainRun> {
    check_inputs(config, train, test)?;
    let train_corpus = Corpus::from_dataset(train, config.model.buckets);
    let test_corpus = Corpus::from_dataset(test, config.model.buckets);
    let n = train_corpus.len();
    let c = train_corpus.num_classes;
    let seeds = SeedTree::new(config.seed);
    let model = ModelParams::init(
        config.model.dims(c),
        config.model.dropout,
        seeds.derive("init"),
    )?;
    let mut learner = Learner::new(model, config.model.adam);
    let mut streams = Streams::new(&seeds);
    let mut monitor = Monitor {
        test: &test_corpus,
        interval: config.curve_interval,
        curve: Vec::new(),
    };

    let warm_epochs = config.warmup.epochs(n);
    let mut warm_remaining = match config.warmup {
        WarmupBudget::Epochs(e) => e * n,
        WarmupBudget::Samples(s) => s,
    };
    let one_hots: Vec<Vec<f64>> = (0..c)
        .map(|k| one_hot(k, c).map(|d| d.into_vec()))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut snapshots: Vec<Vec<f64>> = Vec::new();
    let mut splits = Vec::new();
    let mut warnings = Vec::new();

    for epoch in 1..=config.total_epochs {
        if epoch <= warm_epochs {
            let order = streams.order(n);
            let take = warm_remaining.min(n);
            warm_remaining -= take;
            let ce = cross_entropy_pass(
                &mut learner,
                &train_corpus,
                &order[..take],
                config.batch_size,
                &streams,
                &mut Some(&mut monitor),
            )?;
            records.push(EpochRecord::plain(
                epoch,
                Phase::Warmup,
                test_accuracy(&learner.model, &test_corpus)?,
                ce,
                monitor.take(),
            ));
            snapshots.push(per_sample_losses(&learner.model, &train_corpus)?);
            continue;
        }

        // Selection at the start of the epoch, from the current model with dropout off.
        let losses = match snapshots.last() {
            Some(l) => l.clone(),
            None => per_sample_losses(&learner.model, &train_corpus)?,
        };
        let scores = if config.class_regularize {
            class_regularize(&losses, &train_corpus.labels, c)
        } else {
            losses
        };
        let split = match select_split(&scores, config.tau, config.gmm_options(), epoch) {
            Ok(s) if s.gmm.is_some_and(|g| g.is_degenerate()) => {
                warnings.push(format!(
                    "epoch {epoch}: GMM means coincide; every sample treated as clean"
                ));
                DataSplit::all_labeled(n, config.tau, epoch)
            }
            Ok(s) => s,
            Err(Error::Degenerate(msg)) => {
                warnings.push(format!(
                    "epoch {epoch}: {msg}; every sample treated as clean"
                ));
                DataSplit::all_labeled(n, config.tau, epoch)
            }
            Err(e) => return Err(e),
        };
        if split.labeled.is_empty() {
            warnings.push(format!(
                "epoch {epoch}: labeled set is empty; training on pseudo-labels only"
            ));
        }
        let labeled = split.labeled_mask();
        let sel = selection_metrics_for(train, &split);

        let order = streams.order(n);
        let mut means = TermMeans::default();
        for batch in order.chunks(config.batch_size) {
            let step = learner.steps;
            let targets: Vec<Vec<f64>> = batch
                .iter()
                .map(|&id| {
                    if labeled[id] {
                        Ok(one_hots[train_corpus.labels[id]].clone())
                    } else {
                        let e = learner.model.encode(&train_corpus.features[id])?;
                        let p = softmax_vec(&learner.model.head_forward(&e, Dropout::Off));
                        sharpen_probs(&p, config.temperature)
                    }
                })
                .collect::<Result<_>>()?;

            let mut mixes = Vec::with_capacity(batch.len());
            for pos in 0..batch.len() {
                let partner = streams.mixup.random_range(0..batch.len());
                let lambda = mix_coefficient(config.alpha, &mut streams.mixup)?;
                mixes.push((
                    partner,
                    lambda,
                    mix_targets(&targets[pos], &targets[partner], lambda),
                ));
            }

            let mut terms = Vec::with_capacity(3 * batch.len());
            for (pos, (partner, lambda, y)) in mixes.iter().enumerate() {
                terms.push(Term::CrossEntropy {
                    input: Input::Mixed {
                        first: &train_corpus.features[batch[pos]],
                        second: &train_corpus.features[batch[*partner]],
                        lambda: *lambda,
                    },
                    target: y,
                    dropout: streams.mask(step, pos, 0),
                });
            }
            for (pos, &id) in batch.iter().enumerate() {
                if labeled[id] {
                    continue;
                }
                let input = Input::Features(&train_corpus.features[id]);
                terms.push(Term::Pseudo {
                    input,
                    dropout: streams.mask(step, pos, 1),
                });
                terms.push(Term::Consistency {
                    input,
                    first: streams.mask(step, pos, 1),
                    second: streams.mask(step, pos, 2),
                });
            }
            let has_unlabeled = batch.iter().any(|&id| !labeled[id]);
            let objective = Objective {
                terms,
                weights: LossWeights {
                    cross_entropy: 1.0,
                    pseudo: config.lambda_p,
                    consistency: config.lambda_r,
                },
                reduction: config.reduction,
            };
            let loss = learner.step(&objective).map_err(|e| match e {
                Error::Numeric { term, detail } => Error::Numeric {
                    term: format!("epoch {epoch}, step {step}: {term}"),
                    detail,
                },
                other => other,
            })?;
            means.add(0, loss.cross_entropy);
            if has_unlabeled {
                means.add(1, loss.pseudo);
                means.add(2, loss.consistency);
            }
            monitor.after_step(&learner)?;
        }

        records.push(EpochRecord {
            epoch,
            phase: Phase::SelfMix,
            test_acc: test_accuracy(&learner.model, &test_corpus)?,
            sel_precision: sel.map(|m| m.precision),
            sel_recall: sel.map(|m| m.recall),
            sel_f1: sel.map(|m| m.f1),
            l_mix: means.mean(0),
            l_p: means.mean(1),
            l_r: means.mean(2),
            labeled_count: Some(split.labeled.len()),
            curve: monitor.take(),
        });
        splits.push(split);
        snapshots.push(per_sample_losses(&learner.model, &train_corpus)?);
    }

    Ok(TrainRun {
        report: TrainReport::new("selfmix", *config, records, warnings),
        model: learner.model,
        loss_snapshots: snapshots,
        splits,
    })
}
