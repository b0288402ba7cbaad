//! Experiment harness: config files, orchestration and diagnostic exports.

pub mod config;
pub mod experiment;
pub mod histogram;

use std::collections::BTreeSet;
use std::path::Path;

use crate::data::load_csv;
use crate::encoder::model::ModelParams;
use crate::error::Result;
use crate::selfmix::corpus::Corpus;
use crate::selfmix::losses::per_sample_losses;

pub use config::{ExperimentConfig, NoiseSpec};
pub use experiment::{
    prepare_data, render_summary, run_arms, run_experiment, selection_metrics, summary_path,
    ArmSummary, Method, PreparedData, StageError, Summary,
};
pub use histogram::{emit_loss_histogram, loss_histogram, write_histogram, HistogramBin};

/// Per-sample losses of a saved model on a CSV corpus, binned and split by the
/// corpus's `true_label` column (all clean when the column is absent).
pub fn analyze_losses(
    model: &Path,
    data: &Path,
    out: &Path,
    bins: usize,
) -> Result<Vec<HistogramBin>> {
    let params = ModelParams::load(model, 0.0)?;
    let dataset = load_csv(data, Some(params.dims().classes))?;
    let corpus = Corpus::from_dataset(&dataset, params.dims().buckets);
    let losses = per_sample_losses(&params, &corpus)?;
    let noisy: BTreeSet<usize> = dataset
        .corrupted_ids()
        .unwrap_or_default()
        .into_iter()
        .collect();
    let hist = loss_histogram(&losses, &noisy, bins)?;
    let echo = [
        format!("model = {}", model.display()),
        format!("data = {}", data.display()),
        format!("bins = {bins}"),
    ];
    let mut f = std::io::BufWriter::new(std::fs::File::create(out)?);
    write_histogram(&hist, &mut f, &echo)?;
    std::io::Write::flush(&mut f)?;
    Ok(hist)
}
