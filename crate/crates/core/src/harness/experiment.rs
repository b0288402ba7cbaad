//! Experiment orchestration: inject noise, train the requested arms, export
//! reports, models and loss histograms, and summarize.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, save_csv, Dataset};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::histogram::{loss_histogram, write_histogram};
use crate::noise::{inject, CorruptionManifest};
use crate::selfmix::metrics::SelectionMetrics;
use crate::selfmix::select::DataSplit;
use crate::selfmix::train::{train_baseline, train_selfmix, TrainRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    #[serde(rename = "selfmix")]
    SelfMix,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::SelfMix => "selfmix",
        }
    }
}

/// Noise-detection quality of a split against a manifest.
pub fn selection_metrics(
    split: &DataSplit,
    manifest: &CorruptionManifest,
) -> Result<SelectionMetrics> {
    if let Some(f) = manifest.flips.iter().find(|f| f.id >= split.len()) {
        return Err(Error::arg(format!(
            "manifest id {} out of range for a split of {}",
            f.id,
            split.len()
        )));
    }
    Ok(SelectionMetrics::from_sets(
        &split.unlabeled_set(),
        &manifest.flipped_ids(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub best_acc: f64,
    pub last_acc: f64,
    pub final_f1: Option<f64>,
    pub per_epoch_acc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub noise_type: String,
    pub ratio: f64,
    pub seed: u64,
    pub flipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub config: Vec<String>,
    pub train_size: usize,
    pub test_size: usize,
    pub noise: Option<NoiseSummary>,
    pub baseline: Option<ArmSummary>,
    pub selfmix: Option<ArmSummary>,
    pub warnings: Vec<String>,
    pub error: Option<StageError>,
}

impl Summary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

/// Training data after optional corruption, with the test split and manifest.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub manifest: Option<CorruptionManifest>,
}

/// Load both splits and inject the configured noise.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let train = load_csv(&config.train, config.num_classes)?;
    let test = load_csv(&config.test, Some(train.num_classes()))?;
    let (train, manifest) = match &config.noise {
        None => (train, None),
        Some(spec) => {
            let transition = config.transition()?;
            let (noisy, mut m) = inject(
                &train,
                spec.noise_type,
                spec.ratio,
                spec.seed,
                transition.as_ref(),
                &spec.idn,
            )?;
            m.echo = config.echo();
            (noisy, Some(m))
        }
    };
    Ok(PreparedData {
        train,
        test,
        manifest,
    })
}

fn stage<T>(summary: &mut Summary, name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| {
        summary.error = Some(StageError {
            stage: name.to_string(),
            message: e.to_string(),
        });
        e
    })
}

fn arm_summary(run: &TrainRun) -> ArmSummary {
    ArmSummary {
        best_acc: run.report.best_acc,
        last_acc: run.report.last_acc,
        final_f1: run.report.final_f1(),
        per_epoch_acc: run.report.per_epoch.iter().map(|r| r.test_acc).collect(),
    }
}

fn export_arm(
    dir: &Path,
    method: Method,
    run: &TrainRun,
    train: &Dataset,
    config: &ExperimentConfig,
) -> Result<()> {
    let echo = config.echo();
    let name = method.as_str();
    let mut report = run.report.clone();
    report.echo = echo.clone();
    report.save_json(&dir.join(format!("{name}.json")))?;
    report.write_csv(
        std::fs::File::create(dir.join(format!("{name}.csv")))?,
        &echo,
    )?;
    run.model.save(&dir.join(format!("{name}.smx")))?;

    let noisy: BTreeSet<usize> = train
        .corrupted_ids()
        .unwrap_or_default()
        .into_iter()
        .collect();
    let hist_dir = dir.join("hist");
    std::fs::create_dir_all(&hist_dir)?;
    for (e, losses) in run.loss_snapshots.iter().enumerate() {
        let hist = loss_histogram(losses, &noisy, config.bins)?;
        let path = hist_dir.join(format!("{name}_epoch{:02}.csv", e + 1));
        write_histogram(&hist, std::fs::File::create(path)?, &echo)?;
    }
    Ok(())
}

/// Run the given arms and write every artifact into `config.output_dir`.
///
/// Inputs are loaded and checked before anything is written. Once the output
/// directory exists, a failing stage is recorded in `summary.json` before the
/// error is returned.
pub fn run_arms(config: &ExperimentConfig, methods: &[Method]) -> Result<Summary> {
    config.validate()?;
    config.check_paths()?;
    let data = prepare_data(config)?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;

    let mut summary = Summary {
        config: config.echo(),
        train_size: data.train.len(),
        test_size: data.test.len(),
        ..Summary::default()
    };
    std::fs::write(dir.join("config.txt"), summary.config.join("\n") + "\n")?;
    let result = run_stages(config, methods, &data, dir, &mut summary);
    summary.save(dir)?;
    result.map(|_| summary)
}

fn run_stages(
    config: &ExperimentConfig,
    methods: &[Method],
    data: &PreparedData,
    dir: &Path,
    summary: &mut Summary,
) -> Result<()> {
    if let (Some(m), Some(spec)) = (&data.manifest, &config.noise) {
        let r = save_csv(&data.train, &dir.join("train_noisy.csv"))
            .and_then(|_| m.save(&dir.join("manifest.csv")));
        stage(summary, "inject", r)?;
        summary.noise = Some(NoiseSummary {
            noise_type: spec.noise_type.to_string(),
            ratio: spec.ratio,
            seed: spec.seed,
            flipped: m.flips.len(),
        });
    }
    for &method in methods {
        let run = match method {
            Method::Baseline => train_baseline(&config.selfmix, &data.train, &data.test),
            Method::SelfMix => train_selfmix(&config.selfmix, &data.train, &data.test),
        };
        let run = stage(summary, method.as_str(), run)?;
        stage(
            summary,
            "export",
            export_arm(dir, method, &run, &data.train, config),
        )?;
        summary.warnings.extend(
            run.report
                .warnings
                .iter()
                .map(|w| format!("{}: {w}", method.as_str())),
        );
        let arm = Some(arm_summary(&run));
        match method {
            Method::Baseline => summary.baseline = arm,
            Method::SelfMix => summary.selfmix = arm,
        }
    }
    Ok(())
}

/// Both arms: inject, baseline, SelfMix, summarize.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Summary> {
    run_arms(config, &[Method::Baseline, Method::SelfMix])
}

pub fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.json")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

/// Plain-text table of a summary.
pub fn render_summary(s: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "train {} / test {}", s.train_size, s.test_size);
    if let Some(n) = &s.noise {
        let _ = writeln!(
            out,
            "noise {} ratio {} seed {}: {} labels flipped",
            n.noise_type, n.ratio, n.seed, n.flipped
        );
    }
    let _ = writeln!(
        out,
        "{:<10}{:>10}{:>10}{:>11}{:>10}",
        "method", "best_acc", "last_acc", "best-last", "final_f1"
    );
    for (name, arm) in [("baseline", &s.baseline), ("selfmix", &s.selfmix)] {
        if let Some(a) = arm {
            let _ = writeln!(
                out,
                "{:<10}{:>10.4}{:>10.4}{:>11.4}{:>10}",
                name,
                a.best_acc,
                a.last_acc,
                a.best_acc - a.last_acc,
                fmt_opt(a.final_f1)
            );
        }
    }
    for (name, arm) in [("baseline", &s.baseline), ("selfmix", &s.selfmix)] {
        if let Some(a) = arm {
            let accs: Vec<String> = a.per_epoch_acc.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(out, "{name} per-epoch: {}", accs.join(" "));
        }
    }
    for w in &s.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    if let Some(e) = &s.error {
        let _ = writeln!(out, "failed at stage {}: {}", e.stage, e.message);
    }
    out
}
