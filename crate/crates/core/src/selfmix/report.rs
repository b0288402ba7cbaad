//! Per-epoch training records and their JSON / CSV forms.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selfmix::train::SelfMixConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    #[serde(rename = "selfmix")]
    SelfMix,
    Baseline,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::SelfMix => "selfmix",
            Phase::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub test_acc: f64,
    /// Selection metrics need the corruption oracle and are absent without it.
    pub sel_precision: Option<f64>,
    pub sel_recall: Option<f64>,
    pub sel_f1: Option<f64>,
    /// Mean mixed cross-entropy (plain cross-entropy outside SelfMix epochs).
    pub l_mix: f64,
    pub l_p: f64,
    pub l_r: f64,
    pub labeled_count: Option<usize>,
    pub curve: Vec<CurvePoint>,
}

impl EpochRecord {
    pub(crate) fn plain(
        epoch: usize,
        phase: Phase,
        test_acc: f64,
        ce: f64,
        curve: Vec<CurvePoint>,
    ) -> Self {
        EpochRecord {
            epoch,
            phase,
            test_acc,
            sel_precision: None,
            sel_recall: None,
            sel_f1: None,
            l_mix: ce,
            l_p: 0.0,
            l_r: 0.0,
            labeled_count: None,
            curve,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: String,
    pub epochs: usize,
    pub best_acc: f64,
    pub last_acc: f64,
    pub per_epoch: Vec<EpochRecord>,
    pub warnings: Vec<String>,
    pub config: SelfMixConfig,
    /// Full experiment config lines, when run from a config file.
    #[serde(default)]
    pub echo: Vec<String>,
}

impl TrainReport {
    pub fn new(
        method: &str,
        config: SelfMixConfig,
        per_epoch: Vec<EpochRecord>,
        warnings: Vec<String>,
    ) -> Self {
        let best_acc = per_epoch.iter().map(|r| r.test_acc).fold(0.0, f64::max);
        let last_acc = per_epoch.last().map_or(0.0, |r| r.test_acc);
        TrainReport {
            method: method.to_string(),
            epochs: per_epoch.len(),
            best_acc,
            last_acc,
            per_epoch,
            warnings,
            config,
            echo: Vec::new(),
        }
    }

    /// Final selection F1, if the run had an oracle and a SelfMix epoch.
    pub fn final_f1(&self) -> Option<f64> {
        self.per_epoch.iter().rev().find_map(|r| r.sel_f1)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// One row per epoch. `echo` lines are written first as `#` comments.
    pub fn write_csv<W: Write>(&self, out: W, echo: &[String]) -> Result<()> {
        let mut out = out;
        for line in echo {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "epoch",
            "phase",
            "test_acc",
            "sel_precision",
            "sel_recall",
            "sel_f1",
            "l_mix",
            "l_p",
            "l_r",
            "labeled_count",
            "curve",
        ])
        .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.per_epoch {
            let curve = r
                .curve
                .iter()
                .map(|p| format!("{}:{}", p.step, p.test_acc))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                r.epoch.to_string(),
                r.phase.as_str().to_string(),
                r.test_acc.to_string(),
                opt(r.sel_precision),
                opt(r.sel_recall),
                opt(r.sel_f1),
                r.l_mix.to_string(),
                r.l_p.to_string(),
                r.l_r.to_string(),
                r.labeled_count.map_or(String::new(), |c| c.to_string()),
                curve,
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
