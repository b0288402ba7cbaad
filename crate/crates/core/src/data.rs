//! Datasets, labels and class distributions.
//!
//! Labels are stored as class indices. The ground-truth channel produced by
//! noise injection lives in a separate [`Oracle`] view on the dataset; the
//! training code only ever reads [`Dataset::examples`], never the oracle.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance on the sum of a [`ClassDistribution`].
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: usize,
    pub text: String,
    /// Observed, possibly corrupted, label.
    pub label: usize,
}

/// Hidden ground truth for one example. Evaluation only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleLabel {
    pub true_label: usize,
    pub corrupted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    num_classes: usize,
    examples: Vec<Example>,
    oracle: Option<Vec<OracleLabel>>,
}

impl Dataset {
    /// Build a dataset, rejecting anything [`validate`] would flag.
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        examples: Vec<Example>,
        oracle: Option<Vec<OracleLabel>>,
    ) -> Result<Self> {
        let ds = Self::from_parts(name, num_classes, examples, oracle);
        let report = validate(&ds);
        if report.is_valid() {
            Ok(ds)
        } else {
            Err(Error::arg(format!("invalid dataset: {report}")))
        }
    }

    /// Build a dataset without checking invariants.
    pub fn from_parts(
        name: impl Into<String>,
        num_classes: usize,
        examples: Vec<Example>,
        oracle: Option<Vec<OracleLabel>>,
    ) -> Self {
        Dataset {
            name: name.into(),
            num_classes,
            examples,
            oracle,
        }
    }

    /// Build from `(text, label)` pairs, assigning ids by position.
    pub fn from_labeled<S: Into<String>>(
        name: impl Into<String>,
        num_classes: usize,
        rows: impl IntoIterator<Item = (S, usize)>,
    ) -> Result<Self> {
        let examples = rows
            .into_iter()
            .enumerate()
            .map(|(id, (text, label))| Example {
                id,
                text: text.into(),
                label,
            })
            .collect();
        Self::new(name, num_classes, examples, None)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn oracle(&self) -> Option<&[OracleLabel]> {
        self.oracle.as_deref()
    }

    /// Ids whose oracle entry is marked corrupted; `None` without an oracle.
    pub fn corrupted_ids(&self) -> Option<Vec<usize>> {
        self.oracle.as_ref().map(|o| {
            o.iter()
                .enumerate()
                .filter(|(_, l)| l.corrupted)
                .map(|(i, _)| i)
                .collect()
        })
    }

    /// Label used as ground truth: the oracle's if present, otherwise the observed one.
    pub fn clean_label(&self, id: usize) -> usize {
        match &self.oracle {
            Some(o) => o[id].true_label,
            None => self.examples[id].label,
        }
    }

    /// Same examples with the oracle view removed.
    pub fn without_oracle(&self) -> Dataset {
        Dataset {
            oracle: None,
            ..self.clone()
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.examples {
            if e.label < self.num_classes {
                counts[e.label] += 1;
            }
        }
        counts
    }

    /// New dataset holding the given source ids (in that order), renumbered from 0.
    pub fn select(&self, ids: &[usize]) -> Result<Dataset> {
        let mut examples = Vec::with_capacity(ids.len());
        let mut oracle = self.oracle.as_ref().map(|_| Vec::with_capacity(ids.len()));
        for (new_id, &src) in ids.iter().enumerate() {
            let e = self
                .examples
                .get(src)
                .ok_or_else(|| Error::arg(format!("id {src} out of range")))?;
            examples.push(Example {
                id: new_id,
                text: e.text.clone(),
                label: e.label,
            });
            if let (Some(dst), Some(src_oracle)) = (oracle.as_mut(), self.oracle.as_ref()) {
                dst.push(src_oracle[src]);
            }
        }
        Ok(Dataset {
            name: self.name.clone(),
            num_classes: self.num_classes,
            examples,
            oracle,
        })
    }

    /// Replace observed labels, recording the previous observed labels as ground truth.
    pub(crate) fn relabeled(&self, new_labels: &[usize]) -> Dataset {
        let examples: Vec<Example> = self
            .examples
            .iter()
            .zip(new_labels)
            .map(|(e, &l)| Example {
                label: l,
                ..e.clone()
            })
            .collect();
        let oracle = self
            .examples
            .iter()
            .zip(new_labels)
            .enumerate()
            .map(|(i, (e, &l))| {
                let true_label = self.oracle.as_ref().map_or(e.label, |o| o[i].true_label);
                OracleLabel {
                    true_label,
                    corrupted: l != true_label,
                }
            })
            .collect();
        Dataset {
            name: self.name.clone(),
            num_classes: self.num_classes,
            examples,
            oracle: Some(oracle),
        }
    }
}

/// A probability vector over the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::arg("empty class distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::arg(format!("probability {p} outside [0, inf)")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::arg(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ClassDistribution(probs))
    }

    /// Wrap a vector already known to lie on the simplex.
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(Self::new(probs.clone()).is_ok(), "{probs:?}");
        ClassDistribution(probs)
    }

    pub fn uniform(num_classes: usize) -> Self {
        ClassDistribution(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn is_on_simplex(&self) -> bool {
        let sum: f64 = self.0.iter().sum();
        self.0.iter().all(|p| *p >= 0.0) && (sum - 1.0).abs() <= SIMPLEX_TOL
    }
}

impl AsRef<[f64]> for ClassDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(class_index: usize, num_classes: usize) -> Result<ClassDistribution> {
    if class_index >= num_classes {
        return Err(Error::arg(format!(
            "class index {class_index} out of range for {num_classes} classes"
        )));
    }
    let mut v = vec![0.0; num_classes];
    v[class_index] = 1.0;
    Ok(ClassDistribution(v))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    /// Example at `position` carries id `id` instead of its position.
    IdMismatch {
        position: usize,
        id: usize,
    },
    DuplicateId {
        id: usize,
    },
    LabelOutOfRange {
        id: usize,
        label: usize,
    },
    TrueLabelOutOfRange {
        id: usize,
        label: usize,
    },
    EmptyText {
        id: usize,
    },
    MaskInconsistency {
        id: usize,
    },
    OracleLength {
        expected: usize,
        found: usize,
    },
    NoClasses,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::IdMismatch { position, id } => {
                write!(f, "example at position {position} has id {id}")
            }
            Finding::DuplicateId { id } => write!(f, "duplicate id {id}"),
            Finding::LabelOutOfRange { id, label } => {
                write!(f, "example {id}: label out of range ({label})")
            }
            Finding::TrueLabelOutOfRange { id, label } => {
                write!(f, "example {id}: true label out of range ({label})")
            }
            Finding::EmptyText { id } => write!(f, "example {id}: empty text"),
            Finding::MaskInconsistency { id } => {
                write!(f, "example {id}: mask inconsistency")
            }
            Finding::OracleLength { expected, found } => {
                write!(f, "oracle has {found} entries, expected {expected}")
            }
            Finding::NoClasses => write!(f, "dataset declares zero classes"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, finding) in self.findings.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{finding}")?;
        }
        Ok(())
    }
}

/// Collect every invariant violation in `dataset`.
pub fn validate(dataset: &Dataset) -> ValidationReport {
    let mut findings = Vec::new();
    let n = dataset.examples.len();
    let c = dataset.num_classes;
    if c == 0 {
        findings.push(Finding::NoClasses);
    }
    let mut seen = vec![false; n];
    for (position, e) in dataset.examples.iter().enumerate() {
        if e.id < n {
            if seen[e.id] {
                findings.push(Finding::DuplicateId { id: e.id });
            }
            seen[e.id] = true;
        }
        if e.id != position {
            findings.push(Finding::IdMismatch { position, id: e.id });
        }
        if e.label >= c {
            findings.push(Finding::LabelOutOfRange {
                id: e.id,
                label: e.label,
            });
        }
        if e.text.is_empty() {
            findings.push(Finding::EmptyText { id: e.id });
        }
    }
    if let Some(oracle) = &dataset.oracle {
        if oracle.len() != n {
            findings.push(Finding::OracleLength {
                expected: n,
                found: oracle.len(),
            });
        }
        for (e, o) in dataset.examples.iter().zip(oracle) {
            if o.true_label >= c {
                findings.push(Finding::TrueLabelOutOfRange {
                    id: e.id,
                    label: o.true_label,
                });
            }
            if o.corrupted != (e.label != o.true_label) {
                findings.push(Finding::MaskInconsistency { id: e.id });
            }
        }
    }
    ValidationReport { findings }
}

/// Source ids of a class-stratified subsample of size `n`, in dataset order.
///
/// Per-class quotas use the largest-remainder method, so each class count is
/// within one of `n * N_c / N`.
pub fn stratified_subsample_ids(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<usize>> {
    let total = dataset.len();
    if n > total {
        return Err(Error::arg(format!(
            "subsample of {n} requested from {total} examples"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for e in &dataset.examples {
        by_class[e.label].push(e.id);
    }
    let quotas = largest_remainder(&by_class.iter().map(Vec::len).collect::<Vec<_>>(), n, total);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (members, quota) in by_class.iter_mut().zip(quotas) {
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..quota]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Class-stratified subsample, renumbered from 0.
pub fn stratified_subsample(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let ids = stratified_subsample_ids(dataset, n, seed)?;
    dataset.select(&ids)
}

fn largest_remainder(counts: &[usize], n: usize, total: usize) -> Vec<usize> {
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas: Vec<usize> = counts.iter().map(|&c| c * n / total).collect();
    let assigned: usize = quotas.iter().sum();
    // Remainders compared exactly as integers: (c * n) mod total.
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = counts[a] * n % total;
        let rb = counts[b] * n % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(n - assigned) {
        quotas[c] += 1;
    }
    quotas
}

const HEADER: [&str; 2] = ["label", "text"];
const HEADER_ORACLE: [&str; 3] = ["label", "text", "true_label"];

/// Read a `label,text[,true_label]` CSV corpus.
///
/// With `num_classes = None` the class count is one more than the largest label seen.
pub fn read_csv<R: Read>(
    reader: R,
    source: &Path,
    name: &str,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    let fields: Vec<&str> = header.iter().collect();
    let with_oracle = if fields == HEADER {
        false
    } else if fields == HEADER_ORACLE {
        true
    } else {
        return Err(Error::Format(format!(
            "{}: unknown header {:?}; expected `label,text` or `label,text,true_label`",
            source.display(),
            fields
        )));
    };
    let width = if with_oracle { 3 } else { 2 };

    let mut examples = Vec::new();
    let mut truth = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(source, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        if record.len() != width {
            return Err(parse_err(format!(
                "expected {width} fields, found {}",
                record.len()
            )));
        }
        let label = parse_label(&record[0]).map_err(&parse_err)?;
        let text = record[1].to_string();
        if text.is_empty() {
            return Err(parse_err("empty text".into()));
        }
        if with_oracle {
            truth.push(parse_label(&record[2]).map_err(&parse_err)?);
        }
        if let Some(c) = num_classes {
            let bad = std::iter::once(label).chain(truth.last().copied().filter(|_| with_oracle));
            for l in bad {
                if l >= c {
                    return Err(parse_err(format!("label {l} out of range for {c} classes")));
                }
            }
        }
        examples.push(Example {
            id: examples.len(),
            text,
            label,
        });
    }

    let num_classes = num_classes.unwrap_or_else(|| {
        examples
            .iter()
            .map(|e| e.label)
            .chain(truth.iter().copied())
            .max()
            .map_or(0, |m| m + 1)
    });
    let oracle = with_oracle.then(|| {
        examples
            .iter()
            .zip(&truth)
            .map(|(e, &t)| OracleLabel {
                true_label: t,
                corrupted: e.label != t,
            })
            .collect()
    });
    Dataset::new(name, num_classes, examples, oracle)
}

fn parse_label(field: &str) -> std::result::Result<usize, String> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| format!("label {field:?} is not a non-negative integer"))
}

fn csv_error(source: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            path: source.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Load a CSV corpus from disk. The dataset is named after the file stem.
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let name = path.file_stem().map_or_else(
        || "dataset".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    read_csv(std::io::BufReader::new(file), path, &name, num_classes)
}

/// Write `dataset` as CSV; the `true_label` column is emitted iff the oracle is present.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let to_io = |e: csv::Error| Error::Io(e.into());
    match &dataset.oracle {
        None => {
            wtr.write_record(HEADER).map_err(to_io)?;
            for e in &dataset.examples {
                wtr.write_record([e.label.to_string().as_str(), e.text.as_str()])
                    .map_err(to_io)?;
            }
        }
        Some(oracle) => {
            wtr.write_record(HEADER_ORACLE).map_err(to_io)?;
            for (e, o) in dataset.examples.iter().zip(oracle) {
                wtr.write_record([
                    e.label.to_string().as_str(),
                    e.text.as_str(),
                    o.true_label.to_string().as_str(),
                ])
                .map_err(to_io)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(dataset, std::io::BufWriter::new(file))
}
