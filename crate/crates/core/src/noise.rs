//! Controlled label corruption with an exact record of every flip.
//!
//! Three mechanisms: uniform flips to a random other class, asymmetric flips
//! along a fixed class map, and instance-dependent flips of the examples an
//! auxiliary classifier finds most ambiguous.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_subsample_ids, Dataset};
use crate::encoder::model::{softmax_vec, Dropout, ModelParams};
use crate::error::{Error, Result};
use crate::seed::SeedTree;
use crate::selfmix::corpus::Corpus;
use crate::selfmix::train::{warmup, ModelConfig, WarmupBudget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseType {
    Uniform,
    #[serde(rename = "asym")]
    Asymmetric,
    #[serde(rename = "idn")]
    InstanceDependent,
}

impl NoiseType {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseType::Uniform => "uniform",
            NoiseType::Asymmetric => "asym",
            NoiseType::InstanceDependent => "idn",
        }
    }
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" | "random" => Ok(NoiseType::Uniform),
            "asym" | "asymmetric" => Ok(NoiseType::Asymmetric),
            "idn" | "instance_dependent" | "instance-dependent" => Ok(NoiseType::InstanceDependent),
            other => Err(Error::arg(format!(
                "unknown noise type '{other}' (expected uniform, asym or idn)"
            ))),
        }
    }
}

/// Class map for asymmetric noise: class `c` flips to `targets[c]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMap {
    targets: Vec<usize>,
}

impl TransitionMap {
    pub fn new(targets: Vec<usize>) -> Result<Self> {
        let c = targets.len();
        if c < 2 {
            return Err(Error::arg("transition map needs at least 2 classes"));
        }
        for (from, &to) in targets.iter().enumerate() {
            if to >= c {
                return Err(Error::arg(format!(
                    "transition {from} -> {to} leaves the {c} classes"
                )));
            }
            if to == from {
                return Err(Error::arg(format!(
                    "transition maps class {from} to itself"
                )));
            }
        }
        Ok(TransitionMap { targets })
    }

    /// `c -> (c + 1) mod C`.
    pub fn cyclic(num_classes: usize) -> Result<Self> {
        Self::new((0..num_classes).map(|c| (c + 1) % num_classes).collect())
    }

    pub fn target(&self, class: usize) -> usize {
        self.targets[class]
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn num_classes(&self) -> usize {
        self.targets.len()
    }

    /// Parse targets listed in class order, separated by commas or whitespace.
    /// Lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let targets = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(|l| l.split(|ch: char| ch == ',' || ch.is_whitespace()))
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad class index '{t}' in transition map")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(targets)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_line(&self) -> String {
        join(&self.targets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flip {
    pub id: usize,
    pub old_label: usize,
    pub new_label: usize,
}

/// Exact record of a corruption run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionManifest {
    pub noise_type: NoiseType,
    pub ratio: f64,
    pub seed: u64,
    /// Sorted by id.
    pub flips: Vec<Flip>,
    /// `flip_counts[old][new]`.
    pub flip_counts: Vec<Vec<usize>>,
    /// Free-form `key = value` lines echoed into the sidecar.
    pub echo: Vec<String>,
}

impl CorruptionManifest {
    fn build(
        noise_type: NoiseType,
        ratio: f64,
        seed: u64,
        num_classes: usize,
        mut flips: Vec<Flip>,
    ) -> Self {
        flips.sort_by_key(|f| f.id);
        let mut flip_counts = vec![vec![0; num_classes]; num_classes];
        for f in &flips {
            flip_counts[f.old_label][f.new_label] += 1;
        }
        CorruptionManifest {
            noise_type,
            ratio,
            seed,
            flips,
            flip_counts,
            echo: Vec::new(),
        }
    }

    pub fn flipped_ids(&self) -> BTreeSet<usize> {
        self.flips.iter().map(|f| f.id).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.flip_counts.len()
    }

    /// Per-class flip totals (row sums of the count matrix).
    pub fn per_class_totals(&self) -> Vec<usize> {
        self.flip_counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Sum of the off-diagonal flip counts.
    pub fn off_diagonal_total(&self) -> usize {
        self.flip_counts
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, v)| v)
                    .sum::<usize>()
            })
            .sum()
    }

    /// Check the manifest against the corrupted dataset it came with.
    pub fn audit(&self, corrupted: &Dataset) -> Result<()> {
        if self.flipped_ids().len() != self.flips.len() {
            return Err(Error::Format("manifest lists an id twice".into()));
        }
        if self.off_diagonal_total() != self.flips.len() {
            return Err(Error::Format(
                "flip-count matrix disagrees with the flip list".into(),
            ));
        }
        let oracle = corrupted
            .oracle()
            .ok_or_else(|| Error::arg("corrupted dataset has no oracle columns"))?;
        for f in &self.flips {
            let e = corrupted
                .examples()
                .get(f.id)
                .ok_or_else(|| Error::arg(format!("manifest id {} out of range", f.id)))?;
            if e.label != f.new_label || !oracle[f.id].corrupted {
                return Err(Error::Format(format!(
                    "example {} does not carry the flip recorded in the manifest",
                    f.id
                )));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {},{},{}", self.noise_type, self.ratio, self.seed)?;
        writeln!(out, "id,old_label,new_label")?;
        for f in &self.flips {
            writeln!(out, "{},{},{}", f.id, f.old_label, f.new_label)?;
        }
        writeln!(out, "# flip_counts {}", self.num_classes())?;
        for row in &self.flip_counts {
            writeln!(out, "# {}", join(row))?;
        }
        for line in &self.echo {
            writeln!(out, "# {line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R, source: &Path) -> Result<Self> {
        let parse_err = |line: u64, message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut lines = BufReader::new(input).lines();
        let mut next = |n: &mut u64| -> Result<Option<String>> {
            *n += 1;
            lines.next().transpose().map_err(Error::from)
        };
        let mut n = 0u64;
        let first = next(&mut n)?.ok_or_else(|| parse_err(1, "empty manifest".into()))?;
        let head: Vec<&str> = first
            .strip_prefix('#')
            .ok_or_else(|| parse_err(1, "missing '# type,ratio,seed' line".into()))?
            .trim()
            .split(',')
            .collect();
        if head.len() != 3 {
            return Err(parse_err(1, "expected '# type,ratio,seed'".into()));
        }
        let noise_type: NoiseType = head[0]
            .parse()
            .map_err(|e: Error| parse_err(1, e.to_string()))?;
        let ratio: f64 = head[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(1, "bad ratio".into()))?;
        let seed: u64 = head[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(1, "bad seed".into()))?;
        if next(&mut n)?.as_deref().map(str::trim) != Some("id,old_label,new_label") {
            return Err(parse_err(
                2,
                "expected header 'id,old_label,new_label'".into(),
            ));
        }

        let mut flips = Vec::new();
        let mut num_classes = None;
        while let Some(line) = next(&mut n)? {
            if let Some(rest) = line.strip_prefix("# flip_counts") {
                num_classes = Some(
                    rest.trim()
                        .parse::<usize>()
                        .map_err(|_| parse_err(n, "bad class count".into()))?,
                );
                break;
            }
            let cols: Vec<usize> = line
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(n, format!("bad flip row '{line}'")))?;
            if cols.len() != 3 {
                return Err(parse_err(n, format!("bad flip row '{line}'")));
            }
            flips.push(Flip {
                id: cols[0],
                old_label: cols[1],
                new_label: cols[2],
            });
        }
        let c = num_classes.ok_or_else(|| parse_err(n, "missing flip_counts block".into()))?;
        let mut flip_counts = Vec::with_capacity(c);
        for _ in 0..c {
            let line = next(&mut n)?.ok_or_else(|| parse_err(n, "truncated flip_counts".into()))?;
            let row: Vec<usize> = line
                .strip_prefix('#')
                .unwrap_or(&line)
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(n, "bad flip_counts row".into()))?;
            if row.len() != c {
                return Err(parse_err(n, "flip_counts row has the wrong width".into()));
            }
            flip_counts.push(row);
        }
        let mut echo = Vec::new();
        while let Some(line) = next(&mut n)? {
            if let Some(rest) = line.strip_prefix('#') {
                echo.push(rest.trim_start().to_string());
            }
        }
        if flips.iter().any(|f| f.old_label >= c || f.new_label >= c) {
            return Err(Error::Format("manifest label out of range".into()));
        }
        Ok(CorruptionManifest {
            noise_type,
            ratio,
            seed,
            flips,
            flip_counts,
            echo,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?, path)
    }
}

fn join(xs: &[usize]) -> String {
    xs.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::arg(format!("noise ratio {ratio} not in [0, 1)")));
    }
    Ok(())
}

fn check_clean(dataset: &Dataset) -> Result<()> {
    if dataset.corrupted_ids().is_some_and(|ids| !ids.is_empty()) {
        return Err(Error::arg(
            "dataset already carries corrupted labels; inject into a clean dataset",
        ));
    }
    if dataset.num_classes() < 2 {
        return Err(Error::arg("label noise needs at least 2 classes"));
    }
    Ok(())
}

fn count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

fn apply(
    dataset: &Dataset,
    noise_type: NoiseType,
    ratio: f64,
    seed: u64,
    flips: Vec<Flip>,
) -> (Dataset, CorruptionManifest) {
    let mut labels = dataset.labels();
    for f in &flips {
        labels[f.id] = f.new_label;
    }
    let manifest = CorruptionManifest::build(noise_type, ratio, seed, dataset.num_classes(), flips);
    (dataset.relabeled(&labels), manifest)
}

/// Flip exactly `round(ratio * N)` examples, each to a uniformly chosen other class.
pub fn inject_uniform(
    dataset: &Dataset,
    ratio: f64,
    seed: u64,
) -> Result<(Dataset, CorruptionManifest)> {
    check_ratio(ratio)?;
    check_clean(dataset)?;
    let c = dataset.num_classes();
    let mut rng = SeedTree::new(seed).rng("noise.uniform");
    let mut ids: Vec<usize> = (0..dataset.len()).collect();
    ids.shuffle(&mut rng);
    let k = count(ratio, dataset.len());
    let flips = ids[..k]
        .iter()
        .map(|&id| {
            let old = dataset.examples()[id].label;
            let r = rng.random_range(0..c - 1);
            Flip {
                id,
                old_label: old,
                new_label: if r >= old { r + 1 } else { r },
            }
        })
        .collect();
    Ok(apply(dataset, NoiseType::Uniform, ratio, seed, flips))
}

/// For each class `c`, relabel exactly `round(ratio * N_c)` of its examples as `t(c)`.
pub fn inject_asymmetric(
    dataset: &Dataset,
    ratio: f64,
    transition: &TransitionMap,
    seed: u64,
) -> Result<(Dataset, CorruptionManifest)> {
    check_ratio(ratio)?;
    check_clean(dataset)?;
    if transition.num_classes() != dataset.num_classes() {
        return Err(Error::arg(format!(
            "transition map covers {} classes, dataset has {}",
            transition.num_classes(),
            dataset.num_classes()
        )));
    }
    let mut rng = SeedTree::new(seed).rng("noise.asym");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (id, e) in dataset.examples().iter().enumerate() {
        by_class[e.label].push(id);
    }
    let mut flips = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let k = count(ratio, members.len());
        flips.extend(members[..k].iter().map(|&id| Flip {
            id,
            old_label: class,
            new_label: transition.target(class),
        }));
    }
    Ok(apply(dataset, NoiseType::Asymmetric, ratio, seed, flips))
}

/// Settings for the auxiliary classifier behind instance-dependent noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdnOptions {
    /// Fraction of the clean data (stratified) the auxiliary model is trained on.
    pub aux_subset_fraction: f64,
    pub aux_epochs: usize,
    pub batch_size: usize,
    pub model: ModelConfig,
}

impl Default for IdnOptions {
    fn default() -> Self {
        let mut model = ModelConfig {
            buckets: 1 << 16,
            ..ModelConfig::default()
        };
        model.adam.learning_rate = 1e-2;
        IdnOptions {
            aux_subset_fraction: 0.1,
            aux_epochs: 2,
            batch_size: 32,
            model,
        }
    }
}

/// Margin `p(true) - max_{c != true} p(c)` and the strongest other class, per example.
pub fn margins(model: &ModelParams, dataset: &Dataset) -> Result<Vec<(f64, usize)>> {
    let corpus = Corpus::from_dataset(dataset, model.dims().buckets);
    corpus
        .features
        .iter()
        .zip(&corpus.labels)
        .enumerate()
        .map(|(id, (f, &label))| {
            let logits = model.head_forward(&model.encode(f)?, Dropout::Off);
            let p = softmax_vec(&logits);
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    format!("auxiliary prediction for example {id}"),
                    "non-finite probability",
                ));
            }
            let (other, best) = p.iter().enumerate().filter(|(c, _)| *c != label).fold(
                (usize::MAX, f64::NEG_INFINITY),
                |acc, (c, &v)| {
                    if v > acc.1 {
                        (c, v)
                    } else {
                        acc
                    }
                },
            );
            Ok((p[label] - best, other))
        })
        .collect()
}

/// Flip the `round(ratio * N)` examples closest to the auxiliary model's
/// decision boundary, each to its strongest other class.
pub fn inject_instance_dependent(
    dataset: &Dataset,
    ratio: f64,
    aux_subset_fraction: f64,
    seed: u64,
) -> Result<(Dataset, CorruptionManifest)> {
    let options = IdnOptions {
        aux_subset_fraction,
        ..IdnOptions::default()
    };
    inject_instance_dependent_with(dataset, ratio, &options, seed)
}

pub fn inject_instance_dependent_with(
    dataset: &Dataset,
    ratio: f64,
    options: &IdnOptions,
    seed: u64,
) -> Result<(Dataset, CorruptionManifest)> {
    check_ratio(ratio)?;
    check_clean(dataset)?;
    let f = options.aux_subset_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::arg(format!(
            "auxiliary subset fraction {f} not in (0, 1]"
        )));
    }
    let k = count(ratio, dataset.len());
    if k == 0 {
        return Ok(apply(
            dataset,
            NoiseType::InstanceDependent,
            ratio,
            seed,
            Vec::new(),
        ));
    }
    let seeds = SeedTree::new(seed);
    let n_aux = ((f * dataset.len() as f64).round() as usize).clamp(1, dataset.len());
    let aux_ids = stratified_subsample_ids(dataset, n_aux, seeds.derive("noise.idn.subset"))?;
    let aux_data = dataset.select(&aux_ids)?;
    let init = ModelParams::init(
        options.model.dims(dataset.num_classes()),
        options.model.dropout,
        seeds.derive("noise.idn.init"),
    )?;
    let aux = warmup(
        init,
        &aux_data,
        WarmupBudget::Epochs(options.aux_epochs),
        options.batch_size.max(1),
        options.model.adam,
        seeds.derive("noise.idn.train"),
    )?;
    if !aux.weights.all_finite() {
        return Err(Error::numeric(
            "auxiliary training",
            "non-finite parameters",
        ));
    }

    let scored = margins(&aux, dataset)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0).then(a.cmp(&b)));
    let flips = order[..k]
        .iter()
        .map(|&id| Flip {
            id,
            old_label: dataset.examples()[id].label,
            new_label: scored[id].1,
        })
        .collect();
    Ok(apply(
        dataset,
        NoiseType::InstanceDependent,
        ratio,
        seed,
        flips,
    ))
}

/// Dispatch on `noise_type`. `transition` defaults to the cyclic map.
pub fn inject(
    dataset: &Dataset,
    noise_type: NoiseType,
    ratio: f64,
    seed: u64,
    transition: Option<&TransitionMap>,
    idn: &IdnOptions,
) -> Result<(Dataset, CorruptionManifest)> {
    match noise_type {
        NoiseType::Uniform => inject_uniform(dataset, ratio, seed),
        NoiseType::Asymmetric => match transition {
            Some(t) => inject_asymmetric(dataset, ratio, t, seed),
            None => inject_asymmetric(
                dataset,
                ratio,
                &TransitionMap::cyclic(dataset.num_classes())?,
                seed,
            ),
        },
        NoiseType::InstanceDependent => inject_instance_dependent_with(dataset, ratio, idn, seed),
    }
}
