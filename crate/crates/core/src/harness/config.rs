//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! seed = 3
//! data.train = train.csv
//! data.test = test.csv
//! noise.type = asym
//! noise.ratio = 0.4
//! selfmix.tau = 0.5
//! output.dir = out
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::backward::Reduction;
use crate::error::{Error, Result};
use crate::noise::{IdnOptions, NoiseType, TransitionMap};
use crate::seed::SeedTree;
use crate::selfmix::train::{SelfMixConfig, WarmupBudget};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub noise_type: NoiseType,
    pub ratio: f64,
    pub seed: u64,
    pub transition: Option<PathBuf>,
    pub idn: IdnOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub num_classes: Option<usize>,
    pub noise: Option<NoiseSpec>,
    pub selfmix: SelfMixConfig,
    pub output_dir: PathBuf,
    /// Histogram bins for the per-epoch loss exports.
    pub bins: usize,
}

const KEYS: &[&str] = &[
    "seed",
    "data.train",
    "data.test",
    "data.num_classes",
    "noise.type",
    "noise.ratio",
    "noise.seed",
    "noise.transition",
    "noise.aux_fraction",
    "noise.aux_epochs",
    "selfmix.tau",
    "selfmix.lambda_p",
    "selfmix.lambda_r",
    "selfmix.alpha",
    "selfmix.temperature",
    "selfmix.warmup_epochs",
    "selfmix.warmup_samples",
    "selfmix.epochs",
    "selfmix.batch_size",
    "selfmix.class_regularize",
    "selfmix.reduction",
    "encoder.buckets",
    "encoder.hidden",
    "encoder.dropout",
    "optim.lr",
    "optim.beta1",
    "optim.beta2",
    "optim.eps",
    "gmm.max_iter",
    "gmm.tol",
    "output.dir",
    "output.curve_interval",
    "output.bins",
];

struct Entries {
    map: BTreeMap<String, (String, usize)>,
    source: PathBuf,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|_| Error::Parse {
                path: self.source.clone(),
                line: line as u64,
                message: format!("bad value '{v}' for {key}"),
            }),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.parse(key)? {
            *slot = v;
        }
        Ok(())
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Parse config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path, source: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: source.to_path_buf(),
                line: i as u64 + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected 'key = value', got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(parse_err(format!("unknown key '{k}'")));
            }
            if map.insert(k.to_string(), (v.to_string(), i + 1)).is_some() {
                return Err(parse_err(format!("duplicate key '{k}'")));
            }
        }
        let mut e = Entries {
            map,
            source: source.to_path_buf(),
        };

        let mut sm = SelfMixConfig::default();
        e.set("seed", &mut sm.seed)?;
        let seeds = SeedTree::new(sm.seed);
        let train = e
            .take("data.train")
            .map(|(v, _)| resolve(base, &v))
            .ok_or_else(|| Error::arg("config is missing data.train"))?;
        let test = e
            .take("data.test")
            .map(|(v, _)| resolve(base, &v))
            .ok_or_else(|| Error::arg("config is missing data.test"))?;
        let num_classes = e.parse("data.num_classes")?;

        let noise = match e.take("noise.type") {
            None => None,
            Some((t, _)) => {
                let noise_type: NoiseType = t.parse()?;
                let ratio = e
                    .parse("noise.ratio")?
                    .ok_or_else(|| Error::arg("noise.type given without noise.ratio"))?;
                let seed = e
                    .parse("noise.seed")?
                    .unwrap_or_else(|| seeds.derive("noise"));
                let transition = e.take("noise.transition").map(|(v, _)| resolve(base, &v));
                let mut idn = IdnOptions::default();
                e.set("noise.aux_fraction", &mut idn.aux_subset_fraction)?;
                e.set("noise.aux_epochs", &mut idn.aux_epochs)?;
                Some(NoiseSpec {
                    noise_type,
                    ratio,
                    seed,
                    transition,
                    idn,
                })
            }
        };

        e.set("selfmix.tau", &mut sm.tau)?;
        e.set("selfmix.lambda_p", &mut sm.lambda_p)?;
        e.set("selfmix.lambda_r", &mut sm.lambda_r)?;
        e.set("selfmix.alpha", &mut sm.alpha)?;
        e.set("selfmix.temperature", &mut sm.temperature)?;
        let warm_epochs: Option<usize> = e.parse("selfmix.warmup_epochs")?;
        let warm_samples: Option<usize> = e.parse("selfmix.warmup_samples")?;
        sm.warmup = match (warm_epochs, warm_samples) {
            (Some(_), Some(_)) => {
                return Err(Error::arg(
                    "give selfmix.warmup_epochs or selfmix.warmup_samples, not both",
                ))
            }
            (Some(n), None) => WarmupBudget::Epochs(n),
            (None, Some(n)) => WarmupBudget::Samples(n),
            (None, None) => sm.warmup,
        };
        e.set("selfmix.epochs", &mut sm.total_epochs)?;
        e.set("selfmix.batch_size", &mut sm.batch_size)?;
        e.set("selfmix.class_regularize", &mut sm.class_regularize)?;
        if let Some((v, _)) = e.take("selfmix.reduction") {
            sm.reduction = match v.as_str() {
                "mean" => Reduction::Mean,
                "sum" => Reduction::Sum,
                other => {
                    return Err(Error::arg(format!(
                        "selfmix.reduction '{other}' is not mean or sum"
                    )))
                }
            };
        }
        e.set("encoder.buckets", &mut sm.model.buckets)?;
        e.set("encoder.hidden", &mut sm.model.hidden)?;
        e.set("encoder.dropout", &mut sm.model.dropout)?;
        e.set("optim.lr", &mut sm.model.adam.learning_rate)?;
        e.set("optim.beta1", &mut sm.model.adam.beta1)?;
        e.set("optim.beta2", &mut sm.model.adam.beta2)?;
        e.set("optim.eps", &mut sm.model.adam.epsilon)?;
        e.set("gmm.max_iter", &mut sm.gmm_max_iter)?;
        e.set("gmm.tol", &mut sm.gmm_tol)?;
        let output_dir = e
            .take("output.dir")
            .map(|(v, _)| resolve(base, &v))
            .unwrap_or_else(|| base.join("out"));
        e.set("output.curve_interval", &mut sm.curve_interval)?;
        let mut bins = 20;
        e.set("output.bins", &mut bins)?;
        debug_assert!(e.map.is_empty());

        let config = ExperimentConfig {
            train,
            test,
            num_classes,
            noise,
            selfmix: sm,
            output_dir,
            bins,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::arg(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    /// Numeric invariants. Path existence is checked separately at run time.
    pub fn validate(&self) -> Result<()> {
        self.selfmix.validate()?;
        if self.bins == 0 {
            return Err(Error::arg("output.bins must be >= 1"));
        }
        if let Some(n) = &self.noise {
            if !(0.0..1.0).contains(&n.ratio) {
                return Err(Error::arg(format!("noise.ratio {} not in [0, 1)", n.ratio)));
            }
            let f = n.idn.aux_subset_fraction;
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::arg(format!("noise.aux_fraction {f} not in (0, 1]")));
            }
        }
        Ok(())
    }

    /// Every referenced input path must exist.
    pub fn check_paths(&self) -> Result<()> {
        let mut inputs = vec![("data.train", &self.train), ("data.test", &self.test)];
        if let Some(t) = self.noise.as_ref().and_then(|n| n.transition.as_ref()) {
            inputs.push(("noise.transition", t));
        }
        for (key, p) in inputs {
            if !p.is_file() {
                return Err(Error::arg(format!("{key}: no such file {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn transition(&self) -> Result<Option<TransitionMap>> {
        match self.noise.as_ref().and_then(|n| n.transition.as_ref()) {
            Some(p) => TransitionMap::load(p).map(Some),
            None => Ok(None),
        }
    }

    /// Canonical `key = value` lines; parsing them back yields the same config.
    pub fn echo(&self) -> Vec<String> {
        let sm = &self.selfmix;
        let mut out = vec![
            format!("seed = {}", sm.seed),
            format!("data.train = {}", self.train.display()),
            format!("data.test = {}", self.test.display()),
        ];
        if let Some(c) = self.num_classes {
            out.push(format!("data.num_classes = {c}"));
        }
        if let Some(n) = &self.noise {
            out.push(format!("noise.type = {}", n.noise_type));
            out.push(format!("noise.ratio = {}", n.ratio));
            out.push(format!("noise.seed = {}", n.seed));
            if let Some(t) = &n.transition {
                out.push(format!("noise.transition = {}", t.display()));
            }
            out.push(format!(
                "noise.aux_fraction = {}",
                n.idn.aux_subset_fraction
            ));
            out.push(format!("noise.aux_epochs = {}", n.idn.aux_epochs));
        }
        out.push(format!("selfmix.tau = {}", sm.tau));
        out.push(format!("selfmix.lambda_p = {}", sm.lambda_p));
        out.push(format!("selfmix.lambda_r = {}", sm.lambda_r));
        out.push(format!("selfmix.alpha = {}", sm.alpha));
        out.push(format!("selfmix.temperature = {}", sm.temperature));
        out.push(match sm.warmup {
            WarmupBudget::Epochs(n) => format!("selfmix.warmup_epochs = {n}"),
            WarmupBudget::Samples(n) => format!("selfmix.warmup_samples = {n}"),
        });
        out.push(format!("selfmix.epochs = {}", sm.total_epochs));
        out.push(format!("selfmix.batch_size = {}", sm.batch_size));
        out.push(format!(
            "selfmix.class_regularize = {}",
            sm.class_regularize
        ));
        out.push(format!(
            "selfmix.reduction = {}",
            match sm.reduction {
                Reduction::Mean => "mean",
                Reduction::Sum => "sum",
            }
        ));
        out.push(format!("encoder.buckets = {}", sm.model.buckets));
        out.push(format!("encoder.hidden = {}", sm.model.hidden));
        out.push(format!("encoder.dropout = {}", sm.model.dropout));
        out.push(format!("optim.lr = {}", sm.model.adam.learning_rate));
        out.push(format!("optim.beta1 = {}", sm.model.adam.beta1));
        out.push(format!("optim.beta2 = {}", sm.model.adam.beta2));
        out.push(format!("optim.eps = {}", sm.model.adam.epsilon));
        out.push(format!("gmm.max_iter = {}", sm.gmm_max_iter));
        out.push(format!("gmm.tol = {}", sm.gmm_tol));
        out.push(format!("output.dir = {}", self.output_dir.display()));
        out.push(format!("output.curve_interval = {}", sm.curve_interval));
        out.push(format!("output.bins = {}", self.bins));
        out
    }
}
