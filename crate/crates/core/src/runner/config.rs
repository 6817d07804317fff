use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::bank::{AnnealSchedule, NegativeKind, NeighborKind};
use crate::data::{GaussianPairFamily, ViewFunction};
use crate::error::{Error, Result};
use crate::estimators::WitnessKind;
use crate::ndmath::{OptimizerConfig, OptimizerKind};
use crate::objectives::{ChannelSplit, ObjectiveFamily, ObjectiveSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Gaussian,
    Spirals,
    Blobs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n: usize,
    /// Held-out points for the probes (labeled datasets only).
    pub test_n: usize,
    pub gaussian: GaussianPairFamily,
    pub blob_centers: usize,
    pub blob_dim: usize,
    pub blob_spread: f64,
    pub blob_half_width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Number of linear layers.
    pub layers: usize,
    pub hidden: usize,
    pub output: usize,
    pub normalize: bool,
}

impl EncoderConfig {
    pub fn widths(&self, input: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.hidden, self.layers.saturating_sub(1)));
        w.push(self.output);
        w
    }
}

/// Starting rows of the memory bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BankInit {
    /// Encodings of the privileged points under the initial weights.
    Encoded,
    /// Independent uniform directions on the unit sphere.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    Epoch,
    Step,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// K − 1.
    pub negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// When non-zero, overrides `epochs`.
    pub steps: usize,
    pub anneal_granularity: Granularity,
    pub km_recompute_epochs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub knn_k: usize,
    /// 0 probes only at the end.
    pub probe_every_epochs: usize,
    pub logistic_epochs: usize,
    pub logistic_lr: f64,
    /// Ball percentile for the negatives of the final estimate; `None` reuses the training pool.
    pub restrict_percent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: String,
    /// When off, `wall_seconds` is written as 0 so reruns are byte-identical.
    pub wall_clock: bool,
    pub representations: bool,
}

/// A named set of overrides applied on top of the base configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub overrides: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub view: ViewFunction,
    pub encoder: EncoderConfig,
    pub witness: WitnessKind,
    pub witness_hidden: usize,
    pub objective: ObjectiveSpec,
    pub bank_alpha: f64,
    pub bank_renormalize: bool,
    pub bank_init: BankInit,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub output: OutputConfig,
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            dataset: DatasetConfig {
                kind: DatasetKind::Spirals,
                n: 2000,
                test_n: 1000,
                gaussian: GaussianPairFamily::default(),
                blob_centers: 4,
                blob_dim: 2,
                blob_spread: 0.3,
                blob_half_width: 3.0,
            },
            view: ViewFunction::Identity,
            encoder: EncoderConfig {
                layers: 5,
                hidden: 128,
                output: 2,
                normalize: true,
            },
            witness: WitnessKind::ScaledDot,
            witness_hidden: 128,
            objective: ObjectiveSpec::default(),
            bank_alpha: 0.5,
            bank_renormalize: true,
            bank_init: BankInit::Random,
            optimizer: OptimizerConfig::sgd(0.03, 0.9, 1e-5),
            train: TrainConfig {
                negatives: 4096,
                batch_size: 128,
                epochs: 100,
                steps: 0,
                anneal_granularity: Granularity::Epoch,
                km_recompute_epochs: 1,
            },
            eval: EvalConfig {
                knn_k: 1,
                probe_every_epochs: 0,
                logistic_epochs: 2000,
                logistic_lr: 0.05,
                restrict_percent: None,
            },
            seeds: vec![0],
            output: OutputConfig {
                dir: "runs".into(),
                wall_clock: true,
                representations: true,
            },
            variants: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn parse_matrix(key: &str, value: &str) -> Result<[[f64; 2]; 2]> {
    let v: Vec<f64> = value.split(',').map(|p| parse(key, p.trim())).collect::<Result<_>>()?;
    match v.as_slice() {
        &[a, b, c, d] => Ok([[a, b], [c, d]]),
        _ => Err(Error::Config(format!("`{key}`: expected four comma-separated values"))),
    }
}

fn fmt_matrix(m: &[[f64; 2]; 2]) -> String {
    format!("{},{},{},{}", m[0][0], m[0][1], m[1][0], m[1][1])
}

fn parse_anneal(key: &str, value: &str) -> Result<Option<AnnealSchedule>> {
    if value == "none" {
        Ok(None)
    } else {
        value.parse().map(Some).map_err(|e: Error| Error::Config(format!("`{key}`: {e}")))
    }
}

fn fmt_anneal(a: &Option<AnnealSchedule>) -> String {
    a.map_or_else(|| "none".to_string(), |a| a.to_string())
}

fn parse_typed<T: FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e: Error| Error::Config(format!("`{key}`: {e}")))
}

impl ExperimentConfig {
    /// Every scalar key with its canonical value, in serialization order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.dataset;
        let o = &self.objective;
        let n = &o.negatives;
        let nb = &o.neighbors;
        let opt = &self.optimizer;
        let t = &self.train;
        let e = &self.eval;
        vec![
            ("experiment", self.name.clone()),
            (
                "dataset.kind",
                match d.kind {
                    DatasetKind::Gaussian => "gaussian",
                    DatasetKind::Spirals => "spirals",
                    DatasetKind::Blobs => "blobs",
                }
                .into(),
            ),
            ("dataset.n", d.n.to_string()),
            ("dataset.test_n", d.test_n.to_string()),
            ("dataset.sigma_z", fmt_matrix(&d.gaussian.sigma_z)),
            ("dataset.sigma_eps", fmt_matrix(&d.gaussian.sigma_eps)),
            ("dataset.blob_centers", d.blob_centers.to_string()),
            ("dataset.blob_dim", d.blob_dim.to_string()),
            ("dataset.blob_spread", d.blob_spread.to_string()),
            ("dataset.blob_half_width", d.blob_half_width.to_string()),
            ("view", self.view.to_string()),
            ("encoder.layers", self.encoder.layers.to_string()),
            ("encoder.hidden", self.encoder.hidden.to_string()),
            ("encoder.output", self.encoder.output.to_string()),
            ("encoder.normalize", self.encoder.normalize.to_string()),
            ("witness.kind", self.witness.to_string()),
            ("witness.hidden", self.witness_hidden.to_string()),
            ("objective.family", o.family.to_string()),
            ("objective.omega", o.omega.to_string()),
            ("objective.kappa", o.kappa.to_string()),
            ("objective.legacy", o.legacy.to_string()),
            ("objective.use_memory_bank", o.use_memory_bank.to_string()),
            (
                "objective.channel_split",
                o.channel_split.as_ref().map_or_else(|| "none".into(), ToString::to_string),
            ),
            ("objective.enforce_anchor_in_close", o.enforce_anchor_in_close.to_string()),
            ("negatives.kind", n.kind.to_string()),
            ("negatives.outer_percent", n.outer_percent.to_string()),
            ("negatives.inner_percent", n.inner_percent.to_string()),
            ("negatives.kmeans_k", n.kmeans_k.to_string()),
            ("negatives.kmeans_restarts", n.kmeans_restarts.to_string()),
            ("negatives.anneal", fmt_anneal(&n.anneal)),
            ("negatives.inner_anneal", fmt_anneal(&n.inner_anneal)),
            ("neighbors.kind", nb.kind.to_string()),
            ("neighbors.close_percent", nb.close_percent.to_string()),
            ("neighbors.kmeans_k", nb.kmeans_k.to_string()),
            ("neighbors.kmeans_restarts", nb.kmeans_restarts.to_string()),
            ("neighbors.count", nb.count.to_string()),
            ("neighbors.anneal", fmt_anneal(&nb.anneal)),
            ("bank.alpha", self.bank_alpha.to_string()),
            ("bank.renormalize", self.bank_renormalize.to_string()),
            (
                "bank.init",
                match self.bank_init {
                    BankInit::Encoded => "encoded",
                    BankInit::Random => "random",
                }
                .into(),
            ),
            (
                "optimizer.kind",
                match opt.kind {
                    OptimizerKind::SgdMomentum => "sgd-momentum",
                    OptimizerKind::Adam => "adam",
                }
                .into(),
            ),
            ("optimizer.lr", opt.learning_rate.to_string()),
            ("optimizer.momentum", opt.momentum.to_string()),
            ("optimizer.weight_decay", opt.weight_decay.to_string()),
            ("optimizer.beta1", opt.beta1.to_string()),
            ("optimizer.beta2", opt.beta2.to_string()),
            ("optimizer.epsilon", opt.epsilon.to_string()),
            ("train.negatives", t.negatives.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.steps", t.steps.to_string()),
            (
                "train.anneal_granularity",
                match t.anneal_granularity {
                    Granularity::Epoch => "epoch",
                    Granularity::Step => "step",
                }
                .into(),
            ),
            ("train.km_recompute_epochs", t.km_recompute_epochs.to_string()),
            ("eval.knn_k", e.knn_k.to_string()),
            ("eval.probe_every_epochs", e.probe_every_epochs.to_string()),
            ("eval.logistic_epochs", e.logistic_epochs.to_string()),
            ("eval.logistic_lr", e.logistic_lr.to_string()),
            ("eval.restrict_percent", e.restrict_percent.map_or_else(|| "none".into(), |p| p.to_string())),
            (
                "seeds",
                self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            ),
            ("output.dir", self.output.dir.clone()),
            ("output.wall_clock", self.output.wall_clock.to_string()),
            ("output.representations", self.output.representations.to_string()),
        ]
    }

    /// Names of all scalar keys.
    pub fn keys() -> Vec<&'static str> {
        Self::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if let Some(label) = key.strip_prefix("variant.") {
            let v = parse_variant(label, value)?;
            match self.variants.iter_mut().find(|x| x.label == v.label) {
                Some(existing) => *existing = v,
                None => self.variants.push(v),
            }
            return Ok(());
        }
        let d = &mut self.dataset;
        let o = &mut self.objective;
        let opt = &mut self.optimizer;
        let t = &mut self.train;
        let e = &mut self.eval;
        match key {
            "experiment" => self.name = value.to_string(),
            "dataset.kind" => {
                d.kind = match value {
                    "gaussian" => DatasetKind::Gaussian,
                    "spirals" => DatasetKind::Spirals,
                    "blobs" => DatasetKind::Blobs,
                    _ => return Err(Error::Config(format!("unknown dataset kind `{value}`"))),
                }
            }
            "dataset.n" => d.n = parse(key, value)?,
            "dataset.test_n" => d.test_n = parse(key, value)?,
            "dataset.sigma_z" => d.gaussian.sigma_z = parse_matrix(key, value)?,
            "dataset.sigma_eps" => d.gaussian.sigma_eps = parse_matrix(key, value)?,
            "dataset.blob_centers" => d.blob_centers = parse(key, value)?,
            "dataset.blob_dim" => d.blob_dim = parse(key, value)?,
            "dataset.blob_spread" => d.blob_spread = parse(key, value)?,
            "dataset.blob_half_width" => d.blob_half_width = parse(key, value)?,
            "view" => self.view = parse_typed(key, value)?,
            "encoder.layers" => self.encoder.layers = parse(key, value)?,
            "encoder.hidden" => self.encoder.hidden = parse(key, value)?,
            "encoder.output" => self.encoder.output = parse(key, value)?,
            "encoder.normalize" => self.encoder.normalize = parse_bool(key, value)?,
            "witness.kind" => self.witness = parse_typed(key, value)?,
            "witness.hidden" => self.witness_hidden = parse(key, value)?,
            "objective.family" => o.family = parse_typed::<ObjectiveFamily>(key, value)?,
            "objective.omega" => o.omega = parse(key, value)?,
            "objective.kappa" => o.kappa = parse(key, value)?,
            "objective.legacy" => o.legacy = parse_bool(key, value)?,
            "objective.use_memory_bank" => o.use_memory_bank = parse_bool(key, value)?,
            "objective.channel_split" => {
                o.channel_split = if value == "none" { None } else { Some(parse_typed::<ChannelSplit>(key, value)?) }
            }
            "objective.enforce_anchor_in_close" => o.enforce_anchor_in_close = parse_bool(key, value)?,
            "negatives.kind" => o.negatives.kind = parse_typed::<NegativeKind>(key, value)?,
            "negatives.outer_percent" => o.negatives.outer_percent = parse(key, value)?,
            "negatives.inner_percent" => o.negatives.inner_percent = parse(key, value)?,
            "negatives.kmeans_k" => o.negatives.kmeans_k = parse(key, value)?,
            "negatives.kmeans_restarts" => o.negatives.kmeans_restarts = parse(key, value)?,
            "negatives.anneal" => o.negatives.anneal = parse_anneal(key, value)?,
            "negatives.inner_anneal" => o.negatives.inner_anneal = parse_anneal(key, value)?,
            "neighbors.kind" => o.neighbors.kind = parse_typed::<NeighborKind>(key, value)?,
            "neighbors.close_percent" => o.neighbors.close_percent = parse(key, value)?,
            "neighbors.kmeans_k" => o.neighbors.kmeans_k = parse(key, value)?,
            "neighbors.kmeans_restarts" => o.neighbors.kmeans_restarts = parse(key, value)?,
            "neighbors.count" => o.neighbors.count = parse(key, value)?,
            "neighbors.anneal" => o.neighbors.anneal = parse_anneal(key, value)?,
            "bank.alpha" => self.bank_alpha = parse(key, value)?,
            "bank.renormalize" => self.bank_renormalize = parse_bool(key, value)?,
            "bank.init" => {
                self.bank_init = match value {
                    "encoded" => BankInit::Encoded,
                    "random" => BankInit::Random,
                    _ => return Err(Error::Config(format!("bank.init must be encoded or random, got `{value}`"))),
                }
            }
            "optimizer.kind" => {
                opt.kind = match value {
                    "sgd-momentum" => OptimizerKind::SgdMomentum,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(Error::Config(format!("unknown optimizer `{value}`"))),
                }
            }
            "optimizer.lr" => opt.learning_rate = parse(key, value)?,
            "optimizer.momentum" => opt.momentum = parse(key, value)?,
            "optimizer.weight_decay" => opt.weight_decay = parse(key, value)?,
            "optimizer.beta1" => opt.beta1 = parse(key, value)?,
            "optimizer.beta2" => opt.beta2 = parse(key, value)?,
            "optimizer.epsilon" => opt.epsilon = parse(key, value)?,
            "train.negatives" => t.negatives = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.steps" => t.steps = parse(key, value)?,
            "train.anneal_granularity" => {
                t.anneal_granularity = match value {
                    "epoch" => Granularity::Epoch,
                    "step" => Granularity::Step,
                    _ => return Err(Error::Config(format!("anneal granularity must be epoch or step, got `{value}`"))),
                }
            }
            "train.km_recompute_epochs" => t.km_recompute_epochs = parse(key, value)?,
            "eval.knn_k" => e.knn_k = parse(key, value)?,
            "eval.probe_every_epochs" => e.probe_every_epochs = parse(key, value)?,
            "eval.logistic_epochs" => e.logistic_epochs = parse(key, value)?,
            "eval.logistic_lr" => e.logistic_lr = parse(key, value)?,
            "eval.restrict_percent" => {
                e.restrict_percent = if value == "none" { None } else { Some(parse(key, value)?) }
            }
            "seeds" => self.seeds = parse_seeds(value)?,
            "output.dir" => self.output.dir = value.to_string(),
            "output.wall_clock" => self.output.wall_clock = parse_bool(key, value)?,
            "output.representations" => self.output.representations = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Canonical text form; parsing it back yields an identical configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        for v in &self.variants {
            let _ = writeln!(out, "variant.{} = {}", v.label, fmt_overrides(&v.overrides));
        }
        out
    }

    /// Parses the text format on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_text_over(Self::default(), text)
    }

    /// Parses the text format on top of `base`.
    pub fn from_text_over(mut base: Self, text: &str) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
            base.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", lineno + 1)),
                other => other,
            })?;
        }
        Ok(base)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let d = &self.dataset;
        if d.n < 2 {
            return cfg(format!("dataset.n must be at least 2, got {}", d.n));
        }
        match d.kind {
            DatasetKind::Gaussian => d.gaussian.validate().map_err(|e| Error::Config(e.to_string()))?,
            DatasetKind::Spirals => {
                if !d.n.is_multiple_of(2) || !d.test_n.is_multiple_of(2) {
                    return cfg("spiral sizes must be even".into());
                }
            }
            DatasetKind::Blobs => {
                if d.blob_centers == 0 || d.blob_dim == 0 || d.n < d.blob_centers {
                    return cfg("blobs need 1 ≤ centers ≤ n and dim ≥ 1".into());
                }
            }
        }
        self.view.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.encoder.layers == 0 || self.encoder.hidden == 0 || self.encoder.output == 0 {
            return cfg("encoder layers, hidden and output must be positive".into());
        }
        if d.kind == DatasetKind::Gaussian && self.encoder.normalize && self.encoder.output == 1 {
            return cfg("a normalized 1-dimensional encoder can only output ±1".into());
        }
        self.objective.validate()?;
        if let Some(split) = &self.objective.channel_split {
            if d.kind == DatasetKind::Gaussian {
                return cfg("the two-channel objective needs a labeled vector dataset".into());
            }
            split
                .validate(self.view.output_dim(self.data_dim()))
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if !self.objective.use_memory_bank && d.kind == DatasetKind::Gaussian {
            return cfg("the gaussian experiment always pairs two encoders; use_memory_bank must stay true".into());
        }
        if self.objective.family.is_legacy() && !self.witness_is_dot() {
            // Naive exponentials of learned witnesses are allowed, just unusual.
        }
        if !(0.0..1.0).contains(&self.bank_alpha) {
            return cfg(format!("bank.alpha must lie in [0, 1), got {}", self.bank_alpha));
        }
        self.optimizer.validate()?;
        let t = &self.train;
        if t.negatives == 0 || t.batch_size == 0 {
            return cfg("train.negatives and train.batch_size must be positive".into());
        }
        if t.km_recompute_epochs == 0 {
            return cfg("train.km_recompute_epochs must be positive".into());
        }
        if !self.objective.use_memory_bank && t.batch_size < 2 {
            return cfg("the minibatch objective needs batch_size ≥ 2".into());
        }
        if self.eval.knn_k == 0 || !(self.eval.logistic_lr > 0.0) {
            return cfg("eval.knn_k and eval.logistic_lr must be positive".into());
        }
        if let Some(p) = self.eval.restrict_percent {
            if !(p > 0.0 && p <= 100.0) {
                return cfg(format!("eval.restrict_percent must lie in (0, 100], got {p}"));
            }
        }
        if self.seeds.is_empty() {
            return cfg("at least one seed is required".into());
        }
        let mut labels = std::collections::HashSet::new();
        for v in &self.variants {
            if !labels.insert(&v.label) {
                return cfg(format!("duplicate variant `{}`", v.label));
            }
            let eff = self.with_overrides(&v.overrides)?;
            eff.validate().map_err(|e| Error::Config(format!("variant `{}`: {e}", v.label)))?;
        }
        Ok(())
    }

    fn witness_is_dot(&self) -> bool {
        matches!(self.witness, WitnessKind::Dot | WitnessKind::ScaledDot)
    }

    /// Dimension of one raw datum.
    pub fn data_dim(&self) -> usize {
        match self.dataset.kind {
            DatasetKind::Gaussian => 1,
            DatasetKind::Spirals => 2,
            DatasetKind::Blobs => self.dataset.blob_dim,
        }
    }

    fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut c = self.clone();
        c.variants.clear();
        for (k, v) in overrides {
            if k.starts_with("variant.") {
                return Err(Error::Config("variants cannot nest".into()));
            }
            c.set(k, v)?;
        }
        Ok(c)
    }

    /// One `(label, effective config)` per variant, or `("base", self)` without variants.
    pub fn expand(&self) -> Result<Vec<(String, ExperimentConfig)>> {
        if self.variants.is_empty() {
            let mut c = self.clone();
            c.variants.clear();
            return Ok(vec![("base".to_string(), c)]);
        }
        self.variants
            .iter()
            .map(|v| Ok((v.label.clone(), self.with_overrides(&v.overrides)?)))
            .collect()
    }

    /// Hex digest prefix of every setting that affects results (seeds, output and variants excluded).
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k == "seeds" || k.starts_with("output.") {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())[..12].to_string()
    }
}

pub(crate) fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse("seeds", s.trim()))
        .collect()
}

fn parse_variant(label: &str, value: &str) -> Result<Variant> {
    if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        return Err(Error::Config(format!("invalid variant label `{label}`")));
    }
    let mut overrides = Vec::new();
    for part in value.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("variant `{label}`: `{part}` is not key=value")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(Variant {
        label: label.to_string(),
        overrides,
    })
}

fn fmt_overrides(o: &[(String, String)]) -> String {
    o.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("; ")
}

impl Variant {
    pub fn new(label: &str, overrides: &[(&str, &str)]) -> Self {
        Self {
            label: label.to_string(),
            overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn describe(&self) -> String {
        fmt_overrides(&self.overrides)
    }
}
