//! Flat `key = value` experiment configs.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known and may appear once; anything else is an error naming the key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rectnet::train::{MetricKind, TrainConfig};
use rectnet::zoo::{build_ndsb, build_nin, build_reduced, Architecture, NDSB_CLASSES};
use rectnet::{ActivationConfig, ModelSpec};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Nin,
    Ndsb,
    NinReduced,
    NdsbReduced,
}

impl ModelKind {
    pub const NAMES: [&'static str; 4] = ["nin", "ndsb", "nin-reduced", "ndsb-reduced"];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Nin => "nin",
            ModelKind::Ndsb => "ndsb",
            ModelKind::NinReduced => "nin-reduced",
            ModelKind::NdsbReduced => "ndsb-reduced",
        }
    }

    fn is_reduced(&self) -> bool {
        matches!(self, ModelKind::NinReduced | ModelKind::NdsbReduced)
    }

    fn is_nin(&self) -> bool {
        matches!(self, ModelKind::Nin | ModelKind::NinReduced)
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nin" => Ok(ModelKind::Nin),
            "ndsb" => Ok(ModelKind::Ndsb),
            "nin-reduced" => Ok(ModelKind::NinReduced),
            "ndsb-reduced" => Ok(ModelKind::NdsbReduced),
            _ => Err(format!("unknown model {s:?} (expected one of {})", Self::NAMES.join(", "))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Cifar10 {
        train_files: Vec<PathBuf>,
        eval_files: Vec<PathBuf>,
    },
    Cifar100 {
        train_files: Vec<PathBuf>,
        eval_files: Vec<PathBuf>,
    },
    /// One synthetic draw split into a training part and a held-out part.
    Synth {
        classes: usize,
        per_class: usize,
        eval_per_class: usize,
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Cifar10 { .. } => "cifar10",
            DatasetSpec::Cifar100 { .. } => "cifar100",
            DatasetSpec::Synth { .. } => "synth",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSpec::Cifar10 { .. } => 10,
            DatasetSpec::Cifar100 { .. } => 100,
            DatasetSpec::Synth { classes, .. } => *classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    /// Width factor for the reduced models.
    pub width: f64,
    pub activation: ActivationConfig,
    pub dataset: DatasetSpec,
    /// Train on only the first this-many training examples.
    pub train_subset: Option<usize>,
    pub train: TrainConfig,
    /// Relative paths are resolved against the output root.
    pub output_dir: PathBuf,
    pub checkpoint: bool,
}

const KEYS: &[&str] = &[
    "model",
    "width",
    "activation",
    "leaky.a",
    "rrelu.l",
    "rrelu.u",
    "dataset",
    "train_files",
    "eval_files",
    "synth.classes",
    "synth.per_class",
    "synth.eval_per_class",
    "synth.seed",
    "train_subset",
    "lr",
    "momentum",
    "weight_decay",
    "batch_size",
    "epochs",
    "seed",
    "lr_schedule",
    "eval_every",
    "metric",
    "output_dir",
    "checkpoint",
];

const DEFAULT_LEAKY_A: f64 = 100.0;
const DEFAULT_RRELU: (f64, f64) = (3.0, 8.0);

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!("line {lineno}: expected key = value, got {line:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(usage(format!("line {lineno}: unknown key {key:?}")));
            }
            if map.insert(key.to_string(), (lineno, value.to_string())).is_some() {
                return Err(usage(format!("line {lineno}: duplicate key {key:?}")));
            }
        }
        Ok(Entries { map })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("line {line}: bad value {v:?} for {key}: {e}"))),
        }
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| usage(format!("missing required key {key:?}")))
    }

    /// Rejects keys that only make sense under another setting.
    fn forbid(&self, keys: &[&str], unless: &str) -> Result<(), CliError> {
        match keys.iter().find(|k| self.map.contains_key(**k)) {
            Some(k) => Err(usage(format!("key {k:?} only applies {unless}"))),
            None => Ok(()),
        }
    }
}

fn paths(list: &str) -> Vec<PathBuf> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
}

fn parse_schedule(s: &str) -> Result<Vec<(usize, f64)>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let (e, m) = item
                .split_once(':')
                .ok_or_else(|| format!("schedule entry {item:?} is not epoch:multiplier"))?;
            let e = e.trim().parse::<usize>().map_err(|err| format!("{e:?}: {err}"))?;
            let m = m.trim().parse::<f64>().map_err(|err| format!("{m:?}: {err}"))?;
            Ok((e, m))
        })
        .collect()
}

fn parse_activation(e: &Entries) -> Result<ActivationConfig, CliError> {
    let kind: String = e.require("activation")?;
    let act = match kind.as_str() {
        "relu" => ActivationConfig::Relu,
        "leaky" => ActivationConfig::Leaky {
            a: e.get("leaky.a")?.unwrap_or(DEFAULT_LEAKY_A),
        },
        "prelu" => ActivationConfig::Prelu,
        "rrelu" => ActivationConfig::Rrelu {
            l: e.get("rrelu.l")?.unwrap_or(DEFAULT_RRELU.0),
            u: e.get("rrelu.u")?.unwrap_or(DEFAULT_RRELU.1),
        },
        other => {
            return Err(usage(format!(
                "unknown activation kind {other:?} (valid kinds: {})",
                ActivationConfig::KINDS.join(", ")
            )))
        }
    };
    if kind != "leaky" {
        e.forbid(&["leaky.a"], "to activation = leaky")?;
    }
    if kind != "rrelu" {
        e.forbid(&["rrelu.l", "rrelu.u"], "to activation = rrelu")?;
    }
    act.validate().map_err(|err| usage(err.to_string()))?;
    Ok(act)
}

fn parse_dataset(e: &Entries) -> Result<DatasetSpec, CliError> {
    let name: String = e.require("dataset")?;
    const SYNTH_KEYS: [&str; 4] = ["synth.classes", "synth.per_class", "synth.eval_per_class", "synth.seed"];
    let cifar = |e: &Entries| -> Result<(Vec<PathBuf>, Vec<PathBuf>), CliError> {
        e.forbid(&SYNTH_KEYS, "to dataset = synth")?;
        let train = paths(&e.require::<String>("train_files")?);
        let eval = paths(&e.require::<String>("eval_files")?);
        if train.is_empty() || eval.is_empty() {
            return Err(usage("train_files and eval_files must each list at least one file"));
        }
        Ok((train, eval))
    };
    match name.as_str() {
        "cifar10" => {
            let (train_files, eval_files) = cifar(e)?;
            Ok(DatasetSpec::Cifar10 { train_files, eval_files })
        }
        "cifar100" => {
            let (train_files, eval_files) = cifar(e)?;
            Ok(DatasetSpec::Cifar100 { train_files, eval_files })
        }
        "synth" => {
            e.forbid(&["train_files", "eval_files"], "to CIFAR datasets")?;
            let spec = DatasetSpec::Synth {
                classes: e.require("synth.classes")?,
                per_class: e.require("synth.per_class")?,
                eval_per_class: e.require("synth.eval_per_class")?,
                seed: e.get("synth.seed")?.unwrap_or(0),
            };
            if let DatasetSpec::Synth { classes, per_class, eval_per_class, .. } = spec {
                if classes < 2 || per_class == 0 || eval_per_class == 0 {
                    return Err(usage(
                        "synth needs at least 2 classes and at least 1 train and 1 eval example per class",
                    ));
                }
            }
            Ok(spec)
        }
        other => Err(usage(format!(
            "unknown dataset {other:?} (expected cifar10, cifar100 or synth)"
        ))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let e = Entries::parse(text)?;
        let model: ModelKind = e.require("model")?;
        let width = match e.get::<f64>("width")? {
            Some(w) if !model.is_reduced() => {
                return Err(usage(format!("key \"width\" only applies to reduced models, got width = {w}")))
            }
            Some(w) => w,
            None => 1.0,
        };
        let activation = parse_activation(&e)?;
        let dataset = parse_dataset(&e)?;

        let epochs: usize = e.require("epochs")?;
        let mut train = TrainConfig::with_epochs(epochs);
        if let Some(v) = e.get("lr")? {
            train.learning_rate = v;
        }
        if let Some(v) = e.get("momentum")? {
            train.momentum = v;
        }
        if let Some(v) = e.get("weight_decay")? {
            train.weight_decay = v;
        }
        if let Some(v) = e.get("batch_size")? {
            train.batch_size = v;
        }
        if let Some(v) = e.get("seed")? {
            train.seed = v;
        }
        if let Some(v) = e.get("eval_every")? {
            train.eval_every = v;
        }
        if let Some(v) = e.get::<MetricKind>("metric")? {
            train.metric = v;
        }
        if let Some(s) = e.raw("lr_schedule") {
            train.lr_schedule = parse_schedule(s).map_err(|err| usage(format!("bad lr_schedule: {err}")))?;
        }
        train.validate().map_err(|err| usage(err.to_string()))?;

        let config = ExperimentConfig {
            model,
            width,
            activation,
            dataset,
            train_subset: e.get("train_subset")?,
            train,
            output_dir: e.require::<String>("output_dir")?.into(),
            checkpoint: e.get("checkpoint")?.unwrap_or(false),
        };
        if config.train_subset == Some(0) {
            return Err(usage("train_subset must be at least 1"));
        }
        config.model_spec()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The architecture this config trains; also checks that model and
    /// dataset agree on the class count.
    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let classes = self.dataset.num_classes();
        if !self.model.is_nin() && classes != NDSB_CLASSES {
            return Err(usage(format!(
                "{} has {NDSB_CLASSES} classes but the dataset has {classes}",
                self.model.as_str()
            )));
        }
        let spec = match self.model {
            ModelKind::Nin => build_nin(classes, self.activation),
            ModelKind::Ndsb => build_ndsb(self.activation),
            ModelKind::NinReduced => build_reduced(Architecture::Nin { num_classes: classes }, self.width, self.activation),
            ModelKind::NdsbReduced => build_reduced(Architecture::Ndsb, self.width, self.activation),
        };
        spec.map_err(|e| usage(e.to_string()))
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model", self.model.as_str().into());
        if self.model.is_reduced() {
            kv("width", self.width.to_string());
        }
        kv("activation", self.activation.kind().into());
        match self.activation {
            ActivationConfig::Leaky { a } => kv("leaky.a", a.to_string()),
            ActivationConfig::Rrelu { l, u } => {
                kv("rrelu.l", l.to_string());
                kv("rrelu.u", u.to_string());
            }
            ActivationConfig::Relu | ActivationConfig::Prelu => {}
        }
        kv("dataset", self.dataset.name().into());
        let join = |p: &[PathBuf]| p.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        match &self.dataset {
            DatasetSpec::Cifar10 { train_files, eval_files } | DatasetSpec::Cifar100 { train_files, eval_files } => {
                kv("train_files", join(train_files));
                kv("eval_files", join(eval_files));
            }
            DatasetSpec::Synth {
                classes,
                per_class,
                eval_per_class,
                seed,
            } => {
                kv("synth.classes", classes.to_string());
                kv("synth.per_class", per_class.to_string());
                kv("synth.eval_per_class", eval_per_class.to_string());
                kv("synth.seed", seed.to_string());
            }
        }
        if let Some(n) = self.train_subset {
            kv("train_subset", n.to_string());
        }
        let t = &self.train;
        kv("lr", t.learning_rate.to_string());
        kv("momentum", t.momentum.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("seed", t.seed.to_string());
        let schedule: Vec<String> = t.lr_schedule.iter().map(|(e, m)| format!("{e}:{m}")).collect();
        kv("lr_schedule", schedule.join(","));
        kv("eval_every", t.eval_every.to_string());
        kv("metric", t.metric.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("checkpoint", self.checkpoint.to_string());
        s
    }
}
