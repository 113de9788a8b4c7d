//! Minibatch SGD with momentum and weight decay, evaluation metrics and
//! convergence-curve output.
//!
//! Parameter updates always run the network in [`Mode::Train`]; every
//! evaluation runs it in [`Mode::Test`]. Each step is
//! `v ← μ·v − η·(g + λ·w)`, `w ← w + v`, with `λ = 0` for PReLU slopes.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::data::{BatchIterator, Dataset};
use crate::error::{mismatch, Error, Result};
use crate::graph::Network;
use crate::ops::{softmax, softmax_xent, softmax_xent_backward};
use crate::rectifier::Mode;
use crate::tensor::Tensor;

/// Probabilities are clamped to at least this before taking logs.
pub const LOG_LOSS_FLOOR: f64 = 1e-15;
const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    ErrorRate,
    LogLoss,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::ErrorRate => "error_rate",
            MetricKind::LogLoss => "log_loss",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error_rate" => Ok(MetricKind::ErrorRate),
            "log_loss" => Ok(MetricKind::LogLoss),
            _ => Err(Error::Config(format!("unknown metric {s:?} (expected error_rate or log_loss)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// `(epoch, multiplier)`: from 0-based epoch `epoch` on, the learning
    /// rate is multiplied by `multiplier`. Milestones compound.
    pub lr_schedule: Vec<(usize, f64)>,
    /// Record a curve point every this many epochs.
    pub eval_every: usize,
    pub metric: MetricKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::with_epochs(20)
    }
}

impl TrainConfig {
    /// Defaults: lr 0.05, momentum 0.9, decay 1e-4, batch 128, and ×0.1 at
    /// 60% and 85% of `epochs`.
    pub fn with_epochs(epochs: usize) -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs,
            seed: 0,
            lr_schedule: Self::default_schedule(epochs),
            eval_every: 1,
            metric: MetricKind::ErrorRate,
        }
    }

    pub fn default_schedule(epochs: usize) -> Vec<(usize, f64)> {
        let at = |f: f64| (epochs as f64 * f).round() as usize;
        vec![(at(0.6), 0.1), (at(0.85), 0.1)]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be finite and ≥ 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be finite and ≥ 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if let Some((e, m)) = self.lr_schedule.iter().find(|(_, m)| !(m.is_finite() && *m >= 0.0)) {
            return bad(format!("schedule multiplier {m} at epoch {e} must be finite and ≥ 0"));
        }
        Ok(())
    }

    /// Learning rate in effect during 0-based epoch `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_schedule
            .iter()
            .filter(|(at, _)| *at <= epoch)
            .fold(self.learning_rate, |lr, (_, m)| lr * m)
    }
}

/// One point of a convergence curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRecord {
    /// 1-based epoch after which the point was taken.
    pub epoch: usize,
    /// Metric accumulated over the epoch's training minibatches (train mode).
    pub train_metric: f64,
    /// Metric on the full evaluation split (test mode).
    pub eval_metric: f64,
    pub metric_kind: MetricKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Update,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModeEvent {
    pub epoch: usize,
    pub phase: Phase,
    pub mode: Mode,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub curves: Vec<CurveRecord>,
    /// Mode of every parameter update and every evaluation pass.
    pub mode_log: Vec<ModeEvent>,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub error_rate: f64,
    pub log_loss: f64,
}

impl Evaluation {
    pub fn metric(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::ErrorRate => self.error_rate,
            MetricKind::LogLoss => self.log_loss,
        }
    }
}

/// Index of the largest value; ties go to the first.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn errors_in(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.dims()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) != l)
        .count()
}

/// Error rate and log-loss of `model` on `dataset`, in test mode.
pub fn evaluate(model: &mut Network, dataset: &Dataset) -> Result<Evaluation> {
    let mut wrong = 0;
    let mut nll = 0.0;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, labels) = dataset.batch(chunk);
        let logits = model.forward(x, Mode::Test)?;
        wrong += errors_in(&logits, &labels);
        nll += nll_sum(&softmax(&logits)?, &labels);
    }
    let n = dataset.len() as f64;
    Ok(Evaluation {
        error_rate: wrong as f64 / n,
        log_loss: nll / n,
    })
}

fn nll_sum(probabilities: &Tensor, labels: &[usize]) -> f64 {
    let k = probabilities.dims()[1];
    probabilities
        .data()
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &l)| -row[l].max(LOG_LOSS_FLOOR).ln())
        .sum()
}

/// Fraction of examples whose arg-max logit is not the label (test mode).
pub fn error_rate(model: &mut Network, dataset: &Dataset) -> Result<f64> {
    evaluate(model, dataset).map(|e| e.error_rate)
}

/// Mean negative log-probability of the label (test mode).
pub fn log_loss(model: &mut Network, dataset: &Dataset) -> Result<f64> {
    evaluate(model, dataset).map(|e| e.log_loss)
}

/// Multi-class log-loss of given probability rows, clamped at [`LOG_LOSS_FLOOR`].
pub fn log_loss_of(probabilities: &Tensor, labels: &[usize]) -> Result<f64> {
    let &[n, _] = probabilities.dims() else {
        return Err(mismatch(format!("probabilities must be N × classes, got {:?}", probabilities.shape())));
    };
    if labels.len() != n {
        return Err(mismatch(format!("{} labels for {n} rows", labels.len())));
    }
    Ok(nll_sum(probabilities, labels) / n as f64)
}

/// One SGD-with-momentum step over every parameter, using accumulated grads.
fn sgd_step(model: &mut Network, velocity: &mut Vec<Vec<f64>>, lr: f64, config: &TrainConfig) {
    let mut i = 0;
    model.visit_params(&mut |p| {
        if velocity.len() == i {
            velocity.push(vec![0.0; p.value.len()]);
        }
        let decay = if p.decay { config.weight_decay } else { 0.0 };
        for ((w, &g), v) in p.value.iter_mut().zip(p.grad.iter()).zip(velocity[i].iter_mut()) {
            *v = config.momentum * *v - lr * (g + decay * *w);
            *w += *v;
        }
        i += 1;
    });
}

/// Trains `model` in place and returns its convergence curves.
pub fn train(model: &mut Network, train_set: &Dataset, eval_set: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    for ds in [train_set, eval_set] {
        if ds.example_shape() != model.input_shape {
            return Err(mismatch(format!(
                "{} expects examples {:?}, dataset has {:?}",
                model.name,
                model.input_shape,
                ds.example_shape()
            )));
        }
        if ds.num_classes != model.num_classes {
            return Err(mismatch(format!(
                "{} has {} classes, dataset has {}",
                model.name, model.num_classes, ds.num_classes
            )));
        }
    }

    let mut batches = BatchIterator::new(train_set, config.batch_size, config.seed)?;
    let mut velocity = Vec::new();
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut wrong = 0;
        for batch in batches.next_epoch() {
            let (x, labels) = train_set.batch(&batch);
            model.zero_grads();
            let mode = Mode::Train;
            let logits = model.forward(x, mode)?;
            let out = softmax_xent(&logits, &labels)?;
            if !out.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    loss: out.loss,
                });
            }
            loss_sum += out.loss * labels.len() as f64;
            wrong += errors_in(&logits, &labels);
            model.backward(softmax_xent_backward(&out, &labels)?)?;
            sgd_step(model, &mut velocity, lr, config);
            report.mode_log.push(ModeEvent {
                epoch: epoch + 1,
                phase: Phase::Update,
                mode,
            });
        }
        let n = train_set.len() as f64;
        let mean_loss = loss_sum / n;
        report.epoch_losses.push(mean_loss);

        if (epoch + 1) % config.eval_every == 0 {
            let eval = evaluate(model, eval_set)?;
            report.mode_log.push(ModeEvent {
                epoch: epoch + 1,
                phase: Phase::Eval,
                mode: Mode::Test,
            });
            let train_metric = match config.metric {
                MetricKind::ErrorRate => wrong as f64 / n,
                MetricKind::LogLoss => mean_loss,
            };
            report.curves.push(CurveRecord {
                epoch: epoch + 1,
                train_metric,
                eval_metric: eval.metric(config.metric),
                metric_kind: config.metric,
            });
        }
    }
    Ok(report)
}

pub const CURVE_HEADER: &str = "epoch,train,eval,metric";

/// Nine significant digits in scientific notation.
fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn format_curves(records: &[CurveRecord]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch,
            sig9(r.train_metric),
            sig9(r.eval_metric),
            r.metric_kind
        ));
    }
    s
}

/// Writes `epoch,train,eval,metric` CSV, one row per record.
pub fn write_curves(records: &[CurveRecord], path: &Path) -> Result<()> {
    fs::write(path, format_curves(records))?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRecord>> {
    let text = fs::read_to_string(path)?;
    let bad = |reason: String| Error::Data {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(bad(format!("missing header {CURVE_HEADER:?}")));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let [epoch, train, eval, metric] = f[..] else {
                return Err(bad(format!("expected 4 fields in {line:?}")));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            Ok(CurveRecord {
                epoch: epoch.parse().map_err(|e| bad(format!("{epoch:?}: {e}")))?,
                train_metric: num(train)?,
                eval_metric: num(eval)?,
                metric_kind: metric.parse()?,
            })
        })
        .collect()
}

const CHECKPOINT_MAGIC: &str = "rectnet-checkpoint 1";

/// Saves every parameter: a text manifest (`name d0xd1x…` per line) followed
/// by the values as little-endian `f64`s in manifest order.
pub fn save_checkpoint(model: &mut Network, path: &Path) -> Result<()> {
    let mut manifest = Vec::new();
    let mut values = Vec::new();
    model.visit_params(&mut |p| {
        let dims: Vec<String> = p.dims.iter().map(usize::to_string).collect();
        manifest.push(format!("{} {}", p.name, dims.join("x")));
        values.extend_from_slice(p.value);
    });
    let mut f = fs::File::create(path)?;
    writeln!(f, "{CHECKPOINT_MAGIC}")?;
    writeln!(f, "{}", manifest.len())?;
    for line in &manifest {
        writeln!(f, "{line}")?;
    }
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Loads parameters saved by [`save_checkpoint`] into a model with the
/// same manifest.
pub fn load_checkpoint(model: &mut Network, path: &Path) -> Result<()> {
    let bad = |reason: String| Error::Data {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint".into()));
    }
    line.clear();
    r.read_line(&mut line)?;
    let count: usize = line.trim_end().parse().map_err(|_| bad("bad parameter count".into()))?;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        line.clear();
        r.read_line(&mut line)?;
        manifest.push(line.trim_end().to_string());
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();

    let mut expected = Vec::new();
    let mut total = 0;
    model.visit_params(&mut |p| {
        let dims: Vec<String> = p.dims.iter().map(usize::to_string).collect();
        expected.push(format!("{} {}", p.name, dims.join("x")));
        total += p.value.len();
    });
    if manifest != expected || values.len() != total || bytes.len() % 8 != 0 {
        return Err(bad("parameter manifest does not match the model".into()));
    }
    let mut offset = 0;
    model.visit_params(&mut |p| {
        p.value.copy_from_slice(&values[offset..offset + p.value.len()]);
        offset += p.value.len();
    });
    Ok(())
}
