//! Frozen-encoder activity classifier, prediction and micro-F1 scoring.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{window_segments, Period, Span};
use crate::error::{MoilError, Result};
use crate::nn::{cross_entropy, Adam, BatchNorm1d, Layer, Linear, Mode, Relu, Sequential, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    /// Number of classes; `None` takes one more than the largest label seen.
    #[serde(default)]
    pub classes: Option<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub window: usize,
    pub step: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            classes: None,
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 50,
            batch_size: 1000,
            window: 900,
            step: 450,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(MoilError::Config("classifier hidden sizes must be positive".into()));
        }
        if self.classes.is_some_and(|c| c < 2) {
            return Err(MoilError::Config("classifier needs at least 2 classes".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(MoilError::Config("classifier lr must be positive and weight decay non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.window == 0 || self.step == 0 {
            return Err(MoilError::Config("classifier epochs, batch, window and step must be positive".into()));
        }
        Ok(())
    }
}

/// Per-time-step MLP: `(linear → BN → ReLU)` for each hidden size, then a
/// linear layer to `classes` logits.
pub fn build_classifier(in_dim: usize, classes: usize, hidden: &[usize], seed: u64) -> Result<Sequential> {
    if classes < 2 || in_dim == 0 || hidden.contains(&0) {
        return Err(MoilError::Config(format!(
            "classifier needs positive sizes and at least 2 classes (got in {in_dim}, hidden {hidden:?}, classes {classes})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut width = in_dim;
    for &h in hidden {
        layers.push(Layer::Linear(Linear::new(width, h, &mut rng)?));
        layers.push(Layer::BatchNorm1d(BatchNorm1d::new(h)));
        layers.push(Layer::Relu(Relu::default()));
        width = h;
    }
    layers.push(Layer::Linear(Linear::new(width, classes, &mut rng)?));
    Ok(Sequential::new(layers))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classifier {
    pub classes: usize,
    pub in_dim: usize,
    pub window: usize,
    pub net: Sequential,
}

/// Encoder features of one period, cut into the windows used to score it.
#[derive(Debug, Clone)]
pub struct PeriodFeatures {
    pub period_key: String,
    pub len: usize,
    pub windows: Vec<Span>,
    /// `[windows × l × D]`.
    pub features: Tensor,
}

/// Window starts used at test time: non-overlapping `l`-windows plus one
/// window right-aligned to the end when a remainder is left.
pub fn test_windows(len: usize, l: usize) -> Vec<Span> {
    if len <= l {
        return vec![Span::new(0, l)];
    }
    let mut spans = window_segments(len, l, l);
    if len % l != 0 {
        spans.push(Span::new(len - l, l));
    }
    spans
}

/// Samples of `windows` stacked into `[N × l × A]`, with rows past the
/// period end filled by repeating its last sample.
fn stack_windows(p: &Period, windows: &[Span]) -> Result<Tensor> {
    let a = p.n_axes();
    let l = windows.first().map_or(0, |s| s.len);
    let mut data = Vec::with_capacity(windows.len() * l * a);
    for s in windows {
        for t in s.start..s.end() {
            data.extend_from_slice(p.row(t.min(p.len() - 1)));
        }
    }
    Tensor::new(vec![windows.len(), l, a], data)
}

/// Encodes `windows` of `p` in chunks to bound memory.
fn encode_windows(encoder: &Sequential, p: &Period, windows: &[Span]) -> Result<Tensor> {
    const CHUNK: usize = 32;
    let mut data = Vec::new();
    let mut shape = None;
    for chunk in windows.chunks(CHUNK) {
        let f = encoder.infer(&stack_windows(p, chunk)?)?;
        let (_, l, d) = f.dims3()?;
        shape = Some((l, d));
        data.extend(f.into_data());
    }
    let (l, d) = shape.ok_or_else(|| MoilError::InvalidInput(format!("no windows in `{}`", p.key())))?;
    Tensor::new(vec![windows.len(), l, d], data)
}

/// Test-time features of `p`; periods shorter than `l` are padded by edge
/// replication.
pub fn period_features(encoder: &Sequential, p: &Period, l: usize) -> Result<PeriodFeatures> {
    if p.len() < l {
        log::warn!(
            "period `{}` has {} steps, shorter than the {l}-step window; padding by edge replication",
            p.key(),
            p.len()
        );
    }
    let windows = test_windows(p.len(), l);
    Ok(PeriodFeatures {
        period_key: p.key(),
        len: p.len(),
        features: encode_windows(encoder, p, &windows)?,
        windows,
    })
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Classifier {
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        self.net.infer(features)
    }

    /// Per-step labels of a period from its cached features. Where windows
    /// overlap, the later window's predictions win.
    pub fn predict_features(&self, pf: &PeriodFeatures) -> Result<Vec<u32>> {
        let logits = self.logits(&pf.features)?;
        let (_, l, c) = logits.dims3()?;
        let mut out = vec![0u32; pf.len];
        for (w, span) in pf.windows.iter().enumerate() {
            for i in 0..l {
                let t = span.start + i;
                if t >= pf.len {
                    break;
                }
                let row = &logits.data()[(w * l + i) * c..(w * l + i + 1) * c];
                out[t] = argmax(row) as u32;
            }
        }
        Ok(out)
    }
}

/// A trained classifier plus the encoder and motif set it belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierArtifact {
    pub format: String,
    pub seed: u64,
    pub config_hash: String,
    pub motif_set_hash: String,
    pub encoder_hash: String,
    pub losses: Vec<f64>,
    pub classifier: Classifier,
}

const CLASSIFIER_FORMAT: &str = "moil-classifier/1";

impl ClassifierArtifact {
    pub fn new(classifier: Classifier, losses: Vec<f64>, seed: u64, config_hash: &str, motif_set_hash: &str, encoder_hash: &str) -> Self {
        Self {
            format: CLASSIFIER_FORMAT.into(),
            seed,
            config_hash: config_hash.into(),
            motif_set_hash: motif_set_hash.into(),
            encoder_hash: encoder_hash.into(),
            losses,
            classifier,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| MoilError::MissingArtifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let a: ClassifierArtifact = serde_json::from_reader(BufReader::new(file))?;
        if a.format != CLASSIFIER_FORMAT {
            return Err(MoilError::Format {
                path: path.to_path_buf(),
                message: format!("unsupported classifier format `{}`", a.format),
            });
        }
        Ok(a)
    }
}

/// Scores of one `evaluate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub encoder_hash: String,
    pub motif_set_hash: String,
    pub periods: Vec<String>,
    pub micro_f1: f64,
    /// Indexed `[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Per-step labels of `period` under a frozen `encoder`.
pub fn predict(encoder: &Sequential, classifier: &Classifier, period: &Period) -> Result<Vec<u32>> {
    classifier.predict_features(&period_features(encoder, period, classifier.window)?)
}

/// Pooled fraction of time steps whose prediction equals the truth, which is
/// the micro-averaged F1 for single-label multiclass data.
pub fn micro_f1(pred: &[Vec<u32>], truth: &[Vec<u32>]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(MoilError::Shape(format!("{} predicted periods, {} true", pred.len(), truth.len())));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.len() != t.len() {
            return Err(MoilError::Shape(format!(
                "period {i}: {} predictions for {} labels",
                p.len(),
                t.len()
            )));
        }
        hit += p.iter().zip(t).filter(|(a, b)| a == b).count();
        total += t.len();
    }
    if total == 0 {
        return Err(MoilError::InvalidInput("no time steps to score".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Counts indexed `[true][predicted]`.
pub fn confusion_matrix(pred: &[Vec<u32>], truth: &[Vec<u32>], classes: usize) -> Result<Vec<Vec<u64>>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(MoilError::Shape("prediction and label lengths differ".into()));
        }
        for (&a, &b) in p.iter().zip(t) {
            if a as usize >= classes || b as usize >= classes {
                return Err(MoilError::InvalidInput(format!("class id outside 0..{classes}")));
            }
            m[b as usize][a as usize] += 1;
        }
    }
    Ok(m)
}

struct LabeledWindows {
    /// `[N × l × D]` features.
    features: Vec<f64>,
    labels: Vec<u32>,
    l: usize,
    d: usize,
    n: usize,
}

fn labeled_windows(encoder: &Sequential, periods: &[&Period], classes: usize, l: usize, step: usize) -> Result<LabeledWindows> {
    let mut out = LabeledWindows {
        features: Vec::new(),
        labels: Vec::new(),
        l,
        d: 0,
        n: 0,
    };
    for p in periods {
        let labels = p
            .labels()
            .ok_or_else(|| MoilError::InvalidInput(format!("period `{}` has no labels", p.key())))?;
        if let Some(bad) = labels.iter().find(|&&c| c as usize >= classes) {
            return Err(MoilError::InvalidInput(format!(
                "period `{}` has class id {bad}, classifier has {classes} classes",
                p.key()
            )));
        }
        let spans = window_segments(p.len(), l, step);
        if spans.is_empty() {
            log::warn!("period `{}` is shorter than the {l}-step window; not used for training", p.key());
            continue;
        }
        let f = encode_windows(encoder, p, &spans)?;
        out.d = f.shape()[2];
        out.n += spans.len();
        out.features.extend(f.into_data());
        for s in &spans {
            out.labels.extend_from_slice(&labels[s.start..s.end()]);
        }
    }
    if out.n == 0 {
        return Err(MoilError::InvalidInput(format!(
            "no labeled period is at least {l} steps long; nothing to train on"
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: Classifier,
    /// Mean per-window loss of each epoch.
    pub losses: Vec<f64>,
    /// Periods whose windows appeared in at least one training batch.
    pub seen_periods: BTreeSet<String>,
}

/// Trains a classifier on features of the frozen `encoder`.
///
/// Features are computed once in eval mode; the encoder is only borrowed
/// immutably. `on_epoch` runs after every epoch with the current classifier.
pub fn train_classifier<F>(
    encoder: &Sequential,
    labeled: &[&Period],
    classes: usize,
    cfg: &ClassifierConfig,
    seed: u64,
    mut on_epoch: F,
) -> Result<TrainedClassifier>
where
    F: FnMut(usize, &Classifier) -> Result<()>,
{
    cfg.validate()?;
    let data = labeled_windows(encoder, labeled, classes, cfg.window, cfg.step)?;
    let mut classifier = Classifier {
        classes,
        in_dim: data.d,
        window: cfg.window,
        net: build_classifier(data.d, classes, &cfg.hidden, seed)?,
    };
    let mut seen = BTreeSet::new();
    for p in labeled {
        if p.len() >= cfg.window {
            seen.insert(p.key());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5);
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.n).collect();
    let (l, d) = (data.l, data.d);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut x = Vec::with_capacity(batch.len() * l * d);
            let mut y = Vec::with_capacity(batch.len() * l);
            for &w in batch {
                x.extend_from_slice(&data.features[w * l * d..(w + 1) * l * d]);
                y.extend_from_slice(&data.labels[w * l..(w + 1) * l]);
            }
            let x = Tensor::new(vec![batch.len(), l, d], x)?;
            let logits = classifier.net.forward(&x, Mode::Train)?;
            let loss = cross_entropy(&logits, &y)?;
            if !loss.value.is_finite() {
                return Err(MoilError::Training(format!(
                    "classifier loss became {} at epoch {epoch} (lr {})",
                    loss.value, cfg.lr
                )));
            }
            classifier.net.backward(&loss.grad)?;
            adam.update(classifier.net.params_mut());
            total += loss.value * batch.len() as f64;
        }
        let mean = total / data.n as f64;
        log::debug!("classifier epoch {epoch}/{}: loss {mean:.5}", cfg.epochs);
        losses.push(mean);
        on_epoch(epoch, &classifier)?;
    }
    Ok(TrainedClassifier {
        classifier,
        losses,
        seen_periods: seen,
    })
}

/// Runs training-mode forward passes over `periods` so the batch-norm
/// layers of an untrained encoder hold running statistics.
pub fn calibrate_batchnorm(encoder: &mut Sequential, periods: &[&Period], l: usize, step: usize, batch: usize) -> Result<()> {
    let mut windows: Vec<(usize, Span)> = Vec::new();
    for (i, p) in periods.iter().enumerate() {
        windows.extend(window_segments(p.len(), l, step).into_iter().map(|s| (i, s)));
    }
    if windows.is_empty() {
        return Err(MoilError::InvalidInput("no windows to calibrate batch norm on".into()));
    }
    for chunk in windows.chunks(batch.max(1)) {
        let a = periods[0].n_axes();
        let mut data = Vec::with_capacity(chunk.len() * l * a);
        for &(i, s) in chunk {
            data.extend_from_slice(&periods[i].values()[s.start * a..s.end() * a]);
        }
        encoder.forward(&Tensor::new(vec![chunk.len(), l, a], data)?, Mode::Train)?;
    }
    Ok(())
}
