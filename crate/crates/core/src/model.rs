//! The MoIL network: convolutional/recurrent encoder plus a projector that
//! regresses the key-motif similarity series, and its pretraining loop.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Period;
use crate::error::{MoilError, Result};
use crate::motif::SimilarityTarget;
use crate::nn::{mse_loss, Adam, BatchNorm1d, BiLstm, Conv1d, Layer, Linear, Mode, Param, Relu, Sequential, Sigmoid, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub conv_blocks: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub lstm_blocks: usize,
    pub lstm_units: usize,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

impl EncoderConfig {
    /// Full-size network: four 64-channel conv blocks, two 128-unit BiLSTMs.
    pub fn full() -> Self {
        Self {
            conv_blocks: 4,
            conv_channels: 64,
            kernel: 5,
            lstm_blocks: 2,
            lstm_units: 128,
            output_activation: OutputActivation::Relu,
        }
    }

    /// Same topology, narrowed to train on a single CPU core. A sigmoid head
    /// keeps the narrow projector from losing channels to dead ReLUs.
    pub fn desk() -> Self {
        Self {
            conv_channels: 16,
            lstm_units: 32,
            output_activation: OutputActivation::Sigmoid,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks == 0 || self.lstm_blocks == 0 {
            return Err(MoilError::Config("encoder needs at least one conv and one LSTM block".into()));
        }
        if self.conv_channels == 0 || self.lstm_units == 0 {
            return Err(MoilError::Config("encoder widths must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(MoilError::Config(format!(
                "kernel {} must be odd for same-length padding",
                self.kernel
            )));
        }
        Ok(())
    }

    /// Feature width at the encoder output.
    pub fn feature_dim(&self) -> usize {
        2 * self.lstm_units
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// `(conv → BN → ReLU) × conv_blocks → BiLSTM × lstm_blocks`.
pub fn build_encoder(cfg: &EncoderConfig, in_axes: usize, rng: &mut ChaCha8Rng) -> Result<Sequential> {
    cfg.validate()?;
    if in_axes == 0 {
        return Err(MoilError::Config("encoder needs at least one input axis".into()));
    }
    let mut layers = Vec::new();
    let mut width = in_axes;
    for _ in 0..cfg.conv_blocks {
        layers.push(Layer::Conv1d(Conv1d::new(width, cfg.conv_channels, cfg.kernel, rng)?));
        layers.push(Layer::BatchNorm1d(BatchNorm1d::new(cfg.conv_channels)));
        layers.push(Layer::Relu(Relu::default()));
        width = cfg.conv_channels;
    }
    for _ in 0..cfg.lstm_blocks {
        layers.push(Layer::BiLstm(BiLstm::new(width, cfg.lstm_units, rng)?));
        width = 2 * cfg.lstm_units;
    }
    Ok(Sequential::new(layers))
}

/// `conv → ReLU → linear(n) → output activation`.
pub fn build_projector(cfg: &EncoderConfig, n_motifs: usize, rng: &mut ChaCha8Rng) -> Result<Sequential> {
    cfg.validate()?;
    if n_motifs == 0 {
        return Err(MoilError::Config("projector needs at least one motif channel".into()));
    }
    let out = match cfg.output_activation {
        OutputActivation::Relu => Layer::Relu(Relu::default()),
        OutputActivation::Sigmoid => Layer::Sigmoid(Sigmoid::default()),
    };
    Ok(Sequential::new(vec![
        Layer::Conv1d(Conv1d::new(cfg.feature_dim(), cfg.conv_channels, cfg.kernel, rng)?),
        Layer::Relu(Relu::default()),
        Layer::Linear(Linear::new(cfg.conv_channels, n_motifs, rng)?),
        out,
    ]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoilNet {
    pub config: EncoderConfig,
    pub in_axes: usize,
    pub n_motifs: usize,
    pub encoder: Sequential,
    pub projector: Sequential,
}

impl MoilNet {
    pub fn new(config: EncoderConfig, in_axes: usize, n_motifs: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = build_encoder(&config, in_axes, &mut rng)?;
        let projector = build_projector(&config, n_motifs, &mut rng)?;
        Ok(Self {
            config,
            in_axes,
            n_motifs,
            encoder,
            projector,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, _, a) = x.dims3()?;
        if a != self.in_axes {
            return Err(MoilError::Shape(format!(
                "network expects {} input axes, got {a}",
                self.in_axes
            )));
        }
        Ok(())
    }

    /// `[B × l × A] → [B × l × n]`, caching activations for [`Self::backward`].
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let h = self.encoder.forward(x, mode)?;
        self.projector.forward(&h, mode)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<()> {
        let g = self.projector.backward(grad_out)?;
        self.encoder.backward(&g)?;
        Ok(())
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.projector.infer(&self.encoder.infer(x)?)
    }

    /// Encoder features `[B × l × 2H]` in eval mode.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.encoder.infer(x)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.projector.params_mut());
        p
    }
}

/// A training window: `len` steps of period `period` starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRef {
    pub period: usize,
    pub start: usize,
}

/// Every `len`-step window at stride `step` over each period. Periods shorter
/// than `len` contribute nothing.
pub fn training_windows(periods: &[Period], len: usize, step: usize) -> Vec<WindowRef> {
    periods
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            crate::data::window_segments(p.len(), len, step)
                .into_iter()
                .map(move |s| WindowRef { period: i, start: s.start })
        })
        .collect()
}

/// Stacks windows into an input `[B × l × A]` and a target `[B × l × n]`;
/// row `b` of both comes from the same period and offsets.
pub fn assemble_batch(
    periods: &[Period],
    targets: &[SimilarityTarget],
    windows: &[WindowRef],
    len: usize,
) -> Result<(Tensor, Tensor)> {
    if periods.len() != targets.len() {
        return Err(MoilError::Shape(format!(
            "{} periods but {} targets",
            periods.len(),
            targets.len()
        )));
    }
    let a = periods.first().map_or(0, Period::n_axes);
    let n = targets.first().map_or(0, |t| t.n_channels);
    let mut xs = Vec::with_capacity(windows.len() * len * a);
    let mut ys = Vec::with_capacity(windows.len() * len * n);
    for w in windows {
        let (p, t) = (&periods[w.period], &targets[w.period]);
        if t.period_key != p.key() || t.len() != p.len() {
            return Err(MoilError::Shape(format!(
                "target `{}` ({} steps) does not belong to period `{}` ({} steps)",
                t.period_key,
                t.len(),
                p.key(),
                p.len()
            )));
        }
        if w.start + len > p.len() {
            return Err(MoilError::Shape(format!("window at {} overruns `{}`", w.start, p.key())));
        }
        xs.extend_from_slice(&p.values()[w.start * a..(w.start + len) * a]);
        ys.extend_from_slice(&t.values[w.start * n..(w.start + len) * n]);
    }
    Ok((
        Tensor::new(vec![windows.len(), len, a], xs)?,
        Tensor::new(vec![windows.len(), len, n], ys)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub window: usize,
    pub step: usize,
    /// Stop as soon as an epoch's mean loss falls below this value.
    #[serde(default)]
    pub stop_below: Option<f64>,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(MoilError::Config("pretraining lr must be positive and weight decay non-negative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.window == 0 || self.step == 0 {
            return Err(MoilError::Config("pretraining batch, epochs, window and step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub last: MoilNet,
    pub best: MoilNet,
    /// 1-based.
    pub best_epoch: usize,
    pub best_loss: f64,
    /// Mean loss of each completed epoch.
    pub losses: Vec<f64>,
    pub adam: Adam,
}

/// Regresses `targets` from the normalized `periods` with MSE and Adam.
///
/// Windows are reshuffled every epoch from a generator seeded by `seed`; the
/// network's weights come from its own construction seed.
pub fn pretrain(
    mut net: MoilNet,
    periods: &[Period],
    targets: &[SimilarityTarget],
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let mut windows = training_windows(periods, cfg.window, cfg.step);
    if windows.is_empty() {
        return Err(MoilError::InvalidInput(format!(
            "no period is at least {} steps long; nothing to pretrain on",
            cfg.window
        )));
    }
    if let Some(t) = targets.first() {
        if t.n_channels != net.n_motifs {
            return Err(MoilError::Shape(format!(
                "targets have {} channels, network predicts {}",
                t.n_channels, net.n_motifs
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(MoilNet, usize, f64)> = None;
    for epoch in 1..=cfg.epochs {
        windows.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, batch) in windows.chunks(cfg.batch_size).enumerate() {
            let (x, y) = assemble_batch(periods, targets, batch, cfg.window)?;
            let pred = net.forward(&x, Mode::Train)?;
            let loss = mse_loss(&pred, &y)?;
            if !loss.value.is_finite() {
                return Err(MoilError::Training(format!(
                    "loss became {} at epoch {epoch}, batch {bi} (lr {}); last finite epoch loss {:?}",
                    loss.value,
                    cfg.lr,
                    losses.last()
                )));
            }
            net.backward(&loss.grad)?;
            adam.update(net.params_mut());
            total += loss.value * batch.len() as f64;
        }
        let epoch_loss = total / windows.len() as f64;
        log::info!("pretrain epoch {epoch}/{}: loss {epoch_loss:.6}", cfg.epochs);
        losses.push(epoch_loss);
        if best.as_ref().is_none_or(|(_, _, l)| epoch_loss < *l) {
            best = Some((net.clone(), epoch, epoch_loss));
        }
        if cfg.stop_below.is_some_and(|s| epoch_loss < s) {
            break;
        }
    }
    let (best, best_epoch, best_loss) = best.expect("at least one epoch");
    Ok(PretrainOutcome {
        last: net,
        best,
        best_epoch,
        best_loss,
        losses,
        adam,
    })
}

/// Pretrained network plus everything needed to resume or audit it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub config_hash: String,
    pub motif_set_hash: String,
    pub epoch: usize,
    pub loss: f64,
    pub encoder_hash: String,
    pub adam: Adam,
    pub net: MoilNet,
}

const CHECKPOINT_FORMAT: &str = "moil-checkpoint/1";

impl Checkpoint {
    pub fn new(
        net: MoilNet,
        adam: Adam,
        epoch: usize,
        loss: f64,
        seed: u64,
        config_hash: &str,
        motif_set_hash: &str,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            seed,
            config_hash: config_hash.into(),
            motif_set_hash: motif_set_hash.into(),
            epoch,
            loss,
            encoder_hash: net.encoder.state_hash(),
            adam,
            net,
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
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(MoilError::Format {
                path: path.to_path_buf(),
                message: format!("unsupported checkpoint format `{}`", ckpt.format),
            });
        }
        if ckpt.net.encoder.state_hash() != ckpt.encoder_hash {
            return Err(MoilError::Integrity(format!(
                "{}: encoder weights do not match the recorded hash",
                path.display()
            )));
        }
        Ok(ckpt)
    }
}
