//! Worker-dependent and worker-independent evaluation protocols.
//!
//! Every run trains a classifier on two frozen encoders built from the same
//! initial weights: one pretrained with motif-similarity targets, and one
//! left at its random initialization (batch-norm statistics calibrated on
//! the training periods).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, RunConfig};
use crate::data::{minmax_normalize, Dataset, Period};
use crate::downstream::{calibrate_batchnorm, confusion_matrix, micro_f1, period_features, train_classifier, PeriodFeatures};
use crate::error::{MoilError, Result};
use crate::model::MoilNet;
use crate::nn::Sequential;
use crate::pipeline::run_ssl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    WorkerDependent,
    WorkerIndependent,
}

impl Protocol {
    pub fn id(self) -> &'static str {
        match self {
            Protocol::WorkerDependent => "worker-dependent",
            Protocol::WorkerIndependent => "worker-independent",
        }
    }
}

impl FromStr for Protocol {
    type Err = MoilError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worker-dependent" => Ok(Protocol::WorkerDependent),
            "worker-independent" => Ok(Protocol::WorkerIndependent),
            other => Err(MoilError::Config(format!(
                "unknown protocol `{other}` (expected worker-dependent or worker-independent)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Moil,
    RandomEncoder,
}

impl Arm {
    pub fn id(self) -> &'static str {
        match self {
            Arm::Moil => "moil",
            Arm::RandomEncoder => "random-encoder",
        }
    }
}

/// Period keys of one train/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Held-out worker, for worker-independent folds.
    pub held_out: Option<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Training periods whose labels the classifier may use.
    pub labeled: Vec<String>,
}

fn periods_by_worker(ds: &Dataset) -> Vec<(String, Vec<&Period>)> {
    ds.workers()
        .into_iter()
        .map(|w| {
            let ps = ds.periods().iter().filter(|p| p.worker_id == w).collect();
            (w, ps)
        })
        .collect()
}

/// Leading `ceil(fraction · n)` entries, at least one.
fn label_prefix(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).clamp(1, n)
}

/// Per worker, the first `train_fraction` of periods (in dataset order)
/// train and the rest test. Labels come from the leading `label_fraction`
/// of each worker's training periods.
pub fn worker_dependent_split(ds: &Dataset, train_fraction: f64, label_fraction: f64) -> Result<Split> {
    let mut split = Split {
        held_out: None,
        train: Vec::new(),
        test: Vec::new(),
        labeled: Vec::new(),
    };
    for (w, ps) in periods_by_worker(ds) {
        if ps.len() < 2 {
            return Err(MoilError::InvalidInput(format!(
                "worker `{w}` has {} period(s); the split needs at least 2",
                ps.len()
            )));
        }
        let n_train = ((ps.len() as f64 * train_fraction).round() as usize).clamp(1, ps.len() - 1);
        let keys: Vec<String> = ps.iter().map(|p| p.key()).collect();
        split.labeled.extend(keys[..label_prefix(n_train, label_fraction)].iter().cloned());
        split.train.extend(keys[..n_train].iter().cloned());
        split.test.extend(keys[n_train..].iter().cloned());
    }
    Ok(split)
}

/// One fold per worker: that worker's periods test, everyone else's train.
pub fn worker_independent_folds(ds: &Dataset, label_fraction: f64) -> Result<Vec<Split>> {
    let groups = periods_by_worker(ds);
    if groups.len() < 2 {
        return Err(MoilError::InvalidInput(
            "the worker-independent protocol needs at least 2 workers".into(),
        ));
    }
    Ok(groups
        .iter()
        .map(|(held, _)| {
            let mut split = Split {
                held_out: Some(held.clone()),
                train: Vec::new(),
                test: Vec::new(),
                labeled: Vec::new(),
            };
            for (w, ps) in &groups {
                let keys: Vec<String> = ps.iter().map(|p| p.key()).collect();
                if w == held {
                    split.test.extend(keys);
                } else {
                    split.labeled.extend(keys[..label_prefix(keys.len(), label_fraction)].iter().cloned());
                    split.train.extend(keys);
                }
            }
            split
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochScore {
    pub epoch: usize,
    pub f1: f64,
}

/// One classifier trained and scored on one frozen encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub held_out: Option<String>,
    pub arm: Arm,
    pub seed: u64,
    /// Micro-F1 after the final classifier epoch.
    pub f1: f64,
    pub curve: Vec<EpochScore>,
    pub confusion: Vec<Vec<u64>>,
    pub encoder_hash_before: String,
    pub encoder_hash_after: String,
    pub motif_set_hash: Option<String>,
    pub pretrain_losses: Vec<f64>,
    pub classifier_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    /// One value per seed; averaged over folds for worker-independent runs.
    pub f1: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Summed over seeds and folds, indexed `[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub held_out: Option<String>,
    /// Test periods that reached pretraining, calibration or classifier
    /// training. Empty unless something is wrong.
    pub leaked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub protocol: Protocol,
    pub config_hash: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub label_fraction: f64,
    pub classes: usize,
    pub splits: Vec<Split>,
    pub audits: Vec<FoldAudit>,
    /// Every encoder hash was unchanged by classifier training.
    pub encoders_frozen: bool,
    pub arms: Vec<ArmSummary>,
    pub runs: Vec<RunRecord>,
    pub config: RunConfig,
}

impl ExperimentReport {
    pub fn arm(&self, arm: Arm) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Per-step predictions of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub held_out: Option<String>,
    pub arm: Arm,
    pub seed: u64,
    /// `(period key, true labels, predicted labels)`.
    pub periods: Vec<(String, Vec<u32>, Vec<u32>)>,
}

impl Predictions {
    /// Writes `period_id,t,true,pred` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "period_id,t,true,pred")?;
        for (key, truth, pred) in &self.periods {
            for (t, (a, b)) in truth.iter().zip(pred).enumerate() {
                writeln!(w, "{key},{t},{a},{b}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub predictions: Vec<Predictions>,
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn class_count(ds: &Dataset, cfg: &RunConfig) -> Result<usize> {
    if let Some(c) = cfg.classifier.classes {
        return Ok(c);
    }
    let max = ds
        .periods()
        .iter()
        .filter_map(|p| p.labels())
        .flat_map(|l| l.iter().copied())
        .max()
        .ok_or_else(|| MoilError::InvalidInput("dataset has no labels".into()))?;
    Ok((max as usize + 1).max(2))
}

struct Fold<'a> {
    split: &'a Split,
    train: Vec<&'a Period>,
    labeled: Vec<&'a Period>,
    test: Vec<&'a Period>,
}

fn resolve<'a>(normalized: &'a [Period], keys: &[String]) -> Result<Vec<&'a Period>> {
    keys.iter()
        .map(|k| {
            normalized
                .iter()
                .find(|p| &p.key() == k)
                .ok_or_else(|| MoilError::InvalidInput(format!("unknown period `{k}`")))
        })
        .collect()
}

/// Trains and scores one classifier on `encoder`, checking that the encoder
/// is bit-identical afterwards.
#[allow(clippy::too_many_arguments)]
fn score_encoder(
    cfg: &RunConfig,
    encoder: &Sequential,
    fold: &Fold<'_>,
    classes: usize,
    arm: Arm,
    seed: u64,
    held_out: Option<String>,
    seen: &mut BTreeSet<String>,
) -> Result<(RunRecord, Predictions)> {
    let before = encoder.state_hash();
    let test_features: Vec<PeriodFeatures> = fold
        .test
        .iter()
        .map(|p| period_features(encoder, p, cfg.classifier.window))
        .collect::<Result<_>>()?;
    let truth: Vec<Vec<u32>> = fold
        .test
        .iter()
        .map(|p| {
            p.labels()
                .map(<[u32]>::to_vec)
                .ok_or_else(|| MoilError::InvalidInput(format!("test period `{}` has no labels", p.key())))
        })
        .collect::<Result<_>>()?;
    let mut curve = Vec::new();
    let eval_epochs = &cfg.experiment.eval_epochs;
    let trained = train_classifier(
        encoder,
        &fold.labeled,
        classes,
        &cfg.classifier,
        derive_seed(seed, "classifier"),
        |epoch, clf| {
            if eval_epochs.contains(&epoch) {
                let pred = test_features
                    .iter()
                    .map(|f| clf.predict_features(f))
                    .collect::<Result<Vec<_>>>()?;
                curve.push(EpochScore {
                    epoch,
                    f1: micro_f1(&pred, &truth)?,
                });
            }
            Ok(())
        },
    )?;
    seen.extend(trained.seen_periods.iter().cloned());
    let pred = test_features
        .iter()
        .map(|f| trained.classifier.predict_features(f))
        .collect::<Result<Vec<_>>>()?;
    let f1 = micro_f1(&pred, &truth)?;
    let record = RunRecord {
        held_out: held_out.clone(),
        arm,
        seed,
        f1,
        curve,
        confusion: confusion_matrix(&pred, &truth, classes)?,
        encoder_hash_before: before,
        encoder_hash_after: encoder.state_hash(),
        motif_set_hash: None,
        pretrain_losses: Vec::new(),
        classifier_losses: trained.losses,
    };
    let predictions = Predictions {
        held_out,
        arm,
        seed,
        periods: fold
            .test
            .iter()
            .map(|p| p.key())
            .zip(truth)
            .zip(pred)
            .map(|((k, t), p)| (k, t, p))
            .collect(),
    };
    log::info!(
        "{}{} seed {seed}: micro-F1 {f1:.4}",
        arm.id(),
        record.held_out.as_deref().map(|w| format!(" (held out {w})")).unwrap_or_default()
    );
    Ok((record, predictions))
}

fn run_fold(
    cfg: &RunConfig,
    fold: &Fold<'_>,
    classes: usize,
    runs: &mut Vec<RunRecord>,
    predictions: &mut Vec<Predictions>,
) -> Result<FoldAudit> {
    let held_out = fold.split.held_out.clone();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for &seed in &cfg.experiment.seeds {
        let ssl = run_ssl(cfg, &fold.train, seed)?;
        seen.extend(ssl.period_keys.iter().cloned());
        let net = ssl.network(cfg.experiment.use_best_checkpoint);
        let (mut rec, pred) = score_encoder(cfg, &net.encoder, fold, classes, Arm::Moil, seed, held_out.clone(), &mut seen)?;
        rec.motif_set_hash = Some(ssl.motifs.hash.clone());
        rec.pretrain_losses = ssl.outcome.losses.clone();
        runs.push(rec);
        predictions.push(pred);

        // Same construction seed as the pretrained network: identical
        // starting weights, no pretraining.
        let mut control = MoilNet::new(
            cfg.encoder.clone(),
            fold.train[0].n_axes(),
            ssl.motifs.n_motifs(),
            derive_seed(seed, "encoder"),
        )?;
        calibrate_batchnorm(
            &mut control.encoder,
            &fold.train,
            cfg.pretrain.window,
            cfg.pretrain.step,
            cfg.pretrain.batch_size,
        )?;
        let (rec, pred) = score_encoder(cfg, &control.encoder, fold, classes, Arm::RandomEncoder, seed, held_out.clone(), &mut seen)?;
        runs.push(rec);
        predictions.push(pred);
    }
    let test: BTreeSet<String> = fold.test.iter().map(|p| p.key()).collect();
    Ok(FoldAudit {
        held_out,
        leaked: seen.intersection(&test).cloned().collect(),
    })
}

fn summarize(runs: &[RunRecord], seeds: &[u64], classes: usize) -> Vec<ArmSummary> {
    [Arm::Moil, Arm::RandomEncoder]
        .into_iter()
        .map(|arm| {
            let f1: Vec<f64> = seeds
                .iter()
                .map(|&s| {
                    let scores: Vec<f64> = runs.iter().filter(|r| r.arm == arm && r.seed == s).map(|r| r.f1).collect();
                    scores.iter().sum::<f64>() / scores.len() as f64
                })
                .collect();
            let mut confusion = vec![vec![0u64; classes]; classes];
            for r in runs.iter().filter(|r| r.arm == arm) {
                for (row, rrow) in confusion.iter_mut().zip(&r.confusion) {
                    for (c, v) in row.iter_mut().zip(rrow) {
                        *c += v;
                    }
                }
            }
            ArmSummary {
                arm,
                mean: f1.iter().sum::<f64>() / f1.len() as f64,
                std: sample_std(&f1),
                f1,
                confusion,
            }
        })
        .collect()
}

/// Runs `protocol` over `ds` with the settings in `cfg`.
pub fn run_experiment(ds: &Dataset, cfg: &RunConfig, protocol: Protocol) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let classes = class_count(ds, cfg)?;
    let exp = &cfg.experiment;
    let splits = match protocol {
        Protocol::WorkerDependent => vec![worker_dependent_split(ds, exp.train_fraction, exp.label_fraction)?],
        Protocol::WorkerIndependent => worker_independent_folds(ds, exp.label_fraction)?,
    };
    let normalized: Vec<Period> = ds.periods().iter().map(minmax_normalize).collect::<Result<_>>()?;
    let mut runs = Vec::new();
    let mut predictions = Vec::new();
    let mut audits = Vec::new();
    for split in &splits {
        let fold = Fold {
            split,
            train: resolve(&normalized, &split.train)?,
            labeled: resolve(&normalized, &split.labeled)?,
            test: resolve(&normalized, &split.test)?,
        };
        audits.push(run_fold(cfg, &fold, classes, &mut runs, &mut predictions)?);
    }
    let report = ExperimentReport {
        format: "moil-report/1".into(),
        protocol,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        seeds: exp.seeds.clone(),
        label_fraction: exp.label_fraction,
        classes,
        encoders_frozen: runs.iter().all(|r| r.encoder_hash_before == r.encoder_hash_after),
        arms: summarize(&runs, &exp.seeds, classes),
        splits,
        audits,
        runs,
        config: cfg.clone(),
    };
    Ok(ExperimentOutput { report, predictions })
}
