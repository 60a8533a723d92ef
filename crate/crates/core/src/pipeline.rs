//! Stage glue shared by the CLI and the experiment protocols.

use crate::config::{derive_seed, RunConfig};
use crate::data::{minmax_normalize, symbolize, Period, SymbolicSeries};
use crate::error::{MoilError, Result};
use crate::model::{pretrain, MoilNet, PretrainOutcome};
use crate::motif::{build_ssl_targets, mine_motifs, MotifSet, TargetSet};

/// Normalized periods and their symbolic series.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalized: Vec<Period>,
    pub symbolic: Vec<SymbolicSeries>,
}

pub fn prepare(periods: &[&Period], alphabet_size: usize) -> Result<Prepared> {
    let normalized = periods
        .iter()
        .map(|p| minmax_normalize(p))
        .collect::<Result<Vec<_>>>()?;
    let symbolic = normalized
        .iter()
        .map(|p| symbolize(p, alphabet_size))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared { normalized, symbolic })
}

pub fn mine(cfg: &RunConfig, prepared: &Prepared, seed: u64) -> Result<MotifSet> {
    let rate = prepared
        .normalized
        .first()
        .ok_or_else(|| MoilError::InvalidInput("no unlabeled periods".into()))?
        .sample_rate_hz;
    let params = cfg.motifs.params(rate)?;
    mine_motifs(&prepared.symbolic, &params, derive_seed(seed, "motifs"))
}

/// Everything one self-supervised pretraining run produces.
#[derive(Debug, Clone)]
pub struct SslRun {
    pub motifs: MotifSet,
    pub targets: TargetSet,
    pub outcome: PretrainOutcome,
    /// Periods that supplied pretraining windows.
    pub period_keys: Vec<String>,
}

impl SslRun {
    /// Network selected by the experiment settings.
    pub fn network(&self, use_best: bool) -> &MoilNet {
        if use_best {
            &self.outcome.best
        } else {
            &self.outcome.last
        }
    }
}

/// Mines key motifs from `unlabeled`, builds their similarity targets and
/// pretrains a fresh network on them.
pub fn run_ssl(cfg: &RunConfig, unlabeled: &[&Period], seed: u64) -> Result<SslRun> {
    let prepared = prepare(unlabeled, cfg.motifs.alphabet_size)?;
    let motifs = mine(cfg, &prepared, seed)?;
    let targets = build_ssl_targets(&prepared.symbolic, &motifs)?;
    let net = MoilNet::new(
        cfg.encoder.clone(),
        prepared.normalized[0].n_axes(),
        motifs.n_motifs(),
        derive_seed(seed, "encoder"),
    )?;
    let outcome = pretrain(
        net,
        &prepared.normalized,
        &targets.targets,
        &cfg.pretrain,
        derive_seed(seed, "pretrain"),
    )?;
    let period_keys = prepared
        .normalized
        .iter()
        .filter(|p| p.len() >= cfg.pretrain.window)
        .map(Period::key)
        .collect();
    Ok(SslRun {
        motifs,
        targets,
        outcome,
        period_keys,
    })
}
