//! Run configuration: every tunable of the pipeline in one file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CsvSchema, RolePolicy};
use crate::downstream::ClassifierConfig;
use crate::error::{MoilError, Result};
use crate::model::{EncoderConfig, PretrainConfig};
use crate::motif::MiningParams;
use crate::synth::SynthSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotifConfig {
    pub alphabet_size: usize,
    pub n_motifs: usize,
    pub window_secs: Vec<f64>,
    pub step_secs: f64,
}

impl Default for MotifConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 5,
            n_motifs: 13,
            window_secs: vec![1.0, 2.0, 4.0],
            step_secs: 0.5,
        }
    }
}

impl MotifConfig {
    /// Converts durations to sample counts at `rate_hz`.
    pub fn params(&self, rate_hz: f64) -> Result<MiningParams> {
        let samples = |s: f64| -> Result<usize> {
            let n = (s * rate_hz).round();
            if !(n >= 1.0) {
                return Err(MoilError::Config(format!(
                    "{s} s at {rate_hz} Hz is less than one sample"
                )));
            }
            Ok(n as usize)
        };
        Ok(MiningParams {
            alphabet_size: self.alphabet_size,
            n_motifs: self.n_motifs,
            window_sizes: self.window_secs.iter().map(|&s| samples(s)).collect::<Result<_>>()?,
            step: samples(self.step_secs)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train_fraction: f64,
    pub label_fraction: f64,
    pub seeds: Vec<u64>,
    pub eval_epochs: Vec<usize>,
    /// Use the lowest-loss pretraining epoch instead of the last one.
    pub use_best_checkpoint: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            label_fraction: 1.0,
            seeds: vec![0, 1, 2, 3, 4],
            eval_epochs: vec![1, 10, 20, 30, 40, 50],
            use_best_checkpoint: false,
        }
    }
}

/// File locations. Never part of the config hash, and overridable from the
/// environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub csv: CsvSchema,
    pub motifs: MotifConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub classifier: ClassifierConfig,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub synth: SynthSpec,
    #[serde(default)]
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Full,
    Desk,
}

impl RunConfig {
    /// Full-scale settings: 900-sample windows, batch 1000, 1000 SSL epochs.
    pub fn full() -> Self {
        Self {
            seed: 0,
            csv: CsvSchema {
                roles: RolePolicy::Overlapping,
                ..CsvSchema::default()
            },
            motifs: MotifConfig::default(),
            encoder: EncoderConfig::full(),
            pretrain: PretrainConfig {
                lr: 1e-4,
                weight_decay: 1e-4,
                batch_size: 1000,
                epochs: 1000,
                window: 900,
                step: 450,
                stop_below: None,
            },
            classifier: ClassifierConfig::default(),
            experiment: ExperimentConfig::default(),
            synth: SynthSpec::default(),
            paths: PathsConfig::default(),
        }
    }

    /// Single-core settings: narrow network, 300-sample windows, small
    /// batches with a larger step size so 50 epochs make real progress.
    pub fn desk() -> Self {
        let full = Self::full();
        Self {
            encoder: EncoderConfig::desk(),
            pretrain: PretrainConfig {
                lr: 1e-3,
                batch_size: 16,
                epochs: 50,
                window: 300,
                step: 300,
                ..full.pretrain
            },
            classifier: ClassifierConfig {
                batch_size: 8,
                window: 300,
                step: 150,
                ..full.classifier
            },
            ..full
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => Self::full(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| MoilError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MoilError::MissingArtifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            MoilError::Config(m) => MoilError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.pretrain.validate()?;
        self.classifier.validate()?;
        self.synth.validate()?;
        let m = &self.motifs;
        if !(2..=256).contains(&m.alphabet_size) {
            return Err(MoilError::Config(format!("alphabet size {} outside 2..=256", m.alphabet_size)));
        }
        if m.n_motifs == 0 || m.window_secs.is_empty() || !(m.step_secs > 0.0) {
            return Err(MoilError::Config("motif count, window sizes and step must be positive".into()));
        }
        if m.window_secs.iter().any(|s| !(*s > 0.0)) {
            return Err(MoilError::Config("motif window sizes must be positive".into()));
        }
        let e = &self.experiment;
        if !(e.train_fraction > 0.0 && e.train_fraction < 1.0) {
            return Err(MoilError::Config("train fraction must lie in (0, 1)".into()));
        }
        if !(e.label_fraction > 0.0 && e.label_fraction <= 1.0) {
            return Err(MoilError::Config("label fraction must lie in (0, 1]".into()));
        }
        if e.seeds.is_empty() {
            return Err(MoilError::Config("at least one seed is required".into()));
        }
        if e.eval_epochs.iter().any(|&ep| ep == 0 || ep > self.classifier.epochs) {
            return Err(MoilError::Config(format!(
                "evaluation epochs must lie in 1..={}",
                self.classifier.epochs
            )));
        }
        Ok(())
    }

    /// SHA-256 of every setting except the seed and paths, which artifacts
    /// record separately.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        c.seed = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Applies `MOIL_DATA` / `MOIL_OUT` path overrides.
    pub fn apply_env(&mut self) {
        if let Some(v) = std::env::var_os("MOIL_DATA") {
            self.paths.data = Some(PathBuf::from(v));
        }
        if let Some(v) = std::env::var_os("MOIL_OUT") {
            self.paths.out = Some(PathBuf::from(v));
        }
    }
}

/// Independent sub-seed for one use of a run seed.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [RunConfig::full(), RunConfig::desk()] {
            cfg.validate().unwrap();
            let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
        assert_ne!(RunConfig::full().hash(), RunConfig::desk().hash());
    }

    #[test]
    fn full_values() {
        let c = RunConfig::full();
        assert_eq!(c.pretrain.lr, 1e-4);
        assert_eq!(c.classifier.lr, 1e-3);
        assert_eq!((c.pretrain.batch_size, c.pretrain.epochs, c.classifier.epochs), (1000, 1000, 50));
        assert_eq!((c.pretrain.window, c.pretrain.step), (900, 450));
        assert_eq!(c.motifs.n_motifs, 13);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = RunConfig::desk().to_toml_string();
        text.push_str("\n[extra]\nfoo = 1\n");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(MoilError::Config(_))));
        let text = RunConfig::desk().to_toml_string().replace("lr = ", "learning_rate = ");
        assert!(RunConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn paths_and_seed_do_not_change_hash() {
        let mut c = RunConfig::desk();
        let h = c.hash();
        c.paths.out = Some("/tmp/x".into());
        c.seed = 1;
        assert_eq!(c.hash(), h);
        c.pretrain.epochs += 1;
        assert_ne!(c.hash(), h);
    }

    #[test]
    fn mining_params_in_samples() {
        let p = MotifConfig::default().params(30.0).unwrap();
        assert_eq!(p.window_sizes, vec![30, 60, 120]);
        assert_eq!(p.step, 15);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, "a"), derive_seed(0, "b"));
        assert_eq!(derive_seed(3, "a"), derive_seed(3, "a"));
    }
}
