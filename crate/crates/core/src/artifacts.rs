//! Stage manifests: every output directory records the config hash and seed
//! that produced it and a SHA-256 of each file, so downstream stages can
//! refuse inputs from a different configuration or with altered contents.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{MoilError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// Manifest hashes of the upstream stages, by stage name.
    pub inputs: BTreeMap<String, String>,
    /// File name (relative to the stage directory) to SHA-256.
    pub files: BTreeMap<String, String>,
    /// Stage-specific facts, such as the motif-set hash.
    pub facts: BTreeMap<String, String>,
    pub config: RunConfig,
}

const MANIFEST_FORMAT: &str = "moil-manifest/1";

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| MoilError::MissingArtifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// A finished upstream stage whose files were checked against its manifest.
#[derive(Debug, Clone)]
pub struct Stage {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// SHA-256 of the manifest file itself.
    pub hash: String,
}

impl Stage {
    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn fact(&self, key: &str) -> Result<&str> {
        self.manifest.facts.get(key).map(String::as_str).ok_or_else(|| {
            MoilError::Format {
                path: self.dir.join(MANIFEST_FILE),
                message: format!("manifest lacks `{key}`"),
            }
        })
    }

    /// Opens `dir`, checking its stage name, config hash and file hashes.
    pub fn open(dir: &Path, stage: &str, cfg: &RunConfig) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let file = File::open(&path).map_err(|e| MoilError::MissingArtifact {
            path: path.clone(),
            message: format!("{e}; run the `{stage}` command first"),
        })?;
        let manifest: Manifest = serde_json::from_reader(BufReader::new(file))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(MoilError::Format {
                path,
                message: format!("unsupported manifest format `{}`", manifest.format),
            });
        }
        if manifest.stage != stage {
            return Err(MoilError::Integrity(format!(
                "{} holds `{}` output, expected `{stage}`",
                dir.display(),
                manifest.stage
            )));
        }
        let expected = cfg.hash();
        if manifest.config_hash != expected {
            return Err(MoilError::Integrity(format!(
                "{} was produced with config {}, current config is {}; rerun the stage with the same config",
                dir.display(),
                short(&manifest.config_hash),
                short(&expected),
            )));
        }
        for (name, hash) in &manifest.files {
            if &sha256_file(&dir.join(name))? != hash {
                return Err(MoilError::Integrity(format!(
                    "{} changed after the `{stage}` stage wrote it",
                    dir.join(name).display()
                )));
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            hash: sha256_file(&path)?,
            manifest,
        })
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

/// Builder for the manifest of the stage being written.
#[derive(Debug)]
pub struct ManifestWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl ManifestWriter {
    pub fn new(dir: &Path, stage: &str, cfg: &RunConfig, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut config = cfg.clone();
        config.paths = Default::default();
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                format: MANIFEST_FORMAT.into(),
                stage: stage.into(),
                config_hash: cfg.hash(),
                seed,
                inputs: BTreeMap::new(),
                files: BTreeMap::new(),
                facts: BTreeMap::new(),
                config,
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn input(&mut self, stage: &Stage) -> &mut Self {
        self.manifest.inputs.insert(stage.manifest.stage.clone(), stage.hash.clone());
        self
    }

    pub fn fact(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.manifest.facts.insert(key.into(), value.into());
        self
    }

    /// Records a file already written under the stage directory.
    pub fn file(&mut self, name: &str) -> Result<&mut Self> {
        let hash = sha256_file(&self.dir.join(name))?;
        self.manifest.files.insert(name.into(), hash);
        Ok(self)
    }

    pub fn finish(self) -> Result<Manifest> {
        let mut w = BufWriter::new(File::create(self.dir.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(&mut w, &self.manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_refusals() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::desk();
        std::fs::write(dir.path().join("a.txt"), "hello").unwrap();
        let mut w = ManifestWriter::new(dir.path(), "prep", &cfg, 3).unwrap();
        w.file("a.txt").unwrap().fact("k", "v");
        w.finish().unwrap();

        let stage = Stage::open(dir.path(), "prep", &cfg).unwrap();
        assert_eq!(stage.manifest.seed, 3);
        assert_eq!(stage.fact("k").unwrap(), "v");

        assert!(matches!(Stage::open(dir.path(), "pretrain", &cfg), Err(MoilError::Integrity(_))));
        let mut other = cfg.clone();
        other.motifs.n_motifs = 7;
        assert!(matches!(Stage::open(dir.path(), "prep", &other), Err(MoilError::Integrity(_))));
        std::fs::write(dir.path().join("a.txt"), "tampered").unwrap();
        assert!(matches!(Stage::open(dir.path(), "prep", &cfg), Err(MoilError::Integrity(_))));
        let missing = dir.path().join("nope");
        assert!(matches!(Stage::open(&missing, "prep", &cfg), Err(MoilError::MissingArtifact { .. })));
    }
}
