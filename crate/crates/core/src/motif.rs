//! Key-motif mining and similarity-series targets.
//!
//! Candidates are cut from one symbolized "initial" period with a sliding
//! window of several sizes. Each candidate belongs to the temporal segment
//! group of its offset; one candidate per group becomes a key motif. For each
//! key motif and each unlabeled period the per-offset Hamming distance to the
//! motif, negated, axis-averaged and min-max scaled over all periods, forms
//! one channel of that period's regression target.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SymbolicSeries;
use crate::error::{MoilError, Result};

/// A fixed-length symbolic sub-sequence of the initial period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motif {
    pub length: usize,
    pub n_axes: usize,
    /// Row-major `[length × A]`.
    pub symbols: Vec<u8>,
    pub source_period: String,
    pub source_offset: usize,
    pub segment_group: usize,
}

/// Sliding-window candidates of every size in `window_sizes`, each tagged
/// with the segment group `floor(offset · n / T)` (clamped to `n − 1`).
pub fn generate_candidates(
    sym: &SymbolicSeries,
    window_sizes: &[usize],
    step: usize,
    n_groups: usize,
) -> Result<Vec<Motif>> {
    if window_sizes.is_empty() {
        return Err(MoilError::InvalidInput("no candidate window sizes given".into()));
    }
    if step == 0 || n_groups == 0 {
        return Err(MoilError::InvalidInput(format!(
            "candidate step ({step}) and group count ({n_groups}) must be positive"
        )));
    }
    let t = sym.len();
    let mut out = Vec::new();
    for &w in window_sizes {
        if w == 0 || w > t {
            return Err(MoilError::PeriodTooShort {
                period: sym.period_key.clone(),
                message: format!("candidate window {w} does not fit in {t} steps"),
            });
        }
        for offset in (0..=t - w).step_by(step) {
            out.push(Motif {
                length: w,
                n_axes: sym.n_axes(),
                symbols: sym.block(offset, w).to_vec(),
                source_period: sym.period_key.clone(),
                source_offset: offset,
                segment_group: (offset * n_groups / t).min(n_groups - 1),
            });
        }
    }
    Ok(out)
}

/// Number of positions where two `[L × A]` blocks differ on `axis`.
pub fn symbol_distance(a: &[u8], b: &[u8], n_axes: usize, axis: usize) -> Result<usize> {
    if a.len() != b.len() || n_axes == 0 || a.len() % n_axes != 0 {
        return Err(MoilError::Shape(format!(
            "symbol blocks of {} and {} entries with {n_axes} axes",
            a.len(),
            b.len()
        )));
    }
    if axis >= n_axes {
        return Err(MoilError::InvalidInput(format!("axis {axis} >= {n_axes}")));
    }
    Ok(a.chunks_exact(n_axes)
        .zip(b.chunks_exact(n_axes))
        .filter(|(x, y)| x[axis] != y[axis])
        .count())
}

/// Per-axis symbol columns of a period, laid out contiguously so the sweep
/// reads each axis sequentially.
struct AxisColumns {
    len: usize,
    cols: Vec<Vec<u8>>,
}

impl AxisColumns {
    fn new(symbols: &[u8], n_axes: usize) -> Self {
        let len = symbols.len() / n_axes;
        let cols = (0..n_axes)
            .map(|a| symbols.iter().skip(a).step_by(n_axes).copied().collect())
            .collect();
        Self { len, cols }
    }
}

/// Negated per-axis distances of `m` to every segment of `sym_period`.
///
/// Row `j` (for `j` in `0..T−|m|`) holds `−d(m, segment[j..j+|m|])` per axis,
/// so the result is `[(T − |m|) × A]`.
pub fn similarity_series_raw(m: &Motif, sym_period: &SymbolicSeries) -> Result<Vec<f64>> {
    check_compatible(m, sym_period)?;
    let motif_cols = AxisColumns::new(&m.symbols, m.n_axes);
    let period_cols = AxisColumns::new(sym_period.symbols(), sym_period.n_axes());
    Ok(raw_sweep(&motif_cols, &period_cols))
}

fn check_compatible(m: &Motif, sym_period: &SymbolicSeries) -> Result<()> {
    if m.n_axes != sym_period.n_axes() {
        return Err(MoilError::Shape(format!(
            "motif has {} axes, period `{}` has {}",
            m.n_axes,
            sym_period.period_key,
            sym_period.n_axes()
        )));
    }
    if m.length == 0 || m.symbols.len() != m.length * m.n_axes {
        return Err(MoilError::Shape(format!(
            "motif of length {} holds {} symbols",
            m.length,
            m.symbols.len()
        )));
    }
    if sym_period.len() < m.length + 1 {
        return Err(MoilError::PeriodTooShort {
            period: sym_period.period_key.clone(),
            message: format!(
                "{} steps, a motif of length {} needs at least {}",
                sym_period.len(),
                m.length,
                m.length + 1
            ),
        });
    }
    Ok(())
}

fn raw_sweep(motif: &AxisColumns, period: &AxisColumns) -> Vec<f64> {
    let a = motif.cols.len();
    let ml = motif.len;
    let n_out = period.len - ml;
    let mut out = vec![0.0; n_out * a];
    for (axis, (mc, pc)) in motif.cols.iter().zip(&period.cols).enumerate() {
        for j in 0..n_out {
            let seg = &pc[j..j + ml];
            let mismatches = mc.iter().zip(seg).filter(|(x, y)| x != y).count();
            out[j * a + axis] = -(mismatches as f64);
        }
    }
    out
}

/// Finalized similarity of one motif across all periods.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalizedSimilarity {
    /// One length-`T` series per input period, in input order.
    pub series: Vec<Vec<f64>>,
    /// The motif is equally distant from every segment of every period; its
    /// series are a constant 0.5.
    pub uninformative: bool,
}

/// Averages raw series over axes, min-max scales them with the extrema
/// pooled over every period, and pads each to full period length by
/// repeating its last value `motif_len` times.
pub fn finalize_similarity(raw: &[Vec<f64>], n_axes: usize, motif_len: usize) -> Result<FinalizedSimilarity> {
    if n_axes == 0 || raw.is_empty() {
        return Err(MoilError::InvalidInput("no raw similarity series to finalize".into()));
    }
    let averaged: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| {
            if r.is_empty() || r.len() % n_axes != 0 {
                return Err(MoilError::Shape(format!(
                    "raw series of {} entries is not a non-empty [n x {n_axes}] matrix",
                    r.len()
                )));
            }
            Ok(r.chunks_exact(n_axes)
                .map(|row| row.iter().sum::<f64>() / n_axes as f64)
                .collect())
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = averaged
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let uninformative = hi <= lo;
    let series = averaged
        .into_iter()
        .map(|avg| {
            let mut s: Vec<f64> = if uninformative {
                vec![0.5; avg.len()]
            } else {
                avg.iter().map(|v| (v - lo) / (hi - lo)).collect()
            };
            let last = *s.last().expect("non-empty");
            s.extend(std::iter::repeat_n(last, motif_len));
            s
        })
        .collect();
    Ok(FinalizedSimilarity { series, uninformative })
}

/// One motif per segment group, chosen uniformly under `seed`, ordered by group.
pub fn select_key_motifs(candidates: &[Motif], n_groups: usize, seed: u64) -> Result<Vec<Motif>> {
    if n_groups == 0 {
        return Err(MoilError::InvalidInput("key motif count must be positive".into()));
    }
    let mut groups: Vec<Vec<&Motif>> = vec![Vec::new(); n_groups];
    for c in candidates {
        let g = groups.get_mut(c.segment_group).ok_or_else(|| {
            MoilError::InvalidInput(format!("candidate group {} >= {n_groups}", c.segment_group))
        })?;
        g.push(c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups
        .iter()
        .enumerate()
        .map(|(group, members)| {
            if members.is_empty() {
                return Err(MoilError::EmptyGroup { group });
            }
            // u64 draws keep the choice identical on 32- and 64-bit targets.
            let pick = rng.random_range(0..members.len() as u64) as usize;
            Ok(members[pick].clone())
        })
        .collect()
}

/// Candidate mining settings, in samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub alphabet_size: usize,
    pub n_motifs: usize,
    pub window_sizes: Vec<usize>,
    pub step: usize,
}

/// Serializable set of key motifs with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifSet {
    pub format: String,
    pub alphabet_size: usize,
    pub n_axes: usize,
    pub seed: u64,
    pub initial_period: String,
    pub window_sizes: Vec<usize>,
    pub candidate_step: usize,
    pub n_candidates: usize,
    pub motifs: Vec<Motif>,
    /// SHA-256 of every other field; filled in by [`MotifSet::seal`].
    #[serde(default)]
    pub hash: String,
}

const MOTIF_FORMAT: &str = "moil-motifs/1";

impl MotifSet {
    pub fn content_hash(&self) -> String {
        let mut unsealed = self.clone();
        unsealed.hash.clear();
        let bytes = serde_json::to_vec(&unsealed).expect("motif set serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn seal(mut self) -> Self {
        self.hash = self.content_hash();
        self
    }

    pub fn n_motifs(&self) -> usize {
        self.motifs.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| MoilError::MissingArtifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let set: MotifSet = serde_json::from_reader(std::io::BufReader::new(file))?;
        if set.format != MOTIF_FORMAT {
            return Err(MoilError::Format {
                path: path.to_path_buf(),
                message: format!("unsupported motif format `{}`", set.format),
            });
        }
        if set.hash != set.content_hash() {
            return Err(MoilError::Integrity(format!(
                "{}: motif set hash does not match its contents",
                path.display()
            )));
        }
        Ok(set)
    }
}

/// Picks the initial period uniformly from `unlabeled` under `seed`, then
/// generates candidates and selects one key motif per segment group.
pub fn mine_motifs(unlabeled: &[SymbolicSeries], params: &MiningParams, seed: u64) -> Result<MotifSet> {
    if unlabeled.is_empty() {
        return Err(MoilError::InvalidInput("no unlabeled periods to mine motifs from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Separate stream from the one select_key_motifs draws from.
    rng.set_stream(1);
    let initial = &unlabeled[rng.random_range(0..unlabeled.len() as u64) as usize];
    if initial.alphabet_size != params.alphabet_size {
        return Err(MoilError::InvalidInput(format!(
            "periods symbolized with K={}, mining expects K={}",
            initial.alphabet_size, params.alphabet_size
        )));
    }
    let candidates = generate_candidates(initial, &params.window_sizes, params.step, params.n_motifs)?;
    let motifs = select_key_motifs(&candidates, params.n_motifs, seed)?;
    Ok(MotifSet {
        format: MOTIF_FORMAT.into(),
        alphabet_size: params.alphabet_size,
        n_axes: initial.n_axes(),
        seed,
        initial_period: initial.period_key.clone(),
        window_sizes: params.window_sizes.clone(),
        candidate_step: params.step,
        n_candidates: candidates.len(),
        motifs,
        hash: String::new(),
    }
    .seal())
}

/// Regression target of one period: `[T × n]` similarities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTarget {
    pub period_key: String,
    pub n_channels: usize,
    /// Row-major `[T × n]`.
    pub values: Vec<f64>,
}

impl SimilarityTarget {
    pub fn len(&self) -> usize {
        self.values.len() / self.n_channels.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_channels..(t + 1) * self.n_channels]
    }
}

/// Targets for every period plus the channels whose motif was uninformative.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub targets: Vec<SimilarityTarget>,
    pub uninformative: Vec<usize>,
    pub motif_set_hash: String,
}

/// Stacks the finalized similarity of each key motif into per-period
/// `[T × n]` targets; channel `j` is the motif of segment group `j`.
pub fn build_ssl_targets(periods: &[SymbolicSeries], motifs: &MotifSet) -> Result<TargetSet> {
    if periods.is_empty() {
        return Err(MoilError::InvalidInput("no periods to build targets for".into()));
    }
    let n = motifs.motifs.len();
    let period_cols: Vec<AxisColumns> = periods
        .iter()
        .map(|p| AxisColumns::new(p.symbols(), p.n_axes()))
        .collect();
    let mut targets: Vec<SimilarityTarget> = periods
        .iter()
        .map(|p| SimilarityTarget {
            period_key: p.period_key.clone(),
            n_channels: n,
            values: vec![0.0; p.len() * n],
        })
        .collect();
    let mut uninformative = Vec::new();
    for (j, m) in motifs.motifs.iter().enumerate() {
        let motif_cols = AxisColumns::new(&m.symbols, m.n_axes);
        let mut raw = Vec::with_capacity(periods.len());
        for (p, cols) in periods.iter().zip(&period_cols) {
            check_compatible(m, p)?;
            raw.push(raw_sweep(&motif_cols, cols));
        }
        let fin = finalize_similarity(&raw, m.n_axes, m.length)?;
        if fin.uninformative {
            log::warn!(
                "key motif {j} (offset {} in {}) is equally distant from every segment; using a constant 0.5 channel",
                m.source_offset,
                m.source_period
            );
            uninformative.push(j);
        }
        for (target, series) in targets.iter_mut().zip(fin.series) {
            for (t, v) in series.into_iter().enumerate() {
                target.values[t * n + j] = v;
            }
        }
    }
    Ok(TargetSet {
        targets,
        uninformative,
        motif_set_hash: motifs.hash.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TargetManifest {
    format: String,
    motif_set_hash: String,
    n_channels: usize,
    uninformative: Vec<usize>,
    periods: Vec<TargetFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TargetFile {
    period_key: String,
    file: String,
    len: usize,
}

const TARGET_FORMAT: &str = "moil-targets/1";

fn target_file_name(key: &str) -> String {
    let safe: String = key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("{safe}.csv")
}

impl TargetSet {
    /// Writes `manifest.json` plus one `period_id,t,s_0,...` CSV per period.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.targets.len());
        for (i, target) in self.targets.iter().enumerate() {
            let file = format!("{i:04}_{}", target_file_name(&target.period_key));
            let mut w = BufWriter::new(File::create(dir.join(&file))?);
            write!(w, "period_id,t")?;
            for j in 0..target.n_channels {
                write!(w, ",s_{j}")?;
            }
            writeln!(w)?;
            for t in 0..target.len() {
                write!(w, "{},{t}", target.period_key)?;
                for v in target.row(t) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
            w.flush()?;
            files.push(TargetFile {
                period_key: target.period_key.clone(),
                file,
                len: target.len(),
            });
        }
        let manifest = TargetManifest {
            format: TARGET_FORMAT.into(),
            motif_set_hash: self.motif_set_hash.clone(),
            n_channels: self.targets.first().map_or(0, |t| t.n_channels),
            uninformative: self.uninformative.clone(),
            periods: files,
        };
        let mut w = BufWriter::new(File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let file = File::open(&manifest_path).map_err(|e| MoilError::MissingArtifact {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
        let manifest: TargetManifest = serde_json::from_reader(std::io::BufReader::new(file))?;
        if manifest.format != TARGET_FORMAT {
            return Err(MoilError::Format {
                path: manifest_path,
                message: format!("unsupported target format `{}`", manifest.format),
            });
        }
        let n = manifest.n_channels;
        let mut targets = Vec::with_capacity(manifest.periods.len());
        for entry in &manifest.periods {
            let path: PathBuf = dir.join(&entry.file);
            let mut reader = csv::Reader::from_path(&path).map_err(|e| MoilError::MissingArtifact {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let mut values = Vec::with_capacity(entry.len * n);
            for (t, record) in reader.records().enumerate() {
                let record = record?;
                let fmt_err = |message: String| MoilError::Format {
                    path: path.clone(),
                    message,
                };
                if record.len() != n + 2 {
                    return Err(fmt_err(format!("row {} has {} columns, expected {}", t + 2, record.len(), n + 2)));
                }
                if record[1].parse::<usize>().ok() != Some(t) {
                    return Err(fmt_err(format!("row {} has t={}, expected {t}", t + 2, &record[1])));
                }
                for cell in record.iter().skip(2) {
                    values.push(
                        cell.parse::<f64>()
                            .map_err(|_| fmt_err(format!("row {}: `{cell}` is not a number", t + 2)))?,
                    );
                }
            }
            if values.len() != entry.len * n {
                return Err(MoilError::Format {
                    path,
                    message: format!("expected {} rows", entry.len),
                });
            }
            targets.push(SimilarityTarget {
                period_key: entry.period_key.clone(),
                n_channels: n,
                values,
            });
        }
        Ok(TargetSet {
            targets,
            uninformative: manifest.uninformative,
            motif_set_hash: manifest.motif_set_hash,
        })
    }
}
