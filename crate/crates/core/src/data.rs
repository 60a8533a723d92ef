//! Multi-period sensor data: loading, validation, normalization,
//! symbolization and windowing.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MoilError, Result};

/// One work cycle of multi-axis sensor samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub worker_id: String,
    pub period_id: String,
    pub sample_rate_hz: f64,
    n_axes: usize,
    /// Row-major `[T × A]`.
    values: Vec<f64>,
    labels: Option<Vec<u32>>,
}

impl Period {
    pub fn new(
        worker_id: impl Into<String>,
        period_id: impl Into<String>,
        n_axes: usize,
        values: Vec<f64>,
        sample_rate_hz: f64,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let period_id = period_id.into();
        if n_axes == 0 {
            return Err(MoilError::InvalidInput(format!("period `{period_id}` has no axes")));
        }
        if values.is_empty() || values.len() % n_axes != 0 {
            return Err(MoilError::Shape(format!(
                "period `{period_id}`: {} values do not form a non-empty [T x {n_axes}] matrix",
                values.len()
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(MoilError::InvalidInput(format!(
                "period `{period_id}`: sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MoilError::InvalidInput(format!(
                "period `{period_id}`: non-finite value at t={}, axis {}",
                i / n_axes,
                i % n_axes
            )));
        }
        let len = values.len() / n_axes;
        if let Some(l) = &labels {
            if l.len() != len {
                return Err(MoilError::Shape(format!(
                    "period `{period_id}`: {} labels for {len} time steps",
                    l.len()
                )));
            }
        }
        Ok(Self {
            worker_id: worker_id.into(),
            period_id,
            sample_rate_hz,
            n_axes,
            values,
            labels,
        })
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.values.len() / self.n_axes
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_axes(&self) -> usize {
        self.n_axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_axes..(t + 1) * self.n_axes]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Identifier unique within a dataset: `worker_id/period_id`.
    pub fn key(&self) -> String {
        format!("{}/{}", self.worker_id, self.period_id)
    }

    pub fn window(&self, span: Span) -> Result<Window<'_>> {
        if span.len == 0 || span.end() > self.len() {
            return Err(MoilError::InvalidInput(format!(
                "window [{}, {}) outside period `{}` of length {}",
                span.start,
                span.end(),
                self.period_id,
                self.len()
            )));
        }
        Ok(Window { period: self, span })
    }

    /// Copy with the values replaced; labels and identifiers are kept.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Period> {
        Period::new(
            self.worker_id.clone(),
            self.period_id.clone(),
            self.n_axes,
            values,
            self.sample_rate_hz,
            self.labels.clone(),
        )
    }
}

/// A `[start, start + len)` range of time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

/// Borrowed view of `l` consecutive time steps of a period.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub period: &'a Period,
    pub span: Span,
}

impl<'a> Window<'a> {
    pub fn values(&self) -> &'a [f64] {
        let a = self.period.n_axes;
        &self.period.values[self.span.start * a..self.span.end() * a]
    }

    pub fn labels(&self) -> Option<&'a [u32]> {
        self.period
            .labels
            .as_deref()
            .map(|l| &l[self.span.start..self.span.end()])
    }
}

/// How loaded periods are assigned to the unlabeled and labeled sets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolePolicy {
    /// Every period is unlabeled.
    #[default]
    AllUnlabeled,
    /// Periods carrying labels go to the labeled set, the rest to the unlabeled set.
    LabeledIfPresent,
    /// Every period is unlabeled; labeled periods are additionally in the labeled set.
    Overlapping,
}

/// Ordered periods plus their unlabeled / labeled role partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    periods: Vec<Period>,
    axis_names: Vec<String>,
    unlabeled: BTreeSet<String>,
    labeled: BTreeSet<String>,
}

impl Dataset {
    /// All periods unlabeled.
    pub fn new(periods: Vec<Period>) -> Result<Self> {
        let a = periods.first().map(|p| p.n_axes).unwrap_or(0);
        let axis_names = (0..a).map(|i| format!("axis_{i}")).collect();
        Self::with_axis_names(periods, axis_names)
    }

    pub fn with_axis_names(periods: Vec<Period>, axis_names: Vec<String>) -> Result<Self> {
        let first = periods
            .first()
            .ok_or_else(|| MoilError::InvalidInput("dataset has no periods".into()))?;
        let (a, rate) = (first.n_axes, first.sample_rate_hz);
        let mut keys = HashSet::new();
        for p in &periods {
            if p.n_axes != a {
                return Err(MoilError::Shape(format!(
                    "period `{}` has {} axes, expected {a}",
                    p.key(),
                    p.n_axes
                )));
            }
            if p.sample_rate_hz != rate {
                return Err(MoilError::InvalidInput(format!(
                    "period `{}` sampled at {} Hz, expected {rate} Hz",
                    p.key(),
                    p.sample_rate_hz
                )));
            }
            if !keys.insert(p.key()) {
                return Err(MoilError::InvalidInput(format!("duplicate period `{}`", p.key())));
            }
        }
        if axis_names.len() != a {
            return Err(MoilError::Shape(format!(
                "{} axis names for {a} axes",
                axis_names.len()
            )));
        }
        let unlabeled = periods.iter().map(Period::key).collect();
        Ok(Self {
            periods,
            axis_names,
            unlabeled,
            labeled: BTreeSet::new(),
        })
    }

    pub fn with_policy(self, policy: RolePolicy) -> Result<Self> {
        let labeled: Vec<String> = self
            .periods
            .iter()
            .filter(|p| p.labels.is_some())
            .map(Period::key)
            .collect();
        match policy {
            RolePolicy::AllUnlabeled => self.with_roles::<&str>(&[], false),
            RolePolicy::LabeledIfPresent => self.with_roles(&labeled, false),
            RolePolicy::Overlapping => self.with_roles(&labeled, true),
        }
    }

    /// Puts `labeled_keys` in the labeled set. The unlabeled set receives the
    /// remaining periods, or every period when `allow_overlap` is set.
    pub fn with_roles<S: AsRef<str>>(mut self, labeled_keys: &[S], allow_overlap: bool) -> Result<Self> {
        let all: BTreeSet<String> = self.periods.iter().map(Period::key).collect();
        let mut labeled = BTreeSet::new();
        for k in labeled_keys {
            let k = k.as_ref();
            let p = self
                .periods
                .iter()
                .find(|p| p.key() == k)
                .ok_or_else(|| MoilError::InvalidInput(format!("unknown period `{k}`")))?;
            if p.labels.is_none() {
                return Err(MoilError::InvalidInput(format!("period `{k}` has no labels")));
            }
            labeled.insert(k.to_string());
        }
        self.unlabeled = if allow_overlap {
            all
        } else {
            all.difference(&labeled).cloned().collect()
        };
        self.labeled = labeled;
        Ok(self)
    }

    pub fn periods(&self) -> &[Period] {
        &self.periods
    }

    pub fn into_periods(self) -> Vec<Period> {
        self.periods
    }

    pub fn axis_names(&self) -> &[String] {
        &self.axis_names
    }

    pub fn n_axes(&self) -> usize {
        self.periods[0].n_axes
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.periods[0].sample_rate_hz
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = &Period> {
        self.periods.iter().filter(|p| self.unlabeled.contains(&p.key()))
    }

    pub fn labeled(&self) -> impl Iterator<Item = &Period> {
        self.periods.iter().filter(|p| self.labeled.contains(&p.key()))
    }

    pub fn workers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.periods {
            if !out.contains(&p.worker_id) {
                out.push(p.worker_id.clone());
            }
        }
        out
    }

    /// Sub-dataset holding `keep` periods in their original order, all unlabeled.
    pub fn subset<F: Fn(&Period) -> bool>(&self, keep: F) -> Result<Dataset> {
        let periods: Vec<Period> = self.periods.iter().filter(|p| keep(p)).cloned().collect();
        Dataset::with_axis_names(periods, self.axis_names.clone())
    }

    /// Same dataset with every period min-max normalized.
    pub fn normalized(&self) -> Result<Dataset> {
        let periods = self
            .periods
            .iter()
            .map(minmax_normalize)
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            periods,
            axis_names: self.axis_names.clone(),
            unlabeled: self.unlabeled.clone(),
            labeled: self.labeled.clone(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        let has_labels = self.periods.iter().any(|p| p.labels.is_some());
        write!(out, "worker_id,period_id,t")?;
        for name in &self.axis_names {
            write!(out, ",{name}")?;
        }
        if has_labels {
            write!(out, ",label")?;
        }
        writeln!(out)?;
        for p in &self.periods {
            for t in 0..p.len() {
                write!(out, "{},{},{t}", p.worker_id, p.period_id)?;
                for v in p.row(t) {
                    write!(out, ",{v}")?;
                }
                if has_labels {
                    match &p.labels {
                        Some(l) => write!(out, ",{}", l[t])?,
                        None => write!(out, ",")?,
                    }
                }
                writeln!(out)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Column layout of a sensor CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Axis columns in order; `None` takes every column that is not one of
    /// the id, time or label columns.
    #[serde(default)]
    pub axis_columns: Option<Vec<String>>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub roles: RolePolicy,
}

fn default_label_column() -> String {
    "label".into()
}

fn default_sample_rate() -> f64 {
    30.0
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            axis_columns: None,
            label_column: default_label_column(),
            sample_rate_hz: default_sample_rate(),
            roles: RolePolicy::default(),
        }
    }
}

const WORKER_COL: &str = "worker_id";
const PERIOD_COL: &str = "period_id";
const TIME_COL: &str = "t";
const DEFAULT_WORKER: &str = "0";

struct PendingPeriod {
    worker: String,
    period: String,
    values: Vec<f64>,
    labels: Vec<Option<u32>>,
    first_row: usize,
}

/// Reads `worker_id,period_id,t,<axes...>[,label]` rows, grouping consecutive
/// rows with the same `(worker_id, period_id)` into periods.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let load_err = |row: usize, column: &str, message: String| MoilError::Load {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| MoilError::MissingArtifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(load_err(1, "<header>", "empty file".into()));
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let period_col = find(PERIOD_COL)
        .ok_or_else(|| load_err(1, PERIOD_COL, "missing column".into()))?;
    let time_col = find(TIME_COL).ok_or_else(|| load_err(1, TIME_COL, "missing column".into()))?;
    let worker_col = find(WORKER_COL);
    let label_col = find(&schema.label_column);
    let axis_cols: Vec<usize> = match &schema.axis_columns {
        Some(names) => names
            .iter()
            .map(|n| find(n).ok_or_else(|| load_err(1, n, "missing column".into())))
            .collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| {
                i != period_col && i != time_col && Some(i) != worker_col && Some(i) != label_col
            })
            .collect(),
    };
    if axis_cols.is_empty() {
        return Err(load_err(1, "<axes>", "no axis columns".into()));
    }
    let axis_names: Vec<String> = axis_cols.iter().map(|&i| headers[i].to_string()).collect();
    let n_axes = axis_cols.len();

    let mut finished: Vec<PendingPeriod> = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut current: Option<PendingPeriod> = None;

    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record?;
        let worker = match worker_col {
            Some(c) => record.get(c).unwrap_or_default().to_string(),
            None => DEFAULT_WORKER.to_string(),
        };
        let period = record.get(period_col).unwrap_or_default().to_string();
        if period.is_empty() {
            return Err(load_err(row, PERIOD_COL, "empty period id".into()));
        }
        let same = current
            .as_ref()
            .is_some_and(|c| c.worker == worker && c.period == period);
        if !same {
            if seen.contains(&(worker.clone(), period.clone())) {
                return Err(load_err(
                    row,
                    PERIOD_COL,
                    format!("rows of period `{worker}/{period}` are not contiguous"),
                ));
            }
            seen.insert((worker.clone(), period.clone()));
            if let Some(done) = current.take() {
                finished.push(done);
            }
            current = Some(PendingPeriod {
                worker,
                period,
                values: Vec::new(),
                labels: Vec::new(),
                first_row: row,
            });
        }
        let cur = current.as_mut().expect("current period");
        let expected_t = cur.labels.len();
        let t_cell = record.get(time_col).unwrap_or_default().trim();
        let t: usize = t_cell
            .parse()
            .map_err(|_| load_err(row, TIME_COL, format!("`{t_cell}` is not a sample index")))?;
        if t != expected_t {
            return Err(load_err(row, TIME_COL, format!("expected t={expected_t}, found {t}")));
        }
        for (&c, name) in axis_cols.iter().zip(&axis_names) {
            let cell = record.get(c).unwrap_or_default().trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| load_err(row, name, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(load_err(row, name, format!("non-finite value `{cell}`")));
            }
            cur.values.push(v);
        }
        let label = match label_col {
            Some(c) => {
                let cell = record.get(c).unwrap_or_default().trim();
                if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse::<u32>().map_err(|_| {
                        load_err(row, &schema.label_column, format!("`{cell}` is not a class id"))
                    })?)
                }
            }
            None => None,
        };
        cur.labels.push(label);
    }
    if let Some(done) = current.take() {
        finished.push(done);
    }
    if finished.is_empty() {
        return Err(load_err(2, "<rows>", "empty file: no data rows".into()));
    }

    let mut periods = Vec::with_capacity(finished.len());
    for p in finished {
        let n_labeled = p.labels.iter().filter(|l| l.is_some()).count();
        let labels = if n_labeled == 0 {
            None
        } else if n_labeled == p.labels.len() {
            Some(p.labels.into_iter().flatten().collect())
        } else {
            return Err(load_err(
                p.first_row,
                &schema.label_column,
                format!("period `{}/{}` is only partially labeled", p.worker, p.period),
            ));
        };
        periods.push(Period::new(
            p.worker,
            p.period,
            n_axes,
            p.values,
            schema.sample_rate_hz,
            labels,
        )?);
    }
    Dataset::with_axis_names(periods, axis_names)?.with_policy(schema.roles)
}

/// Per-axis min-max scaling of one period onto `[0, 1]`. Constant axes map to 0.
pub fn minmax_normalize(p: &Period) -> Result<Period> {
    let a = p.n_axes;
    if let Some(i) = p.values.iter().position(|v| !v.is_finite()) {
        return Err(MoilError::InvalidInput(format!(
            "period `{}`: non-finite value at t={}",
            p.key(),
            i / a
        )));
    }
    let mut lo = vec![f64::INFINITY; a];
    let mut hi = vec![f64::NEG_INFINITY; a];
    for row in p.values.chunks_exact(a) {
        for (k, &v) in row.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let mut out = p.values.clone();
    for row in out.chunks_exact_mut(a) {
        for (k, v) in row.iter_mut().enumerate() {
            let range = hi[k] - lo[k];
            *v = if range > 0.0 { (*v - lo[k]) / range } else { 0.0 };
        }
    }
    p.with_values(out)
}

/// Per-axis discrete symbols for one period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicSeries {
    pub period_key: String,
    pub alphabet_size: usize,
    n_axes: usize,
    /// Row-major `[T × A]`.
    symbols: Vec<u8>,
}

impl SymbolicSeries {
    pub fn from_symbols(
        period_key: impl Into<String>,
        alphabet_size: usize,
        n_axes: usize,
        symbols: Vec<u8>,
    ) -> Result<Self> {
        check_alphabet(alphabet_size)?;
        if n_axes == 0 || symbols.is_empty() || symbols.len() % n_axes != 0 {
            return Err(MoilError::Shape(format!(
                "{} symbols do not form a non-empty [T x {n_axes}] matrix",
                symbols.len()
            )));
        }
        if let Some(s) = symbols.iter().find(|&&s| s as usize >= alphabet_size) {
            return Err(MoilError::InvalidInput(format!(
                "symbol {s} outside alphabet of size {alphabet_size}"
            )));
        }
        Ok(Self {
            period_key: period_key.into(),
            alphabet_size,
            n_axes,
            symbols,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len() / self.n_axes
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn n_axes(&self) -> usize {
        self.n_axes
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    /// Row-major `[len × A]` block starting at time step `start`.
    pub fn block(&self, start: usize, len: usize) -> &[u8] {
        &self.symbols[start * self.n_axes..(start + len) * self.n_axes]
    }
}

fn check_alphabet(k: usize) -> Result<()> {
    if !(2..=u8::MAX as usize + 1).contains(&k) {
        return Err(MoilError::InvalidInput(format!(
            "alphabet size must be in 2..=256, got {k}"
        )));
    }
    Ok(())
}

/// Equal-width bin of `v ∈ [0, 1]` among `k` bins: `min(floor(v·k), k−1)`.
///
/// Bin edges are compared as `b / k` so values sitting exactly on an edge
/// (e.g. `0.6` with `k = 5`) land in the upper bin regardless of how `v·k`
/// rounds.
pub fn symbol_of(v: f64, k: usize) -> u8 {
    let kf = k as f64;
    let mut s = ((v * kf).floor().max(0.0) as usize).min(k - 1);
    while s + 1 < k && v >= (s + 1) as f64 / kf {
        s += 1;
    }
    while s > 0 && v < s as f64 / kf {
        s -= 1;
    }
    s as u8
}

/// Maps a normalized period to symbols per axis.
pub fn symbolize(p_norm: &Period, alphabet_size: usize) -> Result<SymbolicSeries> {
    check_alphabet(alphabet_size)?;
    let mut symbols = Vec::with_capacity(p_norm.values.len());
    for (i, &v) in p_norm.values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(MoilError::InvalidInput(format!(
                "period `{}`: value {v} at t={} is outside [0, 1]; normalize first",
                p_norm.key(),
                i / p_norm.n_axes
            )));
        }
        symbols.push(symbol_of(v, alphabet_size));
    }
    SymbolicSeries::from_symbols(p_norm.key(), alphabet_size, p_norm.n_axes, symbols)
}

/// Sliding-window spans of length `len` every `step` samples; a trailing
/// remainder shorter than `len` is dropped.
pub fn window_segments(series_len: usize, len: usize, step: usize) -> Vec<Span> {
    if len == 0 || step == 0 || series_len < len {
        return Vec::new();
    }
    (0..=series_len - len)
        .step_by(step)
        .map(|start| Span::new(start, len))
        .collect()
}
