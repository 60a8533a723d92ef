//! Synthetic work-activity data with embedded atomic-action motifs.
//!
//! Action templates are sequences of posture segments drawn from a small
//! shared pool, so a short stretch of signal rarely identifies its action on
//! its own. Each operation class strings together its own mandatory actions
//! and a few actions drawn from a pool shared by all classes. A period is every operation once, in a
//! random order, with time-warping, optional-action dropout, idle gaps,
//! Gaussian noise, slow baseline drift and per-worker amplitude scaling.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Period, RolePolicy};
use crate::error::{MoilError, Result};
use crate::motif::MotifSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub workers: usize,
    pub periods_per_worker: usize,
    pub classes: usize,
    pub axes: usize,
    pub sample_rate_hz: f64,
    /// Operation instances per period; the first `classes` cover every class once.
    pub operations_per_period: usize,
    pub mandatory_per_operation: usize,
    pub optional_per_operation: usize,
    /// Size of the optional-action pool shared by all classes.
    pub shared_actions: usize,
    pub optional_dropout: f64,
    /// Size of the shared pool of posture levels actions are built from.
    pub postures: usize,
    pub segments_per_action: usize,
    /// Nominal samples per posture segment.
    pub segment_len: usize,
    /// Amplitude of the oscillation riding on each segment.
    pub motion: f64,
    pub jitter: (f64, f64),
    /// Idle samples before each action, drawn uniformly from this range.
    pub gap: (usize, usize),
    pub noise_sigma: f64,
    pub drift: f64,
    pub worker_amplitude: (f64, f64),
    /// Periods shorter than this are rejected.
    pub min_period_len: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            workers: 4,
            periods_per_worker: 20,
            classes: 5,
            axes: 3,
            sample_rate_hz: 30.0,
            operations_per_period: 5,
            mandatory_per_operation: 2,
            optional_per_operation: 2,
            shared_actions: 3,
            optional_dropout: 0.3,
            postures: 5,
            segments_per_action: 4,
            segment_len: 20,
            motion: 0.15,
            jitter: (0.8, 1.3),
            gap: (3, 15),
            noise_sigma: 0.05,
            drift: 0.1,
            worker_amplitude: (0.8, 1.25),
            min_period_len: 300,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MoilError::Config(format!("synthetic spec: {m}")));
        if self.workers == 0 || self.periods_per_worker == 0 || self.axes == 0 {
            return bad("workers, periods and axes must be positive");
        }
        if self.classes < 2 || self.operations_per_period < self.classes {
            return bad("need at least 2 classes and one operation per class in every period");
        }
        if self.mandatory_per_operation == 0 {
            return bad("every operation needs a mandatory action");
        }
        if self.optional_per_operation > 0 && self.shared_actions == 0 {
            return bad("optional actions need a non-empty shared pool");
        }
        if self.postures < 2 || self.segments_per_action == 0 || self.segment_len < 4 {
            return bad("need at least 2 postures and segments of at least 4 samples");
        }
        if self.segments_per_action * self.segment_len < 10 {
            return bad("actions must span at least 10 samples");
        }
        if self.motion < 0.0 {
            return bad("motion amplitude must be non-negative");
        }
        if !(self.jitter.0 > 0.0 && self.jitter.0 <= self.jitter.1) {
            return bad("jitter range must be positive and ordered");
        }
        if self.gap.0 > self.gap.1 || !(0.0..=1.0).contains(&self.optional_dropout) {
            return bad("gap range must be ordered and dropout in [0, 1]");
        }
        if self.noise_sigma < 0.0 || self.drift < 0.0 || !(self.sample_rate_hz > 0.0) {
            return bad("noise, drift must be non-negative and the sample rate positive");
        }
        if !(self.worker_amplitude.0 > 0.0 && self.worker_amplitude.0 <= self.worker_amplitude.1) {
            return bad("worker amplitude range must be positive and ordered");
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.classes * self.mandatory_per_operation + self.shared_actions
    }
}

/// Waveform of one atomic action, `[len × A]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTemplate {
    pub id: usize,
    pub len: usize,
    pub waveform: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSlot {
    pub action: usize,
    pub optional: bool,
}

/// Ordered action recipe of one operation class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationTemplate {
    pub class: u32,
    pub actions: Vec<ActionSlot>,
}

/// Where one action instance landed in a period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpan {
    pub action: usize,
    pub class: u32,
    pub mandatory: bool,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodTruth {
    pub period_key: String,
    pub spans: Vec<ActionSpan>,
}

/// Sidecar describing how a synthetic dataset was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    pub spec: SynthSpec,
    pub templates: Vec<ActionTemplate>,
    pub operations: Vec<OperationTemplate>,
    pub periods: Vec<PeriodTruth>,
}

impl SynthTruth {
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
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn period(&self, key: &str) -> Option<&PeriodTruth> {
        self.periods.iter().find(|p| p.period_key == key)
    }
}

/// Half-cosine blend from `a` to `b` as `u` goes from 0 to 1.
fn ease(a: f64, b: f64, u: f64) -> f64 {
    a + (b - a) * (0.5 - 0.5 * (PI * u).cos())
}

/// Posture segments with eased transitions plus a light oscillation; starts
/// and ends at the neutral level 0.
fn action_waveform(spec: &SynthSpec, postures: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = spec.axes;
    let mut seq: Vec<usize> = Vec::with_capacity(spec.segments_per_action);
    while seq.len() < spec.segments_per_action {
        let p = rng.random_range(0..spec.postures as u64) as usize;
        if seq.last() != Some(&p) {
            seq.push(p);
        }
    }
    let osc: Vec<(f64, f64)> = (0..a)
        .map(|_| (rng.random_range(1..=2u32) as f64, rng.random_range(0.0..2.0 * PI)))
        .collect();
    let len = spec.segment_len;
    let ramp = (len / 3).max(1);
    let zero = vec![0.0; a];
    let mut out = Vec::with_capacity(seq.len() * len * a);
    for (s, &p) in seq.iter().enumerate() {
        let from = if s == 0 { &zero } else { &postures[seq[s - 1]] };
        let to = &postures[p];
        let last = s + 1 == seq.len();
        for i in 0..len {
            let u = i as f64 / len as f64;
            for ax in 0..a {
                let mut v = if i < ramp {
                    ease(from[ax], to[ax], i as f64 / ramp as f64)
                } else {
                    to[ax]
                };
                if last && i >= len - ramp {
                    v = ease(to[ax], 0.0, (i + ramp + 1 - len) as f64 / ramp as f64);
                }
                let (cycles, phase) = osc[ax];
                out.push(v + spec.motion * (2.0 * PI * cycles * u + phase).sin());
            }
        }
    }
    out
}

fn build_templates(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Vec<ActionTemplate>, Vec<OperationTemplate>) {
    let postures: Vec<Vec<f64>> = (0..spec.postures)
        .map(|_| (0..spec.axes).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let templates: Vec<ActionTemplate> = (0..spec.n_actions())
        .map(|id| ActionTemplate {
            id,
            len: spec.segments_per_action * spec.segment_len,
            waveform: action_waveform(spec, &postures, rng),
        })
        .collect();
    let shared_base = spec.classes * spec.mandatory_per_operation;
    let operations = (0..spec.classes)
        .map(|c| {
            let mut actions: Vec<ActionSlot> = (0..spec.mandatory_per_operation)
                .map(|k| ActionSlot {
                    action: c * spec.mandatory_per_operation + k,
                    optional: false,
                })
                .collect();
            for _ in 0..spec.optional_per_operation {
                actions.push(ActionSlot {
                    action: shared_base + rng.random_range(0..spec.shared_actions as u64) as usize,
                    optional: true,
                });
            }
            actions.shuffle(rng);
            OperationTemplate { class: c as u32, actions }
        })
        .collect();
    (templates, operations)
}

/// Linear-interpolation resampling of a `[len × A]` waveform to `new_len` rows.
fn time_warp(w: &[f64], len: usize, axes: usize, new_len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(new_len * axes);
    for i in 0..new_len {
        let pos = if new_len == 1 {
            0.0
        } else {
            i as f64 * (len - 1) as f64 / (new_len - 1) as f64
        };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        let frac = pos - lo as f64;
        for ax in 0..axes {
            out.push(w[lo * axes + ax] * (1.0 - frac) + w[hi * axes + ax] * frac);
        }
    }
    out
}

/// Generates the dataset (every period labeled, and in both role sets) and
/// its ground-truth sidecar. Equal `spec` and `seed` give identical output.
pub fn gen_dataset(spec: &SynthSpec, seed: u64) -> Result<(Dataset, SynthTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (templates, operations) = build_templates(spec, &mut rng);
    let a = spec.axes;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut periods = Vec::new();
    let mut truths = Vec::new();
    for w in 0..spec.workers {
        let scale: Vec<f64> = (0..a)
            .map(|_| sample_range(&mut rng, spec.worker_amplitude))
            .collect();
        for p in 0..spec.periods_per_worker {
            let mut order: Vec<usize> = (0..spec.classes).collect();
            order.shuffle(&mut rng);
            for _ in spec.classes..spec.operations_per_period {
                order.push(rng.random_range(0..spec.classes as u64) as usize);
            }
            let mut values: Vec<f64> = Vec::new();
            let mut labels: Vec<u32> = Vec::new();
            let mut spans = Vec::new();
            for &c in &order {
                let op = &operations[c];
                for slot in &op.actions {
                    if slot.optional && rng.random_bool(spec.optional_dropout) {
                        continue;
                    }
                    let gap = rng.random_range(spec.gap.0 as u64..=spec.gap.1 as u64) as usize;
                    values.extend(std::iter::repeat_n(0.0, gap * a));
                    let t = &templates[slot.action];
                    let factor = sample_range(&mut rng, spec.jitter);
                    let new_len = ((t.len as f64 * factor).round() as usize).max(2);
                    spans.push(ActionSpan {
                        action: slot.action,
                        class: op.class,
                        mandatory: !slot.optional,
                        start: values.len() / a,
                        len: new_len,
                    });
                    values.extend(time_warp(&t.waveform, t.len, a, new_len));
                    labels.extend(std::iter::repeat_n(op.class, values.len() / a - labels.len()));
                }
            }
            let len = labels.len();
            if len < spec.min_period_len {
                return Err(MoilError::PeriodTooShort {
                    period: format!("w{w}/p{p:02}"),
                    message: format!("generated {len} steps, at least {} required", spec.min_period_len),
                });
            }
            let drift: Vec<(f64, f64)> = (0..a)
                .map(|_| (rng.random_range(0.5..2.0), rng.random_range(0.0..2.0 * PI)))
                .collect();
            for t in 0..len {
                let u = t as f64 / len as f64;
                for ax in 0..a {
                    let v = &mut values[t * a + ax];
                    let (cycles, phase) = drift[ax];
                    *v = scale[ax] * *v + spec.drift * (2.0 * PI * cycles * u + phase).sin();
                    if spec.noise_sigma > 0.0 {
                        *v += noise.sample(&mut rng);
                    }
                }
            }
            let period = Period::new(format!("w{w}"), format!("p{p:02}"), a, values, spec.sample_rate_hz, Some(labels))?;
            truths.push(PeriodTruth {
                period_key: period.key(),
                spans,
            });
            periods.push(period);
        }
    }
    let axis_names = (0..a).map(|i| format!("acc_{}", ["x", "y", "z"].get(i).copied().unwrap_or("extra"))).collect::<Vec<_>>();
    let axis_names = if a <= 3 { axis_names } else { (0..a).map(|i| format!("axis_{i}")).collect() };
    let dataset = Dataset::with_axis_names(periods, axis_names)?.with_policy(RolePolicy::Overlapping)?;
    Ok((
        dataset,
        SynthTruth {
            seed,
            spec: spec.clone(),
            templates,
            operations,
            periods: truths,
        },
    ))
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Fraction of key motifs whose source span overlaps a mandatory action in
/// the initial period. A diagnostic of how well random selection landed on
/// characteristic actions.
pub fn ground_truth_motif_audit(truth: &SynthTruth, motifs: &MotifSet) -> Result<f64> {
    if motifs.motifs.is_empty() {
        return Err(MoilError::InvalidInput("no key motifs to audit".into()));
    }
    let mut hits = 0;
    for m in &motifs.motifs {
        let period = truth.period(&m.source_period).ok_or_else(|| {
            MoilError::InvalidInput(format!("period `{}` is not in the ground truth", m.source_period))
        })?;
        let (s, e) = (m.source_offset, m.source_offset + m.length);
        if period
            .spans
            .iter()
            .any(|sp| sp.mandatory && sp.start < e && s < sp.start + sp.len)
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / motifs.motifs.len() as f64)
}
