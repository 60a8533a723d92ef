//! C interface to `moil`.
//!
//! Every fallible function returns a [`MoilStatus`]; on failure the message
//! is available from [`moil_last_error`] on the same thread until the next
//! call. Objects are opaque handles released with their `_free` function.
//! Numeric arrays are row-major `[T × A]` and caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use moil::config::RunConfig;
use moil::data::{load_csv, symbol_of, CsvSchema, Dataset, Period, SymbolicSeries};
use moil::downstream::{predict, ClassifierArtifact};
use moil::model::Checkpoint;
use moil::motif::{similarity_series_raw, Motif, MotifSet};
use moil::nn::Tensor;
use moil::pipeline::{mine, prepare};
use moil::synth::{gen_dataset, SynthSpec};
use moil::MoilError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoilStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Load = 3,
    Format = 4,
    InvalidInput = 5,
    Config = 6,
    Shape = 7,
    PeriodTooShort = 8,
    EmptyGroup = 9,
    Training = 10,
    Integrity = 11,
    MissingArtifact = 12,
    Io = 13,
    Json = 14,
    Csv = 15,
    Panic = 16,
}

impl From<&MoilError> for MoilStatus {
    fn from(e: &MoilError) -> Self {
        match e {
            MoilError::Load { .. } => MoilStatus::Load,
            MoilError::Format { .. } => MoilStatus::Format,
            MoilError::InvalidInput(_) => MoilStatus::InvalidInput,
            MoilError::Config(_) => MoilStatus::Config,
            MoilError::Shape(_) => MoilStatus::Shape,
            MoilError::PeriodTooShort { .. } => MoilStatus::PeriodTooShort,
            MoilError::EmptyGroup { .. } => MoilStatus::EmptyGroup,
            MoilError::Training(_) => MoilStatus::Training,
            MoilError::Integrity(_) => MoilStatus::Integrity,
            MoilError::MissingArtifact { .. } => MoilStatus::MissingArtifact,
            MoilError::Io(_) => MoilStatus::Io,
            MoilError::Json(_) => MoilStatus::Json,
            MoilError::Csv(_) => MoilStatus::Csv,
        }
    }
}

/// A set of recording periods.
pub struct MoilDataset(Dataset);

/// Key motifs selected from unlabeled data.
pub struct MoilMotifSet {
    set: MotifSet,
    hash: CString,
}

/// A pretrained encoder checkpoint.
pub struct MoilModel(Checkpoint);

/// A downstream classifier trained over a frozen encoder.
pub struct MoilClassifier(ClassifierArtifact);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MoilStatus, String);

impl From<MoilError> for Failure {
    fn from(e: MoilError) -> Self {
        Failure(MoilStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> MoilStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MoilStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MoilStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MoilStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(MoilStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn matrix_len(len: usize, axes: usize) -> FfiResult<usize> {
    if len == 0 || axes == 0 {
        return Err(Failure(MoilStatus::Shape, "length and axis count must be positive".into()));
    }
    len.checked_mul(axes)
        .ok_or_else(|| Failure(MoilStatus::Shape, "array size overflows".into()))
}

fn config_arg(toml: *const c_char) -> FfiResult<RunConfig> {
    if toml.is_null() {
        return Ok(RunConfig::desk());
    }
    Ok(RunConfig::from_toml_str(unsafe { str_arg(toml, "config_toml")? })?)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn moil_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn moil_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a sensor CSV (`worker_id,period_id,t,<axes>[,label]`).
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moil_dataset_load_csv(path: *const c_char, out: *mut *mut MoilDataset) -> MoilStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let ds = load_csv(&path, &CsvSchema::default())?;
        *out = Box::into_raw(Box::new(MoilDataset(ds)));
        Ok(())
    })
}

/// Generates the default synthetic dataset for `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moil_dataset_synth(seed: u64, out: *mut *mut MoilDataset) -> MoilStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (ds, _) = gen_dataset(&SynthSpec::default(), seed)?;
        *out = Box::into_raw(Box::new(MoilDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live dataset handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moil_dataset_period_count(ds: *const MoilDataset, count: *mut usize) -> MoilStatus {
    guard(|| {
        *out_ptr(count, "count")? = handle(ds, "ds")?.0.periods().len();
        Ok(())
    })
}

/// Number of time steps and axes of period `index`.
///
/// # Safety
/// `ds` must be a live dataset handle; `len` and `axes` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moil_dataset_period_shape(
    ds: *const MoilDataset,
    index: usize,
    len: *mut usize,
    axes: *mut usize,
) -> MoilStatus {
    guard(|| {
        let p = period(handle(ds, "ds")?, index)?;
        *out_ptr(len, "len")? = p.len();
        *out_ptr(axes, "axes")? = p.n_axes();
        Ok(())
    })
}

fn period(ds: &MoilDataset, index: usize) -> FfiResult<&Period> {
    ds.0.periods().get(index).ok_or_else(|| {
        Failure(
            MoilStatus::InvalidInput,
            format!("period index {index} out of range ({} periods)", ds.0.periods().len()),
        )
    })
}

/// Copies the `[len × axes]` values of period `index` into `values`, which
/// holds `capacity` doubles.
///
/// # Safety
/// `ds` must be a live dataset handle and `values` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn moil_dataset_period_values(
    ds: *const MoilDataset,
    index: usize,
    values: *mut f64,
    capacity: usize,
) -> MoilStatus {
    guard(|| {
        let p = period(handle(ds, "ds")?, index)?;
        if capacity < p.values().len() {
            return Err(Failure(
                MoilStatus::Shape,
                format!("buffer holds {capacity} values, period has {}", p.values().len()),
            ));
        }
        slice_mut(values, p.values().len(), "values")?.copy_from_slice(p.values());
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn moil_dataset_free(ds: *mut MoilDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Equal-width symbols of values already normalized to `[0, 1]`.
///
/// # Safety
/// `values` and `symbols` must each hold `len * axes` elements.
#[no_mangle]
pub unsafe extern "C" fn moil_symbolize(
    values: *const f64,
    len: usize,
    axes: usize,
    alphabet_size: usize,
    symbols: *mut u8,
) -> MoilStatus {
    guard(|| {
        let n = matrix_len(len, axes)?;
        if !(2..=256).contains(&alphabet_size) {
            return Err(Failure(MoilStatus::InvalidInput, format!("alphabet size {alphabet_size} outside 2..=256")));
        }
        let values = slice(values, n, "values")?;
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Failure(MoilStatus::InvalidInput, format!("value {v} outside [0, 1]; normalize first")));
        }
        let out = slice_mut(symbols, n, "symbols")?;
        for (o, &v) in out.iter_mut().zip(values) {
            *o = symbol_of(v, alphabet_size);
        }
        Ok(())
    })
}

/// Per-axis raw similarity of a motif to every window of a symbolic series:
/// writes `(series_len - motif_len) * axes` values, row `t` holding minus
/// the number of mismatched symbols in the window starting at `t`.
///
/// # Safety
/// `motif` holds `motif_len * axes` symbols, `series` holds
/// `series_len * axes`, and `out` holds `(series_len - motif_len) * axes`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn moil_similarity_raw(
    motif: *const u8,
    motif_len: usize,
    series: *const u8,
    series_len: usize,
    axes: usize,
    alphabet_size: usize,
    out: *mut f64,
) -> MoilStatus {
    guard(|| {
        let m = Motif {
            length: motif_len,
            n_axes: axes,
            symbols: slice(motif, matrix_len(motif_len, axes)?, "motif")?.to_vec(),
            source_period: String::new(),
            source_offset: 0,
            segment_group: 0,
        };
        let s = slice(series, matrix_len(series_len, axes)?, "series")?.to_vec();
        let s = SymbolicSeries::from_symbols("", alphabet_size, axes, s)?;
        let raw = similarity_series_raw(&m, &s)?;
        slice_mut(out, raw.len(), "out")?.copy_from_slice(&raw);
        Ok(())
    })
}

/// Selects key motifs from the dataset's unlabeled periods. `config_toml`
/// is a full run configuration, or null for the desk preset.
///
/// # Safety
/// `ds` must be a live dataset handle, `config_toml` null or nul-terminated,
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moil_motifs_mine(
    ds: *const MoilDataset,
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut MoilMotifSet,
) -> MoilStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ds = handle(ds, "ds")?;
        let cfg = config_arg(config_toml)?;
        let periods: Vec<&Period> = ds.0.unlabeled().collect();
        let prepared = prepare(&periods, cfg.motifs.alphabet_size)?;
        *out = motif_handle(mine(&cfg, &prepared, seed)?);
        Ok(())
    })
}

fn motif_handle(set: MotifSet) -> *mut MoilMotifSet {
    let hash = CString::new(set.hash.clone()).expect("hex hash");
    Box::into_raw(Box::new(MoilMotifSet { set, hash }))
}

/// # Safety
/// `path` must be nul-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moil_motifs_load(path: *const c_char, out: *mut *mut MoilMotifSet) -> MoilStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = MotifSet::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = motif_handle(set);
        Ok(())
    })
}

/// # Safety
/// `ms` must be a live motif-set handle and `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn moil_motifs_save(ms: *const MoilMotifSet, path: *const c_char) -> MoilStatus {
    guard(|| {
        let ms = handle(ms, "ms")?;
        ms.set.save(&PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `ms` must be a live motif-set handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moil_motifs_count(ms: *const MoilMotifSet, count: *mut usize) -> MoilStatus {
    guard(|| {
        *out_ptr(count, "count")? = handle(ms, "ms")?.set.motifs.len();
        Ok(())
    })
}

/// Content hash of the motif set as lowercase hex, owned by the handle.
/// Null if `ms` is null.
///
/// # Safety
/// `ms` must be null or a live motif-set handle.
#[no_mangle]
pub unsafe extern "C" fn moil_motifs_hash(ms: *const MoilMotifSet) -> *const c_char {
    ms.as_ref().map_or(ptr::null(), |m| m.hash.as_ptr())
}

/// # Safety
/// `ms` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn moil_motifs_free(ms: *mut MoilMotifSet) {
    if !ms.is_null() {
        drop(Box::from_raw(ms));
    }
}

/// Loads a pretraining checkpoint, verifying its encoder hash.
///
/// # Safety
/// `path` must be nul-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moil_model_load(path: *const c_char, out: *mut *mut MoilModel) -> MoilStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ckpt = Checkpoint::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(MoilModel(ckpt)));
        Ok(())
    })
}

/// Input axis count and per-step feature width of the encoder.
///
/// # Safety
/// `model` must be a live model handle; `axes` and `dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moil_model_dims(model: *const MoilModel, axes: *mut usize, dim: *mut usize) -> MoilStatus {
    guard(|| {
        let net = &handle(model, "model")?.0.net;
        *out_ptr(axes, "axes")? = net.in_axes;
        *out_ptr(dim, "dim")? = net.config.feature_dim();
        Ok(())
    })
}

/// Encodes one `[len × axes]` window of normalized values into
/// `[len × dim]` features.
///
/// # Safety
/// `model` must be a live model handle, `values` must hold `len * axes`
/// doubles and `features` `len * dim`.
#[no_mangle]
pub unsafe extern "C" fn moil_model_encode(
    model: *const MoilModel,
    values: *const f64,
    len: usize,
    axes: usize,
    features: *mut f64,
) -> MoilStatus {
    guard(|| {
        let net = &handle(model, "model")?.0.net;
        let x = slice(values, matrix_len(len, axes)?, "values")?.to_vec();
        let f = net.encode(&Tensor::new(vec![1, len, axes], x)?)?;
        slice_mut(features, f.len(), "features")?.copy_from_slice(f.data());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn moil_model_free(model: *mut MoilModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `path` must be nul-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moil_classifier_load(path: *const c_char, out: *mut *mut MoilClassifier) -> MoilStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let art = ClassifierArtifact::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(MoilClassifier(art)));
        Ok(())
    })
}

/// # Safety
/// `cls` must be a live classifier handle; `classes` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moil_classifier_classes(cls: *const MoilClassifier, classes: *mut usize) -> MoilStatus {
    guard(|| {
        *out_ptr(classes, "classes")? = handle(cls, "cls")?.0.classifier.classes;
        Ok(())
    })
}

/// Per-step class labels for a normalized `[len × axes]` recording. Fails
/// with `Integrity` unless the classifier was trained on this encoder.
///
/// # Safety
/// Handles must be live, `values` must hold `len * axes` doubles and
/// `labels` `len` integers.
#[no_mangle]
pub unsafe extern "C" fn moil_classifier_predict(
    cls: *const MoilClassifier,
    model: *const MoilModel,
    values: *const f64,
    len: usize,
    axes: usize,
    labels: *mut u32,
) -> MoilStatus {
    guard(|| {
        let art = &handle(cls, "cls")?.0;
        let ckpt = &handle(model, "model")?.0;
        if art.encoder_hash != ckpt.encoder_hash {
            return Err(Failure(
                MoilStatus::Integrity,
                "classifier was trained over a different encoder".into(),
            ));
        }
        let x = slice(values, matrix_len(len, axes)?, "values")?.to_vec();
        let p = Period::new("ffi", "input", axes, x, 1.0, None)?;
        let pred = predict(&ckpt.net.encoder, &art.classifier, &p)?;
        slice_mut(labels, len, "labels")?.copy_from_slice(&pred);
        Ok(())
    })
}

/// # Safety
/// `cls` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn moil_classifier_free(cls: *mut MoilClassifier) {
    if !cls.is_null() {
        drop(Box::from_raw(cls));
    }
}
