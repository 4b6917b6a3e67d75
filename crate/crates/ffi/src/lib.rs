//! C ABI over drssl-core.
//!
//! Every object crosses the boundary as an opaque handle created by a
//! `drssl_*_new`/`_load` call and released by the matching `_free`. Every
//! fallible call returns a [`DrsslStatus`]; on failure the message is kept
//! per thread and read with [`drssl_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::OnceLock;

use drssl_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use drssl_core::config::RunConfig;
use drssl_core::evalkit::{config_split, evaluate, predict, standardize_split};
use drssl_core::shiftdata::{load_dataset, save_dataset, Dataset, SslSplit};
use drssl_core::trainer::train;
use drssl_core::Error;

/// Result of every fallible call. Codes 1 to 3 match the command-line exit
/// statuses; 10 to 14 are the file-format codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrsslStatus {
    Ok = 0,
    /// Invalid argument or configuration.
    Usage = 1,
    /// Unreadable, malformed or inconsistent data.
    Data = 2,
    /// A loss or parameter became NaN or infinite.
    NonFinite = 3,
    /// A required pointer argument was null.
    NullPointer = 4,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 5,
    /// An output buffer has the wrong length.
    BufferSize = 6,
    /// Internal failure; the library caught a panic.
    Internal = 7,
    CorruptHeader = 10,
    UnsupportedVersion = 11,
    DimensionOverflow = 12,
    TruncatedPayload = 13,
    InvalidRecord = 14,
}

/// Resolved run configuration.
pub struct DrsslConfig(RunConfig);

/// Windows with their channels, length and class count.
pub struct DrsslDataset(Dataset);

/// Trained parameters plus the input standardization they expect.
pub struct DrsslModel(Checkpoint);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DrsslMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub n_samples: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(DrsslStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Format { source, .. } => format_status(source.code()),
            other => match other.exit_code() {
                1 => DrsslStatus::Usage,
                3 => DrsslStatus::NonFinite,
                _ => DrsslStatus::Data,
            },
        };
        Fail(status, e.to_string())
    }
}

fn format_status(code: i32) -> DrsslStatus {
    match code {
        10 => DrsslStatus::CorruptHeader,
        11 => DrsslStatus::UnsupportedVersion,
        12 => DrsslStatus::DimensionOverflow,
        13 => DrsslStatus::TruncatedPayload,
        _ => DrsslStatus::InvalidRecord,
    }
}

fn run(f: impl FnOnce() -> Result<(), Fail>) -> DrsslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DrsslStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            DrsslStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DrsslStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            DrsslStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn drssl_version() -> *const c_char {
    static V: OnceLock<CString> = OnceLock::new();
    V.get_or_init(|| CString::new(drssl_core::VERSION).expect("version has no nul"))
        .as_ptr()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn drssl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer to write the new handle to.
#[no_mangle]
pub unsafe extern "C" fn drssl_config_new(out: *mut *mut DrsslConfig) -> DrsslStatus {
    run(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        emit(out, DrsslConfig(RunConfig::default()));
        Ok(())
    })
}

/// Configuration parsed from `key = value` lines over the defaults.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drssl_config_parse(
    text: *const c_char,
    out: *mut *mut DrsslConfig,
) -> DrsslStatus {
    run(|| {
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        emit(out, DrsslConfig(RunConfig::from_text(text)?));
        Ok(())
    })
}

/// Sets one key. Unknown keys and unparsable values fail with
/// `DRSSL_STATUS_USAGE` and leave the configuration unchanged.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn drssl_config_set(
    cfg: *mut DrsslConfig,
    key: *const c_char,
    value: *const c_char,
) -> DrsslStatus {
    run(|| {
        let cfg = handle_mut(cfg, "cfg")?;
        let (key, value) = (str_arg(key, "key")?, str_arg(value, "value")?);
        let mut next = cfg.0.clone();
        next.set(key, value)?;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn drssl_config_free(cfg: *mut DrsslConfig) {
    free(cfg)
}

/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drssl_dataset_load(
    path: *const c_char,
    out: *mut *mut DrsslDataset,
) -> DrsslStatus {
    run(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        emit(out, DrsslDataset(load_dataset(path)?));
        Ok(())
    })
}

/// # Safety
/// `data` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn drssl_dataset_save(
    data: *const DrsslDataset,
    path: *const c_char,
) -> DrsslStatus {
    run(|| {
        let data = handle(data, "data")?;
        save_dataset(path_arg(path, "path")?, &data.0)?;
        Ok(())
    })
}

/// Number of windows, or 0 for NULL.
///
/// # Safety
/// `data` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn drssl_dataset_len(data: *const DrsslDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Writes channels, window length and class count. Any output may be NULL.
///
/// # Safety
/// `data` must come from this library; outputs must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn drssl_dataset_shape(
    data: *const DrsslDataset,
    channels: *mut usize,
    window_len: *mut usize,
    n_classes: *mut usize,
) -> DrsslStatus {
    run(|| {
        let d = &handle(data, "data")?.0;
        for (out, v) in [
            (channels, d.channels()),
            (window_len, d.window_len()),
            (n_classes, d.n_classes()),
        ] {
            if let Some(o) = out.as_mut() {
                *o = v;
            }
        }
        Ok(())
    })
}

/// Copies window `index` into `x` (channel-major, `len` = channels ×
/// window_len) and writes its label, or -1 when it has none.
///
/// # Safety
/// `x` must point to `len` writable doubles; `label` must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn drssl_dataset_window(
    data: *const DrsslDataset,
    index: usize,
    x: *mut f64,
    len: usize,
    label: *mut i32,
) -> DrsslStatus {
    run(|| {
        let d = &handle(data, "data")?.0;
        let w = d.windows().get(index).ok_or_else(|| {
            Fail(
                DrsslStatus::Usage,
                format!("window {index} out of range for {} windows", d.len()),
            )
        })?;
        let src = w.x.data();
        if len != src.len() {
            return Err(Fail(
                DrsslStatus::BufferSize,
                format!("buffer holds {len} values, window has {}", src.len()),
            ));
        }
        if x.is_null() {
            return Err(null("x"));
        }
        std::slice::from_raw_parts_mut(x, len).copy_from_slice(src);
        if let Some(l) = label.as_mut() {
            *l = w.label.map_or(-1, |c| c as i32);
        }
        Ok(())
    })
}

/// # Safety
/// `data` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn drssl_dataset_free(data: *mut DrsslDataset) {
    free(data)
}

/// Generates the synthetic task of `cfg` and splits it into labeled,
/// unlabeled and test sets, unstandardized. The unlabeled set carries no
/// labels.
///
/// # Safety
/// `cfg` must come from this library; the three outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn drssl_generate_split(
    cfg: *const DrsslConfig,
    labeled: *mut *mut DrsslDataset,
    unlabeled: *mut *mut DrsslDataset,
    test: *mut *mut DrsslDataset,
) -> DrsslStatus {
    run(|| {
        let cfg = handle(cfg, "cfg")?;
        if labeled.is_null() || unlabeled.is_null() || test.is_null() {
            return Err(null("output"));
        }
        let split = config_split(&cfg.0)?;
        emit(labeled, DrsslDataset(split.labeled));
        emit(unlabeled, DrsslDataset(split.unlabeled));
        emit(test, DrsslDataset(split.test));
        Ok(())
    })
}

/// Trains the variant configured in `cfg` on raw `labeled` and `unlabeled`
/// sets. The inputs are standardized with statistics from `labeled`, which
/// the model keeps and reapplies when predicting.
///
/// # Safety
/// `cfg`, `labeled` and `unlabeled` must come from this library; `out` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn drssl_train(
    cfg: *const DrsslConfig,
    labeled: *const DrsslDataset,
    unlabeled: *const DrsslDataset,
    out: *mut *mut DrsslModel,
) -> DrsslStatus {
    run(|| {
        let cfg = &handle(cfg, "cfg")?.0;
        let (l, u) = (
            &handle(labeled, "labeled")?.0,
            &handle(unlabeled, "unlabeled")?.0,
        );
        if out.is_null() {
            return Err(null("out"));
        }
        let raw = SslSplit {
            labeled: l.clone(),
            unlabeled: u.clone(),
            test: Dataset::new(l.channels(), l.window_len(), l.n_classes(), Vec::new())?,
        };
        let prepared = standardize_split(&raw)?;
        let (params, _) = train(
            &prepared.labeled,
            &prepared.unlabeled,
            &cfg.model,
            &cfg.train,
            None,
        )?;
        emit(
            out,
            DrsslModel(Checkpoint {
                params,
                standardizer: Some(prepared.standardizer),
            }),
        );
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drssl_model_load(
    path: *const c_char,
    out: *mut *mut DrsslModel,
) -> DrsslStatus {
    run(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        emit(out, DrsslModel(load_checkpoint(path)?));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn drssl_model_save(
    model: *const DrsslModel,
    path: *const c_char,
) -> DrsslStatus {
    run(|| {
        let model = handle(model, "model")?;
        save_checkpoint(path_arg(path, "path")?, &model.0)?;
        Ok(())
    })
}

/// Predicted class of every window of raw `data`; `len` must equal its
/// window count.
///
/// # Safety
/// `model` and `data` must come from this library; `labels` must point to
/// `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn drssl_model_predict(
    model: *const DrsslModel,
    data: *const DrsslDataset,
    labels: *mut u32,
    len: usize,
) -> DrsslStatus {
    run(|| {
        let model = &handle(model, "model")?.0;
        let data = &handle(data, "data")?.0;
        if len != data.len() {
            return Err(Fail(
                DrsslStatus::BufferSize,
                format!("buffer holds {len} labels, dataset has {}", data.len()),
            ));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let pred = predict(&model.params, &model.prepare(data)?)?;
        for (o, p) in std::slice::from_raw_parts_mut(labels, len)
            .iter_mut()
            .zip(pred)
        {
            *o = p as u32;
        }
        Ok(())
    })
}

/// Scores the model on raw labeled `data`.
///
/// # Safety
/// `model` and `data` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn drssl_model_evaluate(
    model: *const DrsslModel,
    data: *const DrsslDataset,
    out: *mut DrsslMetrics,
) -> DrsslStatus {
    run(|| {
        let model = &handle(model, "model")?.0;
        let data = &handle(data, "data")?.0;
        let out = handle_mut(out, "out")?;
        let m = evaluate(&model.params, &model.prepare(data)?)?;
        *out = DrsslMetrics {
            accuracy: m.accuracy,
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            n_samples: m.n_samples,
        };
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn drssl_model_free(model: *mut DrsslModel) {
    free(model)
}
