//! C ABI over the report generator.
//!
//! Every function returns a `GrStatus`; on failure the message is available
//! from `gr_last_error_message` on the same thread. Strings handed out by the
//! library are freed with `gr_string_free`, models with `gr_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use glaucoma_report::data::GlaucomaSample;
use glaucoma_report::metrics::evaluate_lines;
use glaucoma_report::model::ReportModel;
use glaucoma_report::train::checkpoint;
use glaucoma_report::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Bad input record, configuration or argument.
    Validation = 3,
    Io = 4,
    Checkpoint = 5,
    /// Numerical or internal failure while running.
    Runtime = 6,
    Panic = 7,
    /// Output buffer too small; nothing was written.
    BufferTooSmall = 8,
}

/// Opaque model handle.
pub struct GrModel {
    inner: ReportModel,
}

/// Corpus scores in [0, 1], CIDEr unscaled.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GrMetrics {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GrStatus {
    match e {
        Error::Io { .. } => GrStatus::Io,
        Error::Checkpoint(_) => GrStatus::Checkpoint,
        e if e.is_validation() => GrStatus::Validation,
        _ => GrStatus::Runtime,
    }
}

struct Fail(GrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside the library");
            GrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(GrStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(GrStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn model_arg<'a>(m: *const GrModel) -> Result<&'a ReportModel, Fail> {
    // SAFETY: non-null handles come from gr_model_load and are live until freed.
    unsafe { m.as_ref() }
        .map(|m| &m.inner)
        .ok_or_else(|| Fail(GrStatus::NullArgument, "model is null".into()))
}

fn null_out<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail(GrStatus::NullArgument, format!("{name} is null")));
    }
    Ok(())
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn gr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn gr_model_load(path: *const c_char, out: *mut *mut GrModel) -> GrStatus {
    guard(|| {
        null_out(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let inner = checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(GrModel { inner }));
        Ok(())
    })
}

/// Release a model. Null is accepted.
///
/// # Safety
/// `model` must be null or a handle from `gr_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gr_model_free(model: *mut GrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of label scores `gr_predict_labels` writes.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gr_model_label_count(model: *const GrModel, out: *mut usize) -> GrStatus {
    guard(|| {
        null_out(out, "out")?;
        *out = model_arg(model)?.labels.len();
        Ok(())
    })
}

/// Generate a report for one JSON record. The result is written to `*out`
/// and must be released with `gr_string_free`.
///
/// # Safety
/// `model` must be a live handle, `record_json` NUL-terminated, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gr_generate(
    model: *const GrModel,
    record_json: *const c_char,
    beam_width: usize,
    max_len: usize,
    out: *mut *mut c_char,
) -> GrStatus {
    guard(|| {
        null_out(out, "out")?;
        *out = ptr::null_mut();
        let m = model_arg(model)?;
        let text = str_arg(record_json, "record_json")?;
        if beam_width == 0 || max_len == 0 {
            return Err(Fail(GrStatus::Validation, "beam_width and max_len must be positive".into()));
        }
        let sample: GlaucomaSample =
            serde_json::from_str(text).map_err(|e| Fail(GrStatus::Validation, format!("record: {e}")))?;
        sample.validate()?;
        let ex = m.inference_example(&sample)?;
        *out = to_c(m.generate_text(&ex, beam_width, max_len)?);
        Ok(())
    })
}

/// Label scores of a report text, in the model's label order. `len` must be
/// at least `gr_model_label_count`.
///
/// # Safety
/// `model` must be a live handle, `report` NUL-terminated, `out` valid for
/// `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gr_predict_labels(
    model: *const GrModel,
    report: *const c_char,
    out: *mut f64,
    len: usize,
) -> GrStatus {
    guard(|| {
        null_out(out, "out")?;
        let m = model_arg(model)?;
        let text = str_arg(report, "report")?;
        if len < m.labels.len() {
            return Err(Fail(
                GrStatus::BufferTooSmall,
                format!("need {} slots, got {len}", m.labels.len()),
            ));
        }
        let scores = m.predict_labels(&m.vocab.encode(text))?;
        std::slice::from_raw_parts_mut(out, scores.len()).copy_from_slice(&scores);
        Ok(())
    })
}

/// Corpus scores of newline-separated candidates against references, one
/// reference per candidate line.
///
/// # Safety
/// Both strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gr_evaluate(candidates: *const c_char, references: *const c_char, out: *mut GrMetrics) -> GrStatus {
    guard(|| {
        null_out(out, "out")?;
        let lines = |s: &str| s.lines().map(str::to_string).collect::<Vec<_>>();
        let c = lines(str_arg(candidates, "candidates")?);
        let r = lines(str_arg(references, "references")?);
        let m = evaluate_lines(&c, &r)?;
        *out = GrMetrics {
            bleu1: m.b1,
            bleu2: m.b2,
            bleu3: m.b3,
            bleu4: m.b4,
            rouge_l: m.rouge_l,
            cider: m.cider,
        };
        Ok(())
    })
}

/// Release a string returned by the library. Null is accepted.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
