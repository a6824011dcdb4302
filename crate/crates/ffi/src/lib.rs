//! C ABI for the emofuse library.
//!
//! Handles are opaque pointers owned by this library; every constructor
//! has a matching `_free`. Fallible functions return an `int` status
//! (`EMOFUSE_OK` on success) or a null pointer, and the thread-local
//! message behind [`emofuse_last_error`] describes the most recent
//! failure on the calling thread. Strings are UTF-8 and NUL-terminated;
//! strings returned by this library are freed with
//! [`emofuse_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::path::Path;
use std::ptr;

use emofuse::config::TrainConfig;
use emofuse::data::{PreparedSample, SynthSpec};
use emofuse::diffmath::Tensor;
use emofuse::encoders::FaceInput;
use emofuse::error::Error;
use emofuse::head::{hierarchical_loss, EmotionProbs};
use emofuse::model::Model;
use emofuse::run::{run_eval, run_train, DataSource};
use emofuse::taxonomy::{Polarity, Taxonomy};

pub const EMOFUSE_OK: c_int = 0;
pub const EMOFUSE_ERR_CHECK: c_int = 1;
pub const EMOFUSE_ERR_CONFIG: c_int = 2;
pub const EMOFUSE_ERR_DATA: c_int = 3;
pub const EMOFUSE_ERR_MODEL: c_int = 4;
pub const EMOFUSE_ERR_ARGUMENT: c_int = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_of(e: &Error) -> c_int {
    match e {
        Error::CheckFailed(_) => EMOFUSE_ERR_CHECK,
        Error::Data(_) | Error::NonFinite(_) => EMOFUSE_ERR_DATA,
        Error::ModelFormat(_) => EMOFUSE_ERR_MODEL,
        Error::Config(_) | Error::InvalidTaxonomy(_) => EMOFUSE_ERR_CONFIG,
        _ => EMOFUSE_ERR_ARGUMENT,
    }
}

fn fail(e: &Error) -> c_int {
    set_error(&e.to_string());
    code_of(e)
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or null.
unsafe fn opt_str<'a>(ptr: *const c_char) -> Result<Option<&'a str>, c_int> {
    if ptr.is_null() {
        return Ok(None);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(Some(s)),
        Err(_) => {
            set_error("string is not valid UTF-8");
            Err(EMOFUSE_ERR_ARGUMENT)
        }
    }
}

/// Message describing the most recent failure on this thread. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn emofuse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn emofuse_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must have been returned by an emofuse function and not freed yet.
#[no_mangle]
pub unsafe extern "C" fn emofuse_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Opaque emotion taxonomy handle.
pub struct EmofuseTaxonomy {
    inner: Taxonomy,
}

/// The Mikel eight-emotion wheel.
#[no_mangle]
pub extern "C" fn emofuse_taxonomy_mikel() -> *mut EmofuseTaxonomy {
    Box::into_raw(Box::new(EmofuseTaxonomy {
        inner: Taxonomy::mikel_default(),
    }))
}

/// Parse a taxonomy from its JSON config form. Null on error.
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn emofuse_taxonomy_from_json(json: *const c_char) -> *mut EmofuseTaxonomy {
    let Ok(Some(json)) = (unsafe { opt_str(json) }) else {
        set_error("taxonomy json is null or not UTF-8");
        return ptr::null_mut();
    };
    match Taxonomy::load(json) {
        Ok(t) => Box::into_raw(Box::new(EmofuseTaxonomy { inner: t })),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// Number of emotion categories.
///
/// # Safety
/// `t` must be a live taxonomy handle.
#[no_mangle]
pub unsafe extern "C" fn emofuse_taxonomy_count(t: *const EmofuseTaxonomy) -> usize {
    if t.is_null() {
        return 0;
    }
    unsafe { &*t }.inner.count()
}

/// Polarity of emotion `index`: 0 positive, 1 negative, -1 on error.
///
/// # Safety
/// `t` must be a live taxonomy handle.
#[no_mangle]
pub unsafe extern "C" fn emofuse_taxonomy_polarity(
    t: *const EmofuseTaxonomy,
    index: usize,
) -> c_int {
    if t.is_null() {
        set_error("null taxonomy");
        return -1;
    }
    match unsafe { &*t }.inner.polarity_of(index) {
        Ok(Polarity::Positive) => 0,
        Ok(Polarity::Negative) => 1,
        Err(e) => {
            set_error(&e.to_string());
            -1
        }
    }
}

/// # Safety
/// `t` must come from a taxonomy constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn emofuse_taxonomy_free(t: *mut EmofuseTaxonomy) {
    if !t.is_null() {
        drop(unsafe { Box::from_raw(t) });
    }
}

/// Loss decomposition: `l_total = l_emo + lambda * l_pol`.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct EmofuseLoss {
    pub l_emo: f64,
    pub l_pol: f64,
    pub lambda: f64,
    pub l_total: f64,
}

/// Hierarchical loss of a probability vector against a label.
///
/// # Safety
/// `probs` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn emofuse_hierarchical_loss(
    t: *const EmofuseTaxonomy,
    probs: *const f64,
    len: usize,
    label: usize,
    lambda: f64,
    out: *mut EmofuseLoss,
) -> c_int {
    if t.is_null() || probs.is_null() || out.is_null() {
        set_error("null argument");
        return EMOFUSE_ERR_ARGUMENT;
    }
    let taxonomy = &unsafe { &*t }.inner;
    let values = unsafe { std::slice::from_raw_parts(probs, len) }.to_vec();
    let result = Tensor::vector(values)
        .and_then(EmotionProbs::new)
        .and_then(|p| hierarchical_loss(taxonomy, &p, label, lambda));
    match result {
        Ok(b) => {
            unsafe {
                *out = EmofuseLoss {
                    l_emo: b.l_emo,
                    l_pol: b.l_pol,
                    lambda: b.lambda,
                    l_total: b.l_total,
                };
            }
            EMOFUSE_OK
        }
        Err(e) => fail(&e),
    }
}

/// Opaque trained-model handle.
pub struct EmofuseModel {
    inner: Model,
}

/// Load a model file. Null on error.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn emofuse_model_load(path: *const c_char) -> *mut EmofuseModel {
    let Ok(Some(path)) = (unsafe { opt_str(path) }) else {
        set_error("model path is null or not UTF-8");
        return ptr::null_mut();
    };
    match Model::load(Path::new(path)) {
        Ok(m) => Box::into_raw(Box::new(EmofuseModel { inner: m })),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// Number of emotion classes the model predicts.
///
/// # Safety
/// `m` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn emofuse_model_classes(m: *const EmofuseModel) -> usize {
    if m.is_null() {
        return 0;
    }
    unsafe { &*m }.inner.taxonomy().count()
}

/// Classify one sample from raw stimulus features.
///
/// `objects` is row-major `n_objects x object_len` and may be null when
/// `n_objects` is 0; `face` may be null for a faceless sample.
/// `probs_out` receives the full emotion distribution
/// (`emofuse_model_classes` doubles, taxonomy order).
///
/// # Safety
/// All pointers must satisfy the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn emofuse_model_predict(
    m: *const EmofuseModel,
    global: *const f64,
    global_len: usize,
    objects: *const f64,
    n_objects: usize,
    object_len: usize,
    face: *const f64,
    face_len: usize,
    probs_out: *mut f64,
) -> c_int {
    if m.is_null() || global.is_null() || probs_out.is_null() {
        set_error("null argument");
        return EMOFUSE_ERR_ARGUMENT;
    }
    if n_objects > 0 && objects.is_null() {
        set_error("objects is null but n_objects > 0");
        return EMOFUSE_ERR_ARGUMENT;
    }
    let model = &unsafe { &*m }.inner;

    let build = || -> Result<PreparedSample, Error> {
        let global = Tensor::vector(unsafe { std::slice::from_raw_parts(global, global_len) }.to_vec())?;
        let mut objs = Vec::with_capacity(n_objects);
        for i in 0..n_objects.min(model.n_max()) {
            let row = unsafe { std::slice::from_raw_parts(objects.add(i * object_len), object_len) };
            objs.push(Tensor::vector(row.to_vec())?);
        }
        let face = if face.is_null() {
            FaceInput::absent()
        } else {
            FaceInput::present(Tensor::vector(
                unsafe { std::slice::from_raw_parts(face, face_len) }.to_vec(),
            )?)
        };
        Ok(PreparedSample {
            label: 0, // unused by the forward pass
            global,
            objects: objs,
            face,
        })
    };
    let result = build().and_then(|sample| model.forward(&sample).map(|(p, _)| p));
    match result {
        Ok(probs) => {
            let out = unsafe { std::slice::from_raw_parts_mut(probs_out, probs.count()) };
            out.copy_from_slice(probs.as_tensor().as_slice());
            EMOFUSE_OK
        }
        Err(e) => fail(&e),
    }
}

/// # Safety
/// `m` must come from `emofuse_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn emofuse_model_free(m: *mut EmofuseModel) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Train a model. `config_json` null means defaults. Exactly one data
/// source: `data_path` for a JSONL fixture, else `synth_spec_json` (null
/// for both falls back to the builtin synthetic spec). Writes the model
/// file to `model_out` and, when non-null, the JSON report to
/// `report_out`.
///
/// # Safety
/// All strings must be valid NUL-terminated UTF-8 or null.
#[no_mangle]
pub unsafe extern "C" fn emofuse_train(
    config_json: *const c_char,
    data_path: *const c_char,
    synth_spec_json: *const c_char,
    model_out: *const c_char,
    report_out: *const c_char,
) -> c_int {
    let config_json = match unsafe { opt_str(config_json) } {
        Ok(s) => s,
        Err(code) => return code,
    };
    let data_path = match unsafe { opt_str(data_path) } {
        Ok(s) => s,
        Err(code) => return code,
    };
    let synth_spec_json = match unsafe { opt_str(synth_spec_json) } {
        Ok(s) => s,
        Err(code) => return code,
    };
    let Ok(Some(model_out)) = (unsafe { opt_str(model_out) }) else {
        set_error("model_out is null or not UTF-8");
        return EMOFUSE_ERR_ARGUMENT;
    };
    let report_out = match unsafe { opt_str(report_out) } {
        Ok(s) => s,
        Err(code) => return code,
    };

    let run = || -> Result<(), Error> {
        let cfg = match config_json {
            None => TrainConfig::default(),
            Some(text) => TrainConfig::from_json(text)?,
        };
        let source = match (data_path, synth_spec_json) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "pass either data_path or synth_spec_json, not both".into(),
                ))
            }
            (Some(path), None) => DataSource::Jsonl(path.into()),
            (None, Some(text)) => DataSource::Synth(SynthSpec::from_json(text)?),
            (None, None) => DataSource::Synth(SynthSpec::default()),
        };
        let outcome = run_train(&cfg, &source, |_| {})?;
        outcome.model.save(Path::new(model_out))?;
        if let Some(report_out) = report_out {
            std::fs::write(report_out, outcome.report.to_json())
                .map_err(|e| Error::Config(format!("cannot write {report_out}: {e}")))?;
        }
        Ok(())
    };
    match run() {
        Ok(()) => EMOFUSE_OK,
        Err(e) => fail(&e),
    }
}

/// Evaluate a model file on a JSONL fixture and return the metrics as a
/// JSON string (caller frees with `emofuse_string_free`). Null on error.
///
/// # Safety
/// Both paths must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn emofuse_eval(
    model_path: *const c_char,
    data_path: *const c_char,
) -> *mut c_char {
    let (Ok(Some(model_path)), Ok(Some(data_path))) =
        (unsafe { opt_str(model_path) }, unsafe { opt_str(data_path) })
    else {
        set_error("model_path/data_path is null or not UTF-8");
        return ptr::null_mut();
    };
    match run_eval(Path::new(model_path), Path::new(data_path)) {
        Ok(metrics) => {
            let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
            CString::new(json).expect("no NUL in json").into_raw()
        }
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// Run the full gradient verification. Returns `EMOFUSE_OK` when every
/// component matches finite differences, `EMOFUSE_ERR_CHECK` otherwise;
/// `max_rel_err_out` (nullable) receives the worst error seen.
///
/// # Safety
/// `max_rel_err_out` must be null or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn emofuse_grad_check(
    seed: u64,
    seeds_per_component: usize,
    max_rel_err_out: *mut f64,
) -> c_int {
    let report = emofuse::gradcheck::run_all(seed, seeds_per_component.max(1));
    let worst = report
        .components
        .iter()
        .map(|c| c.max_rel_err)
        .fold(0.0f64, f64::max);
    if !max_rel_err_out.is_null() {
        unsafe { *max_rel_err_out = worst };
    }
    if report.all_pass() {
        EMOFUSE_OK
    } else {
        let failing: Vec<&str> = report
            .components
            .iter()
            .filter(|c| !c.pass())
            .map(|c| c.component.as_str())
            .collect();
        set_error(&format!("gradient check failed for: {}", failing.join(", ")));
        EMOFUSE_ERR_CHECK
    }
}
