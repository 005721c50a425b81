//! C interface to the orderbench harness.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free` function. Strings handed out by this library must be
//! released with [`ob_string_free`]. Every fallible call returns an
//! [`ObStatus`]; on failure [`ob_last_error`] describes what went wrong.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use orderbench::cli::run_cli;
use orderbench::datasets::load_dataset;
use orderbench::stats::pearson;
use orderbench::{DatasetDescriptor, FormatId, LoadedDataset, PromptOrder, Question, TemplateSet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    OutOfRange = 4,
    Dataset = 5,
    Prompt = 6,
    Stats = 7,
    Panic = 99,
}

/// A loaded, normalised dataset.
pub struct ObDataset {
    inner: LoadedDataset,
    templates: TemplateSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(ObStatus, String);

type Res<T> = Result<T, Fail>;

fn fail<T>(status: ObStatus, msg: impl Into<String>) -> Res<T> {
    Err(Fail(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Res<()>) -> ObStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ObStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ObStatus::Panic
        }
    }
}

unsafe fn arg_str<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    if p.is_null() {
        return fail(ObStatus::NullArgument, format!("{what} is NULL"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ObStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Res<&'a mut T> {
    p.as_mut().ok_or_else(|| Fail(ObStatus::NullArgument, format!("{what} is NULL")))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

unsafe fn question<'a>(ds: *const ObDataset, index: usize) -> Res<(&'a ObDataset, &'a Question)> {
    let ds = ds.as_ref().ok_or_else(|| Fail(ObStatus::NullArgument, "dataset is NULL".into()))?;
    match ds.inner.questions.get(index) {
        Some(q) => Ok((ds, q)),
        None => fail(ObStatus::OutOfRange, format!("index {index} out of range ({})", ds.inner.questions.len())),
    }
}

fn parse_order(s: &str) -> Res<PromptOrder> {
    s.parse().map_err(|e: String| Fail(ObStatus::InvalidArgument, e))
}

/// Message for the most recent failure on this thread, or "" after a success.
/// Borrowed; valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ob_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ob_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads `path` in `format` (`mmlu_csv`, `truthfulqa_mc`, `logiqa_txt`,
/// `canonical_jsonl`), keeping the first `limit` questions (0 keeps all).
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ob_dataset_load(
    name: *const c_char,
    format: *const c_char,
    path: *const c_char,
    limit: usize,
    out: *mut *mut ObDataset,
) -> ObStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let name = arg_str(name, "name")?;
        let format: FormatId = arg_str(format, "format")?
            .parse()
            .map_err(|e: String| Fail(ObStatus::InvalidArgument, e))?;
        let path = PathBuf::from(arg_str(path, "path")?);
        let inner = load_dataset(&DatasetDescriptor::new(name, format, path, limit))
            .map_err(|e| Fail(ObStatus::Dataset, e.to_string()))?;
        *out = Box::into_raw(Box::new(ObDataset { inner, templates: TemplateSet::builtin() }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a live handle from [`ob_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn ob_dataset_len(ds: *const ObDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.questions.len())
}

/// # Safety
/// `ds` must be NULL or a handle from [`ob_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ob_dataset_free(ds: *mut ObDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Question `index` as one canonical JSON record.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ob_dataset_question_json(ds: *const ObDataset, index: usize, out: *mut *mut c_char) -> ObStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let (_, q) = question(ds, index)?;
        let json = serde_json::to_string(q).map_err(|e| Fail(ObStatus::Dataset, e.to_string()))?;
        *out = to_c(json);
        Ok(())
    })
}

/// Prompt text for question `index` under `order` (`raw`, `answer_first`, `logic_first`).
///
/// # Safety
/// `ds` must be a live handle; `order` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ob_render_variant(
    ds: *const ObDataset,
    index: usize,
    order: *const c_char,
    out: *mut *mut c_char,
) -> ObStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let (ds, q) = question(ds, index)?;
        let order = parse_order(arg_str(order, "order")?)?;
        let p = ds.templates.render_variant(q, order).map_err(|e| Fail(ObStatus::Prompt, e.to_string()))?;
        *out = to_c(p.text);
        Ok(())
    })
}

/// Reflexive prompt for question `index`. Result 1 is the answer-first
/// response, Result 2 the logic-first response.
///
/// # Safety
/// `ds` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ob_render_reflexive(
    ds: *const ObDataset,
    index: usize,
    answer_first: *const c_char,
    logic_first: *const c_char,
    out: *mut *mut c_char,
) -> ObStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let (ds, q) = question(ds, index)?;
        let af = arg_str(answer_first, "answer_first")?;
        let lf = arg_str(logic_first, "logic_first")?;
        let p = ds.templates.render_reflexive(q, af, lf).map_err(|e| Fail(ObStatus::Prompt, e.to_string()))?;
        *out = to_c(p.text);
        Ok(())
    })
}

/// Extracts the option label `text` selects for question `index`.
/// `*out_label` is NULL when nothing could be parsed.
///
/// # Safety
/// `ds` must be a live handle; strings NUL-terminated; `out_label` writable.
#[no_mangle]
pub unsafe extern "C" fn ob_extract(
    ds: *const ObDataset,
    index: usize,
    text: *const c_char,
    order: *const c_char,
    out_label: *mut *mut c_char,
) -> ObStatus {
    guard(|| {
        let out = out_ptr(out_label, "out_label")?;
        *out = ptr::null_mut();
        let (_, q) = question(ds, index)?;
        let text = arg_str(text, "text")?;
        let order = parse_order(arg_str(order, "order")?)?;
        let got = orderbench::extract_answer(text, &q.option_labels(), &q.option_texts(), order);
        if let Some(label) = got.label {
            *out = to_c(label);
        }
        Ok(())
    })
}

/// Pearson correlation of two series of length `n`.
///
/// # Safety
/// `x` and `y` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ob_pearson(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> ObStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if x.is_null() || y.is_null() {
            return fail(ObStatus::NullArgument, "series pointer is NULL");
        }
        let (x, y) = (std::slice::from_raw_parts(x, n), std::slice::from_raw_parts(y, n));
        *out = pearson(x, y).map_err(|e| Fail(ObStatus::Stats, e.to_string()))?;
        Ok(())
    })
}

/// Runs the benchmark described by the TOML file at `config_path`, the same
/// as `orderbench run`. `output_dir` may be NULL to use the configured one.
/// Returns the command's exit code; on 0, `*out_run_dir` holds the run
/// directory, otherwise [`ob_last_error`] holds the diagnostics.
///
/// # Safety
/// Strings must be NUL-terminated; `out_run_dir` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ob_run(
    config_path: *const c_char,
    output_dir: *const c_char,
    offline: bool,
    out_run_dir: *mut *mut c_char,
) -> i32 {
    let mut code = 2;
    let status = guard(|| {
        let out = out_ptr(out_run_dir, "out_run_dir")?;
        *out = ptr::null_mut();
        let mut args = vec!["orderbench".to_string(), "--config".into(), arg_str(config_path, "config_path")?.into()];
        if !output_dir.is_null() {
            args.push("--output-dir".into());
            args.push(arg_str(output_dir, "output_dir")?.into());
        }
        if offline {
            args.push("--offline".into());
        }
        args.push("run".into());
        let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
        code = run_cli(args, &mut stdout, &mut stderr);
        if code != 0 {
            return fail(ObStatus::InvalidArgument, String::from_utf8_lossy(&stderr).trim().to_string());
        }
        let stdout = String::from_utf8_lossy(&stdout);
        *out = to_c(stdout.lines().next().unwrap_or_default().to_string());
        Ok(())
    });
    if status == ObStatus::Panic {
        code = 1;
    }
    code
}
