//! C interface to `oak-core`.
//!
//! Datasets are held behind an opaque `OakBundle` handle. Every fallible call returns an
//! `OakStatus`; on failure the message is available from `oak_last_error` until the next
//! call on the same thread. Strings handed out by the library are freed with
//! `oak_string_free`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use oak_core::cli::{self, Bundle, GenFile, Method};
use oak_core::error::Error;
use oak_core::training::TrainConfig;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OakStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Data = 5,
    Training = 6,
    Integrity = 7,
    Evaluation = 8,
    Internal = 9,
}

/// Method tags accepted by `oak_train` and `oak_evaluate`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OakMethod {
    Oak = 0,
    Gcd = 1,
    SsKmeans = 2,
    ZeroShot = 3,
    ZeroShotVocab = 4,
}

impl From<OakMethod> for Method {
    fn from(m: OakMethod) -> Self {
        match m {
            OakMethod::Oak => Method::Oak,
            OakMethod::Gcd => Method::Gcd,
            OakMethod::SsKmeans => Method::SsKmeans,
            OakMethod::ZeroShot => Method::ZeroShot,
            OakMethod::ZeroShotVocab => Method::ZeroShotVocab,
        }
    }
}

/// A loaded dataset directory with its frozen encoder.
pub struct OakBundle {
    inner: Bundle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OakStatus {
    match e {
        Error::Config(_) => OakStatus::Config,
        Error::Io { .. } => OakStatus::Io,
        Error::Data(_) | Error::Parse { .. } | Error::Format(_) | Error::Synth(_) => OakStatus::Data,
        Error::Training(_) | Error::Objective(_) | Error::Numeric(_) | Error::Backbone(_) | Error::Discovery(_) => OakStatus::Training,
        Error::Integrity(_) => OakStatus::Integrity,
        Error::Evaluation(_) | Error::Saliency(_) => OakStatus::Evaluation,
    }
}

enum Fail {
    Null(&'static str),
    Utf8(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OakStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OakStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            OakStatus::NullPointer
        }
        Ok(Err(Fail::Utf8(what))) => {
            set_error(format!("{what} is not valid UTF-8"));
            OakStatus::InvalidUtf8
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal error".into());
            OakStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8(what))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn bundle_arg<'a>(p: *const OakBundle) -> Result<&'a Bundle, Fail> {
    p.as_ref().map(|b| &b.inner).ok_or(Fail::Null("bundle"))
}

unsafe fn give_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output string"));
    }
    *out = CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw();
    Ok(())
}

fn train_config(bundle: &Bundle, text: Option<&str>, method: Method, seed: u64) -> Result<TrainConfig, Error> {
    let mut cfg = TrainConfig::for_dataset_size(bundle.ds.len());
    if let Some(t) = text {
        cfg.apply_text(t)?;
    }
    cfg.seed = seed;
    method.configure(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Message for the last failed call on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn oak_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn oak_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates a dataset into `out_dir` from generator config text (`key=value` lines; null
/// for defaults) and returns a handle to it.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oak_bundle_generate(config_text: *const c_char, out_dir: *const c_char, out: *mut *mut OakBundle) -> OakStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let file = match opt_str_arg(config_text, "config_text")? {
            Some(t) => GenFile::parse(t)?,
            None => GenFile::default(),
        };
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let inner = cli::generate(&file, &dir)?;
        *out = Box::into_raw(Box::new(OakBundle { inner }));
        Ok(())
    })
}

/// Opens a dataset directory written by `oak_bundle_generate` or `oak gen`.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oak_bundle_open(dir: *const c_char, out: *mut *mut OakBundle) -> OakStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let inner = Bundle::load(&PathBuf::from(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(OakBundle { inner }));
        Ok(())
    })
}

/// Releases a bundle. Null is ignored.
///
/// # Safety
/// `bundle` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn oak_bundle_free(bundle: *mut OakBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Number of items in the dataset; 0 for a null handle.
///
/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oak_bundle_len(bundle: *const OakBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.inner.ds.len())
}

/// Number of contexts; 0 for a null handle.
///
/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oak_bundle_context_count(bundle: *const OakBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.inner.ds.contexts.len())
}

/// Context id at `index` as a new string.
///
/// # Safety
/// `bundle` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oak_bundle_context_id(bundle: *const OakBundle, index: usize, out: *mut *mut c_char) -> OakStatus {
    guard(|| {
        let b = bundle_arg(bundle)?;
        let id = b.ds.contexts.get(index).map(|c| c.id.clone()).ok_or_else(|| Error::Config(format!("no context at index {index}")))?;
        give_string(out, id)
    })
}

/// Trains `context` with a token-learning method and writes the run into `out_dir`
/// (null for the default run directory). `config_text` holds training overrides or is null.
///
/// # Safety
/// `bundle` must be a live handle; strings must be null or NUL-terminated as documented.
#[no_mangle]
pub unsafe extern "C" fn oak_train(
    bundle: *const OakBundle,
    context: *const c_char,
    method: OakMethod,
    seed: u64,
    config_text: *const c_char,
    out_dir: *const c_char,
) -> OakStatus {
    guard(|| {
        let b = bundle_arg(bundle)?;
        let context = str_arg(context, "context")?;
        let method = Method::from(method);
        if !method.trains() {
            return Err(Error::Config(format!("method {method} has no training step")).into());
        }
        let cfg = train_config(b, opt_str_arg(config_text, "config_text")?, method, seed)?;
        let dir = match opt_str_arg(out_dir, "out_dir")? {
            Some(d) => PathBuf::from(d),
            None => b.run_dir(context, method, seed),
        };
        cli::train(b, context, &cfg, &dir)?;
        Ok(())
    })
}

/// Evaluates every context and returns the report as TSV. Token-learning methods read
/// their tokens from the default run directories. When `out_dir` is non-null the report
/// files are written there too.
///
/// # Safety
/// `bundle` must be a live handle; `report_tsv` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oak_evaluate(
    bundle: *const OakBundle,
    method: OakMethod,
    seed: u64,
    out_dir: *const c_char,
    report_tsv: *mut *mut c_char,
) -> OakStatus {
    guard(|| {
        let b = bundle_arg(bundle)?;
        let method = Method::from(method);
        let contexts = b.ds.context_ids();
        let n_init = train_config(b, None, method, seed)?.n_init;
        let report = cli::evaluate(b, method, seed, &contexts, &BTreeMap::new(), n_init)?;
        if let Some(d) = opt_str_arg(out_dir, "out_dir")? {
            report.write(&PathBuf::from(d))?;
        }
        give_string(report_tsv, report.render_tsv())
    })
}

/// Mean and sample standard deviation over `n` report TSV texts, as TSV.
///
/// # Safety
/// `reports` must point to `n` NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oak_aggregate(reports: *const *const c_char, n: usize, out: *mut *mut c_char) -> OakStatus {
    guard(|| {
        if reports.is_null() {
            return Err(Fail::Null("reports"));
        }
        let texts: Vec<String> = (0..n).map(|i| str_arg(*reports.add(i), "report").map(str::to_string)).collect::<Result<_, _>>()?;
        let agg = cli::aggregate_seeds(&texts)?;
        give_string(out, agg.render_tsv())
    })
}

/// Runs the command line with `argv[0..argc]` and returns its exit code.
///
/// # Safety
/// `argv` must point to `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn oak_run_cli(argc: c_int, argv: *const *const c_char) -> c_int {
    if argv.is_null() || argc < 1 {
        return 2;
    }
    let mut args = Vec::with_capacity(argc as usize);
    for i in 0..argc as usize {
        match str_arg(*argv.add(i), "argv") {
            Ok(s) => args.push(s.to_string()),
            Err(_) => return 2,
        }
    }
    catch_unwind(|| cli::dispatch(args)).unwrap_or(1)
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn oak_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
