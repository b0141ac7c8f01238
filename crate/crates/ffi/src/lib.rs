//! C ABI over the simulator, the trace format and the checkers.
//!
//! Every fallible function returns an [`SsvsStatus`]. On failure a message
//! for the calling thread is available from [`ssvs_last_error`]. Strings
//! returned through out-parameters are owned by the caller and must be
//! released with [`ssvs_string_free`]; traces with [`ssvs_trace_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ssvs::label::{cmp_label, Label, LabelOrdering};
use ssvs::sim::{check, check_applicable, run, ScenarioConfig, Trace, Verdict};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsvsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The scenario could not be parsed or validated.
    InvalidConfig = 3,
    /// A trace could not be read or parsed.
    InvalidTrace = 4,
    UnknownProperty = 5,
    Io = 6,
    /// A label string could not be parsed.
    InvalidLabel = 7,
    /// The library panicked; the handle arguments should not be reused.
    Internal = 8,
}

/// Outcome of comparing two labels.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsvsOrdering {
    Less = -1,
    Equal = 0,
    Greater = 1,
    Incomparable = 2,
}

/// An opaque run trace.
pub struct SsvsTrace(Trace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SsvsStatus, String);

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SsvsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SsvsStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            SsvsStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SsvsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(SsvsStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn trace_arg<'a>(p: *const SsvsTrace) -> Result<&'a Trace, Failure> {
    p.as_ref()
        .map(|t| &t.0)
        .ok_or_else(|| Failure(SsvsStatus::NullArgument, "trace is null".into()))
}

fn null<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(SsvsStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior nul").into_raw()
}

fn run_config(json: &str, seed: Option<u64>) -> Result<Trace, Failure> {
    let bad = |e: ssvs::error::ConfigError| Failure(SsvsStatus::InvalidConfig, e.to_string());
    let mut cfg = ScenarioConfig::from_json(json).map_err(bad)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    run(cfg).map_err(bad)
}

/// Runs the scenario given as JSON with its own seed.
///
/// # Safety
/// `scenario_json` must be a nul-terminated string and `out` a valid
/// pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ssvs_run(scenario_json: *const c_char, out: *mut *mut SsvsTrace) -> SsvsStatus {
    guard(|| {
        null(out, "out")?;
        let t = run_config(str_arg(scenario_json, "scenario_json")?, None)?;
        *out = Box::into_raw(Box::new(SsvsTrace(t)));
        Ok(())
    })
}

/// Runs the scenario given as JSON with `seed` in place of its own seed.
///
/// # Safety
/// As for [`ssvs_run`].
#[no_mangle]
pub unsafe extern "C" fn ssvs_run_seeded(
    scenario_json: *const c_char,
    seed: u64,
    out: *mut *mut SsvsTrace,
) -> SsvsStatus {
    guard(|| {
        null(out, "out")?;
        let t = run_config(str_arg(scenario_json, "scenario_json")?, Some(seed))?;
        *out = Box::into_raw(Box::new(SsvsTrace(t)));
        Ok(())
    })
}

/// Reads a JSONL trace file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssvs_trace_load(path: *const c_char, out: *mut *mut SsvsTrace) -> SsvsStatus {
    guard(|| {
        null(out, "out")?;
        let p = str_arg(path, "path")?;
        let t = Trace::load(Path::new(p)).map_err(|e| {
            let code = match e {
                ssvs::error::TraceError::Io(_) => SsvsStatus::Io,
                _ => SsvsStatus::InvalidTrace,
            };
            Failure(code, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(SsvsTrace(t)));
        Ok(())
    })
}

/// Releases a trace. Null is ignored.
///
/// # Safety
/// `trace` must be null or a handle from this library that has not been
/// freed yet.
#[no_mangle]
pub unsafe extern "C" fn ssvs_trace_free(trace: *mut SsvsTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of event records in the trace.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssvs_trace_event_count(trace: *const SsvsTrace, out: *mut u64) -> SsvsStatus {
    guard(|| {
        null(out, "out")?;
        *out = trace_arg(trace)?.events.len() as u64;
        Ok(())
    })
}

/// Renders the trace as JSONL into a new string.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer. Free the
/// result with [`ssvs_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ssvs_trace_to_jsonl(trace: *const SsvsTrace, out: *mut *mut c_char) -> SsvsStatus {
    guard(|| {
        null(out, "out")?;
        let bytes = trace_arg(trace)?.to_jsonl();
        *out = c_string(String::from_utf8(bytes).expect("JSON is UTF-8"));
        Ok(())
    })
}

/// Writes the trace as JSONL to `path`.
///
/// # Safety
/// `trace` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ssvs_trace_write(trace: *const SsvsTrace, path: *const c_char) -> SsvsStatus {
    guard(|| {
        let t = trace_arg(trace)?;
        let p = str_arg(path, "path")?;
        std::fs::write(p, t.to_jsonl()).map_err(|e| Failure(SsvsStatus::Io, format!("{p}: {e}")))
    })
}

/// Checks `property` (or `"all"` for every property that applies) and
/// reports whether everything passed. If `verdicts_json` is not null it
/// receives a JSON array of `{property, pass, step, detail}` objects.
///
/// # Safety
/// `trace` must be a live handle, `property` a nul-terminated string and
/// `pass` a valid pointer. `verdicts_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn ssvs_check(
    trace: *const SsvsTrace,
    property: *const c_char,
    pass: *mut bool,
    verdicts_json: *mut *mut c_char,
) -> SsvsStatus {
    guard(|| {
        null(pass, "pass")?;
        let t = trace_arg(trace)?;
        let p = str_arg(property, "property")?;
        let vs: Vec<Verdict> = if p.eq_ignore_ascii_case("all") {
            check_applicable(t)
        } else {
            vec![check(t, p).map_err(|e| Failure(SsvsStatus::UnknownProperty, e.to_string()))?]
        };
        *pass = vs.iter().all(|v| v.pass);
        if !verdicts_json.is_null() {
            *verdicts_json = c_string(serde_json::to_string(&vs).expect("verdicts serialize"));
        }
        Ok(())
    })
}

/// Compares two labels in their text form `creator:sting:{a,b,...}`.
///
/// # Safety
/// `a` and `b` must be nul-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssvs_label_compare(a: *const c_char, b: *const c_char, out: *mut SsvsOrdering) -> SsvsStatus {
    guard(|| {
        null(out, "out")?;
        let parse = |s: &str| {
            s.parse::<Label>()
                .map_err(|e| Failure(SsvsStatus::InvalidLabel, format!("{s:?}: {e}")))
        };
        let (a, b) = (parse(str_arg(a, "a")?)?, parse(str_arg(b, "b")?)?);
        *out = match cmp_label(&a, &b) {
            LabelOrdering::Less => SsvsOrdering::Less,
            LabelOrdering::Equal => SsvsOrdering::Equal,
            LabelOrdering::Greater => SsvsOrdering::Greater,
            LabelOrdering::Incomparable => SsvsOrdering::Incomparable,
        };
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ssvs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssvs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn ssvs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
