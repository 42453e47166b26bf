//! C ABI over the engine: build an index from a corpus, open it, run
//! queries. Results cross the boundary as JSON strings; handles are opaque;
//! every function returns a [`TrexStatus`] and the last error message is
//! retrievable per thread.
//!
//! Memory rules: strings returned through `out` parameters are allocated by
//! this library and must be released with `trex_string_free`; engines with
//! `trex_engine_close`. Passing null where a value is required yields
//! `TREX_STATUS_NULL_ARGUMENT`, never a crash.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::c_char;

use trex_core::engine::{build_corpus_index, Engine, QueryMode, QueryOptions};
use trex_core::error::Error;
use trex_core::EngineConfig;

/// Result code of every C-ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrexStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    Internal = 5,
}

/// Retrieval mode for `trex_engine_query`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrexQueryMode {
    Trex = 0,
    Traversal = 1,
    Collapsed = 2,
}

/// Opaque engine handle.
pub struct TrexEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let cstring = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error message unavailable").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn status_for(error: &Error) -> TrexStatus {
    match error {
        Error::InvalidArgument(_) | Error::Config(_) | Error::ModelMismatch { .. } => {
            TrexStatus::InvalidArgument
        }
        Error::Io { .. }
        | Error::MalformedRecord { .. }
        | Error::DuplicateDocId { .. }
        | Error::MissingIndexFile(_)
        | Error::Http { .. } => TrexStatus::Io,
        Error::ChecksumMismatch { .. } | Error::VersionMismatch { .. } | Error::CorruptIndex(_) => {
            TrexStatus::Corrupt
        }
        _ => TrexStatus::Internal,
    }
}

fn fail(error: Error) -> TrexStatus {
    let status = status_for(&error);
    set_last_error(error.to_string());
    status
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, TrexStatus> {
    if ptr.is_null() {
        set_last_error(format!("{name} must not be null"));
        return Err(TrexStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_last_error(format!("{name} is not valid UTF-8"));
        TrexStatus::InvalidArgument
    })
}

unsafe fn optional_config(ptr: *const c_char) -> Result<EngineConfig, TrexStatus> {
    if ptr.is_null() {
        return Ok(EngineConfig::default());
    }
    let json = required_str(ptr, "config_json")?;
    let config: EngineConfig = serde_json::from_str(json).map_err(|e| {
        set_last_error(format!("config_json: {e}"));
        TrexStatus::InvalidArgument
    })?;
    config.validate().map_err(fail)?;
    Ok(config)
}

fn export_string(out: *mut *mut c_char, value: String) -> TrexStatus {
    if out.is_null() {
        return TrexStatus::Ok;
    }
    match CString::new(value.replace('\0', " ")) {
        Ok(cstring) => {
            unsafe { *out = cstring.into_raw() };
            TrexStatus::Ok
        }
        Err(_) => {
            set_last_error("output contained an interior NUL".into());
            TrexStatus::Internal
        }
    }
}

fn guarded<F: FnOnce() -> TrexStatus>(f: F) -> TrexStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("panic across FFI boundary".into());
            TrexStatus::Internal
        }
    }
}

/// Build the summary tree and index for a corpus and persist it to
/// `index_dir`. `config_json` may be null for defaults. On success, when
/// `out_report_json` is non-null it receives the build report as JSON.
///
/// # Safety
/// Pointer arguments must be null or valid NUL-terminated strings;
/// `out_report_json`, when non-null, must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn trex_build_index(
    corpus_path: *const c_char,
    index_dir: *const c_char,
    config_json: *const c_char,
    seed: u64,
    out_report_json: *mut *mut c_char,
) -> TrexStatus {
    guarded(|| {
        let corpus_path = match required_str(corpus_path, "corpus_path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let index_dir = match required_str(index_dir, "index_dir") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let config = match optional_config(config_json) {
            Ok(c) => c,
            Err(status) => return status,
        };
        match build_corpus_index(&config, Path::new(corpus_path), Path::new(index_dir), seed) {
            Ok(report) => match serde_json::to_string(&report) {
                Ok(json) => export_string(out_report_json, json),
                Err(e) => fail(Error::Internal(format!("serialize report: {e}"))),
            },
            Err(e) => fail(e),
        }
    })
}

/// Open a previously built index. The returned handle is thread-safe for
/// queries and must be released with `trex_engine_close`.
///
/// # Safety
/// `index_dir`/`config_json` must be null or valid NUL-terminated strings;
/// `out_engine` must be a valid, writable pointer.
#[no_mangle]
pub unsafe extern "C" fn trex_engine_open(
    index_dir: *const c_char,
    config_json: *const c_char,
    out_engine: *mut *mut TrexEngine,
) -> TrexStatus {
    guarded(|| {
        if out_engine.is_null() {
            set_last_error("out_engine must not be null".into());
            return TrexStatus::NullArgument;
        }
        let index_dir = match required_str(index_dir, "index_dir") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let config = match optional_config(config_json) {
            Ok(c) => c,
            Err(status) => return status,
        };
        match Engine::open(config, Path::new(index_dir)) {
            Ok(engine) => {
                *out_engine = Box::into_raw(Box::new(TrexEngine { inner: engine }));
                TrexStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Run one query. `top_n` and `token_budget` use -1 for the configured
/// defaults. On success `out_result_json` receives the query result as JSON
/// (query, ordered contexts with provenance, token totals).
///
/// # Safety
/// `engine` must be a live handle from `trex_engine_open`; `query` a valid
/// NUL-terminated string; `out_result_json` a valid, writable pointer.
#[no_mangle]
pub unsafe extern "C" fn trex_engine_query(
    engine: *const TrexEngine,
    query: *const c_char,
    mode: TrexQueryMode,
    top_n: i64,
    token_budget: i64,
    out_result_json: *mut *mut c_char,
) -> TrexStatus {
    guarded(|| {
        if engine.is_null() || out_result_json.is_null() {
            set_last_error("engine and out_result_json must not be null".into());
            return TrexStatus::NullArgument;
        }
        let query = match required_str(query, "query") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if top_n < -1 || token_budget < -1 {
            set_last_error("top_n and token_budget must be >= -1".into());
            return TrexStatus::InvalidArgument;
        }
        let options = QueryOptions {
            mode: match mode {
                TrexQueryMode::Trex => QueryMode::Trex,
                TrexQueryMode::Traversal => QueryMode::Traversal,
                TrexQueryMode::Collapsed => QueryMode::Collapsed,
            },
            top_n: (top_n >= 0).then_some(top_n as usize),
            token_budget: (token_budget >= 0).then_some(token_budget as usize),
        };
        let engine = &(*engine).inner;
        match engine.query(query, &options) {
            Ok(result) => match serde_json::to_string(&result) {
                Ok(json) => export_string(out_result_json, json),
                Err(e) => fail(Error::Internal(format!("serialize result: {e}"))),
            },
            Err(e) => fail(e),
        }
    })
}

/// Release an engine handle. Null is a no-op.
///
/// # Safety
/// `engine` must be null or a handle from `trex_engine_open` not yet closed.
#[no_mangle]
pub unsafe extern "C" fn trex_engine_close(engine: *mut TrexEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a string returned through an `out` parameter of this
/// library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trex_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The last error message recorded on this thread, or null if none. The
/// caller owns the returned string (free with `trex_string_free`).
#[no_mangle]
pub extern "C" fn trex_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(message) => message.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}
