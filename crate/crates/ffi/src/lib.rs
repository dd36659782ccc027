//! C ABI for the orchestration engine.
//!
//! An engine is an opaque handle around one scenario runner. Every call
//! returns a [`CitsStatus`]; on failure a message is kept per thread and
//! can be read with [`cits_last_error_message`]. Strings handed out by the
//! library must be released with [`cits_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cits_orchestrator::manager::{DeploymentRequest, Outcome};
use cits_orchestrator::model::NodeId;
use cits_orchestrator::runner::{RunOptions, Runner};
use cits_orchestrator::scenario::{load_scenario, parse_scenario};
use serde_json::{json, Map, Value};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CitsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ScenarioError = 3,
    RuntimeError = 4,
    InvalidRequest = 5,
    Rejected = 6,
    UnknownNode = 7,
    Panic = 8,
}

/// Opaque engine handle.
pub struct CitsEngine {
    runner: Runner,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> Result<(), (CitsStatus, String)>) -> CitsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CitsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside cits-orchestrator");
            CitsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CitsStatus, String)> {
    if p.is_null() {
        return Err((CitsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (CitsStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn engine_arg<'a>(p: *mut CitsEngine) -> Result<&'a mut CitsEngine, (CitsStatus, String)> {
    p.as_mut().ok_or((CitsStatus::NullPointer, "engine is null".to_owned()))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), (CitsStatus, String)> {
    if out.is_null() {
        return Err((CitsStatus::NullPointer, "output pointer is null".to_owned()));
    }
    let c = CString::new(s).map_err(|e| (CitsStatus::RuntimeError, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn runtime(e: impl std::fmt::Display) -> (CitsStatus, String) {
    (CitsStatus::RuntimeError, e.to_string())
}

unsafe fn new_engine(
    scenario: Result<cits_orchestrator::Scenario, cits_orchestrator::ScenarioError>,
    duplicate_delivery: bool,
    out: *mut *mut CitsEngine,
) -> Result<(), (CitsStatus, String)> {
    if out.is_null() {
        return Err((CitsStatus::NullPointer, "output pointer is null".to_owned()));
    }
    let scenario = scenario.map_err(|e| (CitsStatus::ScenarioError, e.to_string()))?;
    let options = RunOptions { duplicate_delivery, tick_budget: None };
    let runner = Runner::new(scenario, options).map_err(|e| (CitsStatus::ScenarioError, e.to_string()))?;
    *out = Box::into_raw(Box::new(CitsEngine { runner }));
    Ok(())
}

/// Loads a scenario file and creates an engine at tick 0.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_from_file(
    path: *const c_char,
    duplicate_delivery: bool,
    out: *mut *mut CitsEngine,
) -> CitsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        new_engine(load_scenario(path), duplicate_delivery, out)
    })
}

/// Creates an engine from scenario text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_from_str(
    text: *const c_char,
    duplicate_delivery: bool,
    out: *mut *mut CitsEngine,
) -> CitsStatus {
    guard(|| {
        let text = str_arg(text, "scenario text")?;
        new_engine(parse_scenario(text), duplicate_delivery, out)
    })
}

/// # Safety
/// `engine` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_free(engine: *mut CitsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Advances one tick.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_tick(engine: *mut CitsEngine) -> CitsStatus {
    guard(|| engine_arg(engine)?.runner.tick().map_err(runtime))
}

/// Runs until the timeline is exhausted and the system settled, or the
/// tick budget is spent.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_run(engine: *mut CitsEngine) -> CitsStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        while !e.runner.is_finished() {
            e.runner.tick().map_err(runtime)?;
        }
        Ok(())
    })
}

/// Current tick, or 0 for a null handle.
///
/// # Safety
/// `engine` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_now(engine: *const CitsEngine) -> u64 {
    engine.as_ref().map_or(0, |e| e.runner.now())
}

/// # Safety
/// `engine` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_is_finished(engine: *const CitsEngine) -> bool {
    engine.as_ref().is_none_or(|e| e.runner.is_finished())
}

/// Submits one deployment request given as JSON. The request result is
/// written to `out_result` as JSON, also when the manager rejects it; in
/// that case the status is `Rejected`.
///
/// # Safety
/// `engine` must be a live handle, `json` NUL-terminated, `out_result`
/// null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_submit_json(
    engine: *mut CitsEngine,
    json: *const c_char,
    out_result: *mut *mut c_char,
) -> CitsStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let text = str_arg(json, "request")?;
        let req: DeploymentRequest =
            serde_json::from_str(text).map_err(|err| (CitsStatus::InvalidRequest, err.to_string()))?;
        let result = e.runner.submit(&req).map_err(runtime)?;
        if !out_result.is_null() {
            write_string(out_result, serde_json::to_string(&result).map_err(runtime)?)?;
        }
        match result.outcome {
            Outcome::Accepted => Ok(()),
            Outcome::Rejected => Err((CitsStatus::Rejected, result.reason.unwrap_or_default())),
        }
    })
}

/// Writes every live ledger as a JSON object keyed by resource name.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_ledgers_json(engine: *const CitsEngine, out: *mut *mut c_char) -> CitsStatus {
    guard(|| {
        let e = engine.as_ref().ok_or((CitsStatus::NullPointer, "engine is null".to_owned()))?;
        let ops = e.runner.operators();
        let mut map = Map::new();
        for op in [&ops.services, &ops.connections] {
            for (name, ledger) in op.ledgers() {
                map.insert(
                    name.clone(),
                    json!({
                        "kind": op.kind(),
                        "support": ledger.support(),
                        "effective_config": ledger.effective_config(),
                        "version": ledger.version,
                    }),
                );
            }
        }
        write_string(out, Value::Object(map).to_string())
    })
}

/// Writes the trace so far as JSON lines.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_trace_jsonl(engine: *const CitsEngine, out: *mut *mut c_char) -> CitsStatus {
    guard(|| {
        let e = engine.as_ref().ok_or((CitsStatus::NullPointer, "engine is null".to_owned()))?;
        write_string(out, e.runner.trace().to_jsonl())
    })
}

/// Writes the topics visible at `node` during the last tick as a JSON array.
///
/// # Safety
/// `engine` must be a live handle, `node` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_topics_json(
    engine: *const CitsEngine,
    node: *const c_char,
    out: *mut *mut c_char,
) -> CitsStatus {
    guard(|| {
        let e = engine.as_ref().ok_or((CitsStatus::NullPointer, "engine is null".to_owned()))?;
        let node = NodeId::from(str_arg(node, "node")?);
        let topics = e.runner.sim().topics_visible_at(&node).map_err(|err| (CitsStatus::UnknownNode, err.to_string()))?;
        write_string(out, serde_json::to_string(topics).map_err(runtime)?)
    })
}

/// Number of running instances, or 0 for a null handle.
///
/// # Safety
/// `engine` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cits_engine_running_instances(engine: *const CitsEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.runner.sim().running_instances().count())
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cits_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn cits_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cits_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
