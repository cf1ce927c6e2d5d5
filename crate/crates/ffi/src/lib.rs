// SPDX-License-Identifier: Apache-2.0

//! C ABI over the simulator.
//!
//! Scenarios and runs are opaque handles owned by the caller and released
//! with the matching `*_free`. Every fallible call returns an [`RtStatus`];
//! on failure [`rt_last_error`] describes what went wrong. Strings handed out
//! by the library are released with [`rt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::OnceLock;

use rftrojan::harness::{self, RunOptions, RunResult, Scenario, ScenarioError};
use rftrojan::trigger;

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    NotFound = 3,
    ParseError = 4,
    ValidationError = 5,
    IoError = 6,
    InvalidArgument = 7,
    /// A Rust panic was caught at the boundary. The handle involved should
    /// be freed and not used again.
    Panic = 8,
}

/// A validated scenario.
pub struct RtScenario {
    inner: Scenario,
}

/// A finished simulation.
pub struct RtRun {
    inner: RunResult,
}

/// Options for [`rt_run`]. Zero-initialized options run the scenario as
/// written with the trace discarded.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RtRunOptions {
    pub retain_trace: bool,
    pub override_seed: bool,
    pub seed: u64,
    /// 0 keeps the scenario's own budget.
    pub max_cycles: u64,
}

/// Charge model derived from the hammer-count anchor.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RtCalibration {
    pub delta_per_hammer: f64,
    pub leak_per_idle_cycle: f64,
}

/// Summary of a run that does not need JSON parsing.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RtRunSummary {
    pub cycles: u64,
    pub trace_events: u64,
    pub triggered: bool,
    /// Only meaningful when `triggered` is set.
    pub hammers_at_latch: u64,
    pub detections: u64,
    pub kernel_bytes: u64,
    pub faulted_processes: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: RtStatus, msg: impl Into<String>) -> RtStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> RtStatus) -> RtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(RtStatus::Panic, "panic inside rftrojan"))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, RtStatus> {
    if p.is_null() {
        return Err(fail(RtStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(RtStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

fn scenario_status(e: &ScenarioError) -> RtStatus {
    let status = match e {
        ScenarioError::Io { .. } => RtStatus::IoError,
        ScenarioError::Parse(_) => RtStatus::ParseError,
        ScenarioError::Validation(_) => RtStatus::ValidationError,
    };
    fail(status, e.to_string())
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn put_string(out: *mut *mut c_char, s: &str) -> RtStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            RtStatus::Ok
        }
        Err(_) => fail(RtStatus::InvalidArgument, "string contains NUL"),
    }
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn rt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn builtin_names() -> &'static [CString] {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    NAMES.get_or_init(|| {
        harness::BUILTIN_NAMES
            .iter()
            .map(|n| CString::new(*n).expect("no NUL"))
            .collect()
    })
}

#[no_mangle]
pub extern "C" fn rt_builtin_count() -> usize {
    builtin_names().len()
}

/// Static name of builtin `index`, or NULL when out of range.
#[no_mangle]
pub extern "C" fn rt_builtin_name(index: usize) -> *const c_char {
    builtin_names().get(index).map_or(ptr::null(), |c| c.as_ptr())
}

/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_scenario_builtin(name: *const c_char, out: *mut *mut RtScenario) -> RtStatus {
    guard(|| {
        if out.is_null() {
            return fail(RtStatus::NullArgument, "null out pointer");
        }
        let name = match str_arg(name) {
            Ok(n) => n,
            Err(s) => return s,
        };
        match harness::builtin_scenario(name) {
            Some(inner) => {
                put(out, RtScenario { inner });
                RtStatus::Ok
            }
            None => fail(RtStatus::NotFound, format!("no builtin scenario `{name}`")),
        }
    })
}

/// Parses and validates scenario text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_scenario_from_str(text: *const c_char, out: *mut *mut RtScenario) -> RtStatus {
    guard(|| {
        if out.is_null() {
            return fail(RtStatus::NullArgument, "null out pointer");
        }
        let text = match str_arg(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match harness::scenario_from_str(text) {
            Ok(inner) => {
                put(out, RtScenario { inner });
                RtStatus::Ok
            }
            Err(e) => scenario_status(&e),
        }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_scenario_from_file(path: *const c_char, out: *mut *mut RtScenario) -> RtStatus {
    guard(|| {
        if out.is_null() {
            return fail(RtStatus::NullArgument, "null out pointer");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match harness::load_scenario(path) {
            Ok(inner) => {
                put(out, RtScenario { inner });
                RtStatus::Ok
            }
            Err(e) => scenario_status(&e),
        }
    })
}

/// Canonical text of a scenario.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_scenario_to_toml(scenario: *const RtScenario, out: *mut *mut c_char) -> RtStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return fail(RtStatus::NullArgument, "null argument");
        }
        put_string(out, &(*scenario).inner.to_toml())
    })
}

/// # Safety
/// `scenario` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rt_scenario_free(scenario: *mut RtScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs a scenario to completion. `options` may be NULL.
///
/// # Safety
/// `scenario` must be a live handle; `options` NULL or valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rt_run(
    scenario: *const RtScenario,
    options: *const RtRunOptions,
    out: *mut *mut RtRun,
) -> RtStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return fail(RtStatus::NullArgument, "null argument");
        }
        let o = if options.is_null() { RtRunOptions::default() } else { *options };
        let opts = RunOptions {
            retain_trace: o.retain_trace,
            seed: o.override_seed.then_some(o.seed),
            max_cycles: (o.max_cycles != 0).then_some(o.max_cycles),
        };
        let inner = harness::run_with(&(*scenario).inner, &opts);
        put(out, RtRun { inner });
        RtStatus::Ok
    })
}

/// # Safety
/// `run` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rt_run_free(run: *mut RtRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Hex SHA-256 of the trace.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_run_digest(run: *const RtRun, out: *mut *mut c_char) -> RtStatus {
    guard(|| {
        if run.is_null() || out.is_null() {
            return fail(RtStatus::NullArgument, "null argument");
        }
        put_string(out, &(*run).inner.report.digest)
    })
}

/// Trace text. Fails with `InvalidArgument` unless the run retained it.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_run_trace_text(run: *const RtRun, out: *mut *mut c_char) -> RtStatus {
    guard(|| {
        if run.is_null() || out.is_null() {
            return fail(RtStatus::NullArgument, "null argument");
        }
        let trace = &(*run).inner.trace;
        if !trace.retained() {
            return fail(RtStatus::InvalidArgument, "trace was not retained; set retain_trace");
        }
        put_string(out, &trace.text())
    })
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_run_report_json(run: *const RtRun, out: *mut *mut c_char) -> RtStatus {
    guard(|| {
        if run.is_null() || out.is_null() {
            return fail(RtStatus::NullArgument, "null argument");
        }
        put_string(out, &(*run).inner.report.to_json())
    })
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_run_summary(run: *const RtRun, out: *mut RtRunSummary) -> RtStatus {
    guard(|| {
        if run.is_null() || out.is_null() {
            return fail(RtStatus::NullArgument, "null argument");
        }
        let r = &(*run).inner.report;
        *out = RtRunSummary {
            cycles: r.cycles,
            trace_events: r.trace_events,
            triggered: r.trigger.hammers_at_latch.is_some(),
            hammers_at_latch: r.trigger.hammers_at_latch.unwrap_or(0),
            detections: r.detections.total as u64,
            kernel_bytes: r.processes.iter().map(|p| p.kernel_bytes).sum(),
            faulted_processes: r
                .processes
                .iter()
                .filter(|p| p.status == rftrojan::machine::ProcessStatus::Faulted)
                .count() as u32,
        };
        RtStatus::Ok
    })
}

/// Charge step and leak for a hammer-count anchor.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_calibrate(
    n_set: u32,
    v_threshold: f64,
    v_max: f64,
    epsilon: f64,
    out: *mut RtCalibration,
) -> RtStatus {
    guard(|| {
        if out.is_null() {
            return fail(RtStatus::NullArgument, "null out pointer");
        }
        match trigger::calibrate(n_set, v_threshold, v_max, epsilon) {
            Ok(c) => {
                *out = RtCalibration {
                    delta_per_hammer: c.delta_per_hammer,
                    leak_per_idle_cycle: c.leak_per_idle_cycle,
                };
                RtStatus::Ok
            }
            Err(e) => fail(RtStatus::InvalidArgument, e.to_string()),
        }
    })
}
