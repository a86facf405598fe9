//! C ABI bindings for the allocation simulator.
//!
//! Conventions:
//! - Opaque handles are heap-allocated boxes behind raw pointers with
//!   explicit `_free` functions.
//! - Constructors return NULL on failure; status functions return
//!   [`AllocStatus`]. The last error is stored per thread and retrieved via
//!   [`alloc_last_error_message`].
//! - Strings returned by this library are NUL-terminated, UTF-8, and must be
//!   released with [`alloc_string_free`].
//!
//! # Safety (blanket contract)
//!
//! Pointer arguments must be valid for the duration of the call: handles must
//! originate from this library and must not be used after being freed; C
//! string arguments must be NUL-terminated.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;

use allocsim::config::{ConfigError, ExperimentPlan};
use allocsim::harness::{self, ExperimentSummary, HarnessError};

/// Status codes mirrored by the CLI exit codes where applicable.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AllocStatus {
    Ok = 0,
    NullArgument = 1,
    ConfigError = 2,
    IoError = 3,
    RunError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<(AllocStatus, String)>> = const { RefCell::new(None) };
}

fn set_error(status: AllocStatus, message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some((status, message)));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &HarnessError) -> AllocStatus {
    match err {
        HarnessError::Io(_) | HarnessError::Config(ConfigError::Io(_)) => AllocStatus::IoError,
        HarnessError::Config(_) => AllocStatus::ConfigError,
        HarnessError::Benchmark(_) => AllocStatus::RunError,
    }
}

/// Opaque experiment plan handle.
pub struct AllocPlan {
    plan: ExperimentPlan,
}

/// Opaque experiment summary handle.
pub struct AllocSummary {
    summary: ExperimentSummary,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        set_error(AllocStatus::NullArgument, "null string argument".into());
        return None;
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Some(s),
        Err(_) => {
            set_error(AllocStatus::ConfigError, "argument is not valid UTF-8".into());
            None
        }
    }
}

fn plan_from_result(
    result: Result<(ExperimentPlan, Vec<String>), ConfigError>,
) -> *mut AllocPlan {
    match result {
        Ok((plan, _warnings)) => {
            clear_error();
            Box::into_raw(Box::new(AllocPlan { plan }))
        }
        Err(err) => {
            let status = match &err {
                ConfigError::Io(_) => AllocStatus::IoError,
                _ => AllocStatus::ConfigError,
            };
            set_error(status, err.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Parses a plan from config text. Returns NULL on error.
#[no_mangle]
pub unsafe extern "C" fn alloc_plan_parse(config_text: *const c_char) -> *mut AllocPlan {
    let Some(text) = cstr_arg(config_text) else {
        return std::ptr::null_mut();
    };
    plan_from_result(ExperimentPlan::from_config_str(text))
}

/// Loads a plan from a config file. Returns NULL on error.
#[no_mangle]
pub unsafe extern "C" fn alloc_plan_load(path: *const c_char) -> *mut AllocPlan {
    let Some(path) = cstr_arg(path) else {
        return std::ptr::null_mut();
    };
    plan_from_result(ExperimentPlan::from_file(Path::new(path)))
}

/// Overrides the plan's master seed.
#[no_mangle]
pub unsafe extern "C" fn alloc_plan_set_seed(plan: *mut AllocPlan, seed: u64) -> AllocStatus {
    let Some(plan) = plan.as_mut() else {
        set_error(AllocStatus::NullArgument, "null plan".into());
        return AllocStatus::NullArgument;
    };
    plan.plan.master_seed = seed;
    AllocStatus::Ok
}

/// Overrides the plan's trial count.
#[no_mangle]
pub unsafe extern "C" fn alloc_plan_set_trials(plan: *mut AllocPlan, trials: usize) -> AllocStatus {
    let Some(plan) = plan.as_mut() else {
        set_error(AllocStatus::NullArgument, "null plan".into());
        return AllocStatus::NullArgument;
    };
    if trials == 0 {
        set_error(AllocStatus::ConfigError, "trials must be >= 1".into());
        return AllocStatus::ConfigError;
    }
    plan.plan.n_trials = trials;
    AllocStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn alloc_plan_free(plan: *mut AllocPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Runs the experiment. Returns NULL on error.
#[no_mangle]
pub unsafe extern "C" fn alloc_run(plan: *const AllocPlan) -> *mut AllocSummary {
    let Some(plan) = plan.as_ref() else {
        set_error(AllocStatus::NullArgument, "null plan".into());
        return std::ptr::null_mut();
    };
    match harness::run_experiment(&plan.plan) {
        Ok((summary, _traces)) => {
            clear_error();
            Box::into_raw(Box::new(AllocSummary { summary }))
        }
        Err(err) => {
            set_error(status_of(&err), err.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Runs the experiment and writes the output files under `out_dir`.
#[no_mangle]
pub unsafe extern "C" fn alloc_run_to_dir(
    plan: *const AllocPlan,
    out_dir: *const c_char,
    emit_plot_data: bool,
) -> AllocStatus {
    let Some(plan) = plan.as_ref() else {
        set_error(AllocStatus::NullArgument, "null plan".into());
        return AllocStatus::NullArgument;
    };
    let Some(dir) = cstr_arg(out_dir) else {
        return AllocStatus::NullArgument;
    };
    match harness::run_to_dir(&plan.plan, Path::new(dir), emit_plot_data) {
        Ok(_) => {
            clear_error();
            AllocStatus::Ok
        }
        Err(err) => {
            let status = status_of(&err);
            set_error(status, err.to_string());
            status
        }
    }
}

/// Serializes the summary (config echo, per-trial metrics, aggregates) to a
/// JSON string. Free with [`alloc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn alloc_summary_to_json(summary: *const AllocSummary) -> *mut c_char {
    let Some(summary) = summary.as_ref() else {
        set_error(AllocStatus::NullArgument, "null summary".into());
        return std::ptr::null_mut();
    };
    let json = serde_json::to_string_pretty(&summary.summary).expect("summary serializes");
    CString::new(json).expect("no interior NUL").into_raw()
}

#[no_mangle]
pub unsafe extern "C" fn alloc_summary_welfare_mean(summary: *const AllocSummary) -> f64 {
    summary
        .as_ref()
        .map(|s| s.summary.stats.aggregate.welfare_mean)
        .unwrap_or(f64::NAN)
}

#[no_mangle]
pub unsafe extern "C" fn alloc_summary_misreport_mean(summary: *const AllocSummary) -> f64 {
    summary
        .as_ref()
        .map(|s| s.summary.stats.aggregate.misreport_mean)
        .unwrap_or(f64::NAN)
}

#[no_mangle]
pub unsafe extern "C" fn alloc_summary_violation_max(summary: *const AllocSummary) -> f64 {
    summary
        .as_ref()
        .map(|s| s.summary.stats.aggregate.violation_max)
        .unwrap_or(f64::NAN)
}

#[no_mangle]
pub unsafe extern "C" fn alloc_summary_free(summary: *mut AllocSummary) {
    if !summary.is_null() {
        drop(Box::from_raw(summary));
    }
}

/// Last error message for this thread, or NULL when the previous call
/// succeeded. Free with [`alloc_string_free`].
#[no_mangle]
pub extern "C" fn alloc_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some((_, msg)) => CString::new(msg.clone()).unwrap_or_default().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Last status for this thread; `Ok` when the previous call succeeded.
#[no_mangle]
pub extern "C" fn alloc_last_status() -> AllocStatus {
    LAST_ERROR.with(|e| e.borrow().as_ref().map(|(s, _)| *s).unwrap_or(AllocStatus::Ok))
}

#[no_mangle]
pub unsafe extern "C" fn alloc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
