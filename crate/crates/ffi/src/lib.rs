//! C interface to `stratpg`.
//!
//! Objects cross the boundary as opaque handles created and destroyed by
//! this library. Every function returns a [`StratpgStatus`]; on failure the
//! message is available from [`stratpg_last_error`] on the same thread.
//! Panics are caught and reported as [`StratpgStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use stratpg::harness::{self, ExperimentConfig, Scenario};
use stratpg::learner::{self, Method, RunOutput};
use stratpg::nnkit::param_count;
use stratpg::theorychecks::{run_suite, Suite};
use stratpg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratpgStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8, out-of-range index or unknown name.
    InvalidArgument = 1,
    Config = 2,
    Numeric = 3,
    Io = 4,
    Failure = 5,
    Panic = 6,
}

/// Experiment configuration.
pub struct StratpgConfig {
    inner: ExperimentConfig,
}

/// Completed run of one method under one seed.
pub struct StratpgRun {
    inner: RunOutput,
}

/// Metrics of one epoch.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratpgRecord {
    pub epoch: usize,
    pub policy_value: f64,
    pub pct_change: f64,
    pub move_: f64,
    /// NaN when the method has no behavior model.
    pub behavior_loss: f64,
    pub checksum: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> StratpgStatus {
    match err {
        Error::Config(_) | Error::Schema(_) => StratpgStatus::Config,
        Error::NumericAbort { .. } | Error::NonFinite { .. } => StratpgStatus::Numeric,
        Error::Io(_) | Error::Csv(_) | Error::MissingMetrics(_) => StratpgStatus::Io,
        _ => StratpgStatus::Failure,
    }
}

struct Fail(StratpgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(StratpgStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> StratpgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            StratpgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            StratpgStatus::Panic
        }
    }
}

/// # Safety
/// `s` is null or a valid nul-terminated string.
unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn stratpg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn stratpg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Preset configuration for a scenario name such as `"synthetic"` or `"loan"`.
///
/// # Safety
/// `scenario` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn stratpg_config_preset(scenario: *const c_char, out: *mut *mut StratpgConfig) -> StratpgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let scenario: Scenario = text(scenario, "scenario")?.parse().map_err(|e: Error| invalid(e.to_string()))?;
        let inner = ExperimentConfig::preset(scenario);
        *out = Box::into_raw(Box::new(StratpgConfig { inner }));
        Ok(())
    })
}

/// Parses a TOML configuration; missing keys come from the scenario preset.
///
/// # Safety
/// `toml` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn stratpg_config_from_toml(toml: *const c_char, out: *mut *mut StratpgConfig) -> StratpgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let inner = ExperimentConfig::from_toml_str(text(toml, "toml")?)?;
        *out = Box::into_raw(Box::new(StratpgConfig { inner }));
        Ok(())
    })
}

/// Applies one `key=value` override. The configuration is unchanged on failure.
///
/// # Safety
/// `config` comes from this library; `assignment` is a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stratpg_config_set(config: *mut StratpgConfig, assignment: *const c_char) -> StratpgStatus {
    guard(|| {
        let cfg = out_ptr(config, "config")?;
        let item = text(assignment, "assignment")?.to_string();
        cfg.inner = cfg.inner.with_overrides(&[item])?;
        Ok(())
    })
}

/// Canonical TOML text of the configuration. Release it with [`stratpg_string_free`].
///
/// # Safety
/// `config` comes from this library; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn stratpg_config_to_toml(config: *const StratpgConfig, out: *mut *mut c_char) -> StratpgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = handle(config, "config")?.inner.to_toml()?;
        *out = CString::new(text).map_err(|_| invalid("configuration text has a nul byte"))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stratpg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `config` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stratpg_config_free(config: *mut StratpgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs one method (`"cutoff"`, `"vanilla"`, `"end2end"` or `"strategic"`)
/// under one seed to completion.
///
/// # Safety
/// `config` comes from this library; `method` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn stratpg_run(
    config: *const StratpgConfig,
    method: *const c_char,
    seed: u64,
    out: *mut *mut StratpgRun,
) -> StratpgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &handle(config, "config")?.inner;
        let method: Method = text(method, "method")?.parse().map_err(|e: Error| invalid(e.to_string()))?;
        let env = harness::build_env(cfg)?;
        let inner = learner::run(env.as_ref(), &cfg.learner, method, seed)?;
        *out = Box::into_raw(Box::new(StratpgRun { inner }));
        Ok(())
    })
}

/// Runs every configured (method, seed) pair and writes the result files to `out_dir`.
///
/// # Safety
/// `config` comes from this library; `out_dir` is a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stratpg_run_experiment(config: *const StratpgConfig, out_dir: *const c_char) -> StratpgStatus {
    guard(|| {
        let mut cfg = handle(config, "config")?.inner.clone();
        cfg.output_dir = PathBuf::from(text(out_dir, "out_dir")?);
        harness::run_experiment(&cfg)?;
        Ok(())
    })
}

/// Number of epoch records in a run.
///
/// # Safety
/// `run` comes from this library; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn stratpg_run_len(run: *const StratpgRun, out: *mut usize) -> StratpgStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(run, "run")?.inner.records.len();
        Ok(())
    })
}

/// Record of epoch `index`.
///
/// # Safety
/// `run` comes from this library; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn stratpg_run_record(run: *const StratpgRun, index: usize, out: *mut StratpgRecord) -> StratpgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let records = &handle(run, "run")?.inner.records;
        let r = records
            .get(index)
            .ok_or_else(|| invalid(format!("record {index} out of range ({} records)", records.len())))?;
        *out = StratpgRecord {
            epoch: r.epoch,
            policy_value: r.policy_value,
            pct_change: r.pct_change,
            move_: r.move_,
            behavior_loss: r.behavior_loss.unwrap_or(f64::NAN),
            checksum: r.checksum,
        };
        Ok(())
    })
}

/// Best policy value over all epochs.
///
/// # Safety
/// `run` comes from this library; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn stratpg_run_best_value(run: *const StratpgRun, out: *mut f64) -> StratpgStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(run, "run")?.inner.best_value();
        Ok(())
    })
}

/// # Safety
/// `run` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stratpg_run_free(run: *mut StratpgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Parameter count of a dense network with layer widths `dims[0..len]`.
///
/// # Safety
/// `dims` points to `len` readable values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn stratpg_param_count(dims: *const usize, len: usize, out: *mut usize) -> StratpgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if dims.is_null() || len < 2 {
            return Err(invalid("need at least two layer widths"));
        }
        *out = param_count(std::slice::from_raw_parts(dims, len));
        Ok(())
    })
}

/// Runs a verification suite (`"gradients"`, `"lemma1"`, `"prop2"`,
/// `"counts"`, `"trend"` or `"all"`) and reports how many checks failed.
///
/// # Safety
/// `suite` is a nul-terminated string; `failed` is writable.
#[no_mangle]
pub unsafe extern "C" fn stratpg_check(suite: *const c_char, seed: u64, failed: *mut usize) -> StratpgStatus {
    guard(|| {
        let failed = out_ptr(failed, "failed")?;
        let suite: Suite = text(suite, "suite")?.parse().map_err(|e: Error| invalid(e.to_string()))?;
        *failed = run_suite(suite, seed)?.iter().filter(|r| !r.passed).count();
        Ok(())
    })
}
