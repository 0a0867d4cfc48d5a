//! C ABI over `faker-core`.
//!
//! Functions return a [`FakerStatus`] code; `FAKER_STATUS_OK` is zero and
//! every failure is negative. After a failure, [`faker_last_error`] holds a
//! message for the calling thread until its next failing call.
//!
//! Handles are opaque. Every handle and string returned by this library must
//! be released with the matching `*_free` function.
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the documented length.
//! Null is always detected and reported as `FAKER_STATUS_NULL_POINTER`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use faker_core::attacks::{faker_for, AttackMode, FakerInputs, DEFAULT_MARGIN};
use faker_core::defenses::{DefenseKind, DefenseParams};
use faker_core::harness::{config_json, parse_config};
use faker_core::model::{partition_groups, ModelVector, PartitionStrategy};
use faker_core::sim::{run_experiment, ExperimentConfig, MetricsReport};
use faker_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FakerStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidUtf8 = -2,
    /// The configuration JSON was malformed or failed validation.
    Config = -3,
    /// The experiment or construction itself failed.
    Failed = -4,
    /// The output buffer is shorter than required.
    BufferTooSmall = -5,
    UnknownDefense = -6,
    Panic = -7,
}

/// A validated experiment configuration.
pub struct FakerConfig {
    inner: ExperimentConfig,
}

/// Metrics of one finished experiment.
pub struct FakerReport {
    inner: MetricsReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: FakerStatus, msg: impl Into<String>) -> FakerStatus {
    set_error(msg);
    status
}

fn from_core(e: Error) -> FakerStatus {
    let status = match e {
        Error::Config { .. } => FakerStatus::Config,
        _ => FakerStatus::Failed,
    };
    fail(status, e.to_string())
}

fn guard(body: impl FnOnce() -> FakerStatus) -> FakerStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(FakerStatus::Panic, msg)
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, FakerStatus> {
    if s.is_null() {
        return Err(fail(FakerStatus::NullPointer, "string argument is null"));
    }
    unsafe { CStr::from_ptr(s) }
        .to_str()
        .map_err(|e| fail(FakerStatus::InvalidUtf8, e.to_string()))
}

fn give_string(text: String, out: *mut *mut c_char) -> FakerStatus {
    match CString::new(text) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            FakerStatus::Ok
        }
        Err(e) => fail(FakerStatus::Failed, e.to_string()),
    }
}

/// Message of the calling thread's last failure, or null. Owned by the
/// library and valid until the thread's next call into it.
#[no_mangle]
pub extern "C" fn faker_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn faker_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a configuration from JSON.
///
/// # Safety
///
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn faker_config_from_json(json: *const c_char, out: *mut *mut FakerConfig) -> FakerStatus {
    guard(|| {
        if out.is_null() {
            return fail(FakerStatus::NullPointer, "out is null");
        }
        let text = match unsafe { read_str(json) } {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_config(text) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(FakerConfig { inner })) };
                FakerStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Replaces the configuration's master seed.
///
/// # Safety
///
/// `config` must come from [`faker_config_from_json`].
#[no_mangle]
pub unsafe extern "C" fn faker_config_set_seed(config: *mut FakerConfig, seed: u64) -> FakerStatus {
    match unsafe { config.as_mut() } {
        Some(c) => {
            c.inner.master_seed = seed;
            FakerStatus::Ok
        }
        None => fail(FakerStatus::NullPointer, "config is null"),
    }
}

/// The configuration as pretty JSON with every default filled in. Free the
/// string with [`faker_string_free`].
///
/// # Safety
///
/// `config` must come from [`faker_config_from_json`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faker_config_to_json(config: *const FakerConfig, out: *mut *mut c_char) -> FakerStatus {
    guard(|| {
        let Some(c) = (unsafe { config.as_ref() }) else {
            return fail(FakerStatus::NullPointer, "config is null");
        };
        if out.is_null() {
            return fail(FakerStatus::NullPointer, "out is null");
        }
        give_string(config_json(&c.inner), out)
    })
}

/// # Safety
///
/// `config` must be null or come from [`faker_config_from_json`], freed once.
#[no_mangle]
pub unsafe extern "C" fn faker_config_free(config: *mut FakerConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Runs the configured experiment to completion.
///
/// # Safety
///
/// `config` must come from [`faker_config_from_json`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faker_run(config: *const FakerConfig, out: *mut *mut FakerReport) -> FakerStatus {
    guard(|| {
        let Some(c) = (unsafe { config.as_ref() }) else {
            return fail(FakerStatus::NullPointer, "config is null");
        };
        if out.is_null() {
            return fail(FakerStatus::NullPointer, "out is null");
        }
        match run_experiment(&c.inner) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(FakerReport { inner })) };
                FakerStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Error rate, success rate and attacker seconds per attacked round.
/// Any of the outputs may be null.
///
/// # Safety
///
/// `report` must come from [`faker_run`]; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn faker_report_metrics(
    report: *const FakerReport,
    er: *mut f64,
    sr: *mut f64,
    tc_seconds: *mut f64,
) -> FakerStatus {
    let Some(r) = (unsafe { report.as_ref() }) else {
        return fail(FakerStatus::NullPointer, "report is null");
    };
    for (p, v) in [(er, r.inner.er), (sr, r.inner.sr), (tc_seconds, r.inner.tc_seconds)] {
        if let Some(p) = unsafe { p.as_mut() } {
            *p = v;
        }
    }
    FakerStatus::Ok
}

/// Number of rounds the attack was active in.
///
/// # Safety
///
/// `report` must come from [`faker_run`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faker_report_attacked_rounds(report: *const FakerReport, out: *mut usize) -> FakerStatus {
    match (unsafe { report.as_ref() }, unsafe { out.as_mut() }) {
        (Some(r), Some(o)) => {
            *o = r.inner.attacked_rounds;
            FakerStatus::Ok
        }
        _ => fail(FakerStatus::NullPointer, "report or out is null"),
    }
}

/// The full report as JSON. Free the string with [`faker_string_free`].
///
/// # Safety
///
/// `report` must come from [`faker_run`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faker_report_to_json(report: *const FakerReport, out: *mut *mut c_char) -> FakerStatus {
    guard(|| {
        let Some(r) = (unsafe { report.as_ref() }) else {
            return fail(FakerStatus::NullPointer, "report is null");
        };
        if out.is_null() {
            return fail(FakerStatus::NullPointer, "out is null");
        }
        match serde_json::to_string(&r.inner) {
            Ok(text) => give_string(text, out),
            Err(e) => fail(FakerStatus::Failed, e.to_string()),
        }
    })
}

/// # Safety
///
/// `report` must be null or come from [`faker_run`], freed once.
#[no_mangle]
pub unsafe extern "C" fn faker_report_free(report: *mut FakerReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// # Safety
///
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn faker_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Builds the poison against `defense` from the honest model `w` of length
/// `len`, with the parameters split into `groups` contiguous scalar groups.
///
/// `w_g` is the previous global model, needed only by Krum; it may be null
/// otherwise. `n` and `m` are the client and attacker counts. The poisoned
/// model is written to `out`, which must hold `len` values.
///
/// # Safety
///
/// `defense` must be NUL-terminated. `w` and `out` must hold `len` values,
/// and `w_g` must be null or hold `len` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn faker_poison(
    defense: *const c_char,
    w: *const f64,
    w_g: *const f64,
    len: usize,
    groups: usize,
    n: usize,
    m: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> FakerStatus {
    guard(|| {
        let name = match unsafe { read_str(defense) } {
            Ok(t) => t,
            Err(s) => return s,
        };
        let Some(kind) = DefenseKind::parse(name) else {
            return fail(FakerStatus::UnknownDefense, format!("unknown defense `{name}`"));
        };
        if w.is_null() || out.is_null() {
            return fail(FakerStatus::NullPointer, "w or out is null");
        }
        if out_len < len {
            return fail(
                FakerStatus::BufferTooSmall,
                format!("out holds {out_len} values, need {len}"),
            );
        }
        let model = |p: *const f64| ModelVector::from_values(unsafe { std::slice::from_raw_parts(p, len) }.to_vec());
        let result = (|| {
            let wv = model(w)?;
            let wg = if w_g.is_null() { None } else { Some(model(w_g)?) };
            let partition = partition_groups(&wv, PartitionStrategy::UniformBlocks(groups))?;
            let inputs = FakerInputs {
                w: &wv,
                w_g: wg.as_ref(),
                partition: &partition,
                n,
                m,
                mode: AttackMode::Single,
                margin: DEFAULT_MARGIN,
                norm_upper: None,
                params: DefenseParams::default(),
            };
            faker_for(kind, &inputs, &mut ChaCha8Rng::seed_from_u64(seed))
        })();
        match result {
            Ok(r) => {
                let dst = unsafe { std::slice::from_raw_parts_mut(out, len) };
                dst.copy_from_slice(r.poisoned.values());
                FakerStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}
