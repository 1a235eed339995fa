//! C ABI for the `interlace` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` functions
//! and released by the matching `*_free`. Every fallible call returns an
//! [`InterlaceStatus`]; on failure a message is kept per thread and can be
//! read with [`interlace_last_error`]. Strings returned to the caller are
//! owned by the caller and must be released with [`interlace_string_free`].
//! Panics never unwind across the boundary; they surface as
//! [`InterlaceStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use interlace::experiment::{run_experiment, write_csv, write_json, ExperimentConfig, ExperimentId, ResultRecord};
use interlace::potential::{self, PotentialTable};
use interlace::{Error, Site, SiteSet};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterlaceStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument is outside the operation's domain.
    InvalidArgument = 3,
    /// An experiment config failed validation.
    Validation = 4,
    /// A walk exceeded its step budget.
    Truncated = 5,
    /// A linear solve failed.
    Numerical = 6,
    /// Reading or writing failed.
    Io = 7,
    /// The library panicked; the message says where.
    Panic = 8,
    /// Any other library error.
    Other = 9,
}

/// Potential-kernel table.
pub struct InterlacePotential(PotentialTable);

/// Experiment configuration.
pub struct InterlaceConfig(ExperimentConfig);

/// Finished experiment run.
pub struct InterlaceResult(ResultRecord);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn status_of(e: &Error) -> InterlaceStatus {
    match e {
        Error::InvalidArgument { .. }
        | Error::EmbeddingTooLarge { .. }
        | Error::UndefinedAtOrigin(_)
        | Error::SupportMismatch
        | Error::DegenerateDensity { .. } => InterlaceStatus::InvalidArgument,
        Error::Validation(_) => InterlaceStatus::Validation,
        Error::Truncated { .. } => InterlaceStatus::Truncated,
        Error::SolverDiverged { .. } | Error::Singular(_) => InterlaceStatus::Numerical,
        Error::Io(_) | Error::Cache(_) => InterlaceStatus::Io,
        _ => InterlaceStatus::Other,
    }
}

/// Failure inside a guarded call.
enum Fail {
    Status(InterlaceStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(name: &str) -> Fail {
    Fail::Status(InterlaceStatus::NullPointer, format!("`{name}` is null"))
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> InterlaceStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => InterlaceStatus::Ok,
        Ok(Err(Fail::Status(status, message))) => {
            set_last_error(message);
            status
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            InterlaceStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(InterlaceStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

fn owned_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail::Status(InterlaceStatus::Other, "output contains a NUL byte".into()))
}

unsafe fn sites_arg(xs: *const i32, ys: *const i32, len: usize) -> Result<SiteSet, Fail> {
    if len == 0 {
        return Ok(SiteSet::new());
    }
    if xs.is_null() || ys.is_null() {
        return Err(null("xs/ys"));
    }
    let xs = std::slice::from_raw_parts(xs, len);
    let ys = std::slice::from_raw_parts(ys, len);
    Ok(xs.iter().zip(ys).map(|(&x, &y)| Site::new(x, y)).collect())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn interlace_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version and build, e.g. `0.1.0+abc1234`. Static; do not free.
#[no_mangle]
pub extern "C" fn interlace_version() -> *const c_char {
    static VERSION: std::sync::OnceLock<CString> = std::sync::OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(interlace::experiment::BUILD_ID).unwrap())
        .as_ptr()
}

/// Release a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn interlace_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Solve the potential-kernel table on the disk of the given radius.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_potential_new(
    radius: u32,
    tol: f64,
    out: *mut *mut InterlacePotential,
) -> InterlaceStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let table = PotentialTable::compute(radius, tol)?;
        *out = Box::into_raw(Box::new(InterlacePotential(table)));
        Ok(())
    })
}

/// Release a table. Null is ignored.
///
/// # Safety
/// `p` must come from [`interlace_potential_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn interlace_potential_free(p: *mut InterlacePotential) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Potential kernel a(x, y).
///
/// # Safety
/// `p` must be a live table and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_potential_value(
    p: *const InterlacePotential,
    x: i32,
    y: i32,
    out: *mut f64,
) -> InterlaceStatus {
    guard(|| {
        let table = ref_arg(p, "potential")?;
        *out_arg(out, "out")? = table.0.value(Site::new(x, y));
        Ok(())
    })
}

/// Capacity of the finite set of sites `(xs[i], ys[i])`.
///
/// # Safety
/// `xs` and `ys` must point to `len` integers each; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_capacity(
    p: *const InterlacePotential,
    xs: *const i32,
    ys: *const i32,
    len: usize,
    out: *mut f64,
) -> InterlaceStatus {
    guard(|| {
        let table = ref_arg(p, "potential")?;
        let set = sites_arg(xs, ys, len)?;
        *out_arg(out, "out")? = potential::capacity(&set, &table.0)?;
        Ok(())
    })
}

/// Harmonic measure of a finite set; `weights` receives `len` values in the
/// order of the input sites.
///
/// # Safety
/// `xs`, `ys` and `weights` must point to `len` elements each.
#[no_mangle]
pub unsafe extern "C" fn interlace_harmonic_measure(
    p: *const InterlacePotential,
    xs: *const i32,
    ys: *const i32,
    len: usize,
    weights: *mut f64,
) -> InterlaceStatus {
    guard(|| {
        let table = ref_arg(p, "potential")?;
        let set = sites_arg(xs, ys, len)?;
        if set.len() != len {
            return Err(Fail::Status(InterlaceStatus::InvalidArgument, "sites must be distinct".into()));
        }
        if weights.is_null() {
            return Err(null("weights"));
        }
        let hm = potential::harmonic_measure(&set, &table.0)?;
        let out = std::slice::from_raw_parts_mut(weights, len);
        let xs = std::slice::from_raw_parts(xs, len);
        let ys = std::slice::from_raw_parts(ys, len);
        for ((w, &x), &y) in out.iter_mut().zip(xs).zip(ys) {
            *w = hm.weight_of(Site::new(x, y));
        }
        Ok(())
    })
}

/// Exact total-variation distance between Poisson(λ₁) and Poisson(λ₂).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_poisson_tv(lambda1: f64, lambda2: f64, out: *mut f64) -> InterlaceStatus {
    guard(|| {
        *out_arg(out, "out")? = interlace::couplings::poisson_tv(lambda1, lambda2)?;
        Ok(())
    })
}

/// Default config of the named experiment (e.g. `"xi-law"`).
///
/// # Safety
/// `experiment` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_config_new(
    experiment: *const c_char,
    seed: u64,
    out: *mut *mut InterlaceConfig,
) -> InterlaceStatus {
    guard(|| {
        let id: ExperimentId = str_arg(experiment, "experiment")?.parse()?;
        *out_arg(out, "out")? = Box::into_raw(Box::new(InterlaceConfig(ExperimentConfig::new(id, seed))));
        Ok(())
    })
}

/// Parse a config from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_config_from_toml(
    toml: *const c_char,
    out: *mut *mut InterlaceConfig,
) -> InterlaceStatus {
    guard(|| {
        let config = ExperimentConfig::from_toml(str_arg(toml, "toml")?)?;
        *out_arg(out, "out")? = Box::into_raw(Box::new(InterlaceConfig(config)));
        Ok(())
    })
}

/// Apply a `key=value` override, as on the command line.
///
/// # Safety
/// `config` must be live; `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn interlace_config_set(config: *mut InterlaceConfig, assignment: *const c_char) -> InterlaceStatus {
    guard(|| {
        let config = out_arg(config, "config")?;
        config.0.set(str_arg(assignment, "assignment")?)?;
        Ok(())
    })
}

/// Serialize a config to TOML; free the result with [`interlace_string_free`].
///
/// # Safety
/// `config` must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_config_to_toml(
    config: *const InterlaceConfig,
    out: *mut *mut c_char,
) -> InterlaceStatus {
    guard(|| {
        let config = ref_arg(config, "config")?;
        *out_arg(out, "out")? = owned_string(config.0.to_toml())?;
        Ok(())
    })
}

/// Release a config. Null is ignored.
///
/// # Safety
/// `config` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn interlace_config_free(config: *mut InterlaceConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Validate and run an experiment.
///
/// # Safety
/// `config` must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_run(config: *const InterlaceConfig, out: *mut *mut InterlaceResult) -> InterlaceStatus {
    guard(|| {
        let config = ref_arg(config, "config")?;
        let out = out_arg(out, "out")?;
        let record = run_experiment(&config.0)?;
        *out = Box::into_raw(Box::new(InterlaceResult(record)));
        Ok(())
    })
}

/// Number of jobs (case × replica) and of truncated jobs in a run.
///
/// # Safety
/// `result` must be live; the out pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_result_jobs(
    result: *const InterlaceResult,
    jobs: *mut u64,
    truncated: *mut u64,
) -> InterlaceStatus {
    guard(|| {
        let r = ref_arg(result, "result")?;
        *out_arg(jobs, "jobs")? = r.0.jobs;
        *out_arg(truncated, "truncated")? = r.0.truncated;
        Ok(())
    })
}

/// Estimate of `metric` for the case labelled `case`; `lower`/`upper`
/// receive the confidence interval (NaN when there is none) and may be null.
///
/// # Safety
/// `result` must be live; strings NUL-terminated; `estimate` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_result_aggregate(
    result: *const InterlaceResult,
    case_label: *const c_char,
    metric: *const c_char,
    estimate: *mut f64,
    lower: *mut f64,
    upper: *mut f64,
) -> InterlaceStatus {
    guard(|| {
        let r = ref_arg(result, "result")?;
        let case = str_arg(case_label, "case_label")?;
        let metric = str_arg(metric, "metric")?;
        let a = r
            .0
            .aggregates
            .iter()
            .find(|a| a.case == case && a.metric == metric)
            .ok_or_else(|| Fail::Status(InterlaceStatus::InvalidArgument, format!("no aggregate `{metric}` for `{case}`")))?;
        *out_arg(estimate, "estimate")? = a.estimate;
        if let Some(l) = lower.as_mut() {
            *l = a.lower.unwrap_or(f64::NAN);
        }
        if let Some(u) = upper.as_mut() {
            *u = a.upper.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Per-replica rows as CSV; free the result with [`interlace_string_free`].
///
/// # Safety
/// `result` must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_result_csv(result: *const InterlaceResult, out: *mut *mut c_char) -> InterlaceStatus {
    guard(|| {
        let r = ref_arg(result, "result")?;
        let mut buf = Vec::new();
        write_csv(&r.0, &mut buf)?;
        *out_arg(out, "out")? = owned_string(String::from_utf8(buf).expect("csv is UTF-8"))?;
        Ok(())
    })
}

/// Full result record as JSON; free the result with [`interlace_string_free`].
///
/// # Safety
/// `result` must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn interlace_result_json(result: *const InterlaceResult, out: *mut *mut c_char) -> InterlaceStatus {
    guard(|| {
        let r = ref_arg(result, "result")?;
        let mut buf = Vec::new();
        write_json(&r.0, &mut buf)?;
        *out_arg(out, "out")? = owned_string(String::from_utf8(buf).expect("json is UTF-8"))?;
        Ok(())
    })
}

/// Release a result. Null is ignored.
///
/// # Safety
/// `result` must come from [`interlace_run`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn interlace_result_free(result: *mut InterlaceResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
