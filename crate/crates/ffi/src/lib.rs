//! C ABI over the `offab` library.
//!
//! Objects cross the boundary as opaque handles that the caller frees with the
//! matching `*_free` function. Every fallible call returns an [`OffabStatus`];
//! on failure, [`offab_last_error`] describes the most recent error on the
//! calling thread. Strings returned through out-parameters are owned by the
//! caller and must be released with [`offab_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use offab::estimators::{self, EstimateError, EstimatorConfig};
use offab::logstore::{self, LogDataset};
use offab::orchestrator::{self, OrchestratorError, ProgramConfig, ReportFormat, Store};
use offab::policyspace::Policy;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffabStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed input: bad JSON, bad config, bad log line, shape mismatch.
    InvalidInput = 3,
    /// Filesystem or results-store failure.
    Io = 4,
    /// The window had no records.
    EmptyWindow = 5,
    /// Every importance weight was zero.
    DegenerateWeights = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffabReportFormat {
    Json = 0,
    Markdown = 1,
}

/// Point estimate with diagnostics. `ci_lo`/`ci_hi` are meaningful only when
/// `has_ci` is true.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OffabEstimate {
    pub value: f64,
    pub has_ci: bool,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ess: f64,
    pub n: usize,
    pub max_weight: f64,
    pub capped_fraction: f64,
}

/// Validated, timestamp-ordered log records.
pub struct OffabDataset(LogDataset);

/// Linear-softmax policy.
pub struct OffabPolicy(Policy);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(OffabStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> OffabStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OffabStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            OffabStatus::Panic
        }
    }
}

fn invalid(msg: impl ToString) -> Failure {
    Failure(OffabStatus::InvalidInput, msg.to_string())
}

fn io(msg: impl ToString) -> Failure {
    Failure(OffabStatus::Io, msg.to_string())
}

fn estimate_failure(e: EstimateError) -> Failure {
    let status = match e {
        EstimateError::EmptyWindow => OffabStatus::EmptyWindow,
        EstimateError::DegenerateWeights => OffabStatus::DegenerateWeights,
        _ => OffabStatus::InvalidInput,
    };
    Failure(status, e.to_string())
}

fn orchestrator_failure(e: OrchestratorError) -> Failure {
    match e {
        OrchestratorError::Store(_) => io(e),
        _ => invalid(e),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(OffabStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(OffabStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(OffabStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(OffabStatus::NullArgument, format!("`{name}` is null")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("nul bytes removed")
        .into_raw()
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next `offab_*` call on the same thread.
#[no_mangle]
pub extern "C" fn offab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn offab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn offab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads and validates a JSON-lines log file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn offab_dataset_ingest(path: *const c_char, out: *mut *mut OffabDataset) -> OffabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let dataset = logstore::ingest(path.as_ref()).map_err(|e| match e {
            logstore::LogError::Io { .. } => io(e),
            _ => invalid(e),
        })?;
        *out = Box::into_raw(Box::new(OffabDataset(dataset)));
        Ok(())
    })
}

/// Number of records, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn offab_dataset_len(dataset: *const OffabDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// Writes the context dimension and action count.
///
/// # Safety
/// `dataset` must be a live handle; `d` and `k` must be writable.
#[no_mangle]
pub unsafe extern "C" fn offab_dataset_shape(
    dataset: *const OffabDataset,
    d: *mut usize,
    k: *mut usize,
) -> OffabStatus {
    guard(|| {
        let ds = ref_arg(dataset, "dataset")?;
        *out_arg(d, "d")? = ds.0.d();
        *out_arg(k, "k")? = ds.0.k();
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn offab_dataset_free(dataset: *mut OffabDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Parses a policy from its JSON form
/// (`{"weights": [[..]..], "temperature": t, "floor": e, "feature_map": "identity"}`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn offab_policy_from_json(json: *const c_char, out: *mut *mut OffabPolicy) -> OffabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let policy: Policy = serde_json::from_str(str_arg(json, "json")?).map_err(invalid)?;
        *out = Box::into_raw(Box::new(OffabPolicy(policy)));
        Ok(())
    })
}

/// # Safety
/// `policy` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn offab_policy_free(policy: *mut OffabPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Fills `out[0..k]` with the action distribution for `context[0..d]`.
///
/// # Safety
/// `context` must point to `context_len` doubles and `out` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn offab_policy_action_probabilities(
    policy: *const OffabPolicy,
    context: *const f64,
    context_len: usize,
    out: *mut f64,
    out_len: usize,
) -> OffabStatus {
    guard(|| {
        let policy = &ref_arg(policy, "policy")?.0;
        ref_arg(context, "context")?;
        out_arg(out, "out")?;
        if out_len != policy.k() {
            return Err(invalid(format!(
                "out has {out_len} slots, policy has {} actions",
                policy.k()
            )));
        }
        let context = std::slice::from_raw_parts(context, context_len);
        let out = std::slice::from_raw_parts_mut(out, out_len);
        policy.action_probabilities_into(context, out).map_err(invalid)
    })
}

/// Estimates the value of `policy` on `dataset`. `config_json` is an estimator
/// config (`{"kind": "NCIS", "cap": 100, ...}`); NULL selects the defaults.
///
/// # Safety
/// Handles must be live; `config_json` must be NULL or NUL-terminated; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn offab_estimate(
    policy: *const OffabPolicy,
    dataset: *const OffabDataset,
    config_json: *const c_char,
    out: *mut OffabEstimate,
) -> OffabStatus {
    guard(|| {
        let policy = &ref_arg(policy, "policy")?.0;
        let dataset = &ref_arg(dataset, "dataset")?.0;
        let out = out_arg(out, "out")?;
        let config = if config_json.is_null() {
            EstimatorConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(invalid)?
        };
        let e = estimators::estimate(policy, dataset, &config).map_err(estimate_failure)?;
        *out = OffabEstimate {
            value: e.value,
            has_ci: e.ci().is_some(),
            ci_lo: e.ci_lo.unwrap_or(f64::NAN),
            ci_hi: e.ci_hi.unwrap_or(f64::NAN),
            ess: e.ess,
            n: e.n,
            max_weight: e.max_weight,
            capped_fraction: e.capped_fraction,
        };
        Ok(())
    })
}

/// Runs one evaluation of `dataset` under the program config and appends it
/// to the store at `store_dir` (created if missing). On success `*out_json`
/// receives the persisted run as JSON.
///
/// # Safety
/// Strings must be NUL-terminated; `dataset` must be live; `out_json` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn offab_run_once(
    program_json: *const c_char,
    store_dir: *const c_char,
    dataset: *const OffabDataset,
    out_json: *mut *mut c_char,
) -> OffabStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let config = ProgramConfig::from_json(str_arg(program_json, "program_json")?).map_err(invalid)?;
        let store = Store::create(PathBuf::from(str_arg(store_dir, "store_dir")?)).map_err(io)?;
        let dataset = &ref_arg(dataset, "dataset")?.0;
        let run = orchestrator::run_once(&config, &store, dataset).map_err(orchestrator_failure)?;
        *out = into_c_string(serde_json::to_string(&run).map_err(invalid)?);
        Ok(())
    })
}

/// Renders the report for an existing store into `*out`.
///
/// # Safety
/// `store_dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn offab_report(
    store_dir: *const c_char,
    format: OffabReportFormat,
    out: *mut *mut c_char,
) -> OffabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let store = Store::open(PathBuf::from(str_arg(store_dir, "store_dir")?)).map_err(invalid)?;
        let format = match format {
            OffabReportFormat::Json => ReportFormat::Json,
            OffabReportFormat::Markdown => ReportFormat::Markdown,
        };
        *out = into_c_string(orchestrator::report(&store, format).map_err(io)?);
        Ok(())
    })
}
