//! C ABI over the value-cache toolkit.
//!
//! Conventions:
//! - every fallible call returns an [`McevalStatus`]; `MCEVAL_STATUS_OK` is 0;
//! - caches are opaque handles created by `mceval_cache_build` /
//!   `mceval_cache_load` and released with `mceval_cache_free`;
//! - a per-thread message with the failure detail is readable through
//!   `mceval_last_error`;
//! - no call unwinds across the boundary.
//!
//! The generated header lives at `include/mceval.h` and is refreshed on every
//! build.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mceval::cache::{
    build_cache, certified_loss_spec, evaluate, load_cache, save_cache, BuildOptions,
    CacheError, CertificateStatus, EvaluateError, Predictions, ValueCache,
};
use mceval::config::{build_env, build_policy, default_policy_kind, EnvKind, EnvParams, PolicyKind};
use mceval::loss::{required_states, loss_deviation_bound};
use mceval::rollout::truncation_length;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McevalStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Utf8 = 3,
    Io = 4,
    Parse = 5,
    ChecksumMismatch = 6,
    UnsupportedVersion = 7,
    BudgetExceeded = 8,
    MissingPrediction = 9,
    IncompatibleLoss = 10,
    BuildFailed = 11,
    Internal = 12,
}

/// Certificate state of an error report.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McevalCertificate {
    Valid = 0,
    Voided = 1,
    Advisory = 2,
}

/// Opaque value-cache handle.
pub struct McevalCache(ValueCache);

/// Inputs for `mceval_cache_build`. Initialise with
/// `mceval_build_params_default` and then override fields; `env` must always
/// be set by the caller.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct McevalBuildParams {
    /// Environment id: "chain", "cyclic-chain", "mountain-car",
    /// "puddle-world", "constant", "bernoulli" or "uniform".
    pub env: *const c_char,
    /// Policy id ("uniform", "energy-pumping", "fixed") or null for the
    /// environment's default.
    pub policy: *const c_char,
    /// Chain discount; NaN selects the environment default.
    pub gamma: f64,
    /// Chain state count; 0 selects the default.
    pub chain_states: u32,
    /// Synthetic-environment parameters; NaN selects the defaults.
    pub dist_value: f64,
    pub dist_p: f64,
    pub dist_lo: f64,
    pub dist_hi: f64,
    /// Energy-pumping mixing probability; NaN selects 0.6.
    pub mixing: f64,
    /// Fixed-policy action; negative selects the default.
    pub fixed_action: i32,
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    pub clip: f64,
    pub k_budget: u64,
    pub seed: u64,
    /// Per-state sample ceiling; 0 selects the default (10^8).
    pub max_samples: u64,
    /// Value stored as the cache creation timestamp (unix seconds).
    pub created_unix: u64,
}

/// Fill `params` with the default configuration (chain environment left
/// unset: the caller must point `env` at an environment id).
///
/// # Safety
/// `params` must point to writable memory for one `McevalBuildParams`.
#[no_mangle]
pub unsafe extern "C" fn mceval_build_params_default(params: *mut McevalBuildParams) {
    if params.is_null() {
        return;
    }
    unsafe {
        *params = McevalBuildParams {
            env: std::ptr::null(),
            policy: std::ptr::null(),
            gamma: f64::NAN,
            chain_states: 0,
            dist_value: f64::NAN,
            dist_p: f64::NAN,
            dist_lo: f64::NAN,
            dist_hi: f64::NAN,
            mixing: f64::NAN,
            fixed_action: -1,
            epsilon: 0.1,
            delta: 0.1,
            tau: 1.0,
            clip: 2.0,
            k_budget: 1,
            seed: 0,
            max_samples: 0,
            created_unix: 0,
        };
    }
}

/// One cache entry viewed through the C ABI. `coords` borrows the cache's
/// memory and stays valid until the cache is freed or mutated.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct McevalEntry {
    pub id: u64,
    pub value: f64,
    pub samples_used: u64,
    pub coords: *const f64,
    pub coords_len: usize,
}

/// Cache-level metadata snapshot.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct McevalMeta {
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    pub clip: f64,
    pub k_budget: u64,
    pub m: u64,
    pub seed: u64,
    pub total_samples: u64,
    pub queries_consumed: u64,
}

/// A certified evaluation result.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct McevalReport {
    pub empirical_loss: f64,
    pub deviation_bound: f64,
    /// 1 - delta.
    pub confidence: f64,
    pub k_budget: u64,
    pub k_consumed: u64,
    pub certificate: McevalCertificate,
}

fn guard<F: FnOnce() -> McevalStatus>(f: F) -> McevalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in mceval".into());
            set_last_error(&msg);
            McevalStatus::Internal
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, McevalStatus> {
    if ptr.is_null() {
        return Err(McevalStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_last_error("string argument is not valid UTF-8");
        McevalStatus::Utf8
    })
}

fn opt(v: f64) -> Option<f64> {
    if v.is_nan() {
        None
    } else {
        Some(v)
    }
}

fn cache_error_status(e: &CacheError) -> McevalStatus {
    match e {
        CacheError::Io(_) => McevalStatus::Io,
        CacheError::UnsupportedVersion { .. } => McevalStatus::UnsupportedVersion,
        CacheError::ChecksumMismatch => McevalStatus::ChecksumMismatch,
        CacheError::Malformed(_) => McevalStatus::Parse,
    }
}

/// Build a value cache with the adaptive stopping rule.
///
/// # Safety
/// `params` and `out` must be valid pointers; string fields must be
/// NUL-terminated. On success `*out` owns the cache and must be released with
/// `mceval_cache_free`.
#[no_mangle]
pub unsafe extern "C" fn mceval_cache_build(
    params: *const McevalBuildParams,
    out: *mut *mut McevalCache,
) -> McevalStatus {
    guard(|| {
        if params.is_null() || out.is_null() {
            set_last_error("params and out must be non-null");
            return McevalStatus::NullArgument;
        }
        let p = unsafe { *params };
        let env_id = match unsafe { read_str(p.env) } {
            Ok(s) => s,
            Err(status) => {
                if status == McevalStatus::NullArgument {
                    set_last_error("params.env must be set");
                }
                return status;
            }
        };
        let env_kind = match EnvKind::parse(env_id) {
            Ok(k) => k,
            Err(e) => {
                set_last_error(&e.to_string());
                return McevalStatus::InvalidArgument;
            }
        };
        let env_params = EnvParams {
            gamma: opt(p.gamma),
            chain_states: if p.chain_states == 0 { None } else { Some(p.chain_states as usize) },
            dist_value: opt(p.dist_value),
            dist_p: opt(p.dist_p),
            dist_lo: opt(p.dist_lo),
            dist_hi: opt(p.dist_hi),
        };
        let env = match build_env(env_kind, &env_params) {
            Ok(e) => e,
            Err(e) => {
                set_last_error(&e.to_string());
                return McevalStatus::InvalidArgument;
            }
        };
        let policy_kind = if p.policy.is_null() {
            default_policy_kind(env_kind)
        } else {
            match unsafe { read_str(p.policy) }.map(PolicyKind::parse) {
                Ok(Ok(k)) => k,
                Ok(Err(e)) => {
                    set_last_error(&e.to_string());
                    return McevalStatus::InvalidArgument;
                }
                Err(status) => return status,
            }
        };
        let fixed_action = if p.fixed_action < 0 { None } else { Some(p.fixed_action as usize) };
        let policy = match build_policy(policy_kind, env.as_ref(), opt(p.mixing), fixed_action) {
            Ok(p) => p,
            Err(e) => {
                set_last_error(&e.to_string());
                return McevalStatus::InvalidArgument;
            }
        };
        let mut opts = BuildOptions::new(p.epsilon, p.delta, p.tau, p.clip, p.k_budget, p.seed);
        if p.max_samples > 0 {
            opts.max_samples_per_state = p.max_samples;
        }
        opts.created_unix = p.created_unix;
        match build_cache(env.as_ref(), policy.as_ref(), &opts) {
            Ok(cache) => {
                unsafe { *out = Box::into_raw(Box::new(McevalCache(cache))) };
                McevalStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                match e {
                    mceval::cache::BuildError::InvalidOptions(_) => McevalStatus::InvalidArgument,
                    _ => McevalStatus::BuildFailed,
                }
            }
        }
    })
}

/// Load a cache file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. On
/// success `*out` must be released with `mceval_cache_free`.
#[no_mangle]
pub unsafe extern "C" fn mceval_cache_load(
    path: *const c_char,
    out: *mut *mut McevalCache,
) -> McevalStatus {
    guard(|| {
        if out.is_null() {
            set_last_error("out must be non-null");
            return McevalStatus::NullArgument;
        }
        let path = match unsafe { read_str(path) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match load_cache(Path::new(path)) {
            Ok(cache) => {
                unsafe { *out = Box::into_raw(Box::new(McevalCache(cache))) };
                McevalStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                cache_error_status(&e)
            }
        }
    })
}

/// Persist a cache (including its consumed K budget).
///
/// # Safety
/// `cache` must be a live handle from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mceval_cache_save(
    cache: *const McevalCache,
    path: *const c_char,
) -> McevalStatus {
    guard(|| {
        if cache.is_null() {
            set_last_error("cache must be non-null");
            return McevalStatus::NullArgument;
        }
        let path = match unsafe { read_str(path) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match save_cache(unsafe { &(*cache).0 }, Path::new(path)) {
            Ok(()) => McevalStatus::Ok,
            Err(e) => {
                set_last_error(&e.to_string());
                cache_error_status(&e)
            }
        }
    })
}

/// Release a cache handle. Null is a no-op.
///
/// # Safety
/// `cache` must be a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mceval_cache_free(cache: *mut McevalCache) {
    if cache.is_null() {
        return;
    }
    drop(unsafe { Box::from_raw(cache) });
}

/// Number of entries. Null gives 0.
///
/// # Safety
/// `cache` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mceval_cache_len(cache: *const McevalCache) -> usize {
    if cache.is_null() {
        return 0;
    }
    unsafe { &(*cache).0 }.entries.len()
}

/// Copy the entry view at `index` into `*out`.
///
/// # Safety
/// `cache` must be a live handle and `out` writable. The coords pointer in
/// the view borrows the cache.
#[no_mangle]
pub unsafe extern "C" fn mceval_cache_entry(
    cache: *const McevalCache,
    index: usize,
    out: *mut McevalEntry,
) -> McevalStatus {
    guard(|| {
        if cache.is_null() || out.is_null() {
            set_last_error("cache and out must be non-null");
            return McevalStatus::NullArgument;
        }
        let entries = &unsafe { &(*cache).0 }.entries;
        let Some(e) = entries.get(index) else {
            set_last_error(&format!("entry index {index} out of range ({} entries)", entries.len()));
            return McevalStatus::InvalidArgument;
        };
        unsafe {
            *out = McevalEntry {
                id: e.id,
                value: e.value,
                samples_used: e.samples_used,
                coords: e.coords.as_ptr(),
                coords_len: e.coords.len(),
            };
        }
        McevalStatus::Ok
    })
}

/// Copy cache metadata into `*out`.
///
/// # Safety
/// `cache` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mceval_cache_meta(
    cache: *const McevalCache,
    out: *mut McevalMeta,
) -> McevalStatus {
    guard(|| {
        if cache.is_null() || out.is_null() {
            set_last_error("cache and out must be non-null");
            return McevalStatus::NullArgument;
        }
        let c = unsafe { &(*cache).0 };
        unsafe {
            *out = McevalMeta {
                epsilon: c.meta.epsilon,
                delta: c.meta.delta,
                tau: c.meta.tau,
                clip: c.meta.clip,
                k_budget: c.meta.k_budget,
                m: c.meta.m,
                seed: c.meta.seed,
                total_samples: c.meta.total_samples,
                queries_consumed: c.usage.queries_consumed,
            };
        }
        McevalStatus::Ok
    })
}

/// Certify predictions against the cache under its certified loss.
///
/// `ids`/`values` are parallel arrays of length `len` mapping state ids to
/// predicted values; every cached id must be present. Unless `read_only` is
/// nonzero one unit of K budget is consumed in memory (persist it with
/// `mceval_cache_save`).
///
/// # Safety
/// `cache` must be a live handle; `ids` and `values` must point to `len`
/// readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mceval_cache_evaluate(
    cache: *mut McevalCache,
    ids: *const u64,
    values: *const f64,
    len: usize,
    read_only: i32,
    out: *mut McevalReport,
) -> McevalStatus {
    guard(|| {
        if cache.is_null() || out.is_null() || (len > 0 && (ids.is_null() || values.is_null())) {
            set_last_error("cache, out and (for len > 0) ids/values must be non-null");
            return McevalStatus::NullArgument;
        }
        let cache = unsafe { &mut (*cache).0 };
        let ids = unsafe { std::slice::from_raw_parts(ids, len) };
        let values = unsafe { std::slice::from_raw_parts(values, len) };
        let predictions: Predictions = ids.iter().copied().zip(values.iter().copied()).collect();
        let spec = match certified_loss_spec(cache) {
            Ok(s) => s,
            Err(e) => {
                set_last_error(&e.to_string());
                return McevalStatus::IncompatibleLoss;
            }
        };
        match evaluate(cache, &predictions, &spec, read_only != 0) {
            Ok(report) => {
                unsafe {
                    *out = McevalReport {
                        empirical_loss: report.empirical_loss,
                        deviation_bound: report.deviation_bound,
                        confidence: report.confidence,
                        k_budget: report.k_budget,
                        k_consumed: report.k_consumed,
                        certificate: match report.certificate {
                            CertificateStatus::Valid => McevalCertificate::Valid,
                            CertificateStatus::Voided => McevalCertificate::Voided,
                            CertificateStatus::Advisory => McevalCertificate::Advisory,
                        },
                    };
                }
                McevalStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                match e {
                    EvaluateError::MissingPredictions(_) => McevalStatus::MissingPrediction,
                    EvaluateError::IncompatibleLossSpec(_) => McevalStatus::IncompatibleLoss,
                    EvaluateError::Loss(_) => McevalStatus::InvalidArgument,
                }
            }
        }
    })
}

/// Rollout length keeping the discounted truncation bias within eps*tau.
/// Returns InvalidArgument for gamma >= 1 or eps*tau = 0 with r_max > 0.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mceval_truncation_length(
    eps: f64,
    tau: f64,
    gamma: f64,
    r_max: f64,
    out: *mut u64,
) -> McevalStatus {
    guard(|| {
        if out.is_null() {
            set_last_error("out must be non-null");
            return McevalStatus::NullArgument;
        }
        let eps_ok = eps.is_finite() && eps > 0.0;
        if !eps_ok || tau < 0.0 || r_max < 0.0 {
            set_last_error("need eps > 0, tau >= 0, r_max >= 0");
            return McevalStatus::InvalidArgument;
        }
        match truncation_length(eps, tau, gamma, r_max) {
            Ok(l) => {
                unsafe { *out = l };
                McevalStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                McevalStatus::InvalidArgument
            }
        }
    })
}

/// States needed so the loss-mean deviation over K queries stays at eps_m:
/// ceil(ln(4K/delta) c^2 / (2 eps_m^2)). Returns 0 on invalid inputs.
#[no_mangle]
pub extern "C" fn mceval_required_states(eps_m: f64, delta: f64, clip: f64, k: u64) -> u64 {
    guard_value(|| {
        if !(eps_m > 0.0 && delta > 0.0 && delta < 1.0 && clip > 0.0 && k >= 1) {
            set_last_error("need eps_m > 0, delta in (0,1), clip > 0, k >= 1");
            return 0;
        }
        required_states(eps_m, delta, clip, k)
    })
}

/// Three-term deviation bound of the certified loss estimate. Returns NaN on
/// invalid inputs.
#[no_mangle]
pub extern "C" fn mceval_deviation_bound(eps: f64, delta: f64, clip: f64, k: u64, m: f64) -> f64 {
    guard_value(|| {
        if !(eps >= 0.0 && delta > 0.0 && delta < 1.0 && clip > 0.0 && k >= 1 && m > 0.0) {
            set_last_error("need eps >= 0, delta in (0,1), clip > 0, k >= 1, m > 0");
            return f64::NAN;
        }
        loss_deviation_bound(eps, delta, clip, k, m).total
    })
}

fn guard_value<T, F: FnOnce() -> T>(f: F) -> T
where
    T: Default,
{
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_last_error("panic in mceval");
        T::default()
    })
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes (or be null to query the length).
#[no_mangle]
pub unsafe extern "C" fn mceval_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}
