//! C ABI over `hamexpand`.
//!
//! Models and expansion results are opaque handles released with their
//! `_free` function. Every fallible call returns an `hx_status_t`; on
//! failure `hx_last_error_message` describes the error for the calling
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hamexpand::catalog::{black_scholes_constants, black_scholes_model, solve_correlated, stein_stein_model, SteinSteinParams};
use hamexpand::cli::to_json;
use hamexpand::config::ModelConfig;
use hamexpand::expansion::{expand, implied_vol_wing, ExpansionOptions, ExpansionResult};
use hamexpand::shooting::BvpProblem;
use hamexpand::{Error, ModelSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HxStatus {
    HxOk = 0,
    HxNullPointer = 1,
    HxInvalidArgument = 2,
    HxNumericalFailure = 3,
    HxPanic = 4,
}

/// A model together with its maturity.
pub struct HxModel {
    spec: ModelSpec,
    maturity: f64,
}

pub struct HxExpansion {
    result: ExpansionResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: HxStatus, msg: impl Into<String>) -> HxStatus {
    set_error(msg);
    status
}

fn classify(e: Error) -> HxStatus {
    let status = if e.is_validation() { HxStatus::HxInvalidArgument } else { HxStatus::HxNumericalFailure };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> HxStatus) -> HxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == HxStatus::HxOk {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(HxStatus::HxPanic, msg)
        }
    }
}

fn boxed<T>(value: T, out: *mut *mut T) -> HxStatus {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    HxStatus::HxOk
}

/// Message for the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn hx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hx_model_stein_stein(
    a: f64,
    b: f64,
    c: f64,
    sigma0: f64,
    rho: f64,
    t: f64,
    out: *mut *mut HxModel,
) -> HxStatus {
    guard(|| {
        if out.is_null() {
            return fail(HxStatus::HxNullPointer, "out is null");
        }
        let params = SteinSteinParams::new(a, b, c, sigma0, rho, t);
        match stein_stein_model(&params) {
            Ok(spec) => boxed(HxModel { spec, maturity: t }, out),
            Err(e) => fail(HxStatus::HxInvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hx_model_black_scholes(sigma: f64, y0: f64, t: f64, out: *mut *mut HxModel) -> HxStatus {
    guard(|| {
        if out.is_null() {
            return fail(HxStatus::HxNullPointer, "out is null");
        }
        if !(t > 0.0 && t.is_finite()) {
            return fail(HxStatus::HxInvalidArgument, format!("T = {t} must be positive"));
        }
        match black_scholes_model(sigma, y0) {
            Ok(spec) => boxed(HxModel { spec, maturity: t }, out),
            Err(e) => fail(HxStatus::HxInvalidArgument, e.to_string()),
        }
    })
}

/// Builds a model from the JSON of a config's "model" entry.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hx_model_from_json(json: *const c_char, out: *mut *mut HxModel) -> HxStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(HxStatus::HxNullPointer, "json or out is null");
        }
        let text = match CStr::from_ptr(json).to_str() {
            Ok(s) => s,
            Err(_) => return fail(HxStatus::HxInvalidArgument, "json is not UTF-8"),
        };
        let config: ModelConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => return fail(HxStatus::HxInvalidArgument, e.to_string()),
        };
        match config.spec() {
            Ok(spec) => boxed(
                HxModel {
                    spec,
                    maturity: config.maturity(),
                },
                out,
            ),
            Err(e) => fail(HxStatus::HxInvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `model` must come from an `hx_model_*` constructor (or be null) and is
/// invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn hx_model_free(model: *mut HxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Small-noise expansion of `model` at the target (length = projection
/// dimension) with default options.
///
/// # Safety
/// `model` must be a live handle, `target` must point to `target_len`
/// doubles and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hx_expand(
    model: *const HxModel,
    target: *const f64,
    target_len: usize,
    out: *mut *mut HxExpansion,
) -> HxStatus {
    guard(|| {
        if model.is_null() || target.is_null() || out.is_null() {
            return fail(HxStatus::HxNullPointer, "model, target or out is null");
        }
        let model = &*model;
        let target = std::slice::from_raw_parts(target, target_len).to_vec();
        let problem = match BvpProblem::new(model.spec.clone(), target, model.maturity) {
            Ok(p) => p,
            Err(e) => return fail(HxStatus::HxInvalidArgument, e.to_string()),
        };
        match expand(&problem, &ExpansionOptions::default()) {
            Ok(result) => boxed(HxExpansion { result }, out),
            Err(e) => classify(e),
        }
    })
}

/// # Safety
/// `expansion` must come from `hx_expand` (or be null) and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn hx_expansion_free(expansion: *mut HxExpansion) {
    if !expansion.is_null() {
        drop(Box::from_raw(expansion));
    }
}

/// c₁ (the minimal energy); NaN for a null handle.
///
/// # Safety
/// `expansion` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hx_expansion_c1(expansion: *const HxExpansion) -> f64 {
    expansion.as_ref().map_or(f64::NAN, |e| e.result.c1)
}

/// c₂; NaN for a null handle.
///
/// # Safety
/// `expansion` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hx_expansion_c2(expansion: *const HxExpansion) -> f64 {
    expansion.as_ref().map_or(f64::NAN, |e| e.result.c2)
}

/// # Safety
/// `expansion` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hx_expansion_minimizer_count(expansion: *const HxExpansion) -> usize {
    expansion.as_ref().map_or(0, |e| e.result.diagnostics.minimizer_count)
}

/// Whether every minimizer passed the ellipticity and non-focality checks.
///
/// # Safety
/// `expansion` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hx_expansion_hypotheses_verified(expansion: *const HxExpansion) -> bool {
    expansion
        .as_ref()
        .is_some_and(|e| e.result.diagnostics.hypotheses_verified)
}

/// Full result as JSON; release the string with `hx_string_free`.
///
/// # Safety
/// `expansion` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hx_expansion_to_json(expansion: *const HxExpansion, out: *mut *mut c_char) -> HxStatus {
    guard(|| {
        if expansion.is_null() || out.is_null() {
            return fail(HxStatus::HxNullPointer, "expansion or out is null");
        }
        match to_json(&(*expansion).result) {
            Ok(s) => {
                *out = CString::new(s).expect("json has no NUL").into_raw();
                HxStatus::HxOk
            }
            Err(e) => classify(e),
        }
    })
}

/// # Safety
/// `s` must come from this library (or be null).
#[no_mangle]
pub unsafe extern "C" fn hx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Closed-form Stein–Stein constants.
///
/// # Safety
/// `c1` and `c2` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hx_stein_stein_constants(
    a: f64,
    b: f64,
    c: f64,
    sigma0: f64,
    rho: f64,
    t: f64,
    c1: *mut f64,
    c2: *mut f64,
) -> HxStatus {
    guard(|| {
        if c1.is_null() || c2.is_null() {
            return fail(HxStatus::HxNullPointer, "c1 or c2 is null");
        }
        let params = SteinSteinParams::new(a, b, c, sigma0, rho, t);
        if let Err(e) = params.validate() {
            return fail(HxStatus::HxInvalidArgument, e.to_string());
        }
        match solve_correlated(&params) {
            Ok(s) => {
                *c1 = s.c1;
                *c2 = s.c2;
                HxStatus::HxOk
            }
            Err(e) => classify(e),
        }
    })
}

/// # Safety
/// `c1` and `c2` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hx_black_scholes_constants(sigma: f64, t: f64, y0: f64, c1: *mut f64, c2: *mut f64) -> HxStatus {
    guard(|| {
        if c1.is_null() || c2.is_null() {
            return fail(HxStatus::HxNullPointer, "c1 or c2 is null");
        }
        match black_scholes_constants(sigma, t, y0) {
            Ok(k) => {
                *c1 = k.c1;
                *c2 = k.c2;
                HxStatus::HxOk
            }
            Err(e) => fail(HxStatus::HxInvalidArgument, e.to_string()),
        }
    })
}

/// Wing coefficients (β₁, β₂) from (B₁, B₂); B₁ ≤ 2 is rejected.
///
/// # Safety
/// `beta1` and `beta2` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hx_implied_vol_wing(b1: f64, b2: f64, beta1: *mut f64, beta2: *mut f64) -> HxStatus {
    guard(|| {
        if beta1.is_null() || beta2.is_null() {
            return fail(HxStatus::HxNullPointer, "beta1 or beta2 is null");
        }
        match implied_vol_wing(b1, b2) {
            Ok((x, y)) => {
                *beta1 = x;
                *beta2 = y;
                HxStatus::HxOk
            }
            Err(e) => fail(HxStatus::HxInvalidArgument, e.to_string()),
        }
    })
}
