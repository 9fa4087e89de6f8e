//! C ABI for the bustime prediction library.
//!
//! The surface is deliberately small: load a trained model bank from its
//! model file, query its shape, and predict travel times for a bus observed
//! beyond a stop. Handles are opaque pointers owned by this library; every
//! function returns a status code and the last error message is retrievable
//! per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use bustime::model::{load_bank, predict_travel_time, BusState, ModelBank};
use bustime::Timestamp;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BustimeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    LoadFailed = 3,
    BadArgument = 4,
    UntrainedStop = 5,
    PredictFailed = 6,
}

/// Opaque handle to a loaded model bank.
pub struct BustimeBank {
    inner: ModelBank,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bustime_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the current thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bustime_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Load a model bank from a model file written by `bustime train`.
///
/// On success writes a new handle into `out`; free it with
/// [`bustime_bank_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bustime_bank_load(
    path: *const c_char,
    out: *mut *mut BustimeBank,
) -> BustimeStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer argument");
        return BustimeStatus::NullPointer;
    }
    let path = match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return BustimeStatus::InvalidUtf8;
        }
    };
    match load_bank(Path::new(path)) {
        Ok(bank) => {
            unsafe { *out = Box::into_raw(Box::new(BustimeBank { inner: bank })) };
            BustimeStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            BustimeStatus::LoadFailed
        }
    }
}

/// Release a bank handle. A null handle is a no-op.
///
/// # Safety
/// `bank` must be null or a handle from [`bustime_bank_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bustime_bank_free(bank: *mut BustimeBank) {
    if !bank.is_null() {
        drop(unsafe { Box::from_raw(bank) });
    }
}

/// Number of per-stop models in the bank (stops 0..count-1), or -1 on null.
///
/// # Safety
/// `bank` must be null or a live handle from [`bustime_bank_load`].
#[no_mangle]
pub unsafe extern "C" fn bustime_bank_stop_count(bank: *const BustimeBank) -> i64 {
    if bank.is_null() {
        set_error("null bank handle");
        return -1;
    }
    unsafe { &*bank }.inner.stops.len() as i64
}

/// Copy the bank's route id into `buf` (NUL-terminated, truncated). Returns
/// the full id length in bytes, or -1 on null.
///
/// # Safety
/// `bank` must be a live handle; `buf` null or at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bustime_bank_route_id(
    bank: *const BustimeBank,
    buf: *mut c_char,
    len: usize,
) -> i64 {
    if bank.is_null() {
        set_error("null bank handle");
        return -1;
    }
    let id = unsafe { &*bank }.inner.route_id.as_bytes();
    if !buf.is_null() && len > 0 {
        let n = id.len().min(len - 1);
        unsafe {
            std::ptr::copy_nonoverlapping(id.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
    }
    id.len() as i64
}

/// Distance from origin of stop `k` in meters, written to `out`.
///
/// # Safety
/// `bank` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bustime_bank_stop_distance(
    bank: *const BustimeBank,
    k: usize,
    out: *mut f64,
) -> BustimeStatus {
    if bank.is_null() || out.is_null() {
        set_error("null pointer argument");
        return BustimeStatus::NullPointer;
    }
    let bank = unsafe { &*bank };
    match bank.inner.stop_distances.get(k) {
        Some(&d) => {
            unsafe { *out = d };
            BustimeStatus::Ok
        }
        None => {
            set_error("stop index out of range");
            BustimeStatus::BadArgument
        }
    }
}

/// Predict cumulative travel times from stop `k`.
///
/// `departure_epoch_s` is the bus's interpolated passage of the stop, as
/// local civil seconds since 1970-01-01. `obs_dist`/`obs_t` carry `n_obs`
/// observations beyond the stop (meters, minutes); the mixed-model kind
/// requires at least one. Predictions for the `n_targets` target distances
/// (meters beyond the stop) are written to `out` in minutes. The
/// previous-bus feature is imputed from the training table.
///
/// # Safety
/// `bank` must be a live handle; `obs_dist`/`obs_t` must hold `n_obs`
/// doubles (or be null when `n_obs` is 0); `targets` must hold `n_targets`
/// doubles and `out` must have room for `n_targets` doubles.
#[no_mangle]
pub unsafe extern "C" fn bustime_predict(
    bank: *const BustimeBank,
    k: usize,
    departure_epoch_s: i64,
    obs_dist: *const f64,
    obs_t: *const f64,
    n_obs: usize,
    targets: *const f64,
    n_targets: usize,
    out: *mut f64,
) -> BustimeStatus {
    if bank.is_null() || out.is_null() || targets.is_null() {
        set_error("null pointer argument");
        return BustimeStatus::NullPointer;
    }
    if n_obs > 0 && (obs_dist.is_null() || obs_t.is_null()) {
        set_error("null observation arrays with n_obs > 0");
        return BustimeStatus::NullPointer;
    }
    let bank = unsafe { &*bank };
    let observed: Vec<(f64, f64)> = (0..n_obs)
        .map(|i| unsafe { (*obs_dist.add(i), *obs_t.add(i)) })
        .collect();
    let target_slice = unsafe { std::slice::from_raw_parts(targets, n_targets) };
    if target_slice.iter().any(|v| !v.is_finite() || *v < 0.0)
        || observed.iter().any(|(d, t)| !d.is_finite() || !t.is_finite())
    {
        set_error("non-finite or negative inputs");
        return BustimeStatus::BadArgument;
    }
    let state = BusState { departure: Timestamp(departure_epoch_s), observed };
    match predict_travel_time(&bank.inner, k, &state, target_slice, None) {
        Ok(preds) => {
            unsafe { std::ptr::copy_nonoverlapping(preds.as_ptr(), out, n_targets) };
            BustimeStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            match e {
                bustime::model::ModelError::UntrainableStop { .. } => BustimeStatus::UntrainedStop,
                bustime::model::ModelError::StopIndex(..) => BustimeStatus::BadArgument,
                bustime::model::ModelError::NoObservations => BustimeStatus::BadArgument,
                _ => BustimeStatus::PredictFailed,
            }
        }
    }
}
