//! C ABI over the kwapi measurement codec, signing, energy integration and
//! round-robin archives.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`KwapiStatus`]; on failure a message
//!   is available from [`kwapi_last_error`] on the same thread.
//! * Objects are opaque handles created by `*_new`/`*_decode` and released
//!   with the matching `*_free`. Passing NULL to a free function is a no-op.
//! * Variable-size outputs go into caller buffers. `out_len` always receives
//!   the required size; if `cap` is too small nothing is written and
//!   `KWAPI_STATUS_BUFFER_TOO_SMALL` is returned.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kwapi::api::integrate_energy;
use kwapi::drivers::quantize;
use kwapi::viz::{ArchiveSpec, Consolidation, RoundRobinArchive, UpdateOutcome};
use kwapi::{decode_measurement, encode_measurement, Measurement, ProbeId, SigningSecret};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KwapiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Decode = 3,
    KeyTooShort = 4,
    OutOfOrder = 5,
    Format = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Outcome of [`kwapi_archive_update`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KwapiUpdate {
    Accepted = 0,
    Late = 1,
    Invalid = 2,
}

/// Archive consolidation function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KwapiConsolidation {
    Average = 0,
    Min = 1,
    Max = 2,
}

/// Opaque measurement handle.
pub struct KwapiMeasurement(Measurement);

/// Opaque archive handle.
pub struct KwapiArchive(RoundRobinArchive);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: KwapiStatus, msg: impl Into<String>) -> KwapiStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> KwapiStatus) -> KwapiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(KwapiStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `ptr` must be NULL or valid for `len` bytes.
unsafe fn bytes<'a>(ptr: *const u8, len: usize) -> Option<&'a [u8]> {
    if ptr.is_null() {
        return if len == 0 { Some(&[]) } else { None };
    }
    Some(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `buf` must be NULL or valid for `cap` bytes; `out_len` must be valid.
unsafe fn copy_out(data: &[u8], buf: *mut u8, cap: usize, out_len: *mut usize) -> KwapiStatus {
    if out_len.is_null() {
        return fail(KwapiStatus::NullPointer, "out_len is NULL");
    }
    *out_len = data.len();
    if data.len() > cap || (buf.is_null() && !data.is_empty()) {
        return fail(
            KwapiStatus::BufferTooSmall,
            format!("need {} bytes, have {cap}", data.len()),
        );
    }
    if !data.is_empty() {
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
    }
    KwapiStatus::Ok
}

fn secret(key: *const u8, key_len: usize) -> Result<SigningSecret, KwapiStatus> {
    // SAFETY: caller contract of the exported functions.
    let key = unsafe { bytes(key, key_len) }
        .ok_or_else(|| fail(KwapiStatus::NullPointer, "key is NULL"))?;
    SigningSecret::new(key.to_vec()).map_err(|e| fail(KwapiStatus::KeyTooShort, e.to_string()))
}

/// Last error message on this thread, or NULL. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kwapi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kwapi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a measurement for probe `"site/name"`.
///
/// # Safety
/// `probe` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_new(
    probe: *const c_char,
    timestamp: f64,
    watts: f64,
    out: *mut *mut KwapiMeasurement,
) -> KwapiStatus {
    guard(|| {
        if probe.is_null() || out.is_null() {
            return fail(KwapiStatus::NullPointer, "probe or out is NULL");
        }
        let Ok(text) = CStr::from_ptr(probe).to_str() else {
            return fail(KwapiStatus::InvalidArgument, "probe is not UTF-8");
        };
        let probe: ProbeId = match text.parse() {
            Ok(p) => p,
            Err(e) => return fail(KwapiStatus::InvalidArgument, format!("{e}")),
        };
        match Measurement::new(probe, timestamp, watts) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(KwapiMeasurement(m)));
                KwapiStatus::Ok
            }
            Err(e) => fail(KwapiStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Sets the optional voltage; a negative or non-finite value is rejected.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_set_volts(m: *mut KwapiMeasurement, volts: f64) -> KwapiStatus {
    guard(|| {
        let Some(m) = m.as_mut() else {
            return fail(KwapiStatus::NullPointer, "measurement is NULL");
        };
        match m.0.clone().with_volts(volts) {
            Ok(n) => {
                m.0 = n;
                KwapiStatus::Ok
            }
            Err(e) => fail(KwapiStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Sets the optional current.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_set_amps(m: *mut KwapiMeasurement, amps: f64) -> KwapiStatus {
    guard(|| {
        let Some(m) = m.as_mut() else {
            return fail(KwapiStatus::NullPointer, "measurement is NULL");
        };
        match m.0.clone().with_amps(amps) {
            Ok(n) => {
                m.0 = n;
                KwapiStatus::Ok
            }
            Err(e) => fail(KwapiStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `m` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_free(m: *mut KwapiMeasurement) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Power in watts, or NaN for a NULL handle.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_watts(m: *const KwapiMeasurement) -> f64 {
    m.as_ref().map_or(f64::NAN, |m| m.0.watts)
}

/// Timestamp in Unix seconds, or NaN for a NULL handle.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_timestamp(m: *const KwapiMeasurement) -> f64 {
    m.as_ref().map_or(f64::NAN, |m| m.0.timestamp)
}

/// Writes the probe id (without NUL terminator).
///
/// # Safety
/// `m` must be a live handle, `buf` valid for `cap` bytes, `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_probe(
    m: *const KwapiMeasurement,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> KwapiStatus {
    guard(|| match m.as_ref() {
        Some(m) => copy_out(m.0.probe.topic().as_bytes(), buf, cap, out_len),
        None => fail(KwapiStatus::NullPointer, "measurement is NULL"),
    })
}

/// Canonical JSON payload.
///
/// # Safety
/// `m` must be a live handle, `buf` valid for `cap` bytes, `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_encode(
    m: *const KwapiMeasurement,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> KwapiStatus {
    guard(|| match m.as_ref() {
        Some(m) => copy_out(&encode_measurement(&m.0), buf, cap, out_len),
        None => fail(KwapiStatus::NullPointer, "measurement is NULL"),
    })
}

/// Parses a JSON payload into a new handle.
///
/// # Safety
/// `data` must be valid for `len` bytes and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_decode(
    data: *const u8,
    len: usize,
    out: *mut *mut KwapiMeasurement,
) -> KwapiStatus {
    guard(|| {
        let Some(data) = bytes(data, len) else {
            return fail(KwapiStatus::NullPointer, "data is NULL");
        };
        if out.is_null() {
            return fail(KwapiStatus::NullPointer, "out is NULL");
        }
        match decode_measurement(data) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(KwapiMeasurement(m)));
                KwapiStatus::Ok
            }
            Err(e) => fail(KwapiStatus::Decode, e.to_string()),
        }
    })
}

/// Signs in place with HMAC-SHA-256. Keys shorter than 16 bytes are refused.
///
/// # Safety
/// `m` must be a live handle and `key` valid for `key_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_sign(
    m: *mut KwapiMeasurement,
    key: *const u8,
    key_len: usize,
) -> KwapiStatus {
    guard(|| {
        let Some(m) = m.as_mut() else {
            return fail(KwapiStatus::NullPointer, "measurement is NULL");
        };
        match secret(key, key_len) {
            Ok(s) => {
                m.0 = kwapi::sign(&m.0, &s);
                KwapiStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Sets `*out_valid` to whether the signature checks.
///
/// # Safety
/// `m` must be a live handle, `key` valid for `key_len` bytes, `out_valid` valid.
#[no_mangle]
pub unsafe extern "C" fn kwapi_measurement_verify(
    m: *const KwapiMeasurement,
    key: *const u8,
    key_len: usize,
    out_valid: *mut bool,
) -> KwapiStatus {
    guard(|| {
        let (Some(m), false) = (m.as_ref(), out_valid.is_null()) else {
            return fail(KwapiStatus::NullPointer, "measurement or out_valid is NULL");
        };
        match secret(key, key_len) {
            Ok(s) => {
                *out_valid = kwapi::verify(&m.0, &s);
                KwapiStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Trapezoidal kWh between two samples. Pairs further apart than
/// `gap_limit_s` yield 0 with `*out_gap` set.
///
/// # Safety
/// `out_kwh` and `out_gap` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kwapi_integrate_energy(
    prev_w: f64,
    prev_t: f64,
    w: f64,
    t: f64,
    gap_limit_s: f64,
    out_kwh: *mut f64,
    out_gap: *mut bool,
) -> KwapiStatus {
    guard(|| {
        if out_kwh.is_null() || out_gap.is_null() {
            return fail(KwapiStatus::NullPointer, "output pointer is NULL");
        }
        match integrate_energy(prev_w, prev_t, w, t, gap_limit_s) {
            Ok(step) => {
                *out_kwh = step.kwh;
                *out_gap = step.gap;
                KwapiStatus::Ok
            }
            Err(e) => fail(KwapiStatus::OutOfOrder, e.to_string()),
        }
    })
}

/// Rounds to the nearest multiple of `precision_w`; NaN if the precision
/// is not a positive finite number.
#[no_mangle]
pub extern "C" fn kwapi_quantize(watts: f64, precision_w: f64) -> f64 {
    if precision_w.is_finite() && precision_w > 0.0 {
        quantize(watts, precision_w)
    } else {
        f64::NAN
    }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kwapi_archive_new(
    step_s: f64,
    capacity: u32,
    consolidation: KwapiConsolidation,
    out: *mut *mut KwapiArchive,
) -> KwapiStatus {
    guard(|| {
        if out.is_null() {
            return fail(KwapiStatus::NullPointer, "out is NULL");
        }
        let c = match consolidation {
            KwapiConsolidation::Average => Consolidation::Average,
            KwapiConsolidation::Min => Consolidation::Min,
            KwapiConsolidation::Max => Consolidation::Max,
        };
        match ArchiveSpec::new(step_s, capacity, c) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(KwapiArchive(RoundRobinArchive::new(spec))));
                KwapiStatus::Ok
            }
            Err(e) => fail(KwapiStatus::InvalidArgument, e),
        }
    })
}

/// # Safety
/// `a` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kwapi_archive_free(a: *mut KwapiArchive) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// # Safety
/// `a` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kwapi_archive_update(
    a: *mut KwapiArchive,
    t: f64,
    w: f64,
    out: *mut KwapiUpdate,
) -> KwapiStatus {
    guard(|| {
        let (Some(a), false) = (a.as_mut(), out.is_null()) else {
            return fail(KwapiStatus::NullPointer, "archive or out is NULL");
        };
        *out = match a.0.update(t, w) {
            UpdateOutcome::Accepted => KwapiUpdate::Accepted,
            UpdateOutcome::Late => KwapiUpdate::Late,
            UpdateOutcome::Invalid => KwapiUpdate::Invalid,
        };
        KwapiStatus::Ok
    })
}

/// Retained buckets intersecting `[t_from, t_to)`. Bucket starts go to
/// `starts`, values to `values` with NaN for absent buckets; both arrays
/// hold `cap` entries and `*out_len` receives the bucket count.
///
/// # Safety
/// `a` must be a live handle; `starts` and `values` valid for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn kwapi_archive_fetch(
    a: *const KwapiArchive,
    t_from: f64,
    t_to: f64,
    starts: *mut f64,
    values: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> KwapiStatus {
    guard(|| {
        let (Some(a), false) = (a.as_ref(), out_len.is_null()) else {
            return fail(KwapiStatus::NullPointer, "archive or out_len is NULL");
        };
        if t_from > t_to {
            return fail(KwapiStatus::InvalidArgument, "t_from exceeds t_to");
        }
        let buckets = a.0.fetch(t_from, t_to);
        *out_len = buckets.len();
        if buckets.len() > cap || (!buckets.is_empty() && (starts.is_null() || values.is_null())) {
            return fail(
                KwapiStatus::BufferTooSmall,
                format!("need {} entries, have {cap}", buckets.len()),
            );
        }
        for (i, b) in buckets.iter().enumerate() {
            *starts.add(i) = b.start;
            *values.add(i) = b.value.unwrap_or(f64::NAN);
        }
        KwapiStatus::Ok
    })
}

/// Serialized archive in the on-disk format.
///
/// # Safety
/// `a` must be a live handle, `buf` valid for `cap` bytes, `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn kwapi_archive_serialize(
    a: *const KwapiArchive,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> KwapiStatus {
    guard(|| match a.as_ref() {
        Some(a) => copy_out(&a.0.to_bytes(), buf, cap, out_len),
        None => fail(KwapiStatus::NullPointer, "archive is NULL"),
    })
}

/// # Safety
/// `data` must be valid for `len` bytes and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kwapi_archive_deserialize(
    data: *const u8,
    len: usize,
    out: *mut *mut KwapiArchive,
) -> KwapiStatus {
    guard(|| {
        let Some(data) = bytes(data, len) else {
            return fail(KwapiStatus::NullPointer, "data is NULL");
        };
        if out.is_null() {
            return fail(KwapiStatus::NullPointer, "out is NULL");
        }
        match RoundRobinArchive::from_bytes(data) {
            Ok(a) => {
                *out = Box::into_raw(Box::new(KwapiArchive(a)));
                KwapiStatus::Ok
            }
            Err(e) => fail(KwapiStatus::Format, e.to_string()),
        }
    })
}
