//! C ABI over the unit-insight core.
//!
//! Every fallible function returns a [`UiStatus`]; on failure a message is
//! available from [`ui_last_error_message`] on the same thread. Codebooks are
//! opaque heap handles released with [`ui_codebook_free`]. Caller-provided
//! output buffers are sized as documented per function; nothing else is
//! allocated on the caller's behalf.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use unit_insight::interpret::{v_measure, ContingencyTable};
use unit_insight::io::{read_codebook, write_codebook};
use unit_insight::merge::{merge_kh, merge_kk, merge_kwh, CrBounds, Merged};
use unit_insight::quantizer::{deduplicate, kmeans_fit, quantize, KMeansConfig};
use unit_insight::redundancy::{ued, CrMatrix};
use unit_insight::{Codebook, Error, FeatureMatrix, UnitSequence};

/// Result codes; zero means success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UiMergeMethod {
    Kk = 0,
    Kh = 1,
    Kwh = 2,
}

/// Scores on a 0-100 scale.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UiVMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v: f64,
}

/// Opaque codebook handle.
pub struct UiCodebook {
    inner: Codebook,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(UiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => UiStatus::Io,
            Error::Format { .. } | Error::Parse { .. } | Error::Wav { .. } => UiStatus::Format,
            Error::DimensionMismatch { .. } => UiStatus::DimensionMismatch,
            Error::Invalid(_) => UiStatus::InvalidArgument,
        };
        Fail(code, e.to_string())
    }
}

fn fail(code: UiStatus, msg: impl Into<String>) -> Fail {
    Fail(code, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UiStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UiStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            UiStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(fail(UiStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

/// Borrow of `len` elements; a NULL pointer is accepted only when `len == 0`.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    non_null(p, "path")?;
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(UiStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn codebook<'a>(cb: *const UiCodebook) -> Result<&'a Codebook, Fail> {
    non_null(cb, "codebook")?;
    Ok(&(*cb).inner)
}

fn into_handle(cb: Codebook) -> *mut UiCodebook {
    Box::into_raw(Box::new(UiCodebook { inner: cb }))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ui_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ui_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ui_codebook_load(path: *const c_char, out: *mut *mut UiCodebook) -> UiStatus {
    guard(|| {
        non_null(out, "out")?;
        let cb = read_codebook(c_path(path)?)?;
        *out = into_handle(cb);
        Ok(())
    })
}

/// # Safety
/// `cb` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ui_codebook_save(cb: *const UiCodebook, path: *const c_char) -> UiStatus {
    guard(|| Ok(write_codebook(codebook(cb)?, c_path(path)?)?))
}

/// Builds a codebook from `k * dim` row-major centroids and optional `k` counts (NULL for zeros).
///
/// # Safety
/// Buffers must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ui_codebook_new(
    centroids: *const f64,
    k: usize,
    dim: usize,
    counts: *const u64,
    out: *mut *mut UiCodebook,
) -> UiStatus {
    guard(|| {
        non_null(out, "out")?;
        let c = slice(centroids, k * dim, "centroids")?.to_vec();
        let n = if counts.is_null() { vec![0; k] } else { slice(counts, k, "counts")?.to_vec() };
        *out = into_handle(Codebook::new(dim, c, n)?);
        Ok(())
    })
}

/// # Safety
/// `cb` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ui_codebook_free(cb: *mut UiCodebook) {
    if !cb.is_null() {
        drop(Box::from_raw(cb));
    }
}

/// Number of centroids, or 0 for NULL.
///
/// # Safety
/// `cb` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ui_codebook_k(cb: *const UiCodebook) -> usize {
    cb.as_ref().map_or(0, |c| c.inner.k())
}

/// Centroid dimension, or 0 for NULL.
///
/// # Safety
/// `cb` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ui_codebook_dim(cb: *const UiCodebook) -> usize {
    cb.as_ref().map_or(0, |c| c.inner.dim())
}

/// Copies the `k * dim` centroids into `out` (capacity `len`).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ui_codebook_centroids(cb: *const UiCodebook, out: *mut f64, len: usize) -> UiStatus {
    guard(|| {
        let c = codebook(cb)?.centroids();
        if len < c.len() {
            return Err(fail(UiStatus::BufferTooSmall, format!("need {} doubles, got {len}", c.len())));
        }
        slice_mut(out, c.len(), "out")?.copy_from_slice(c);
        Ok(())
    })
}

/// Copies the `k` training counts into `out` (capacity `len`).
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ui_codebook_counts(cb: *const UiCodebook, out: *mut u64, len: usize) -> UiStatus {
    guard(|| {
        let c = codebook(cb)?.counts();
        if len < c.len() {
            return Err(fail(UiStatus::BufferTooSmall, format!("need {} counts, got {len}", c.len())));
        }
        slice_mut(out, c.len(), "out")?.copy_from_slice(c);
        Ok(())
    })
}

/// k-means++ / Lloyd on `n * dim` row-major points.
///
/// # Safety
/// `points` must hold `n * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ui_kmeans_fit(
    points: *const f64,
    n: usize,
    dim: usize,
    k: usize,
    seed: u64,
    out: *mut *mut UiCodebook,
) -> UiStatus {
    guard(|| {
        non_null(out, "out")?;
        if dim == 0 {
            return Err(fail(UiStatus::InvalidArgument, "dim must be >= 1"));
        }
        let p = slice(points, n * dim, "points")?;
        *out = into_handle(kmeans_fit(p, dim, &KMeansConfig::new(k, seed))?);
        Ok(())
    })
}

/// Nearest-centroid unit for each of `frames` rows of `dim` features; writes `frames` units.
///
/// # Safety
/// `features` must hold `frames * dim` doubles and `out_units` `frames` values.
#[no_mangle]
pub unsafe extern "C" fn ui_quantize(
    cb: *const UiCodebook,
    features: *const f64,
    frames: usize,
    dim: usize,
    out_units: *mut u32,
) -> UiStatus {
    guard(|| {
        let cb = codebook(cb)?;
        let data = slice(features, frames * dim, "features")?.to_vec();
        let m = FeatureMatrix::new("ffi", 1.0, dim, data)?;
        let z = quantize(&m, cb)?;
        slice_mut(out_units, frames, "out_units")?.copy_from_slice(&z.units);
        Ok(())
    })
}

/// Collapses runs in `units[0..n]`; `out_units` and `out_durations` need room
/// for `n` values and `out_len` receives the run count.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ui_dedup(
    units: *const u32,
    n: usize,
    out_units: *mut u32,
    out_durations: *mut u32,
    out_len: *mut usize,
) -> UiStatus {
    guard(|| {
        non_null(out_len, "out_len")?;
        let z = UnitSequence::new("ffi", slice(units, n, "units")?.to_vec());
        let d = deduplicate(&z);
        slice_mut(out_units, d.len(), "out_units")?.copy_from_slice(d.units());
        slice_mut(out_durations, d.len(), "out_durations")?.copy_from_slice(d.durations());
        *out_len = d.len();
        Ok(())
    })
}

/// Unit edit distance of `b` against reference `a`, in percent of `len(a)`.
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ui_ued(a: *const u32, na: usize, b: *const u32, nb: usize, out: *mut f64) -> UiStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ued(slice(a, na, "a")?, slice(b, nb, "b")?)?;
        Ok(())
    })
}

/// V-measure of a `units x categories` row-major count table.
///
/// # Safety
/// `counts` must hold `units * categories` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ui_v_measure(
    counts: *const u64,
    units: usize,
    categories: usize,
    out: *mut UiVMeasure,
) -> UiStatus {
    guard(|| {
        non_null(out, "out")?;
        let c = slice(counts, units * categories, "counts")?.to_vec();
        let v = v_measure(&ContingencyTable::from_counts(units, categories, c)?)?;
        *out = UiVMeasure { homogeneity: v.homogeneity, completeness: v.completeness, v: v.v };
        Ok(())
    })
}

/// Merges `cb` down to `target` units. `cr_rates` is a row-major `k x k`
/// swap-rate matrix, required for `Kwh` and ignored otherwise; `seed` is used
/// by `Kk`. `out_mapping` receives `k` merged unit IDs.
///
/// # Safety
/// `cr_rates` must hold `k * k` doubles when used, `out_mapping` `k` values,
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ui_merge(
    cb: *const UiCodebook,
    method: UiMergeMethod,
    target: usize,
    cr_rates: *const f64,
    seed: u64,
    out: *mut *mut UiCodebook,
    out_mapping: *mut u32,
) -> UiStatus {
    guard(|| {
        non_null(out, "out")?;
        let cb = codebook(cb)?;
        let k = cb.k();
        let merged: Merged = match method {
            UiMergeMethod::Kk => merge_kk(cb, target, seed, false)?,
            UiMergeMethod::Kh => merge_kh(cb, target)?,
            UiMergeMethod::Kwh => {
                let rates = slice(cr_rates, k * k, "cr_rates")?.to_vec();
                let cr = CrMatrix::new(k, rates, vec![0; k])?;
                merge_kwh(cb, &cr, target, CrBounds::Reject)?
            }
        };
        slice_mut(out_mapping, k, "out_mapping")?.copy_from_slice(merged.map.mapping());
        *out = into_handle(merged.codebook);
        Ok(())
    })
}
