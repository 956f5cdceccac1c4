//! C ABI over ensemble fusion, depth and calibration metrics, and PFM I/O.
//!
//! Handles are opaque heap objects owned by the caller and released with
//! the matching `*_free` function. Every fallible call returns a
//! [`BdStatus`]; the message of the last failure on the calling thread is
//! available through [`bd_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use bayesdepth::ensemble::{fuse, EnsembleOutput, Member};
use bayesdepth::imagery::{read_pfm, write_pfm, DepthMap, Dims, Mask, UncKind, UncMap};
use bayesdepth::metrics::{
    auce, calibration_curve, default_p_grid, depth_metrics, scale_correction,
};
use bayesdepth::{Error, PfmError};

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Parse = 5,
    NoValidPixels = 6,
    Panic = 7,
}

/// Whether an uncertainty map holds standard deviations or variances.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdUncKind {
    Std = 0,
    Variance = 1,
}

/// Selects one of the fused maps.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdEnsembleMap {
    Mean = 0,
    VarA = 1,
    VarE = 2,
    VarT = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BdDepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BdAuce {
    /// Positive when the intervals are too narrow.
    pub signed_area: f64,
    pub absolute_area: f64,
}

/// Opaque depth map.
pub struct BdDepthMap(DepthMap);
/// Opaque uncertainty map.
pub struct BdUncMap(UncMap);
/// Opaque fused ensemble output.
pub struct BdEnsemble(EnsembleOutput);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(BdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } | Error::DataLength { .. } => BdStatus::DimensionMismatch,
            Error::Io { .. } => BdStatus::Io,
            Error::Pfm(_) | Error::Json(_) => BdStatus::Parse,
            Error::NoValidPixels => BdStatus::NoValidPixels,
            _ => BdStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<PfmError> for Failure {
    fn from(e: PfmError) -> Self {
        Failure(BdStatus::Parse, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(BdStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BdStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        Err(Failure(BdStatus::Panic, "internal panic".into()))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|m| m.borrow_mut().clear());
            BdStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|m| *m.borrow_mut() = msg);
            status
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn to_path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if len != src.len() {
        return Err(Failure(
            BdStatus::DimensionMismatch,
            format!("buffer holds {len} values, map has {}", src.len()),
        ));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), out, len);
    Ok(())
}

/// Null means every pixel is valid; otherwise `width * height` bytes,
/// non-zero for valid.
unsafe fn to_mask(p: *const u8, width: usize, height: usize) -> Result<Mask, Failure> {
    if p.is_null() {
        return Ok(Mask::all(width, height));
    }
    let bytes = slice(p, width * height, "mask")?;
    Ok(Mask::new(width, height, bytes.iter().map(|&b| b != 0).collect())?)
}

fn kind(k: BdUncKind) -> UncKind {
    match k {
        BdUncKind::Std => UncKind::Std,
        BdUncKind::Variance => UncKind::Variance,
    }
}

/// Copies the message of the last failure on this thread into `buf`
/// (NUL-terminated, truncated to `len`) and returns its full length in
/// bytes without the terminator. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bd_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|m| {
        let msg = m.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// New depth map from `width * height` row-major values, all positive.
///
/// # Safety
/// `data` must point to `width * height` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bd_depth_map_new(
    width: usize,
    height: usize,
    data: *const f64,
    out: *mut *mut BdDepthMap,
) -> BdStatus {
    guard(|| {
        let n = width.checked_mul(height).ok_or_else(|| invalid("size overflow"))?;
        let v = slice(data, n, "data")?.to_vec();
        put(out, BdDepthMap(DepthMap::new(width, height, v)?))
    })
}

/// Reads a single-channel PFM file as depth.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bd_depth_map_read_pfm(
    path: *const c_char,
    out: *mut *mut BdDepthMap,
) -> BdStatus {
    guard(|| {
        let map = read_pfm(to_path(path)?)?.into_depth()?;
        put(out, BdDepthMap(map))
    })
}

/// # Safety
/// `map` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bd_depth_map_write_pfm(
    map: *const BdDepthMap,
    path: *const c_char,
) -> BdStatus {
    guard(|| {
        let m = deref(map, "map")?;
        Ok(write_pfm(&m.0, to_path(path)?)?)
    })
}

/// # Safety
/// `map` must be a live handle; `width` and `height` writable.
#[no_mangle]
pub unsafe extern "C" fn bd_depth_map_dims(
    map: *const BdDepthMap,
    width: *mut usize,
    height: *mut usize,
) -> BdStatus {
    guard(|| {
        let m = deref(map, "map")?;
        if width.is_null() || height.is_null() {
            return Err(null("width/height"));
        }
        *width = m.0.width();
        *height = m.0.height();
        Ok(())
    })
}

/// Copies the `width * height` values into `out`; `len` must match exactly.
///
/// # Safety
/// `map` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bd_depth_map_data(
    map: *const BdDepthMap,
    out: *mut f64,
    len: usize,
) -> BdStatus {
    guard(|| copy_out(deref(map, "map")?.0.data(), out, len))
}

/// # Safety
/// `map` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bd_depth_map_free(map: *mut BdDepthMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// New uncertainty map from `width * height` non-negative values.
///
/// # Safety
/// `data` must point to `width * height` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bd_unc_map_new(
    width: usize,
    height: usize,
    unc_kind: BdUncKind,
    data: *const f64,
    out: *mut *mut BdUncMap,
) -> BdStatus {
    guard(|| {
        let n = width.checked_mul(height).ok_or_else(|| invalid("size overflow"))?;
        let v = slice(data, n, "data")?.to_vec();
        put(out, BdUncMap(UncMap::new(width, height, kind(unc_kind), v)?))
    })
}

/// Reads a single-channel PFM file as uncertainty of the given kind.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bd_unc_map_read_pfm(
    path: *const c_char,
    unc_kind: BdUncKind,
    out: *mut *mut BdUncMap,
) -> BdStatus {
    guard(|| {
        let map = read_pfm(to_path(path)?)?.into_unc(kind(unc_kind))?;
        put(out, BdUncMap(map))
    })
}

/// # Safety
/// `map` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bd_unc_map_write_pfm(map: *const BdUncMap, path: *const c_char) -> BdStatus {
    guard(|| {
        let m = deref(map, "map")?;
        Ok(write_pfm(&m.0, to_path(path)?)?)
    })
}

/// # Safety
/// `map` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bd_unc_map_data(map: *const BdUncMap, out: *mut f64, len: usize) -> BdStatus {
    guard(|| copy_out(deref(map, "map")?.0.data(), out, len))
}

/// # Safety
/// `map` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bd_unc_map_free(map: *mut BdUncMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Fuses `m` members (depth, aleatoric uncertainty, seed) into mean and
/// aleatoric, epistemic and total variance. The result does not depend on
/// the order of the members.
///
/// # Safety
/// `depths`, `sigmas` and `seeds` must each point to `m` entries; every
/// map handle must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bd_fuse(
    depths: *const *const BdDepthMap,
    sigmas: *const *const BdUncMap,
    seeds: *const u64,
    m: usize,
    out: *mut *mut BdEnsemble,
) -> BdStatus {
    guard(|| {
        if m == 0 {
            return Err(invalid("at least one member is required"));
        }
        let d = slice(depths, m, "depths")?;
        let s = slice(sigmas, m, "sigmas")?;
        let seeds = slice(seeds, m, "seeds")?;
        let members = (0..m)
            .map(|i| {
                let depth = deref(d[i], "depth")?.0.clone();
                let sigma = deref(s[i], "sigma")?.0.clone();
                Ok(Member::new(seeds[i], depth, sigma)?)
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        put(out, BdEnsemble(fuse(&members)?))
    })
}

/// # Safety
/// `ens` must be a live handle; `width` and `height` writable.
#[no_mangle]
pub unsafe extern "C" fn bd_ensemble_dims(
    ens: *const BdEnsemble,
    width: *mut usize,
    height: *mut usize,
) -> BdStatus {
    guard(|| {
        let e = deref(ens, "ensemble")?;
        if width.is_null() || height.is_null() {
            return Err(null("width/height"));
        }
        *width = e.0.d_hat.width();
        *height = e.0.d_hat.height();
        Ok(())
    })
}

/// Copies one fused map; variances are returned as variances.
///
/// # Safety
/// `ens` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bd_ensemble_data(
    ens: *const BdEnsemble,
    which: BdEnsembleMap,
    out: *mut f64,
    len: usize,
) -> BdStatus {
    guard(|| {
        let e = &deref(ens, "ensemble")?.0;
        let src = match which {
            BdEnsembleMap::Mean => e.d_hat.data(),
            BdEnsembleMap::VarA => e.var_a.data(),
            BdEnsembleMap::VarE => e.var_e.data(),
            BdEnsembleMap::VarT => e.var_t.data(),
        };
        copy_out(src, out, len)
    })
}

/// Writes `mean.pfm`, `var_a.pfm`, `var_e.pfm`, `var_t.pfm` and
/// `ensemble.json` into `dir`.
///
/// # Safety
/// `ens` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bd_ensemble_save(ens: *const BdEnsemble, dir: *const c_char) -> BdStatus {
    guard(|| {
        let e = deref(ens, "ensemble")?;
        Ok(e.0.save(to_path(dir)?)?)
    })
}

/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bd_ensemble_load(dir: *const c_char, out: *mut *mut BdEnsemble) -> BdStatus {
    guard(|| put(out, BdEnsemble(EnsembleOutput::load(to_path(dir)?)?)))
}

/// # Safety
/// `ens` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bd_ensemble_free(ens: *mut BdEnsemble) {
    if !ens.is_null() {
        drop(Box::from_raw(ens));
    }
}

/// Ratio of the median reference depth to the median predicted depth over
/// the masked pixels.
///
/// # Safety
/// Handles must be live; `mask` null or `width * height` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bd_scale_correction(
    gt: *const BdDepthMap,
    pred: *const BdDepthMap,
    mask: *const u8,
    out: *mut f64,
) -> BdStatus {
    guard(|| {
        let g = &deref(gt, "gt")?.0;
        let p = &deref(pred, "pred")?.0;
        let m = to_mask(mask, g.width(), g.height())?;
        let s = scale_correction(g, p, &m)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = s;
        Ok(())
    })
}

/// Depth error metrics of `pred` against `gt`, optionally after median
/// scale correction.
///
/// # Safety
/// Handles must be live; `mask` null or `width * height` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bd_depth_metrics(
    gt: *const BdDepthMap,
    pred: *const BdDepthMap,
    mask: *const u8,
    median_scale: bool,
    out: *mut BdDepthMetrics,
) -> BdStatus {
    guard(|| {
        let g = &deref(gt, "gt")?.0;
        let mut p = deref(pred, "pred")?.0.clone();
        let m = to_mask(mask, g.width(), g.height())?;
        if median_scale {
            p = p.scaled(scale_correction(g, &p, &m)?)?;
        }
        let r = depth_metrics(g, &p, &m)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = BdDepthMetrics {
            abs_rel: r.abs_rel,
            sq_rel: r.sq_rel,
            rmse: r.rmse,
            rmse_log: r.rmse_log,
            delta1: r.delta1,
            delta2: r.delta2,
            delta3: r.delta3,
        };
        Ok(())
    })
}

/// Signed and absolute area under the calibration error of Gaussian
/// prediction intervals, over confidence levels 0.01 to 0.99.
///
/// # Safety
/// Handles must be live; `mask` null or `width * height` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bd_auce(
    gt: *const BdDepthMap,
    pred: *const BdDepthMap,
    sigma: *const BdUncMap,
    mask: *const u8,
    out: *mut BdAuce,
) -> BdStatus {
    guard(|| {
        let g = &deref(gt, "gt")?.0;
        let p = &deref(pred, "pred")?.0;
        let s = &deref(sigma, "sigma")?.0;
        let m = to_mask(mask, g.width(), g.height())?;
        let a = auce(&calibration_curve(g, p, s, &m, &default_p_grid())?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = BdAuce {
            signed_area: a.signed,
            absolute_area: a.absolute,
        };
        Ok(())
    })
}
