//! C ABI for radcine.
//!
//! Complex arrays cross the boundary as interleaved `(re, im)` doubles in
//! row-major order. Every fallible call returns a [`RadcineStatus`]; on
//! failure the message is available from [`radcine_last_error`] on the same
//! thread. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::ArrayView2;
use radcine::metrics;
use radcine::nufft::{NufftParams, NufftPlan};
use radcine::pipeline::{run_pipeline, PipelineConfig};
use radcine::types::C64;
use radcine::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadcineStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Numerical = 5,
    Panic = 6,
    Other = 7,
}

/// Opaque NUFFT plan.
pub struct RadcineNufft {
    plan: NufftPlan,
}

/// Opaque pipeline configuration.
pub struct RadcineConfig {
    cfg: PipelineConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RadcineStatus {
    match e {
        Error::Stage { source, .. } => status_of(source),
        Error::Config(_) | Error::Json(_) | Error::Weights(_) => RadcineStatus::Config,
        Error::Io { .. } | Error::MalformedHeader(_) | Error::DtypeMismatch { .. } | Error::Truncated { .. } => RadcineStatus::Io,
        Error::NonFinite(_) | Error::NotPositiveDefinite(_) | Error::Diverged(_) => RadcineStatus::Numerical,
        Error::Shape(_) | Error::OutOfRange(_) | Error::Invalid(_) | Error::Empty(_) | Error::NonRadial(_) => RadcineStatus::InvalidArgument,
        _ => RadcineStatus::Other,
    }
}

/// Runs `f`, recording errors and turning panics into [`RadcineStatus::Panic`].
fn guard<F>(f: F) -> RadcineStatus
where
    F: FnOnce() -> Result<(), (RadcineStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RadcineStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            set_error(format!("panic: {}", msg.unwrap_or_else(|| "unknown".into())));
            RadcineStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (RadcineStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RadcineStatus, String) {
    (RadcineStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (RadcineStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (RadcineStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (RadcineStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| (RadcineStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn to_complex(v: &[f64]) -> Vec<C64> {
    v.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect()
}

fn from_complex(v: impl IntoIterator<Item = C64>, out: &mut [f64]) {
    for (o, z) in out.chunks_exact_mut(2).zip(v) {
        o[0] = z.re;
        o[1] = z.im;
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn radcine_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes, 0 if none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn radcine_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Plans a NUFFT for an `n x n` image at `n_samples` k-space points given as
/// `(ky, kx)` pairs in cycles per pixel.
///
/// # Safety
/// `coords` must hold `2 * n_samples` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn radcine_nufft_new(
    n: usize,
    coords: *const f64,
    n_samples: usize,
    oversampling: f64,
    width: usize,
    out: *mut *mut RadcineNufft,
) -> RadcineStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let c = slice(coords, 2 * n_samples, "coords")?;
        let pts: Vec<[f64; 2]> = c.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let plan = NufftPlan::new(n, &pts, NufftParams { oversampling, width }).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RadcineNufft { plan }));
        Ok(())
    })
}

/// # Safety
/// `plan` must come from [`radcine_nufft_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn radcine_nufft_free(plan: *mut RadcineNufft) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Image size and sample count of a plan.
///
/// # Safety
/// `plan` must be a live plan; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn radcine_nufft_dims(plan: *const RadcineNufft, n: *mut usize, n_samples: *mut usize) -> RadcineStatus {
    guard(|| {
        let p = plan.as_ref().ok_or_else(|| null("plan"))?;
        if !n.is_null() {
            *n = p.plan.matrix_size();
        }
        if !n_samples.is_null() {
            *n_samples = p.plan.n_samples();
        }
        Ok(())
    })
}

/// Forward transform of an `n x n` complex image into `n_samples` values.
///
/// # Safety
/// `image` holds `2 n^2` doubles and `samples` room for `2 n_samples`.
#[no_mangle]
pub unsafe extern "C" fn radcine_nufft_forward(plan: *const RadcineNufft, image: *const f64, samples: *mut f64) -> RadcineStatus {
    guard(|| {
        let p = &plan.as_ref().ok_or_else(|| null("plan"))?.plan;
        let n = p.matrix_size();
        let img = to_complex(slice(image, 2 * n * n, "image")?);
        let view = ArrayView2::from_shape((n, n), &img).map_err(|e| (RadcineStatus::InvalidArgument, e.to_string()))?;
        let y = p.forward(view).map_err(lib_err)?;
        from_complex(y, slice_mut(samples, 2 * p.n_samples(), "samples")?);
        Ok(())
    })
}

/// Adjoint transform; `weights` (one per sample) may be null.
///
/// # Safety
/// `samples` holds `2 n_samples` doubles, `weights` is null or holds
/// `n_samples`, `image` has room for `2 n^2`.
#[no_mangle]
pub unsafe extern "C" fn radcine_nufft_adjoint(plan: *const RadcineNufft, samples: *const f64, weights: *const f64, image: *mut f64) -> RadcineStatus {
    guard(|| {
        let p = &plan.as_ref().ok_or_else(|| null("plan"))?.plan;
        let m = p.n_samples();
        let y = to_complex(slice(samples, 2 * m, "samples")?);
        let w = if weights.is_null() { None } else { Some(slice(weights, m, "weights")?) };
        let x = p.adjoint(&y, w).map_err(lib_err)?;
        let n = p.matrix_size();
        from_complex(x.iter().copied(), slice_mut(image, 2 * n * n, "image")?);
        Ok(())
    })
}

/// Default pipeline configuration for an `n x n` phantom.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn radcine_config_new(n: usize, out: *mut *mut RadcineConfig) -> RadcineStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = PipelineConfig::for_size(n);
        cfg.validate().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RadcineConfig { cfg }));
        Ok(())
    })
}

/// Reads a JSON or key-value configuration file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn radcine_config_from_file(path: *const c_char, out: *mut *mut RadcineConfig) -> RadcineStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = PipelineConfig::from_file(&path_arg(path, "path")?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RadcineConfig { cfg }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live configuration.
#[no_mangle]
pub unsafe extern "C" fn radcine_config_set_seed(cfg: *mut RadcineConfig, seed: u64) -> RadcineStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| null("cfg"))?.cfg.seed = seed;
        Ok(())
    })
}

/// Replaces the undersampling factors.
///
/// # Safety
/// `cfg` must be a live configuration and `r` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn radcine_config_set_r_values(cfg: *mut RadcineConfig, r: *const f64, len: usize) -> RadcineStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let mut next = c.cfg.clone();
        next.r_values = slice(r, len, "r")?.to_vec();
        next.validate().map_err(lib_err)?;
        c.cfg = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from a `radcine_config_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn radcine_config_free(cfg: *mut RadcineConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs every stage into `out_dir` and writes the report.
///
/// # Safety
/// `cfg` must be a live configuration and `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn radcine_run_pipeline(cfg: *const RadcineConfig, out_dir: *const c_char) -> RadcineStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        run_pipeline(&c.cfg, &path_arg(out_dir, "out_dir")?).map_err(lib_err)?;
        Ok(())
    })
}

/// PSNR in dB of two real arrays of `len` values, peak taken from `reference`.
///
/// # Safety
/// Both arrays hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn radcine_psnr(reference: *const f64, rec: *const f64, len: usize, out: *mut f64) -> RadcineStatus {
    guard(|| {
        let a = ndarray::ArrayView1::from(slice(reference, len, "reference")?);
        let b = ndarray::ArrayView1::from(slice(rec, len, "rec")?);
        let v = metrics::psnr(&a, &b).map_err(lib_err)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// SSIM of two `rows x cols` real images.
///
/// # Safety
/// Both arrays hold `rows * cols` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn radcine_ssim(reference: *const f64, rec: *const f64, rows: usize, cols: usize, out: *mut f64) -> RadcineStatus {
    guard(|| {
        let shape = |p, what| -> Result<ArrayView2<'_, f64>, (RadcineStatus, String)> {
            ArrayView2::from_shape((rows, cols), slice(p, rows * cols, what)?).map_err(|e| (RadcineStatus::InvalidArgument, e.to_string()))
        };
        let v = metrics::ssim(shape(reference, "reference")?, shape(rec, "rec")?).map_err(lib_err)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}
