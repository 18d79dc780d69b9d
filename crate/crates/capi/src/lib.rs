//! C ABI for the gmrf-lattice toolkit.
//!
//! Opaque handles (`GmrfTheta`, `GmrfParams`, `GmrfBatch`) own their Rust
//! values; every function returns a `GmrfStatus` and writes results through
//! out-pointers.  On failure, a thread-local message is retrievable with
//! `gmrf_last_error`.  All functions catch panics at the boundary.
//!
//! The header `include/gmrf_lattice.h` is generated by cbindgen at build
//! time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use gmrf_lattice::circulant::{spectrum_of_c, ThetaField};
use gmrf_lattice::contrast::{fit_model, loss, periodogram, select_model, PenaltySpec};
use gmrf_lattice::field::{
    cov_spectrum, covariance_lag, kl_divergence, moran_covariance_limit, sample, variance_origin,
    GmrfParams as Params, SampleBatch,
};
use gmrf_lattice::grid::Grid;
use gmrf_lattice::io;
use gmrf_lattice::torus::{build_model_collection, TorusGeometry};
use gmrf_lattice::Error;

/// Status codes returned by every C-ABI function.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GmrfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Precondition = 3,
    NotPositiveDefinite = 4,
    Io = 5,
    Utf8 = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> GmrfStatus {
    match err {
        Error::InvalidArgument(_)
        | Error::Json(_)
        | Error::NotSymmetric { .. }
        | Error::NotBlockCirculant { .. } => GmrfStatus::InvalidArgument,
        Error::Precondition(_) | Error::DenseLimit { .. } => GmrfStatus::Precondition,
        Error::NotPositiveDefinite { .. } => GmrfStatus::NotPositiveDefinite,
        Error::Io(_) => GmrfStatus::Io,
    }
}

fn fail(err: Error) -> GmrfStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Run a body, converting panics into a status instead of unwinding across
/// the FFI boundary.
fn guard(body: impl FnOnce() -> GmrfStatus) -> GmrfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in gmrf-lattice".to_string());
            set_error(&msg);
            GmrfStatus::Panic
        }
    }
}

unsafe fn path_from_cstr(ptr: *const c_char) -> Result<&'static Path, GmrfStatus> {
    if ptr.is_null() {
        set_error("null path");
        return Err(GmrfStatus::NullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(GmrfStatus::Utf8)
        }
    }
}

macro_rules! nonnull {
    ($ptr:expr) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => {
                set_error(concat!("null pointer: ", stringify!($ptr)));
                return GmrfStatus::NullPointer;
            }
        }
    };
}

macro_rules! nonnull_mut {
    ($ptr:expr) => {
        match unsafe { $ptr.as_mut() } {
            Some(r) => r,
            None => {
                set_error(concat!("null pointer: ", stringify!($ptr)));
                return GmrfStatus::NullPointer;
            }
        }
    };
}

/// Opaque θ grid handle.
pub struct GmrfTheta {
    inner: ThetaField,
}

/// Opaque validated parameter handle (θ ∈ Θ⁺, σ² > 0).
pub struct GmrfParams {
    inner: Params,
}

/// Opaque sample batch handle.
pub struct GmrfBatch {
    inner: SampleBatch,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gmrf_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Copy the last error message into `buf` (truncating) and return the full
/// message length in bytes, excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn gmrf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Allocate the zero field on the p×p torus.
#[no_mangle]
pub unsafe extern "C" fn gmrf_theta_new(p: usize, out: *mut *mut GmrfTheta) -> GmrfStatus {
    guard(|| {
        let out = nonnull_mut!(out);
        match TorusGeometry::new(p) {
            Ok(geom) => {
                *out = Box::into_raw(Box::new(GmrfTheta {
                    inner: ThetaField::zeros(geom),
                }));
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_theta_free(theta: *mut GmrfTheta) {
    if !theta.is_null() {
        drop(Box::from_raw(theta));
    }
}

/// Set θ[i,j] and its symmetric image θ[−i,−j] (indices may be negative).
#[no_mangle]
pub unsafe extern "C" fn gmrf_theta_set(
    theta: *mut GmrfTheta,
    i: i64,
    j: i64,
    value: f64,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull_mut!(theta);
        let geom = *handle.inner.geometry();
        let pt = geom.normalize(i, j);
        let neg = geom.neg(pt);
        let mut values = handle.inner.values().clone();
        values.set(pt.i, pt.j, value);
        values.set(neg.i, neg.j, value);
        match ThetaField::new(geom, values) {
            Ok(field) => {
                handle.inner = field;
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_theta_get(
    theta: *const GmrfTheta,
    i: i64,
    j: i64,
    out: *mut f64,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(theta);
        let out = nonnull_mut!(out);
        *out = handle.inner.get(i, j);
        GmrfStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_theta_l1(theta: *const GmrfTheta, out: *mut f64) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(theta);
        let out = nonnull_mut!(out);
        *out = handle.inner.l1_norm();
        GmrfStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_theta_load_json(
    path: *const c_char,
    out: *mut *mut GmrfTheta,
) -> GmrfStatus {
    guard(|| {
        let out = nonnull_mut!(out);
        let path = match path_from_cstr(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match io::load_theta(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GmrfTheta { inner }));
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_theta_save_json(
    theta: *const GmrfTheta,
    path: *const c_char,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(theta);
        let path = match path_from_cstr(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match io::save_theta(path, &handle.inner) {
            Ok(()) => GmrfStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Eigenvalues of C(θ) in row-major frequency order; `buf` must hold p²
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn gmrf_spectrum_c(
    theta: *const GmrfTheta,
    buf: *mut f64,
    len: usize,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(theta);
        let p2 = handle.inner.geometry().num_sites();
        if buf.is_null() {
            set_error("null buffer");
            return GmrfStatus::NullPointer;
        }
        if len < p2 {
            set_error("spectrum buffer too small");
            return GmrfStatus::BufferTooSmall;
        }
        let spec = spectrum_of_c(&handle.inner);
        std::ptr::copy_nonoverlapping(spec.values().data().as_ptr(), buf, p2);
        GmrfStatus::Ok
    })
}

/// Validate (θ, σ²) as a GMRF parameter pair.
#[no_mangle]
pub unsafe extern "C" fn gmrf_params_new(
    theta: *const GmrfTheta,
    sigma_sq: f64,
    out: *mut *mut GmrfParams,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(theta);
        let out = nonnull_mut!(out);
        match Params::new(handle.inner.clone(), sigma_sq) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GmrfParams { inner }));
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_params_free(params: *mut GmrfParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Eigenvalues of the covariance Σ; `buf` must hold p² doubles.
#[no_mangle]
pub unsafe extern "C" fn gmrf_cov_spectrum(
    params: *const GmrfParams,
    buf: *mut f64,
    len: usize,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(params);
        let p2 = handle.inner.geometry().num_sites();
        if buf.is_null() {
            set_error("null buffer");
            return GmrfStatus::NullPointer;
        }
        if len < p2 {
            set_error("spectrum buffer too small");
            return GmrfStatus::BufferTooSmall;
        }
        let spec = cov_spectrum(&handle.inner);
        std::ptr::copy_nonoverlapping(spec.values().data().as_ptr(), buf, p2);
        GmrfStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_covariance_lag(
    params: *const GmrfParams,
    k: i64,
    l: i64,
    out: *mut f64,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(params);
        let out = nonnull_mut!(out);
        *out = covariance_lag(&handle.inner, k, l);
        GmrfStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_variance_origin(
    params: *const GmrfParams,
    out: *mut f64,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(params);
        let out = nonnull_mut!(out);
        *out = variance_origin(&handle.inner);
        GmrfStatus::Ok
    })
}

/// Spectral Kullback–Leibler divergence between two fields (σ² cancels).
#[no_mangle]
pub unsafe extern "C" fn gmrf_kl_divergence(
    theta1: *const GmrfTheta,
    theta2: *const GmrfTheta,
    sigma_sq: f64,
    out: *mut f64,
) -> GmrfStatus {
    guard(|| {
        let t1 = nonnull!(theta1);
        let t2 = nonnull!(theta2);
        let out = nonnull_mut!(out);
        match kl_divergence(&t1.inner, &t2.inner, sigma_sq) {
            Ok(v) => {
                *out = v;
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Draw n replicates; deterministic in (seed, n).
#[no_mangle]
pub unsafe extern "C" fn gmrf_sample(
    params: *const GmrfParams,
    n: usize,
    seed: u64,
    out: *mut *mut GmrfBatch,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(params);
        let out = nonnull_mut!(out);
        match sample(&handle.inner, n, seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GmrfBatch { inner }));
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_batch_free(batch: *mut GmrfBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_batch_n(batch: *const GmrfBatch, out: *mut usize) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(batch);
        let out = nonnull_mut!(out);
        *out = handle.inner.n;
        GmrfStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_batch_p(batch: *const GmrfBatch, out: *mut usize) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(batch);
        let out = nonnull_mut!(out);
        *out = handle.inner.geometry.p();
        GmrfStatus::Ok
    })
}

/// Copy one replicate (row-major p² doubles) into `buf`.
#[no_mangle]
pub unsafe extern "C" fn gmrf_batch_replicate(
    batch: *const GmrfBatch,
    replicate: usize,
    buf: *mut f64,
    len: usize,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(batch);
        if buf.is_null() {
            set_error("null buffer");
            return GmrfStatus::NullPointer;
        }
        let p2 = handle.inner.geometry.num_sites();
        if replicate >= handle.inner.n {
            set_error("replicate index out of range");
            return GmrfStatus::InvalidArgument;
        }
        if len < p2 {
            set_error("replicate buffer too small");
            return GmrfStatus::BufferTooSmall;
        }
        let data = handle.inner.fields[replicate].data();
        std::ptr::copy_nonoverlapping(data.as_ptr(), buf, p2);
        GmrfStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_batch_save(
    batch: *const GmrfBatch,
    path: *const c_char,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(batch);
        let path = match path_from_cstr(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match io::save_batch(path, &handle.inner) {
            Ok(()) => GmrfStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn gmrf_batch_load(
    path: *const c_char,
    out: *mut *mut GmrfBatch,
) -> GmrfStatus {
    guard(|| {
        let out = nonnull_mut!(out);
        let path = match path_from_cstr(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match io::load_batch(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GmrfBatch { inner }));
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Build a batch from caller data: n replicates of p² row-major doubles.
#[no_mangle]
pub unsafe extern "C" fn gmrf_batch_from_data(
    p: usize,
    n: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut GmrfBatch,
) -> GmrfStatus {
    guard(|| {
        let out = nonnull_mut!(out);
        if data.is_null() {
            set_error("null data");
            return GmrfStatus::NullPointer;
        }
        let geometry = match TorusGeometry::new(p) {
            Ok(g) => g,
            Err(e) => return fail(e),
        };
        let p2 = p * p;
        if n == 0 {
            set_error("need at least one replicate");
            return GmrfStatus::InvalidArgument;
        }
        if len < n * p2 {
            set_error("data buffer too small");
            return GmrfStatus::BufferTooSmall;
        }
        let slice = std::slice::from_raw_parts(data, n * p2);
        let fields = slice
            .chunks_exact(p2)
            .map(|chunk| Grid::from_vec(p, chunk.to_vec()))
            .collect();
        *out = Box::into_raw(Box::new(GmrfBatch {
            inner: SampleBatch {
                geometry,
                n,
                fields,
                seed: 0,
                params_digest: None,
            },
        }));
        GmrfStatus::Ok
    })
}

/// Fit one model of the nested collection; writes the fitted θ into a new
/// handle and reports the contrast value and convergence flag.
#[no_mangle]
pub unsafe extern "C" fn gmrf_fit(
    batch: *const GmrfBatch,
    model_index: usize,
    rho: f64,
    isotropic: bool,
    out_theta: *mut *mut GmrfTheta,
    out_contrast: *mut f64,
    out_converged: *mut bool,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(batch);
        let out_theta = nonnull_mut!(out_theta);
        let out_contrast = nonnull_mut!(out_contrast);
        let out_converged = nonnull_mut!(out_converged);
        let run = || -> gmrf_lattice::Result<(ThetaField, f64, bool)> {
            let coll = build_model_collection(handle.inner.geometry)?;
            let model = coll.model(model_index)?;
            let pgram = periodogram(&handle.inner)?;
            let fit = fit_model(&pgram, model, rho, isotropic)?;
            Ok((fit.theta, fit.contrast_value, fit.converged))
        };
        match run() {
            Ok((theta, contrast, converged)) => {
                *out_theta = Box::into_raw(Box::new(GmrfTheta { inner: theta }));
                *out_contrast = contrast;
                *out_converged = converged;
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Penalized selection over the whole collection; returns the chosen model
/// index and its criterion value.
#[no_mangle]
pub unsafe extern "C" fn gmrf_select(
    batch: *const GmrfBatch,
    k: f64,
    rho1: f64,
    rho2: f64,
    sigma_sq: f64,
    isotropic: bool,
    out_chosen: *mut usize,
    out_criterion: *mut f64,
) -> GmrfStatus {
    guard(|| {
        let handle = nonnull!(batch);
        let out_chosen = nonnull_mut!(out_chosen);
        let out_criterion = nonnull_mut!(out_criterion);
        let run = || -> gmrf_lattice::Result<(usize, f64)> {
            let coll = build_model_collection(handle.inner.geometry)?;
            let pgram = periodogram(&handle.inner)?;
            let spec = PenaltySpec::new(
                k,
                rho1,
                rho2,
                sigma_sq,
                handle.inner.n,
                handle.inner.geometry.p(),
            )?;
            let sel = select_model(&pgram, &coll, &spec, rho1, isotropic)?;
            let criterion = sel.rows[sel.chosen].criterion;
            Ok((sel.chosen, criterion))
        };
        match run() {
            Ok((chosen, criterion)) => {
                *out_chosen = chosen;
                *out_criterion = criterion;
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Prediction-type loss l(θ̂, θ) under the parameters.
#[no_mangle]
pub unsafe extern "C" fn gmrf_loss(
    theta_hat: *const GmrfTheta,
    params: *const GmrfParams,
    out: *mut f64,
) -> GmrfStatus {
    guard(|| {
        let hat = nonnull!(theta_hat);
        let par = nonnull!(params);
        let out = nonnull_mut!(out);
        *out = loss(&hat.inner, &par.inner);
        GmrfStatus::Ok
    })
}

/// Infinite-lattice 4NN covariance limit (quadrature).
#[no_mangle]
pub unsafe extern "C" fn gmrf_moran_limit(alpha: f64, out: *mut f64) -> GmrfStatus {
    guard(|| {
        let out = nonnull_mut!(out);
        match moran_covariance_limit(alpha) {
            Ok(v) => {
                *out = v;
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of models in the nested collection at side p.
#[no_mangle]
pub unsafe extern "C" fn gmrf_collection_len(p: usize, out: *mut usize) -> GmrfStatus {
    guard(|| {
        let out = nonnull_mut!(out);
        match TorusGeometry::new(p).and_then(build_model_collection) {
            Ok(coll) => {
                *out = coll.len();
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Dimensions of one model: d_m and d_m^iso.
#[no_mangle]
pub unsafe extern "C" fn gmrf_model_dims(
    p: usize,
    model_index: usize,
    out_d_m: *mut usize,
    out_d_m_iso: *mut usize,
) -> GmrfStatus {
    guard(|| {
        let out_d_m = nonnull_mut!(out_d_m);
        let out_d_m_iso = nonnull_mut!(out_d_m_iso);
        let run = || -> gmrf_lattice::Result<(usize, usize)> {
            let coll = build_model_collection(TorusGeometry::new(p)?)?;
            let model = coll.model(model_index)?;
            Ok((model.d_m(), model.d_m_iso()))
        };
        match run() {
            Ok((d_m, d_iso)) => {
                *out_d_m = d_m;
                *out_d_m_iso = d_iso;
                GmrfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
