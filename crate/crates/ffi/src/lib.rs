//! C interface to `hcr`.
//!
//! Every function returns an [`HcrStatus`] and writes results through out
//! pointers. On failure the message is kept per thread and can be read with
//! [`hcr_last_error_message`]. Handles are opaque and must be released with
//! the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hcr::estimate::{build_windows, estimate_coefficients, prune, CoefficientTensor, IndexFilter};
use hcr::marginal::{self, Family, MarginalModel};
use hcr::predict::{self, Calibration, PredictedDensity1D};
use hcr::{HcrError, OrthoBasis};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcrStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid argument or unsupported degree.
    Config = 2,
    /// Input data rejected: out of domain, too short, wrong shape.
    Data = 3,
    /// A fit or conditioning step failed numerically.
    Numeric = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcrFamily {
    Gaussian = 0,
    Laplace = 1,
    Epd = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcrCalibrationKind {
    None = 0,
    Clamp = 1,
    PiecewiseLinear = 2,
}

/// Calibration map. `Clamp` reads only `floor`; `None` reads nothing.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HcrCalibration {
    pub kind: HcrCalibrationKind,
    pub floor: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Orthonormal polynomial basis on `[0, 1]`.
pub struct HcrBasis(OrthoBasis);
/// Fitted marginal distribution.
pub struct HcrMarginal(MarginalModel);
/// Coefficient tensor of a joint density.
pub struct HcrTensor(CoefficientTensor);
/// Conditional density of the last coordinate.
pub struct HcrDensity(PredictedDensity1D);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &HcrError) -> HcrStatus {
    match e.exit_code() {
        2 => HcrStatus::Config,
        3 => HcrStatus::Data,
        _ => HcrStatus::Numeric,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> HcrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HcrStatus::Ok
        }
        Ok(Err(FfiError::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            HcrStatus::NullPointer
        }
        Ok(Err(FfiError::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            HcrStatus::Panic
        }
    }
}

enum FfiError {
    Null(&'static str),
    Core(HcrError),
}

impl From<HcrError> for FfiError {
    fn from(e: HcrError) -> Self {
        FfiError::Core(e)
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, FfiError> {
    p.as_ref().ok_or(FfiError::Null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, FfiError> {
    p.as_mut().ok_or(FfiError::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], FfiError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(FfiError::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn calibration(c: Option<&HcrCalibration>) -> Result<Calibration, FfiError> {
    let cal = match c {
        None => Calibration::default(),
        Some(c) => match c.kind {
            HcrCalibrationKind::None => Calibration::None,
            HcrCalibrationKind::Clamp => Calibration::Clamp { floor: c.floor },
            HcrCalibrationKind::PiecewiseLinear => Calibration::PiecewiseLinear {
                floor: c.floor,
                slope: c.slope,
                intercept: c.intercept,
            },
        },
    };
    cal.validate()?;
    Ok(cal)
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len` bytes. Returns the length
/// needed including the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hcr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Basis `f_0 ..= f_max_degree`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn hcr_basis_new(max_degree: usize, out: *mut *mut HcrBasis) -> HcrStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let b = OrthoBasis::new(max_degree)?;
        *out = Box::into_raw(Box::new(HcrBasis(b)));
        Ok(())
    })
}

/// `f_j(x)` for `x` in `[0, 1]`.
///
/// # Safety
/// `basis` must come from [`hcr_basis_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcr_basis_eval(
    basis: *const HcrBasis,
    j: usize,
    x: f64,
    out: *mut f64,
) -> HcrStatus {
    guard(|| {
        let b = &as_ref(basis, "basis")?.0;
        let out = as_mut(out, "out")?;
        if j > b.max_degree() {
            return Err(HcrError::DegreeUnsupported {
                degree: j,
                max: b.max_degree(),
            }
            .into());
        }
        *out = b.eval(x)?[j];
        Ok(())
    })
}

/// # Safety
/// `basis` must be null or come from [`hcr_basis_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn hcr_basis_free(basis: *mut HcrBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Fits a marginal family to `n` returns.
///
/// # Safety
/// `y` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcr_marginal_fit(
    family: HcrFamily,
    y: *const f64,
    n: usize,
    out: *mut *mut HcrMarginal,
) -> HcrStatus {
    guard(|| {
        let y = slice(y, n, "y")?;
        let out = as_mut(out, "out")?;
        let fam = match family {
            HcrFamily::Gaussian => Family::Gaussian,
            HcrFamily::Laplace => Family::Laplace,
            HcrFamily::Epd => Family::Epd,
        };
        let m = marginal::fit(fam, y)?;
        *out = Box::into_raw(Box::new(HcrMarginal(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`hcr_marginal_fit`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcr_marginal_cdf(
    m: *const HcrMarginal,
    y: f64,
    out: *mut f64,
) -> HcrStatus {
    guard(|| {
        let m = &as_ref(m, "marginal")?.0;
        *as_mut(out, "out")? = m.cdf(y);
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`hcr_marginal_fit`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcr_marginal_pdf(
    m: *const HcrMarginal,
    y: f64,
    out: *mut f64,
) -> HcrStatus {
    guard(|| {
        let m = &as_ref(m, "marginal")?.0;
        *as_mut(out, "out")? = m.pdf(y);
        Ok(())
    })
}

/// Location, scale and shape. `kappa` is NaN for the two-parameter families.
///
/// # Safety
/// `m` must come from [`hcr_marginal_fit`]; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcr_marginal_params(
    m: *const HcrMarginal,
    mu: *mut f64,
    scale: *mut f64,
    kappa: *mut f64,
) -> HcrStatus {
    guard(|| {
        let m = &as_ref(m, "marginal")?.0;
        *as_mut(mu, "mu")? = m.mu;
        *as_mut(scale, "scale")? = m.scale;
        *as_mut(kappa, "kappa")? = m.kappa.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// # Safety
/// `m` must be null or come from [`hcr_marginal_fit`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn hcr_marginal_free(m: *mut HcrMarginal) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Estimates all coefficients from the overlapping windows of length `d`
/// of the normalized series `x` (values in `[0, 1]`). `degrees` holds one
/// maximum degree per window coordinate.
///
/// # Safety
/// `x` must point to `n` doubles, `degrees` to `d` sizes; `basis` must come
/// from [`hcr_basis_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcr_tensor_estimate(
    x: *const f64,
    n: usize,
    d: usize,
    degrees: *const usize,
    basis: *const HcrBasis,
    out: *mut *mut HcrTensor,
) -> HcrStatus {
    guard(|| {
        let x = slice(x, n, "x")?;
        let degrees = slice(degrees, d, "degrees")?;
        let basis = &as_ref(basis, "basis")?.0;
        let out = as_mut(out, "out")?;
        let windows = build_windows(x, d)?;
        let t = estimate_coefficients(&windows, basis, degrees, &IndexFilter::All)?;
        *out = Box::into_raw(Box::new(HcrTensor(t)));
        Ok(())
    })
}

/// Coefficient at multi-index `j` of length `d`.
///
/// # Safety
/// `t` must come from this library; `j` must point to `d` sizes.
#[no_mangle]
pub unsafe extern "C" fn hcr_tensor_get(
    t: *const HcrTensor,
    j: *const usize,
    d: usize,
    out: *mut f64,
) -> HcrStatus {
    guard(|| {
        let t = &as_ref(t, "tensor")?.0;
        let j = slice(j, d, "j")?;
        *as_mut(out, "out")? = t.get(j)?;
        Ok(())
    })
}

/// New tensor without the coefficients below `threshold / sqrt(n)`.
///
/// # Safety
/// `t` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcr_tensor_prune(
    t: *const HcrTensor,
    threshold: f64,
    out: *mut *mut HcrTensor,
) -> HcrStatus {
    guard(|| {
        let t = &as_ref(t, "tensor")?.0;
        let out = as_mut(out, "out")?;
        let p = prune(t, threshold)?;
        *out = Box::into_raw(Box::new(HcrTensor(p)));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn hcr_tensor_free(t: *mut HcrTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Conditional density of the last coordinate given the `len = d - 1`
/// previous values. With `uniform_fallback` set, a context of nonpositive
/// mass yields the uniform density instead of a `Numeric` error.
///
/// # Safety
/// `t` and `basis` must come from this library; `context` must point to
/// `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcr_condition(
    t: *const HcrTensor,
    basis: *const HcrBasis,
    context: *const f64,
    len: usize,
    uniform_fallback: bool,
    out: *mut *mut HcrDensity,
) -> HcrStatus {
    guard(|| {
        let t = &as_ref(t, "tensor")?.0;
        let basis = &as_ref(basis, "basis")?.0;
        let context = slice(context, len, "context")?;
        let out = as_mut(out, "out")?;
        let p = if uniform_fallback {
            predict::condition_or_uniform(t, basis, context)?
        } else {
            predict::condition(t, basis, context)?
        };
        *out = Box::into_raw(Box::new(HcrDensity(p)));
        Ok(())
    })
}

/// Calibrated density at `x`. A null `cal` selects the default map.
///
/// # Safety
/// `p` must come from [`hcr_condition`]; `cal` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn hcr_density_eval(
    p: *const HcrDensity,
    x: f64,
    cal: *const HcrCalibration,
    out: *mut f64,
) -> HcrStatus {
    guard(|| {
        let p = &as_ref(p, "density")?.0;
        let cal = calibration(cal.as_ref())?;
        let out = as_mut(out, "out")?;
        if !(0.0..=1.0).contains(&x) {
            return Err(HcrError::Domain(format!("x = {x} outside [0, 1]")).into());
        }
        *out = p.density_at(x, &cal);
        Ok(())
    })
}

/// Integral of the calibrated density from 0 to `x`.
///
/// # Safety
/// `p` must come from [`hcr_condition`]; `cal` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn hcr_density_cdf(
    p: *const HcrDensity,
    x: f64,
    cal: *const HcrCalibration,
    out: *mut f64,
) -> HcrStatus {
    guard(|| {
        let p = &as_ref(p, "density")?.0;
        let cal = calibration(cal.as_ref())?;
        let out = as_mut(out, "out")?;
        *out = p.calibrated(&cal).cdf(x);
        Ok(())
    })
}

/// Writes up to `len` basis coefficients into `buf` and their total count
/// into `count`. Pass a null `buf` to query the count.
///
/// # Safety
/// `p` must come from [`hcr_condition`]; `buf` must be null or hold `len`
/// doubles; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcr_density_coefficients(
    p: *const HcrDensity,
    buf: *mut f64,
    len: usize,
    count: *mut usize,
) -> HcrStatus {
    guard(|| {
        let p = &as_ref(p, "density")?.0;
        *as_mut(count, "count")? = p.coeffs.len();
        if !buf.is_null() {
            let n = len.min(p.coeffs.len());
            ptr::copy_nonoverlapping(p.coeffs.as_ptr(), buf, n);
        }
        Ok(())
    })
}

/// Whether the density is the uniform stand-in for a degenerate context.
///
/// # Safety
/// `p` must come from [`hcr_condition`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcr_density_is_fallback(
    p: *const HcrDensity,
    out: *mut bool,
) -> HcrStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(p, "density")?.0.uniform_fallback;
        Ok(())
    })
}

/// # Safety
/// `p` must be null or come from [`hcr_condition`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn hcr_density_free(p: *mut HcrDensity) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}
