//! C ABI for the balanced case-cohort sampling toolkit.
//!
//! Conventions:
//! - handles (`CchbalCohort`, `CchbalFit`) are opaque; create them through
//!   the constructors and release them with the matching `_free` function;
//! - every fallible call returns a [`CchbalStatus`] and writes its result
//!   through an out-pointer;
//! - on failure, `cchbal_last_error_message` returns a thread-local,
//!   NUL-terminated description valid until the next failing call on the
//!   same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

use cchbal::cohort::{CovariateKind, SimCohortSpec};
use cchbal::cox::{fit_cox, SolverOptions, SurvData};
use cchbal::design::{run_design, DesignKind, DesignMode, DesignSpec};
use cchbal::sim::stream_rng;
use cchbal::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CchbalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Invalid argument or configuration.
    Argument = 3,
    /// Malformed or inconsistent input data.
    Data = 4,
    /// Numerical failure (non-convergence, separation, singularity).
    Numeric = 5,
}

/// Sampling strategy selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CchbalDesignKind {
    Srs = 0,
    Bs = 1,
    Cal = 2,
    Bsc = 3,
}

/// Whether cases are force-included.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CchbalDesignMode {
    SubcohortOnly = 0,
    CaseCohort = 1,
}

/// Opaque cohort handle.
pub struct CchbalCohort {
    inner: cchbal::cohort::Cohort,
}

/// Opaque fit handle: coefficients plus the variance decomposition of one
/// design run or census fit.
pub struct CchbalFit {
    beta: Vec<f64>,
    se_total: Vec<f64>,
    se1: Vec<f64>,
    se2: Vec<f64>,
    n_phase2: usize,
    separation: bool,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> CchbalStatus {
    match err {
        Error::Config(_) | Error::Argument(_) => CchbalStatus::Argument,
        Error::Parse { .. } | Error::Schema(_) | Error::Io(_) | Error::Csv(_) => {
            CchbalStatus::Data
        }
        _ => CchbalStatus::Numeric,
    }
}

fn fail(err: Error) -> CchbalStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cchbal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread. The pointer remains
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cchbal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Reads a cohort from a CSV file
/// (`id,time,event,z1..zK,zs1..zsM,stratum`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cchbal_cohort_read_csv(
    path: *const c_char,
    out: *mut *mut CchbalCohort,
) -> CchbalStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer argument");
        return CchbalStatus::NullPointer;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("path is not valid UTF-8");
        return CchbalStatus::InvalidUtf8;
    };
    match cchbal::io::parse_cohort_csv(std::path::Path::new(path)) {
        Ok(cohort) => {
            *out = Box::into_raw(Box::new(CchbalCohort { inner: cohort }));
            CchbalStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Generates a synthetic cohort from the simulation protocol: covariates
/// with lag-one correlation `rho` (dichotomized when `binary_covariates`),
/// exponential failure times under the proportional-hazards model, and
/// exponential censoring tuned to `censor_target`.
///
/// # Safety
/// `beta` must point to `n_covariates` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cchbal_cohort_simulate(
    n_cohort: usize,
    beta: *const f64,
    n_covariates: usize,
    rho: f64,
    censor_target: f64,
    binary_covariates: bool,
    aux_noise_sd: f64,
    seed: u64,
    out: *mut *mut CchbalCohort,
) -> CchbalStatus {
    if beta.is_null() || out.is_null() {
        set_error("null pointer argument");
        return CchbalStatus::NullPointer;
    }
    let beta_true = std::slice::from_raw_parts(beta, n_covariates).to_vec();
    let spec = SimCohortSpec {
        n_cohort,
        beta_true,
        rho,
        censor_target,
        covariate_kind: if binary_covariates {
            CovariateKind::Binary
        } else {
            CovariateKind::Continuous
        },
        aux_noise_sd,
        seed,
    };
    let mut rng = stream_rng(seed, 0, 0);
    match cchbal::cohort::generate_cohort(&spec, &mut rng) {
        Ok(cohort) => {
            *out = Box::into_raw(Box::new(CchbalCohort { inner: cohort }));
            CchbalStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of subjects, or 0 for a null handle.
///
/// # Safety
/// `cohort` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cchbal_cohort_size(cohort: *const CchbalCohort) -> usize {
    if cohort.is_null() {
        return 0;
    }
    (*cohort).inner.len()
}

/// Writes the cohort back out in the CSV schema.
///
/// # Safety
/// `cohort` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cchbal_cohort_write_csv(
    cohort: *const CchbalCohort,
    path: *const c_char,
) -> CchbalStatus {
    if cohort.is_null() || path.is_null() {
        set_error("null pointer argument");
        return CchbalStatus::NullPointer;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("path is not valid UTF-8");
        return CchbalStatus::InvalidUtf8;
    };
    let file = match std::fs::File::create(path) {
        Ok(f) => f,
        Err(e) => return fail(Error::Io(e)),
    };
    match cchbal::io::write_cohort_csv(&(*cohort).inner, file) {
        Ok(()) => CchbalStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Releases a cohort handle (null is a no-op).
///
/// # Safety
/// `cohort` must be null or a pointer previously returned by a constructor,
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cchbal_cohort_free(cohort: *mut CchbalCohort) {
    if !cohort.is_null() {
        drop(Box::from_raw(cohort));
    }
}

/// Census Cox fit on the phase-2 covariates with unit weights.
///
/// # Safety
/// `cohort` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cchbal_fit_census(
    cohort: *const CchbalCohort,
    out: *mut *mut CchbalFit,
) -> CchbalStatus {
    if cohort.is_null() || out.is_null() {
        set_error("null pointer argument");
        return CchbalStatus::NullPointer;
    }
    let cohort = &(*cohort).inner;
    let build = || -> Result<CchbalFit, Error> {
        let data = SurvData::new(
            cohort.times(),
            cohort.events(),
            cohort.z_matrix(),
            vec![1.0; cohort.len()],
        )?;
        let fit = fit_cox(&data, None, &SolverOptions::default())?;
        if !fit.converged || fit.separation_flag {
            return Err(Error::Numeric("census fit did not converge".into()));
        }
        let variance = cchbal::variance::sandwich_census(&fit)?;
        Ok(CchbalFit {
            beta: fit.beta_hat.to_vec(),
            se_total: variance.se_total,
            se1: variance.se1,
            se2: variance.se2,
            n_phase2: cohort.len(),
            separation: false,
            converged: true,
        })
    };
    match build() {
        Ok(fit) => {
            *out = Box::into_raw(Box::new(fit));
            CchbalStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Runs a single-stratum phase-2 design end to end: auxiliary delta-betas,
/// sampling (`kind`), weighting and the weighted fit with its sandwich
/// variance. `subcohort_size` counts controls in case-cohort mode.
///
/// # Safety
/// `cohort` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cchbal_run_design(
    cohort: *const CchbalCohort,
    kind: CchbalDesignKind,
    mode: CchbalDesignMode,
    subcohort_size: usize,
    seed: u64,
    out: *mut *mut CchbalFit,
) -> CchbalStatus {
    if cohort.is_null() || out.is_null() {
        set_error("null pointer argument");
        return CchbalStatus::NullPointer;
    }
    let cohort = &(*cohort).inner;
    let kind = match kind {
        CchbalDesignKind::Srs => DesignKind::Srs,
        CchbalDesignKind::Bs => DesignKind::Bs,
        CchbalDesignKind::Cal => DesignKind::Cal,
        CchbalDesignKind::Bsc => DesignKind::Bsc,
    };
    let mode = match mode {
        CchbalDesignMode::SubcohortOnly => DesignMode::SubcohortOnly,
        CchbalDesignMode::CaseCohort => DesignMode::CaseCohort,
    };
    let design = DesignSpec::single_stratum(kind, mode, cohort, subcohort_size);
    let mut rng = stream_rng(seed, 0, 0);
    match run_design(cohort, &design, &mut rng) {
        Ok((_, _, report)) => {
            *out = Box::into_raw(Box::new(CchbalFit {
                beta: report.beta_hat,
                se_total: report.variance.se_total,
                se1: report.variance.se1,
                se2: report.variance.se2,
                n_phase2: report.n_phase2,
                separation: report.separation_flag,
                converged: report.converged,
            }));
            CchbalStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of coefficients, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cchbal_fit_dim(fit: *const CchbalFit) -> usize {
    if fit.is_null() {
        return 0;
    }
    (*fit).beta.len()
}

unsafe fn copy_vec(src: &[f64], buf: *mut f64, len: usize) -> CchbalStatus {
    if buf.is_null() {
        set_error("null buffer");
        return CchbalStatus::NullPointer;
    }
    if len < src.len() {
        set_error("buffer too small");
        return CchbalStatus::Argument;
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    CchbalStatus::Ok
}

/// Copies the fitted coefficients into `buf` (length `len >= dim`).
///
/// # Safety
/// `fit` must be a live handle; `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cchbal_fit_coefficients(
    fit: *const CchbalFit,
    buf: *mut f64,
    len: usize,
) -> CchbalStatus {
    if fit.is_null() {
        set_error("null fit handle");
        return CchbalStatus::NullPointer;
    }
    copy_vec(&(*fit).beta, buf, len)
}

/// Copies the total standard errors into `buf`.
///
/// # Safety
/// As for [`cchbal_fit_coefficients`].
#[no_mangle]
pub unsafe extern "C" fn cchbal_fit_standard_errors(
    fit: *const CchbalFit,
    buf: *mut f64,
    len: usize,
) -> CchbalStatus {
    if fit.is_null() {
        set_error("null fit handle");
        return CchbalStatus::NullPointer;
    }
    copy_vec(&(*fit).se_total, buf, len)
}

/// Copies the phase-1 standard errors into `buf`.
///
/// # Safety
/// As for [`cchbal_fit_coefficients`].
#[no_mangle]
pub unsafe extern "C" fn cchbal_fit_phase1_se(
    fit: *const CchbalFit,
    buf: *mut f64,
    len: usize,
) -> CchbalStatus {
    if fit.is_null() {
        set_error("null fit handle");
        return CchbalStatus::NullPointer;
    }
    copy_vec(&(*fit).se1, buf, len)
}

/// Copies the phase-2 standard errors into `buf`.
///
/// # Safety
/// As for [`cchbal_fit_coefficients`].
#[no_mangle]
pub unsafe extern "C" fn cchbal_fit_phase2_se(
    fit: *const CchbalFit,
    buf: *mut f64,
    len: usize,
) -> CchbalStatus {
    if fit.is_null() {
        set_error("null fit handle");
        return CchbalStatus::NullPointer;
    }
    copy_vec(&(*fit).se2, buf, len)
}

/// Phase-2 sample size behind the fit.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cchbal_fit_n_phase2(fit: *const CchbalFit) -> usize {
    if fit.is_null() {
        return 0;
    }
    (*fit).n_phase2
}

/// Whether the fit was flagged for perfect separation (its estimates are
/// reported but should be excluded from summaries).
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cchbal_fit_separation(fit: *const CchbalFit) -> bool {
    !fit.is_null() && (*fit).separation
}

/// Whether the solver converged.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cchbal_fit_converged(fit: *const CchbalFit) -> bool {
    !fit.is_null() && (*fit).converged
}

/// Releases a fit handle (null is a no-op).
///
/// # Safety
/// `fit` must be null or a pointer previously returned by this library, not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn cchbal_fit_free(fit: *mut CchbalFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
