//! C interface to `dynlab`.
//!
//! Every function returns a [`DynlabStatus`]; on failure the message is
//! available from [`dynlab_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Strings returned as `char *` are owned by the caller and
//! released with [`dynlab_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dynlab::cli::CliError;
use dynlab::cma::{build_index, CmaComponents, IndexMethod, IndexOptions};
use dynlab::effects::average_marginal_effect;
use dynlab::estimator::{fit, FitOptions, FitResult, ModelSpec};
use dynlab::panel::{build_design, load_panel_path, DesignMatrix, PanelDataset};
use dynlab::simulate::{generate_panel, DgpConfig};
use dynlab::theory::{desired_borrowing, min_verifiable_share, CostForm, HouseholdParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynlabStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Malformed argument, configuration or specification.
    InvalidArgument = 2,
    /// The input data could not be read or does not support the request.
    DataError = 3,
    /// The optimizer stopped before convergence.
    NotConverged = 4,
    /// The caller's buffer is shorter than the result.
    BufferTooSmall = 5,
    /// An internal error; the handle arguments are left untouched.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynlabIndexMethod {
    Zscore = 0,
    Pca = 1,
}

/// Loaded or simulated panel.
pub struct DynlabPanel {
    inner: PanelDataset,
}

/// Estimated model together with the design it was fitted on.
pub struct DynlabFit {
    result: FitResult,
    design: DesignMatrix,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(DynlabStatus, String);

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match e {
            CliError::Usage(_) => DynlabStatus::InvalidArgument,
            CliError::Data(_) => DynlabStatus::DataError,
            CliError::NotConverged(_) => DynlabStatus::NotConverged,
        };
        Failure(status, e.to_string())
    }
}

fn fail<E: Into<CliError>>(e: E) -> Failure {
    Failure::from(e.into())
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DynlabStatus::InvalidArgument, msg.into())
}

fn null(name: &str) -> Failure {
    Failure(DynlabStatus::NullArgument, format!("`{name}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DynlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DynlabStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            DynlabStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{name}` is not valid UTF-8")))
}

unsafe fn optional_text<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, name).map(Some)
    }
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

fn json<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(s).map_err(|e| invalid(format!("{what}: {e}")))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| Failure(DynlabStatus::Internal, "string contains NUL".into()))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize, written: *mut usize) -> Result<(), Failure> {
    if let Some(w) = written.as_mut() {
        *w = src.len();
    }
    if len < src.len() {
        return Err(Failure(DynlabStatus::BufferTooSmall, format!("buffer holds {len} values, {} needed", src.len())));
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn dynlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dynlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dynlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a panel CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_panel` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dynlab_panel_load(path: *const c_char, out_panel: *mut *mut DynlabPanel) -> DynlabStatus {
    guard(|| {
        let slot = out(out_panel, "out_panel")?;
        let path = text(path, "path")?;
        let inner = load_panel_path(Path::new(path)).map_err(fail)?;
        *slot = Box::into_raw(Box::new(DynlabPanel { inner }));
        Ok(())
    })
}

/// Simulates a panel from a generator configuration (JSON; null for the
/// defaults). The seed overrides the configuration's.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out_panel` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dynlab_simulate(config_json: *const c_char, seed: u64, out_panel: *mut *mut DynlabPanel) -> DynlabStatus {
    guard(|| {
        let slot = out(out_panel, "out_panel")?;
        let mut cfg: DgpConfig = match optional_text(config_json, "config_json")? {
            Some(s) => json(s, "generator configuration")?,
            None => DgpConfig::default(),
        };
        cfg.seed = seed;
        cfg.validate().map_err(fail)?;
        let sim = generate_panel(&cfg).map_err(fail)?;
        *slot = Box::into_raw(Box::new(DynlabPanel { inner: sim.dataset }));
        Ok(())
    })
}

/// # Safety
/// `panel` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dynlab_panel_free(panel: *mut DynlabPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// # Safety
/// `panel` must be a live handle; the outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn dynlab_panel_shape(panel: *const DynlabPanel, n_rows: *mut usize, n_persons: *mut usize) -> DynlabStatus {
    guard(|| {
        let p = &handle(panel, "panel")?.inner;
        if let Some(r) = n_rows.as_mut() {
            *r = p.n_rows();
        }
        if let Some(n) = n_persons.as_mut() {
            *n = p.n_persons();
        }
        Ok(())
    })
}

/// Fits the employment model. `spec_json` is a model specification (null for
/// the defaults); `max_iter` of 0 keeps the default iteration budget.
///
/// # Safety
/// `panel` must be a live handle, `spec_json` null or NUL-terminated and
/// `out_fit` writable.
#[no_mangle]
pub unsafe extern "C" fn dynlab_fit(
    panel: *const DynlabPanel,
    spec_json: *const c_char,
    max_iter: usize,
    out_fit: *mut *mut DynlabFit,
) -> DynlabStatus {
    guard(|| {
        let slot = out(out_fit, "out_fit")?;
        let ds = &handle(panel, "panel")?.inner;
        let spec: ModelSpec = match optional_text(spec_json, "spec_json")? {
            Some(s) => json(s, "model specification")?,
            None => ModelSpec::default(),
        };
        spec.validate().map_err(fail)?;
        let mut opts = FitOptions::default();
        if max_iter > 0 {
            opts.max_iter = max_iter;
        }
        let design = build_design(ds, &spec).map_err(fail)?;
        let result = fit(&spec, &design, &opts).map_err(fail)?;
        let names = result
            .names
            .iter()
            .map(|n| CString::new(n.as_str()).map_err(|_| invalid("parameter name contains NUL")))
            .collect::<Result<_, _>>()?;
        *slot = Box::into_raw(Box::new(DynlabFit { result, design, names }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dynlab_fit_free(fit: *mut DynlabFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of estimated parameters.
///
/// # Safety
/// `fit` must be a live handle and `n` writable.
#[no_mangle]
pub unsafe extern "C" fn dynlab_fit_n_params(fit: *const DynlabFit, n: *mut usize) -> DynlabStatus {
    guard(|| {
        *out(n, "n")? = handle(fit, "fit")?.result.estimates.len();
        Ok(())
    })
}

/// Name of parameter `i`; the string is owned by the fit handle.
///
/// # Safety
/// `fit` must be a live handle and `name` writable.
#[no_mangle]
pub unsafe extern "C" fn dynlab_fit_param_name(fit: *const DynlabFit, i: usize, name: *mut *const c_char) -> DynlabStatus {
    guard(|| {
        let slot = out(name, "name")?;
        let f = handle(fit, "fit")?;
        let n = f.names.get(i).ok_or_else(|| invalid(format!("parameter {i} out of range ({} parameters)", f.names.len())))?;
        *slot = n.as_ptr();
        Ok(())
    })
}

/// Copies the point estimates into `buf`. `written`, when non-null, receives
/// the number of parameters even if the buffer is too small.
///
/// # Safety
/// `fit` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dynlab_fit_estimates(fit: *const DynlabFit, buf: *mut f64, len: usize, written: *mut usize) -> DynlabStatus {
    guard(|| copy_out(&handle(fit, "fit")?.result.estimates, buf, len, written))
}

/// Copies the cluster-robust standard errors; see [`dynlab_fit_estimates`].
///
/// # Safety
/// `fit` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dynlab_fit_std_errors(fit: *const DynlabFit, buf: *mut f64, len: usize, written: *mut usize) -> DynlabStatus {
    guard(|| copy_out(&handle(fit, "fit")?.result.std_errors, buf, len, written))
}

/// Log-likelihood at the estimates and the convergence flag.
///
/// # Safety
/// `fit` must be a live handle; the outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn dynlab_fit_summary(fit: *const DynlabFit, log_likelihood: *mut f64, converged: *mut bool) -> DynlabStatus {
    guard(|| {
        let f = &handle(fit, "fit")?.result;
        if let Some(l) = log_likelihood.as_mut() {
            *l = f.log_likelihood;
        }
        if let Some(c) = converged.as_mut() {
            *c = f.diagnostics.converged;
        }
        Ok(())
    })
}

/// Full fit result as JSON (the layout written by the command-line tool).
///
/// # Safety
/// `fit` must be a live handle and `json_out` writable.
#[no_mangle]
pub unsafe extern "C" fn dynlab_fit_json(fit: *const DynlabFit, json_out: *mut *mut c_char) -> DynlabStatus {
    guard(|| {
        let slot = out(json_out, "json_out")?;
        *slot = owned_string(handle(fit, "fit")?.result.to_json())?;
        Ok(())
    })
}

/// Average marginal effects of `target` with delta-method standard errors,
/// as JSON.
///
/// # Safety
/// `fit` must be a live handle, `target` NUL-terminated and `json_out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dynlab_average_marginal_effects(
    fit: *const DynlabFit,
    target: *const c_char,
    json_out: *mut *mut c_char,
) -> DynlabStatus {
    guard(|| {
        let slot = out(json_out, "json_out")?;
        let f = handle(fit, "fit")?;
        let target = text(target, "target")?;
        let report = average_marginal_effect(&f.result, &f.design, target).map_err(fail)?;
        *slot = owned_string(report.to_json())?;
        Ok(())
    })
}

/// Credit-market access index over `n` community-years. Column arrays hold
/// bank presence (1..=3), distances in km and offices per 1000 residents;
/// `index_out` receives `n` standardized values.
///
/// # Safety
/// Every array must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn dynlab_cma_index(
    method: DynlabIndexMethod,
    n: usize,
    bank_presence: *const u8,
    dist_sber_km: *const f64,
    dist_other_km: *const f64,
    offices_per_1000: *const f64,
    index_out: *mut f64,
) -> DynlabStatus {
    guard(|| {
        for (p, name) in [
            (bank_presence.cast::<u8>(), "bank_presence"),
            (dist_sber_km.cast(), "dist_sber_km"),
            (dist_other_km.cast(), "dist_other_km"),
            (offices_per_1000.cast(), "offices_per_1000"),
            (index_out.cast_const().cast(), "index_out"),
        ] {
            if p.is_null() {
                return Err(null(name));
            }
        }
        let slice = |p: *const f64| std::slice::from_raw_parts(p, n);
        let presence = std::slice::from_raw_parts(bank_presence, n);
        let (ds, d_o, off) = (slice(dist_sber_km), slice(dist_other_km), slice(offices_per_1000));
        let rows = (0..n)
            .map(|i| CmaComponents::new(presence[i], ds[i], d_o[i], off[i]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(fail)?;
        let method = match method {
            DynlabIndexMethod::Zscore => IndexMethod::Zscore,
            DynlabIndexMethod::Pca => IndexMethod::Pca,
        };
        let ix = build_index(&rows, method, IndexOptions::default()).map_err(fail)?;
        ptr::copy_nonoverlapping(ix.values.as_ptr(), index_out, n);
        Ok(())
    })
}

/// Desired loan and the minimum verifiable income share of the two-period
/// household model (fixed-fee cost form).
///
/// # Safety
/// The outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn dynlab_desired_borrowing(
    income: f64,
    growth: f64,
    interest: f64,
    fixed_cost: f64,
    limit_slope: f64,
    borrowing_out: *mut f64,
    min_share_out: *mut f64,
) -> DynlabStatus {
    guard(|| {
        let p = HouseholdParams { income_now: income, growth, interest, fixed_cost, limit_slope, ..Default::default() };
        p.validate().map_err(|e| invalid(e.to_string()))?;
        if let Some(b) = borrowing_out.as_mut() {
            *b = desired_borrowing(&p, CostForm::FixedFee);
        }
        if let Some(t) = min_share_out.as_mut() {
            *t = min_verifiable_share(&p, CostForm::FixedFee);
        }
        Ok(())
    })
}
