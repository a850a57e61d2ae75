//! C ABI over `hoelderflow`.
//!
//! Every function returns an [`HfStatus`]; results go through out-pointers.
//! Paths are opaque [`HfPath`] handles released with [`hf_path_free`], and
//! strings returned by the library are released with [`hf_string_free`]. The
//! message of the most recent failure on the calling thread is available from
//! [`hf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hoelderflow::cli::{self, Command, IntegrandSpec, RunOptions};
use hoelderflow::fraccalc::{young_integral_fracrep, young_integral_rs, FracOrder, QuadratureConfig};
use hoelderflow::paths::{fbm_sample, holder_seminorm, FbmConfig, SampledPath};
use hoelderflow::stability::{eps_hat_max, gronwall_check};
use hoelderflow::Error;

/// Status codes shared by all entry points.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HfStatus {
    HfOk = 0,
    HfNullPointer = 1,
    HfConfig = 2,
    HfDomain = 3,
    HfRegularity = 4,
    HfStability = 5,
    HfValidation = 6,
    HfHypothesis = 7,
    HfNumeric = 8,
    HfIo = 9,
    HfInvalidUtf8 = 10,
    HfBufferTooSmall = 11,
    HfPanic = 12,
}

/// A sampled path on a uniform grid.
pub struct HfPath {
    inner: SampledPath,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> HfStatus {
    match err {
        Error::Config(_) | Error::Json(_) => HfStatus::HfConfig,
        Error::Domain(_) => HfStatus::HfDomain,
        Error::Regularity(_) => HfStatus::HfRegularity,
        Error::Stability(_) => HfStatus::HfStability,
        Error::Validation(_) => HfStatus::HfValidation,
        Error::Hypothesis(_) => HfStatus::HfHypothesis,
        Error::Numeric(_) => HfStatus::HfNumeric,
        Error::Io(_) | Error::Csv(_) => HfStatus::HfIo,
    }
}

enum Failure {
    Status(HfStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HfStatus::HfOk,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            HfStatus::HfPanic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(HfStatus::HfNullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(HfStatus::HfInvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_ref<'a>(p: *const HfPath) -> Result<&'a SampledPath, Failure> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| null("path"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed(path: SampledPath) -> *mut HfPath {
    Box::into_raw(Box::new(HfPath { inner: path }))
}

/// Message of the last failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn hf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Samples a scalar fBm path on `[0, horizon]` with `steps` steps.
///
/// # Safety
/// `out_path` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hf_fbm_sample(hurst: f64, horizon: f64, steps: usize, seed: u64, out_path: *mut *mut HfPath) -> HfStatus {
    guard(|| {
        let o = out(out_path, "out_path")?;
        *o = boxed(fbm_sample(&FbmConfig::scalar(hurst, horizon, steps, seed))?);
        Ok(())
    })
}

/// Builds a path from `len` point-major values of dimension `dim`.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out_path` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hf_path_from_values(
    t0: f64,
    dt: f64,
    dim: usize,
    values: *const f64,
    len: usize,
    beta_prime: f64,
    out_path: *mut *mut HfPath,
) -> HfStatus {
    guard(|| {
        let o = out(out_path, "out_path")?;
        let v = slice(values, len, "values")?.to_vec();
        *o = boxed(SampledPath::new(t0, dt, dim, v, beta_prime)?);
        Ok(())
    })
}

/// Releases a path; null is ignored.
///
/// # Safety
/// `path` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_path_free(path: *mut HfPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Number of grid points and the state dimension.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hf_path_shape(path: *const HfPath, out_len: *mut usize, out_dim: *mut usize) -> HfStatus {
    guard(|| {
        let p = path_ref(path)?;
        *out(out_len, "out_len")? = p.len();
        *out(out_dim, "out_dim")? = p.dim();
        Ok(())
    })
}

/// Copies the point-major values into `buf`. On `HfBufferTooSmall`, `*out_needed`
/// holds the required length.
///
/// # Safety
/// `buf` must be writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn hf_path_values(
    path: *const HfPath,
    buf: *mut f64,
    cap: usize,
    out_needed: *mut usize,
) -> HfStatus {
    guard(|| {
        let p = path_ref(path)?;
        let v = p.values();
        *out(out_needed, "out_needed")? = v.len();
        if cap < v.len() {
            return Err(Failure::Status(HfStatus::HfBufferTooSmall, format!("need {} values, got {cap}", v.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Discrete Hölder seminorm and sup norm on `[a, b]`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hf_holder_norms(
    path: *const HfPath,
    beta: f64,
    a: f64,
    b: f64,
    out_seminorm: *mut f64,
    out_sup: *mut f64,
) -> HfStatus {
    guard(|| {
        let h = holder_seminorm(path_ref(path)?, beta, a, b)?;
        *out(out_seminorm, "out_seminorm")? = h.seminorm;
        *out(out_sup, "out_sup")? = h.sup_norm;
        Ok(())
    })
}

/// `∫_s^t f(ω) dω` for a scalar path and a named integrand (`identity`, `one`,
/// `sin`, `cos`, `exp`, `square`), by Riemann–Stieltjes sums (finest level)
/// and by the fractional representation of order `alpha` (pass NaN for the
/// centre of the admissible window).
///
/// # Safety
/// Pointers must be valid; `integrand` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hf_young_integral(
    path: *const HfPath,
    integrand: *const c_char,
    s: f64,
    t: f64,
    alpha: f64,
    out_rs: *mut f64,
    out_fracrep: *mut f64,
) -> HfStatus {
    guard(|| {
        let omega = path_ref(path)?;
        if omega.dim() != 1 {
            return Err(Error::Config("only scalar paths are supported here".into()).into());
        }
        let name = text(integrand, "integrand")?;
        let spec: IntegrandSpec =
            serde_json::from_value(serde_json::Value::String(name.into())).map_err(Error::from)?;
        let g = spec.integrand(omega)?;
        let a = if alpha.is_nan() { FracOrder::center(g.beta(), omega.beta_prime())? } else { FracOrder::new(alpha)? };
        let rs = young_integral_rs(&g, omega, s, t)?;
        let fr = young_integral_fracrep(&g, omega, s, t, a, &QuadratureConfig::default())?;
        *out(out_rs, "out_rs")? = rs.value[0];
        *out(out_fracrep, "out_fracrep")? = fr[0];
        Ok(())
    })
}

/// Largest `ε̂` compatible with `(λ, ε)` in the stability recursion.
///
/// # Safety
/// `out_value` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hf_eps_hat_max(lambda: f64, eps: f64, out_value: *mut f64) -> HfStatus {
    guard(|| {
        *out(out_value, "out_value")? = eps_hat_max(lambda, eps)?;
        Ok(())
    })
}

/// Gronwall-type recursion check. `*out_hypothesis` is 1 when the hypothesis
/// holds at every index; `*out_conclusion` is 1/0 for the conclusion, or -1
/// when the hypothesis fails.
///
/// # Safety
/// `v` must point to `len` readable doubles; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hf_gronwall_check(
    v: *const f64,
    len: usize,
    zeta0: f64,
    k: f64,
    lambda: f64,
    eps: f64,
    eps_hat: f64,
    out_hypothesis: *mut i32,
    out_conclusion: *mut i32,
    out_min_slack: *mut f64,
) -> HfStatus {
    guard(|| {
        let verdict = gronwall_check(slice(v, len, "v")?, zeta0, k, lambda, eps, eps_hat);
        *out(out_hypothesis, "out_hypothesis")? = i32::from(verdict.hypothesis_holds);
        *out(out_conclusion, "out_conclusion")? = verdict.conclusion_holds.map_or(-1, i32::from);
        *out(out_min_slack, "out_min_slack")? = verdict.min_conclusion_slack;
        Ok(())
    })
}

fn command_of(name: &str) -> Result<Command, Failure> {
    Ok(match name {
        "sample-fbm" => Command::SampleFbm,
        "integrate" => Command::Integrate,
        "solve" => Command::Solve,
        "doss" => Command::Doss,
        "stability" => Command::Stability,
        "gronwall" => Command::Gronwall,
        "report" => Command::Report,
        other => return Err(Failure::Status(HfStatus::HfConfig, format!("unknown subcommand `{other}`"))),
    })
}

/// Runs a batch experiment exactly as the command-line tool does. `output_dir`
/// may be null to use the config's; relative config paths resolve against
/// `base_dir` (null for the working directory). `jobs` = 0 uses all cores.
/// On success `*out_manifest` receives the manifest JSON, to be released with
/// [`hf_string_free`].
///
/// # Safety
/// String arguments must be NUL-terminated or null where allowed.
#[no_mangle]
pub unsafe extern "C" fn hf_run_experiment(
    subcommand: *const c_char,
    config_json: *const c_char,
    output_dir: *const c_char,
    base_dir: *const c_char,
    jobs: usize,
    out_manifest: *mut *mut c_char,
) -> HfStatus {
    guard(|| {
        let o = out(out_manifest, "out_manifest")?;
        let cmd = command_of(text(subcommand, "subcommand")?)?;
        let raw = text(config_json, "config_json")?;
        let opts = RunOptions {
            output_dir: if output_dir.is_null() { None } else { Some(PathBuf::from(text(output_dir, "output_dir")?)) },
            seeds: None,
            jobs: (jobs > 0).then_some(jobs),
            base_dir: if base_dir.is_null() { PathBuf::new() } else { PathBuf::from(text(base_dir, "base_dir")?) },
        };
        let summary = cli::run(cmd, raw, &opts).map_err(|e| {
            let status = match e.code {
                cli::EXIT_CONFIG => HfStatus::HfConfig,
                cli::EXIT_NUMERIC => HfStatus::HfNumeric,
                _ => HfStatus::HfIo,
            };
            Failure::Status(status, e.message)
        })?;
        let json = serde_json::to_string(&summary.manifest).map_err(Error::from)?;
        *o = CString::new(json).expect("JSON has no interior NUL").into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
