//! C ABI for pme-lab.
//!
//! Every function returns an integer status (`PME_OK` on success) and writes
//! results through out-pointers. Configurations and finished runs are opaque
//! handles owned by the caller and released with the matching `*_free`.
//! After a failure, `pme_last_error` returns the message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::str::FromStr;

use pme_lab::config::{preset, RunConfig};
use pme_lab::grid::Grid;
use pme_lab::measures::{wasserstein_1d, DensityField};
use pme_lab::runner::{execute, write_outputs, RunOutcome};
use pme_lab::serrin::{lambda_q, theorem_admissible, ClassQuery, TheoremId};
use pme_lab::Error;

pub const PME_OK: c_int = 0;
pub const PME_ERR_NULL: c_int = 1;
pub const PME_ERR_INVALID: c_int = 2;
pub const PME_ERR_CONFIG: c_int = 3;
pub const PME_ERR_NUMERICAL: c_int = 4;
pub const PME_ERR_IO: c_int = 5;
pub const PME_ERR_UTF8: c_int = 6;
pub const PME_ERR_BUFFER: c_int = 7;
pub const PME_ERR_PANIC: c_int = 8;

/// Opaque run configuration.
pub struct PmeConfig(RunConfig);

/// Opaque finished run holding its in-memory artifacts.
pub struct PmeRun(RunOutcome);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn code_of(e: &Error) -> c_int {
    match e {
        Error::Config { .. } => PME_ERR_CONFIG,
        Error::InvalidInput(_) | Error::UnknownTheorem(_) | Error::UnknownFigure(_) | Error::Regime(_) | Error::TooManyAtoms { .. } => {
            PME_ERR_INVALID
        }
        Error::Io(_) => PME_ERR_IO,
        _ => PME_ERR_NUMERICAL,
    }
}

/// Runs `body`, converting library errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), c_int>) -> c_int {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PME_OK,
        Ok(Err(code)) => code,
        Err(_) => {
            set_error("internal panic".into());
            PME_ERR_PANIC
        }
    }
}

fn fail(e: Error) -> c_int {
    let code = code_of(&e);
    set_error(e.to_string());
    code
}

fn null(what: &str) -> c_int {
    set_error(format!("null pointer: {what}"));
    PME_ERR_NULL
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, c_int> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        PME_ERR_UTF8
    })
}

/// Copies `s` with a trailing NUL into `buf`; `needed` receives the full size.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), c_int> {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        set_error(format!("buffer holds {len} bytes, {} needed", s.len() + 1));
        return Err(PME_ERR_BUFFER);
    }
    ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pme_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must hold `len` writable bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn pme_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> c_int {
    let msg = LAST_ERROR.with(|e| e.borrow().to_string_lossy().into_owned());
    guard(|| copy_out(&msg, buf, len, needed))
}

/// Parses a TOML configuration.
///
/// # Safety
/// `src` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pme_config_from_toml(src: *const c_char, out: *mut *mut PmeConfig) -> c_int {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig::parse(text(src, "src")?).map_err(fail)?;
        *out = Box::into_raw(Box::new(PmeConfig(cfg)));
        Ok(())
    })
}

/// Loads a named preset.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pme_config_preset(name: *const c_char, out: *mut *mut PmeConfig) -> c_int {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = preset(text(name, "name")?).map_err(fail)?;
        *out = Box::into_raw(Box::new(PmeConfig(cfg)));
        Ok(())
    })
}

/// Serializes a configuration back to TOML.
///
/// # Safety
/// `cfg` must come from this library; `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pme_config_to_toml(cfg: *const PmeConfig, buf: *mut c_char, len: usize, needed: *mut usize) -> c_int {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        copy_out(&cfg.0.to_toml(), buf, len, needed)
    })
}

/// Releases a configuration; null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pme_config_free(cfg: *mut PmeConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Executes the configured experiment in memory.
///
/// # Safety
/// `cfg` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pme_run_execute(cfg: *const PmeConfig, out: *mut *mut PmeRun) -> c_int {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let outcome = execute(&cfg.0).map_err(fail)?;
        *out = Box::into_raw(Box::new(PmeRun(outcome)));
        Ok(())
    })
}

/// Writes 1 to `passed` when every enabled audit passed, else 0.
///
/// # Safety
/// `run` must come from this library and `passed` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pme_run_passed(run: *const PmeRun, passed: *mut c_int) -> c_int {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if passed.is_null() {
            return Err(null("passed"));
        }
        *passed = c_int::from(run.0.passed);
        Ok(())
    })
}

/// Copies the one-line run summary into `buf`.
///
/// # Safety
/// `run` must come from this library; `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pme_run_summary(run: *const PmeRun, buf: *mut c_char, len: usize, needed: *mut usize) -> c_int {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        copy_out(&run.0.summary, buf, len, needed)
    })
}

/// Copies the artifact `name` (a CSV, JSON or text file) into `buf`.
///
/// # Safety
/// `run` must come from this library, `name` be NUL-terminated, `buf` hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pme_run_artifact(
    run: *const PmeRun,
    name: *const c_char,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> c_int {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let name = text(name, "name")?;
        let bytes = run.0.artifacts.get(name).ok_or_else(|| fail(Error::InvalidInput(format!("no artifact named `{name}`"))))?;
        let s = std::str::from_utf8(bytes).map_err(|_| {
            set_error(format!("artifact `{name}` is not text"));
            PME_ERR_UTF8
        })?;
        copy_out(s, buf, len, needed)
    })
}

/// Writes the artifacts and `manifest.json` under `dir`.
///
/// # Safety
/// Both handles must come from this library and `dir` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pme_run_write(run: *const PmeRun, cfg: *const PmeConfig, dir: *const c_char) -> c_int {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        write_outputs(Path::new(text(dir, "dir")?), &cfg.0, &run.0).map_err(fail)
    })
}

/// Releases a run; null is ignored.
///
/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pme_run_free(run: *mut PmeRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Speed exponent `min{2, 1 + (d(q−1)+q)/(d(m−1)+q)}`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pme_lambda_q(m: f64, q: f64, d: u32, out: *mut f64) -> c_int {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(m > 1.0) || !(q >= 1.0) || d == 0 {
            return Err(fail(Error::InvalidInput(format!("need m > 1, q ≥ 1, d ≥ 1; got ({m}, {q}, {d})"))));
        }
        *out = lambda_q(m, q, d);
        Ok(())
    })
}

/// Writes 1 to `admissible` when `(q1, q2)` satisfies the theorem's hypotheses.
/// `theorem` is a code such as `"T2.1(i)"`; `q1`/`q2` may be `INFINITY`.
///
/// # Safety
/// `theorem` must be NUL-terminated and `admissible` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pme_theorem_admissible(
    theorem: *const c_char,
    m: f64,
    q: f64,
    d: u32,
    q1: f64,
    q2: f64,
    admissible: *mut c_int,
) -> c_int {
    guard(|| {
        if admissible.is_null() {
            return Err(null("admissible"));
        }
        let id = TheoremId::from_str(text(theorem, "theorem")?).map_err(fail)?;
        let query = ClassQuery::new(id, m, q, d, q1, q2, id.structure()).map_err(fail)?;
        *admissible = c_int::from(theorem_admissible(&query).map_err(fail)?.admissible);
        Ok(())
    })
}

/// `W_p` between two cell densities on `n` equal cells of `[lower, upper]`.
/// Both inputs are normalized to unit mass first.
///
/// # Safety
/// `mu` and `nu` must point to `n` values each; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pme_wasserstein_1d(
    lower: f64,
    upper: f64,
    n: usize,
    mu: *const f64,
    nu: *const f64,
    p: f64,
    out: *mut f64,
) -> c_int {
    guard(|| {
        if mu.is_null() || nu.is_null() || out.is_null() {
            return Err(null("mu, nu or out"));
        }
        let grid = Grid::new_1d(lower, upper, n).map_err(fail)?;
        let field = |v: *const f64| DensityField::normalized(grid, std::slice::from_raw_parts(v, n).to_vec(), 0.0);
        let (a, b) = (field(mu).map_err(fail)?, field(nu).map_err(fail)?);
        *out = wasserstein_1d(&a, &b, p).map_err(fail)?.distance;
        Ok(())
    })
}
