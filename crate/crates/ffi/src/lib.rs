//! C interface to `shadow_inversion`.
//!
//! Every entry point returns an [`SiStatus`]; on failure the message is
//! available from [`si_last_error_message`] on the same thread. Objects are
//! passed as opaque handles that must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use shadow_inversion::circuit::verify_circuit;
use shadow_inversion::comb::{objective_estimate, Architecture, CombChoi, CombSpec, Observable};
use shadow_inversion::reduction::{assemble_full, assemble_reduced, solve_problem, AssembleOptions, ReducedProblem};
use shadow_inversion::rep::{variable_count, variable_count_bound};
use shadow_inversion::solver::{SolveStatus, SolverSettings};
use shadow_inversion::tensor::RngSeed;
use shadow_inversion::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    SizeCap = 4,
    Numerical = 5,
    Io = 6,
    Format = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiArchitecture {
    Sequential = 0,
    Parallel = 1,
}

impl From<SiArchitecture> for Architecture {
    fn from(a: SiArchitecture) -> Self {
        match a {
            SiArchitecture::Sequential => Architecture::Sequential,
            SiArchitecture::Parallel => Architecture::Parallel,
        }
    }
}

/// Assembled comb optimization problem.
pub struct SiProblem(ReducedProblem);

/// Comb Choi operator.
pub struct SiComb(CombChoi);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SiStatus {
    match e {
        Error::InvalidArgument(_) | Error::NotHermitian(_) | Error::NotUnitary(_) | Error::Permutation(_) => {
            SiStatus::InvalidArgument
        }
        Error::Dimension(_) | Error::Layout(_) | Error::UnknownLabel(_) => SiStatus::Dimension,
        Error::SizeCap { .. } => SiStatus::SizeCap,
        Error::Numerical(_) | Error::Basis(_) => SiStatus::Numerical,
        Error::Io(_) => SiStatus::Io,
        Error::Json(_) | Error::FormatVersion(_) => SiStatus::Format,
    }
}

struct Fail(SiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SiStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SiStatus::Panic
        }
    }
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SiStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn observable_arg(diag: *const f64, len: usize) -> Result<Observable, Fail> {
    Ok(Observable::diagonal(slice_arg(diag, len, "observable")?)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn si_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn si_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn si_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Reduced variable count for an observable with the given eigenvalue
/// multiplicities and `t` queries.
///
/// # Safety
/// `multiplicities` must point to `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_variable_count(multiplicities: *const usize, len: usize, t: usize, out: *mut u64) -> SiStatus {
    guard(|| {
        let m = slice_arg(multiplicities, len, "multiplicities")?;
        if m.is_empty() || m.contains(&0) || t == 0 {
            return Err(Fail(SiStatus::InvalidArgument, "need positive multiplicities and t ≥ 1".into()));
        }
        let n = u64::try_from(variable_count(m, t))
            .map_err(|_| Fail(SiStatus::SizeCap, "count exceeds 64 bits".into()))?;
        write(out, n, "out")
    })
}

/// `(t+1)! t! d^{t+1}`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_variable_count_bound(d: usize, t: usize, out: *mut u64) -> SiStatus {
    guard(|| {
        let n = u64::try_from(variable_count_bound(d, t))
            .map_err(|_| Fail(SiStatus::SizeCap, "bound exceeds 64 bits".into()))?;
        write(out, n, "out")
    })
}

/// Run the qubit circuit checks; reports the worst shadow residual and
/// whether every check passed.
///
/// # Safety
/// Output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_verify_circuit(
    trials: usize,
    states: usize,
    seed: u64,
    tol: f64,
    out_max_residual: *mut f64,
    out_passed: *mut bool,
) -> SiStatus {
    guard(|| {
        let r = verify_circuit(trials, states, RngSeed(seed), tol)?;
        write(out_max_residual, r.max_shadow_residual, "out_max_residual")?;
        write(out_passed, r.passed, "out_passed")
    })
}

/// Assemble a problem for a diagonal observable. `full` selects the
/// unreduced formulation.
///
/// # Safety
/// `obs_diag` must point to `d` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_problem_assemble(
    d: usize,
    t: usize,
    architecture: SiArchitecture,
    obs_diag: *const f64,
    obs_len: usize,
    samples: usize,
    seed: u64,
    full: bool,
    out: *mut *mut SiProblem,
) -> SiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let obs = observable_arg(obs_diag, obs_len)?;
        let spec = CombSpec::new(d, t, architecture.into())?;
        let opts = AssembleOptions { samples, seed: RngSeed(seed), ..Default::default() };
        if samples == 0 {
            return Err(Fail(SiStatus::InvalidArgument, "samples must be positive".into()));
        }
        let p = if full { assemble_full(&obs.matrix, spec, &opts)? } else { assemble_reduced(&obs.matrix, spec, &opts)? };
        out.write(Box::into_raw(Box::new(SiProblem(p))));
        Ok(())
    })
}

/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_problem_variable_count(problem: *const SiProblem, out: *mut usize) -> SiStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        write(out, p.0.variable_count(), "out")
    })
}

/// Write the conic problem as JSON.
///
/// # Safety
/// `problem` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn si_problem_export_conic(problem: *const SiProblem, path: *const c_char) -> SiStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        p.0.to_conic()?.export(&path_arg(path)?)?;
        Ok(())
    })
}

/// Write the block-level problem description as JSON.
///
/// # Safety
/// `problem` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn si_problem_export_reduced(problem: *const SiProblem, path: *const c_char) -> SiStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        p.0.export(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `problem` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn si_problem_free(problem: *mut SiProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Solve to tolerance `eps` and return the reconstructed comb together with
/// the sample-mean objective. A run that stops short of the tolerance still
/// returns its best iterate, with `out_converged` false.
///
/// # Safety
/// `problem` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_solve(
    problem: *const SiProblem,
    eps: f64,
    max_iter: usize,
    out_comb: *mut *mut SiComb,
    out_objective: *mut f64,
    out_converged: *mut bool,
) -> SiStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        if out_comb.is_null() {
            return Err(null("out_comb"));
        }
        let settings =
            SolverSettings { eps_primal: eps, eps_dual: eps, eps_gap: 10.0 * eps, max_iter, ..Default::default() };
        settings.validate()?;
        let sol = solve_problem(&p.0, &settings)?;
        write(out_objective, p.0.objective_value(&sol.result.x[..p.0.variable_count()]), "out_objective")?;
        write(out_converged, sol.result.status == SolveStatus::Optimal, "out_converged")?;
        out_comb.write(Box::into_raw(Box::new(SiComb(sol.comb))));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_comb_load(path: *const c_char, out: *mut *mut SiComb) -> SiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = CombChoi::load(&path_arg(path)?)?;
        out.write(Box::into_raw(Box::new(SiComb(c))));
        Ok(())
    })
}

/// # Safety
/// `comb` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn si_comb_save(comb: *const SiComb, path: *const c_char) -> SiStatus {
    guard(|| {
        let c = comb.as_ref().ok_or_else(|| null("comb"))?;
        c.0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `comb` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_comb_shape(
    comb: *const SiComb,
    out_d: *mut usize,
    out_t: *mut usize,
    out_architecture: *mut SiArchitecture,
) -> SiStatus {
    guard(|| {
        let c = comb.as_ref().ok_or_else(|| null("comb"))?;
        write(out_d, c.0.spec.d, "out_d")?;
        write(out_t, c.0.spec.t, "out_t")?;
        let arch = match c.0.spec.architecture {
            Architecture::Sequential => SiArchitecture::Sequential,
            Architecture::Parallel => SiArchitecture::Parallel,
        };
        write(out_architecture, arch, "out_architecture")
    })
}

/// Check the comb constraints at tolerance `tol`.
///
/// # Safety
/// `comb` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_comb_validate(
    comb: *const SiComb,
    tol: f64,
    out_valid: *mut bool,
    out_max_residual: *mut f64,
) -> SiStatus {
    guard(|| {
        let c = comb.as_ref().ok_or_else(|| null("comb"))?;
        let r = c.0.validate(tol)?;
        write(out_valid, r.valid, "out_valid")?;
        write(out_max_residual, r.max_residual(), "out_max_residual")
    })
}

/// Monte-Carlo estimate of the mean shadow residual for a diagonal observable.
///
/// # Safety
/// `comb` must be a live handle; `obs_diag` must point to `obs_len` values.
#[no_mangle]
pub unsafe extern "C" fn si_comb_objective(
    comb: *const SiComb,
    obs_diag: *const f64,
    obs_len: usize,
    samples: usize,
    seed: u64,
    out: *mut f64,
) -> SiStatus {
    guard(|| {
        let c = comb.as_ref().ok_or_else(|| null("comb"))?;
        let obs = observable_arg(obs_diag, obs_len)?;
        if obs.dim() != c.0.spec.d {
            return Err(Fail(SiStatus::Dimension, format!("observable has dimension {}, comb has d = {}", obs.dim(), c.0.spec.d)));
        }
        write(out, objective_estimate(&c.0, &obs, samples, RngSeed(seed))?, "out")
    })
}

/// # Safety
/// `comb` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn si_comb_free(comb: *mut SiComb) {
    if !comb.is_null() {
        drop(Box::from_raw(comb));
    }
}
