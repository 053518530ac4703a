//! C ABI over bridgekit.
//!
//! Every function returns a [`BkStatus`]; results go through out-pointers.
//! On failure, `bk_last_error` describes the most recent error on the calling thread.
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned by the library must be released with `bk_string_free`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bridgekit::guard::default_cell_limit;
use bridgekit::io::{MeasureBody, PathDoc, ProblemDoc, Route, SolutionDoc};
use bridgekit::markov::{is_markov, is_reciprocal};
use bridgekit::measure::DensePathMeasure;
use bridgekit::solvers::{self, ProblemSpec, Reference, Solution, SolveOptions};
use bridgekit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidInput = 4,
    SizeGuard = 5,
    NotProbability = 6,
    NotAbsolutelyContinuous = 7,
    Infeasible = 8,
    PreconditionFailed = 9,
    Internal = 10,
    Panic = 11,
}

/// A path measure, stored in Markov or dense form.
pub struct BkMeasure(Reference);

pub struct BkProblem(ProblemSpec);

pub struct BkSolution(Solution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BkStatus {
    match e {
        Error::Parse(_) => BkStatus::Parse,
        Error::InvalidInput(_) | Error::BadCoords(_) | Error::ShapeMismatch(..) | Error::BadFoldGrid(_) => {
            BkStatus::InvalidInput
        }
        Error::SizeGuard { .. } => BkStatus::SizeGuard,
        Error::NotProbability { .. } => BkStatus::NotProbability,
        Error::NotAbsolutelyContinuous { .. } => BkStatus::NotAbsolutelyContinuous,
        Error::InfeasibleProblem(_) => BkStatus::Infeasible,
        Error::Internal(_) => BkStatus::Internal,
        _ => BkStatus::PreconditionFailed,
    }
}

enum Failure {
    Status(BkStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guarded(f: impl FnOnce() -> Result<(), Failure>) -> BkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BkStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside bridgekit".into());
            BkStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(BkStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|e| Failure::Status(BkStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, Failure> {
    h.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|e| Failure::Status(BkStatus::Internal, e.to_string()))
}

fn dense(m: &BkMeasure) -> Result<std::borrow::Cow<'_, DensePathMeasure>, Failure> {
    Ok(m.0.to_dense(default_cell_limit())?)
}

/// Parses a measure document (`{"states", "times", "markov" | "dense"}`).
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_measure_from_json(json: *const c_char, out: *mut *mut BkMeasure) -> BkStatus {
    guarded(|| {
        let doc: PathDoc = serde_json::from_str(str_arg(json, "json")?).map_err(Error::from)?;
        let m = doc.load(default_cell_limit())?;
        write(out, Box::into_raw(Box::new(BkMeasure(m))))
    })
}

/// `m` must come from `bk_measure_from_json` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bk_measure_free(m: *mut BkMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_measure_total_mass(m: *const BkMeasure, out: *mut f64) -> BkStatus {
    guarded(|| {
        let mass = match &handle(m, "measure")?.0 {
            Reference::Markov(q) => q.mass(),
            Reference::Dense(q) => q.mass(),
        };
        write(out, mass)
    })
}

/// Serializes the measure in dense form. Free the result with `bk_string_free`.
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_measure_to_dense_json(m: *const BkMeasure, out: *mut *mut c_char) -> BkStatus {
    guarded(|| {
        let q = dense(handle(m, "measure")?)?;
        let doc = PathDoc::new(q.space(), q.grid(), MeasureBody::from_dense(&q));
        write(out, to_c_string(serde_json::to_string(&doc).map_err(Error::from)?)?)
    })
}

/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_is_markov(m: *const BkMeasure, tol: f64, out: *mut bool) -> BkStatus {
    guarded(|| write(out, is_markov(&*dense(handle(m, "measure")?)?, tol)?.holds))
}

/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_is_reciprocal(m: *const BkMeasure, tol: f64, out: *mut bool) -> BkStatus {
    guarded(|| write(out, is_reciprocal(&*dense(handle(m, "measure")?)?, tol)?.holds))
}

/// H(p | r) for a probability `p` charging only paths charged by `r`.
/// `p` and `r` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_relative_entropy(p: *const BkMeasure, r: *const BkMeasure, out: *mut f64) -> BkStatus {
    guarded(|| {
        let (p, r) = (dense(handle(p, "p")?)?, dense(handle(r, "r")?)?);
        write(out, p.relative_entropy(&r)?)
    })
}

/// Parses a problem document (`{"states", "times", "reference", "constraints", "endpoint"?}`).
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_problem_from_json(json: *const c_char, out: *mut *mut BkProblem) -> BkStatus {
    guarded(|| {
        let doc: ProblemDoc = serde_json::from_str(str_arg(json, "json")?).map_err(Error::from)?;
        let spec = doc.load(default_cell_limit())?;
        write(out, Box::into_raw(Box::new(BkProblem(spec))))
    })
}

/// `p` must come from `bk_problem_from_json` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bk_problem_free(p: *mut BkProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Solves the problem by iterative fitting. A run that hits `max_iter`
/// still returns `Ok` with a solution whose `converged` flag is false.
/// Pass `tol <= 0` or `max_iter == 0` for the defaults.
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_solve(p: *const BkProblem, tol: f64, max_iter: usize, out: *mut *mut BkSolution) -> BkStatus {
    guarded(|| {
        let spec = &handle(p, "problem")?.0;
        let mut opts = SolveOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        if max_iter > 0 {
            opts.max_iter = max_iter;
        }
        let sol = solvers::solve(spec, &opts)?;
        write(out, Box::into_raw(Box::new(BkSolution(sol))))
    })
}

/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_solution_objective(s: *const BkSolution, out: *mut f64) -> BkStatus {
    guarded(|| write(out, handle(s, "solution")?.0.objective))
}

/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_solution_residual(s: *const BkSolution, out: *mut f64) -> BkStatus {
    guarded(|| write(out, handle(s, "solution")?.0.residual))
}

/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_solution_iterations(s: *const BkSolution, out: *mut usize) -> BkStatus {
    guarded(|| write(out, handle(s, "solution")?.0.iterations))
}

/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_solution_converged(s: *const BkSolution, out: *mut bool) -> BkStatus {
    guarded(|| write(out, handle(s, "solution")?.0.converged))
}

/// Same document as the CLI `solve` report. Free the result with `bk_string_free`.
/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_solution_to_json(s: *const BkSolution, out: *mut *mut c_char) -> BkStatus {
    guarded(|| {
        let doc = SolutionDoc::new(&handle(s, "solution")?.0, Route::Direct, None);
        write(out, to_c_string(serde_json::to_string(&doc).map_err(Error::from)?)?)
    })
}

/// `s` must come from `bk_solve` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bk_solution_free(s: *mut BkSolution) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
