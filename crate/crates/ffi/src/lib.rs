//! C ABI over the disco solver.
//!
//! Datasets and results are opaque handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns a
//! [`DiscoStatus`]; on failure [`disco_last_error`] describes the problem.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use disco::collectives::Scheduler;
use disco::data::SparseDataset;
use disco::loss::LossModel;
use disco::solver::{self, EpsPolicy, Mode, SolveReport, SolverConfig};
use disco::sparse::CscMatrix;
use disco::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Diverged = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoLoss {
    Quadratic = 0,
    SquaredHinge = 1,
    Logistic = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoMode {
    /// Data split by samples.
    Samples = 0,
    /// Data split by features.
    Features = 1,
}

/// Solver settings. Obtain defaults from [`disco_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DiscoOptions {
    pub loss: DiscoLoss,
    pub mode: DiscoMode,
    pub lambda: f64,
    pub mu: f64,
    pub tau: usize,
    pub nodes: usize,
    /// Relative inner tolerance; used when `eps_abs` is not positive.
    pub eps_beta: f64,
    /// Fixed inner tolerance when positive.
    pub eps_abs: f64,
    pub hessian_fraction: f64,
    pub max_outer: usize,
    /// Zero selects the default cap of `2d + 10`.
    pub max_inner: usize,
    pub grad_tol: f64,
    pub seed: u64,
    /// Interleave nodes on the calling thread instead of one thread each.
    pub single_thread: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DiscoSummary {
    pub converged: bool,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub f_value: f64,
    pub grad_norm: f64,
    pub rounds: u64,
    pub grouped_rounds: u64,
    pub scalars: u64,
    pub vector_elements: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DiscoTraceRecord {
    pub k: usize,
    pub t_total_inner: usize,
    pub f_value: f64,
    pub grad_norm: f64,
    pub rounds_cum: u64,
    pub scalars_cum: u64,
    pub vec_elements_cum: u64,
    pub wall_seconds: f64,
    pub grouped_rounds_cum: u64,
}

pub struct DiscoDataset(SparseDataset);

pub struct DiscoResult(SolveReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> DiscoStatus {
    match e {
        Error::Config { .. } | Error::DimensionMismatch { .. } | Error::EmptySubset => {
            DiscoStatus::InvalidArgument
        }
        Error::Io(_) => DiscoStatus::Io,
        Error::Parse(_) => DiscoStatus::Parse,
        Error::Diverged { .. } => DiscoStatus::Diverged,
        Error::SingularGram { .. } | Error::NotPositiveDefinite { .. } | Error::NonConvergence { .. } => {
            DiscoStatus::Numerical
        }
        _ => DiscoStatus::Internal,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (DiscoStatus, String)>) -> DiscoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DiscoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DiscoStatus::Internal
        }
    }
}

fn fail(e: Error) -> (DiscoStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DiscoStatus, String) {
    (DiscoStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn disco_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a libsvm file (gzip-compressed when the name ends in `.gz`).
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn disco_dataset_load(
    path: *const c_char,
    out: *mut *mut DiscoDataset,
) -> DiscoStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (DiscoStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let ds = SparseDataset::from_path(path).map_err(fail)?;
        *out = Box::into_raw(Box::new(DiscoDataset(ds)));
        Ok(())
    })
}

/// Builds a dataset from compressed-sparse-column arrays, one column per
/// sample: `col_ptr` has `n + 1` entries, `row_idx` and `values` have
/// `col_ptr[n]`, and `labels` has `n`.
///
/// # Safety
/// All pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn disco_dataset_from_csc(
    d: usize,
    n: usize,
    col_ptr: *const usize,
    row_idx: *const usize,
    values: *const f64,
    labels: *const f64,
    out: *mut *mut DiscoDataset,
) -> DiscoStatus {
    guard(|| {
        if col_ptr.is_null() || labels.is_null() || out.is_null() {
            return Err(null("col_ptr, labels or out"));
        }
        let col_ptr = slice::from_raw_parts(col_ptr, n + 1).to_vec();
        let nnz = col_ptr[n];
        if nnz > 0 && (row_idx.is_null() || values.is_null()) {
            return Err(null("row_idx or values"));
        }
        let (rows, vals) = if nnz == 0 {
            (Vec::new(), Vec::new())
        } else {
            (
                slice::from_raw_parts(row_idx, nnz).to_vec(),
                slice::from_raw_parts(values, nnz).to_vec(),
            )
        };
        let x = CscMatrix::try_from_parts(d, col_ptr, rows, vals).map_err(fail)?;
        let ds = SparseDataset::new(x, slice::from_raw_parts(labels, n).to_vec()).map_err(fail)?;
        *out = Box::into_raw(Box::new(DiscoDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from a `disco_dataset_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn disco_dataset_free(ds: *mut DiscoDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle; `n` and `d` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn disco_dataset_dims(
    ds: *const DiscoDataset,
    n: *mut usize,
    d: *mut usize,
) -> DiscoStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        if n.is_null() || d.is_null() {
            return Err(null("n or d"));
        }
        *n = ds.0.n();
        *d = ds.0.d();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn disco_options_default() -> DiscoOptions {
    let c = SolverConfig::default();
    let beta = match c.eps {
        EpsPolicy::Relative { beta } => beta,
        EpsPolicy::Absolute { .. } => unreachable!("default policy is relative"),
    };
    DiscoOptions {
        loss: DiscoLoss::Logistic,
        mode: DiscoMode::Features,
        lambda: c.lambda,
        mu: c.mu,
        tau: c.tau,
        nodes: c.nodes,
        eps_beta: beta,
        eps_abs: 0.0,
        hessian_fraction: c.hessian_fraction,
        max_outer: c.max_outer,
        max_inner: 0,
        grad_tol: c.grad_tol,
        seed: c.seed,
        single_thread: false,
    }
}

fn config(o: &DiscoOptions) -> SolverConfig {
    SolverConfig {
        loss: match o.loss {
            DiscoLoss::Quadratic => LossModel::Quadratic,
            DiscoLoss::SquaredHinge => LossModel::SquaredHinge,
            DiscoLoss::Logistic => LossModel::Logistic,
        },
        lambda: o.lambda,
        mu: o.mu,
        tau: o.tau,
        mode: match o.mode {
            DiscoMode::Samples => Mode::Samples,
            DiscoMode::Features => Mode::Features,
        },
        nodes: o.nodes,
        eps: if o.eps_abs > 0.0 {
            EpsPolicy::Absolute { eps: o.eps_abs }
        } else {
            EpsPolicy::Relative { beta: o.eps_beta }
        },
        hessian_fraction: o.hessian_fraction,
        max_outer: o.max_outer,
        grad_tol: o.grad_tol,
        seed: o.seed,
        max_inner: (o.max_inner > 0).then_some(o.max_inner),
        scheduler: if o.single_thread {
            Scheduler::RoundRobin
        } else {
            Scheduler::Threaded
        },
        ..SolverConfig::default()
    }
}

/// Solves the problem; on success `*out` receives a result handle.
///
/// # Safety
/// `ds` must be a live dataset handle, `opts` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn disco_solve(
    ds: *const DiscoDataset,
    opts: *const DiscoOptions,
    out: *mut *mut DiscoResult,
) -> DiscoStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let opts = opts.as_ref().ok_or_else(|| null("options"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let report = solver::solve(&ds.0, &config(opts)).map_err(fail)?;
        *out = Box::into_raw(Box::new(DiscoResult(report)));
        Ok(())
    })
}

/// # Safety
/// `res` must come from [`disco_solve`] or be null.
#[no_mangle]
pub unsafe extern "C" fn disco_result_free(res: *mut DiscoResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Copies the final weights into `buf`. `*len` holds the capacity on entry
/// and the number of weights on return; with a null `buf` only the length is
/// reported.
///
/// # Safety
/// `res` must be a live result handle; `buf` must hold `*len` doubles.
#[no_mangle]
pub unsafe extern "C" fn disco_result_weights(
    res: *const DiscoResult,
    buf: *mut f64,
    len: *mut usize,
) -> DiscoStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        if len.is_null() {
            return Err(null("len"));
        }
        let w = &res.0.w;
        let capacity = *len;
        *len = w.len();
        if buf.is_null() {
            return Ok(());
        }
        if capacity < w.len() {
            return Err((
                DiscoStatus::BufferTooSmall,
                format!("need {} entries, got {capacity}", w.len()),
            ));
        }
        ptr::copy_nonoverlapping(w.as_ptr(), buf, w.len());
        Ok(())
    })
}

/// # Safety
/// `res` must be a live result handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn disco_result_summary(
    res: *const DiscoResult,
    out: *mut DiscoSummary,
) -> DiscoStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = &res.0;
        let last = r.final_record();
        let total = r.ledger.total();
        *out = DiscoSummary {
            converged: r.converged,
            outer_iters: r.outer_iters(),
            inner_iters: r.inner_iters(),
            f_value: last.f_value,
            grad_norm: last.grad_norm,
            rounds: total.rounds,
            grouped_rounds: total.grouped_rounds,
            scalars: total.scalars,
            vector_elements: total.vector_elements,
        };
        Ok(())
    })
}

/// Number of trace rows (outer iterations plus the initial point). Zero for
/// a null handle.
///
/// # Safety
/// `res` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn disco_result_trace_len(res: *const DiscoResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.trace.len())
}

/// # Safety
/// `res` must be a live result handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn disco_result_trace_record(
    res: *const DiscoResult,
    index: usize,
    out: *mut DiscoTraceRecord,
) -> DiscoStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = res.0.trace.get(index).ok_or_else(|| {
            (
                DiscoStatus::InvalidArgument,
                format!("trace index {index} out of range ({} rows)", res.0.trace.len()),
            )
        })?;
        *out = DiscoTraceRecord {
            k: t.k,
            t_total_inner: t.t_total_inner,
            f_value: t.f_value,
            grad_norm: t.grad_norm,
            rounds_cum: t.rounds_cum,
            scalars_cum: t.scalars_cum,
            vec_elements_cum: t.vec_elements_cum,
            wall_seconds: t.wall_seconds,
            grouped_rounds_cum: t.grouped_rounds_cum,
        };
        Ok(())
    })
}

/// Speed-up bound for serial fraction `s` on `m` nodes.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn disco_amdahl_speedup(s: f64, m: usize, out: *mut f64) -> DiscoStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = solver::amdahl_speedup(s, m).map_err(fail)?;
        Ok(())
    })
}
