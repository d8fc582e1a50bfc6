//! C ABI for the hsolver library.
//!
//! Conventions:
//! - Every function returns an [`HsvStatus`]; `HSV_STATUS_OK` is zero.
//! - Matrices and factorizations are opaque handles created and released
//!   by this library (`hsv_matrix_free`, `hsv_factor_free`); handles are
//!   not thread-safe to mutate concurrently but may be shared read-only.
//! - On failure, a human-readable message is stored per thread and stays
//!   valid until the next failing call on the same thread
//!   (`hsv_last_error_message`).
//! - Panics never unwind across the boundary; they surface as
//!   `HSV_STATUS_PANIC`.
//!
//! The matching C header is generated into `include/hsolver.h` at build
//! time.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hsolver::error::Error;
use hsolver::hfact::{hierarchical_factor, HierFactorization, Partitioner, SolverConfig};
use hsolver::kernels::EpsMode;
use hsolver::krylov::pcg;
use hsolver::partition::ColumnMap;
use hsolver::sparse::{load_matrix_market, save_matrix_market, SparseSpdMatrix};

/// Result code of every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsvStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Dimensions, indices, or configuration values were invalid.
    InvalidArgument = 2,
    /// The input matrix is not symmetric positive definite.
    NotSpd = 3,
    /// The hierarchical factorization could not be completed (for
    /// example, an approximate diagonal block lost positive
    /// definiteness at the chosen truncation tolerance).
    FactorizationFailed = 4,
    /// The iterative solve broke down (indefinite operator or
    /// preconditioner).
    SolveBreakdown = 5,
    /// The iteration finished without reaching the requested tolerance;
    /// the report still describes the partial result.
    NotConverged = 6,
    /// File input/output or parsing failed.
    Io = 7,
    /// An internal panic was caught at the boundary.
    Panic = 8,
}

/// Opaque sparse SPD matrix handle.
pub struct HsvMatrix(SparseSpdMatrix);

/// Opaque hierarchical factorization handle.
pub struct HsvFactorization(HierFactorization);

/// Factorization settings. Obtain defaults from [`hsv_config_default`]
/// and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HsvConfig {
    /// Low-rank truncation tolerance (0 disables truncation).
    pub eps: f64,
    /// Nonzero: `eps` is relative to each block's largest singular
    /// value. Zero: `eps` is an absolute singular-value cutoff.
    pub eps_relative: c_int,
    /// Target nodes per partition cluster.
    pub target_cluster_size: usize,
    /// Coarse systems at most this large are factored densely.
    pub stop_size: usize,
    /// Nonzero: scale blocks by the inverse diagonal Cholesky factor
    /// before truncation (deferred compression). Strongly recommended.
    pub deferred_scaling: c_int,
    /// Nonzero: keep extruded columns whole when partitioning; requires
    /// a column map in [`hsv_factor`].
    pub extruded_partitioner: c_int,
    /// Diagonal shift added at each elimination, as a fraction of the
    /// local diagonal scale (0 disables).
    pub jitter: f64,
}

/// Outcome of [`hsv_solve_pcg`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HsvSolveReport {
    /// Nonzero iff the relative residual reached the tolerance.
    pub converged: c_int,
    /// Iterations performed.
    pub iterations: usize,
    /// Final true relative residual ‖b − Ax‖/‖b‖.
    pub final_relres: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(e: &Error) -> HsvStatus {
    match e {
        Error::NotPositiveDefinite { .. }
        | Error::NotSymmetric { .. }
        | Error::NonPositiveDiagonal { .. } => HsvStatus::NotSpd,
        Error::DimensionMismatch { .. }
        | Error::IndexOutOfRange { .. }
        | Error::PartitionMismatch { .. }
        | Error::ColumnSplitRequired { .. }
        | Error::ColumnMapRequired
        | Error::CoordinatesRequired { .. }
        | Error::InvalidArgument { .. } => HsvStatus::InvalidArgument,
        Error::SingularTriangular { .. }
        | Error::DiagonalNotSpd { .. }
        | Error::LevelCapExceeded { .. }
        | Error::BreakdownNonpositivePivot { .. }
        | Error::SingularSystem { .. } => HsvStatus::FactorizationFailed,
        Error::PreconditionerNotPositive { .. } | Error::IndefiniteOperator { .. } => {
            HsvStatus::SolveBreakdown
        }
        Error::Parse { .. } | Error::Io { .. } => HsvStatus::Io,
    }
}

fn fail(e: &Error) -> HsvStatus {
    set_last_error(&e.to_string());
    status_of(e)
}

/// Runs `body` with panics converted to `HSV_STATUS_PANIC`.
fn guarded(body: impl FnOnce() -> HsvStatus) -> HsvStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".to_string());
            set_last_error(&format!("internal panic: {msg}"));
            HsvStatus::Panic
        }
    }
}

macro_rules! require_nonnull {
    ($ptr:expr) => {
        if $ptr.is_null() {
            set_last_error(concat!("null pointer argument: ", stringify!($ptr)));
            return HsvStatus::NullPointer;
        }
    };
}

unsafe fn slice_or_empty<'a, T>(ptr: *const T, len: usize) -> &'a [T] {
    if len == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(ptr, len)
    }
}

fn cstr_to_path<'a>(ptr: *const c_char) -> Result<&'a str, HsvStatus> {
    let cstr = unsafe { CStr::from_ptr(ptr) };
    cstr.to_str().map_err(|_| {
        set_last_error("path is not valid UTF-8");
        HsvStatus::InvalidArgument
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hsv_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the most recent failure on the calling thread. Empty
/// string when no failure has occurred. The pointer stays valid until
/// the next failing call on this thread.
#[no_mangle]
pub extern "C" fn hsv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a sparse SPD matrix from COO triplets (duplicates summed;
/// both or either triangle may be supplied, symmetry is validated).
/// On success writes a handle to `out`; release with
/// [`hsv_matrix_free`].
///
/// # Safety
/// `rows`, `cols`, `values` must point to `nnz` readable elements;
/// `out` must be a valid destination.
#[no_mangle]
pub unsafe extern "C" fn hsv_matrix_from_triplets(
    dim: usize,
    rows: *const usize,
    cols: *const usize,
    values: *const f64,
    nnz: usize,
    out: *mut *mut HsvMatrix,
) -> HsvStatus {
    require_nonnull!(out);
    if nnz > 0 {
        require_nonnull!(rows);
        require_nonnull!(cols);
        require_nonnull!(values);
    }
    guarded(|| {
        let triplets: Vec<(usize, usize, f64)> = slice_or_empty(rows, nnz)
            .iter()
            .zip(slice_or_empty(cols, nnz))
            .zip(slice_or_empty(values, nnz))
            .map(|((&i, &j), &v)| (i, j, v))
            .collect();
        match SparseSpdMatrix::from_triplets(dim, &triplets) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(HsvMatrix(m)));
                HsvStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Reads a matrix from a MatrixMarket file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn hsv_matrix_load_matrix_market(
    path: *const c_char,
    out: *mut *mut HsvMatrix,
) -> HsvStatus {
    require_nonnull!(path);
    require_nonnull!(out);
    guarded(|| {
        let path = match cstr_to_path(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_matrix_market(path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(HsvMatrix(m)));
                HsvStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes the matrix to a MatrixMarket file.
///
/// # Safety
/// `matrix` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hsv_matrix_save_matrix_market(
    matrix: *const HsvMatrix,
    path: *const c_char,
) -> HsvStatus {
    require_nonnull!(matrix);
    require_nonnull!(path);
    guarded(|| {
        let path = match cstr_to_path(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match save_matrix_market(&(*matrix).0, path) {
            Ok(()) => HsvStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Writes the matrix dimension to `out`.
///
/// # Safety
/// `matrix` must be a live handle; `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn hsv_matrix_dim(matrix: *const HsvMatrix, out: *mut usize) -> HsvStatus {
    require_nonnull!(matrix);
    require_nonnull!(out);
    *out = (*matrix).0.dim();
    HsvStatus::Ok
}

/// Writes the stored nonzero count to `out`.
///
/// # Safety
/// `matrix` must be a live handle; `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn hsv_matrix_nnz(matrix: *const HsvMatrix, out: *mut usize) -> HsvStatus {
    require_nonnull!(matrix);
    require_nonnull!(out);
    *out = (*matrix).0.nnz();
    HsvStatus::Ok
}

/// Releases a matrix handle. Null is accepted and ignored.
///
/// # Safety
/// `matrix` must be a handle from this library, released exactly once.
#[no_mangle]
pub unsafe extern "C" fn hsv_matrix_free(matrix: *mut HsvMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Fills `out` with the default factorization settings.
///
/// # Safety
/// `out` must be a valid destination.
#[no_mangle]
pub unsafe extern "C" fn hsv_config_default(out: *mut HsvConfig) -> HsvStatus {
    require_nonnull!(out);
    let d = SolverConfig::default();
    *out = HsvConfig {
        eps: d.eps,
        eps_relative: matches!(d.eps_mode, EpsMode::Relative) as c_int,
        target_cluster_size: d.target_cluster_size,
        stop_size: d.stop_size,
        deferred_scaling: d.dc as c_int,
        extruded_partitioner: matches!(d.partitioner, Partitioner::Extruded) as c_int,
        jitter: d.jitter,
    };
    HsvStatus::Ok
}

fn solver_config_of(c: &HsvConfig) -> SolverConfig {
    SolverConfig {
        eps: c.eps,
        eps_mode: if c.eps_relative != 0 {
            EpsMode::Relative
        } else {
            EpsMode::Absolute
        },
        target_cluster_size: c.target_cluster_size,
        stop_size: c.stop_size,
        dc: c.deferred_scaling != 0,
        partitioner: if c.extruded_partitioner != 0 {
            Partitioner::Extruded
        } else {
            Partitioner::General
        },
        jitter: c.jitter,
    }
}

/// Builds the multilevel factorization of `matrix` under `config`.
/// `column_map` may be null unless the extruded partitioner is
/// selected; when present it must hold one column index per matrix row.
/// On success writes a handle to `out`; release with
/// [`hsv_factor_free`].
///
/// # Safety
/// `matrix` must be a live handle; `config` and `out` valid pointers;
/// `column_map`, when non-null, must point to `dim` readable elements.
#[no_mangle]
pub unsafe extern "C" fn hsv_factor(
    matrix: *const HsvMatrix,
    config: *const HsvConfig,
    column_map: *const usize,
    out: *mut *mut HsvFactorization,
) -> HsvStatus {
    require_nonnull!(matrix);
    require_nonnull!(config);
    require_nonnull!(out);
    guarded(|| {
        let a = &(*matrix).0;
        let config = solver_config_of(&*config);
        let colmap = if column_map.is_null() {
            None
        } else {
            match ColumnMap::new(slice_or_empty(column_map, a.dim()).to_vec()) {
                Ok(map) => Some(map),
                Err(e) => return fail(&e),
            }
        };
        match hierarchical_factor(a, &config, colmap.as_ref()) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(HsvFactorization(f)));
                HsvStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes the factorization's dimension to `out`.
///
/// # Safety
/// `factor` must be a live handle; `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn hsv_factor_dim(
    factor: *const HsvFactorization,
    out: *mut usize,
) -> HsvStatus {
    require_nonnull!(factor);
    require_nonnull!(out);
    *out = (*factor).0.dim();
    HsvStatus::Ok
}

/// Writes the number of elimination levels to `out`.
///
/// # Safety
/// `factor` must be a live handle; `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn hsv_factor_levels(
    factor: *const HsvFactorization,
    out: *mut usize,
) -> HsvStatus {
    require_nonnull!(factor);
    require_nonnull!(out);
    *out = (*factor).0.levels().len();
    HsvStatus::Ok
}

/// Applies the factorization as a solve: writes `x ≈ A⁻¹ b` (exact when
/// the factorization was built with `eps = 0`). `b` and `x` must each
/// hold `len == dim` elements; they may alias.
///
/// # Safety
/// `factor` must be a live handle; `b` and `x` must point to `len`
/// elements (readable and writable respectively).
#[no_mangle]
pub unsafe extern "C" fn hsv_factor_apply(
    factor: *const HsvFactorization,
    b: *const f64,
    x: *mut f64,
    len: usize,
) -> HsvStatus {
    require_nonnull!(factor);
    require_nonnull!(b);
    require_nonnull!(x);
    guarded(|| {
        let f = &(*factor).0;
        if len != f.dim() {
            set_last_error(&format!(
                "vector length {len} does not match factorization dimension {}",
                f.dim()
            ));
            return HsvStatus::InvalidArgument;
        }
        match f.apply(slice_or_empty(b, len)) {
            Ok(result) => {
                std::ptr::copy_nonoverlapping(result.as_ptr(), x, len);
                HsvStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a factorization handle. Null is accepted and ignored.
///
/// # Safety
/// `factor` must be a handle from this library, released exactly once.
#[no_mangle]
pub unsafe extern "C" fn hsv_factor_free(factor: *mut HsvFactorization) {
    if !factor.is_null() {
        drop(Box::from_raw(factor));
    }
}

/// Solves `A x = b` with preconditioned conjugate gradients, using the
/// factorization as the preconditioner. `x` receives the iterate even
/// when the tolerance is not reached (status `HSV_STATUS_NOT_CONVERGED`);
/// `report`, when non-null, receives the iteration summary in both
/// cases.
///
/// # Safety
/// `matrix` and `factor` must be live handles over the same system;
/// `b` (readable) and `x` (writable) must hold `len` elements; `report`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn hsv_solve_pcg(
    matrix: *const HsvMatrix,
    factor: *const HsvFactorization,
    b: *const f64,
    x: *mut f64,
    len: usize,
    tol: f64,
    maxit: usize,
    report: *mut HsvSolveReport,
) -> HsvStatus {
    require_nonnull!(matrix);
    require_nonnull!(factor);
    require_nonnull!(b);
    require_nonnull!(x);
    guarded(|| {
        let a = &(*matrix).0;
        let f = &(*factor).0;
        if len != a.dim() {
            set_last_error(&format!(
                "vector length {len} does not match matrix dimension {}",
                a.dim()
            ));
            return HsvStatus::InvalidArgument;
        }
        match pcg(a, slice_or_empty(b, len), f, tol, maxit) {
            Ok((solution, rep)) => {
                std::ptr::copy_nonoverlapping(solution.as_ptr(), x, len);
                if !report.is_null() {
                    *report = HsvSolveReport {
                        converged: rep.converged as c_int,
                        iterations: rep.iterations,
                        final_relres: rep.final_relres,
                    };
                }
                if rep.converged {
                    HsvStatus::Ok
                } else {
                    set_last_error(&format!(
                        "not converged after {} iterations: relative residual {:.3e} > {tol:.3e}",
                        rep.iterations, rep.final_relres
                    ));
                    HsvStatus::NotConverged
                }
            }
            Err(e) => fail(&e),
        }
    })
}
