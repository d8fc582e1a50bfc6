#ifndef HSOLVER_H
#define HSOLVER_H

/* Generated from the hsolver-ffi Rust crate by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every FFI call.
typedef enum {
  // Success.
  HSV_STATUS_OK = 0,
  // A required pointer argument was null.
  HSV_STATUS_NULL_POINTER = 1,
  // Dimensions, indices, or configuration values were invalid.
  HSV_STATUS_INVALID_ARGUMENT = 2,
  // The input matrix is not symmetric positive definite.
  HSV_STATUS_NOT_SPD = 3,
  // The hierarchical factorization could not be completed (for
  // example, an approximate diagonal block lost positive
  // definiteness at the chosen truncation tolerance).
  HSV_STATUS_FACTORIZATION_FAILED = 4,
  // The iterative solve broke down (indefinite operator or
  // preconditioner).
  HSV_STATUS_SOLVE_BREAKDOWN = 5,
  // The iteration finished without reaching the requested tolerance;
  // the report still describes the partial result.
  HSV_STATUS_NOT_CONVERGED = 6,
  // File input/output or parsing failed.
  HSV_STATUS_IO = 7,
  // An internal panic was caught at the boundary.
  HSV_STATUS_PANIC = 8,
} HsvStatus;

// Opaque hierarchical factorization handle.
typedef struct HsvFactorization HsvFactorization;

// Opaque sparse SPD matrix handle.
typedef struct HsvMatrix HsvMatrix;

// Factorization settings. Obtain defaults from [`hsv_config_default`]
// and override fields as needed.
typedef struct {
  // Low-rank truncation tolerance (0 disables truncation).
  double eps;
  // Nonzero: `eps` is relative to each block's largest singular
  // value. Zero: `eps` is an absolute singular-value cutoff.
  int eps_relative;
  // Target nodes per partition cluster.
  size_t target_cluster_size;
  // Coarse systems at most this large are factored densely.
  size_t stop_size;
  // Nonzero: scale blocks by the inverse diagonal Cholesky factor
  // before truncation (deferred compression). Strongly recommended.
  int deferred_scaling;
  // Nonzero: keep extruded columns whole when partitioning; requires
  // a column map in [`hsv_factor`].
  int extruded_partitioner;
  // Diagonal shift added at each elimination, as a fraction of the
  // local diagonal scale (0 disables).
  double jitter;
} HsvConfig;

// Outcome of [`hsv_solve_pcg`].
typedef struct {
  // Nonzero iff the relative residual reached the tolerance.
  int converged;
  // Iterations performed.
  size_t iterations;
  // Final true relative residual ‖b − Ax‖/‖b‖.
  double final_relres;
} HsvSolveReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hsv_version(void);

// Message of the most recent failure on the calling thread. Empty
// string when no failure has occurred. The pointer stays valid until
// the next failing call on this thread.
const char *hsv_last_error_message(void);

// Builds a sparse SPD matrix from COO triplets (duplicates summed;
// both or either triangle may be supplied, symmetry is validated).
// On success writes a handle to `out`; release with
// [`hsv_matrix_free`].
//
// # Safety
// `rows`, `cols`, `values` must point to `nnz` readable elements;
// `out` must be a valid destination.
HsvStatus hsv_matrix_from_triplets(size_t dim,
                                   const size_t *rows,
                                   const size_t *cols,
                                   const double *values,
                                   size_t nnz,
                                   HsvMatrix **out);

// Reads a matrix from a MatrixMarket file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid destination.
HsvStatus hsv_matrix_load_matrix_market(const char *path, HsvMatrix **out);

// Writes the matrix to a MatrixMarket file.
//
// # Safety
// `matrix` must be a live handle; `path` a NUL-terminated string.
HsvStatus hsv_matrix_save_matrix_market(const HsvMatrix *matrix, const char *path);

// Writes the matrix dimension to `out`.
//
// # Safety
// `matrix` must be a live handle; `out` a valid destination.
HsvStatus hsv_matrix_dim(const HsvMatrix *matrix, size_t *out);

// Writes the stored nonzero count to `out`.
//
// # Safety
// `matrix` must be a live handle; `out` a valid destination.
HsvStatus hsv_matrix_nnz(const HsvMatrix *matrix, size_t *out);

// Releases a matrix handle. Null is accepted and ignored.
//
// # Safety
// `matrix` must be a handle from this library, released exactly once.
void hsv_matrix_free(HsvMatrix *matrix);

// Fills `out` with the default factorization settings.
//
// # Safety
// `out` must be a valid destination.
HsvStatus hsv_config_default(HsvConfig *out);

// Builds the multilevel factorization of `matrix` under `config`.
// `column_map` may be null unless the extruded partitioner is
// selected; when present it must hold one column index per matrix row.
// On success writes a handle to `out`; release with
// [`hsv_factor_free`].
//
// # Safety
// `matrix` must be a live handle; `config` and `out` valid pointers;
// `column_map`, when non-null, must point to `dim` readable elements.
HsvStatus hsv_factor(const HsvMatrix *matrix,
                     const HsvConfig *config,
                     const size_t *column_map,
                     HsvFactorization **out);

// Writes the factorization's dimension to `out`.
//
// # Safety
// `factor` must be a live handle; `out` a valid destination.
HsvStatus hsv_factor_dim(const HsvFactorization *factor, size_t *out);

// Writes the number of elimination levels to `out`.
//
// # Safety
// `factor` must be a live handle; `out` a valid destination.
HsvStatus hsv_factor_levels(const HsvFactorization *factor, size_t *out);

// Applies the factorization as a solve: writes `x ≈ A⁻¹ b` (exact when
// the factorization was built with `eps = 0`). `b` and `x` must each
// hold `len == dim` elements; they may alias.
//
// # Safety
// `factor` must be a live handle; `b` and `x` must point to `len`
// elements (readable and writable respectively).
HsvStatus hsv_factor_apply(const HsvFactorization *factor, const double *b, double *x, size_t len);

// Releases a factorization handle. Null is accepted and ignored.
//
// # Safety
// `factor` must be a handle from this library, released exactly once.
void hsv_factor_free(HsvFactorization *factor);

// Solves `A x = b` with preconditioned conjugate gradients, using the
// factorization as the preconditioner. `x` receives the iterate even
// when the tolerance is not reached (status `HSV_STATUS_NOT_CONVERGED`);
// `report`, when non-null, receives the iteration summary in both
// cases.
//
// # Safety
// `matrix` and `factor` must be live handles over the same system;
// `b` (readable) and `x` (writable) must hold `len` elements; `report`
// may be null.
HsvStatus hsv_solve_pcg(const HsvMatrix *matrix,
                        const HsvFactorization *factor,
                        const double *b,
                        double *x,
                        size_t len,
                        double tol,
                        size_t maxit,
                        HsvSolveReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HSOLVER_H */
