#ifndef DWL_H
#define DWL_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DwlBackendKind {
  DWL_BACKEND_KIND_FEM = 0,
  DWL_BACKEND_KIND_FD = 1,
} DwlBackendKind;

typedef enum DwlStatus {
  DWL_STATUS_OK = 0,
  DWL_STATUS_NULL_POINTER = 1,
  DWL_STATUS_INVALID_ARGUMENT = 2,
  DWL_STATUS_NUMERICAL_FAILURE = 3,
  DWL_STATUS_PANIC = 4,
} DwlStatus;

/**
 * Opaque discretization handle.
 */
typedef struct DwlBackend DwlBackend;

/**
 * Opaque time-stepping handle with constant coefficients and no forcing.
 */
typedef struct DwlStepper DwlStepper;

typedef struct DwlRect {
  double x0;
  double x1;
  double y0;
  double y1;
} DwlRect;

/**
 * One refinement level; missing rates are NaN.
 */
typedef struct DwlConvergenceRow {
  size_t n;
  double l2;
  double linf;
  double h1;
  double rate_l2;
  double rate_linf;
  double rate_h1;
} DwlConvergenceRow;

/**
 * Verdict codes: 1 holds, 0 violated, -1 not applicable.
 */
typedef struct DwlDecaySummary {
  double lambda1;
  /**
   * NaN when the bounds do not apply.
   */
  double delta_cont;
  double delta_disc;
  /**
   * NaN when the fit failed.
   */
  double delta_fit;
  size_t steps;
  int32_t dissipation;
  int32_t sandwich;
  int32_t decay_bound;
  int32_t rate_floor;
} DwlDecaySummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `cap`) and returns its full length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t dwl_last_error_message(char *buf, size_t cap);

/**
 * Builds a discretization with `n` cells per side.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DwlStatus dwl_backend_new(enum DwlBackendKind backend,
                               struct DwlRect rect,
                               size_t n,
                               struct DwlBackend **out);

/**
 * # Safety
 * `b` must be null or come from [`dwl_backend_new`] and not be freed twice.
 */
void dwl_backend_free(struct DwlBackend *b);

/**
 * # Safety
 * `b` must be a live handle and `out` valid for writes.
 */
enum DwlStatus dwl_backend_dofs(const struct DwlBackend *b, size_t *out);

/**
 * Writes the coordinates of every unknown into `xs` and `ys`.
 *
 * # Safety
 * `xs` and `ys` must be valid for `len` writes.
 */
enum DwlStatus dwl_backend_coords(const struct DwlBackend *b, double *xs, double *ys, size_t len);

/**
 * Smallest eigenvalue of the discrete pencil.
 *
 * # Safety
 * `b` must be a live handle and `out` valid for writes.
 */
enum DwlStatus dwl_backend_lambda1(const struct DwlBackend *b, double tol, double *out);

/**
 * Admissible decay rates `(δ_cont, δ_disc)` for constant `α`, `β`.
 *
 * # Safety
 * `delta_cont` and `delta_disc` must be valid for writes.
 */
enum DwlStatus dwl_decay_bounds(double alpha,
                                double beta,
                                double lambda1,
                                double *delta_cont,
                                double *delta_disc);

/**
 * Starts a homogeneous run from the two levels `u_prev`, `u_curr` at
 * `t = 0` and `t = k`. The stepper keeps its own reference to the backend.
 *
 * # Safety
 * `b` must be a live handle, `u_prev` and `u_curr` valid for `len` reads and
 * `out` valid for writes.
 */
enum DwlStatus dwl_stepper_new(const struct DwlBackend *b,
                               double alpha,
                               double beta,
                               double k,
                               const double *u_prev,
                               const double *u_curr,
                               size_t len,
                               struct DwlStepper **out);

/**
 * # Safety
 * `s` must be null or come from [`dwl_stepper_new`] and not be freed twice.
 */
void dwl_stepper_free(struct DwlStepper *s);

/**
 * Advances `steps` time steps. On failure the state is left unchanged.
 *
 * # Safety
 * `s` must be a live handle.
 */
enum DwlStatus dwl_stepper_advance(struct DwlStepper *s, size_t steps);

/**
 * Time of the current level.
 *
 * # Safety
 * `s` must be a live handle and `out` valid for writes.
 */
enum DwlStatus dwl_stepper_time(const struct DwlStepper *s, double *out);

/**
 * Discrete energy of the current pair of levels.
 *
 * # Safety
 * `s` must be a live handle and `out` valid for writes.
 */
enum DwlStatus dwl_stepper_energy(const struct DwlStepper *s, double *out);

/**
 * Copies the current level into `buf`.
 *
 * # Safety
 * `s` must be a live handle and `buf` valid for `len` writes.
 */
enum DwlStatus dwl_stepper_solution(const struct DwlStepper *s, double *buf, size_t len);

/**
 * Refinement study of a built-in experiment over `levels`; writes one row
 * per level into `rows`.
 *
 * # Safety
 * `name` must be a NUL-terminated string, `levels` valid for `count` reads
 * and `rows` valid for `count` writes.
 */
enum DwlStatus dwl_run_convergence(const char *name,
                                   const size_t *levels,
                                   size_t count,
                                   struct DwlConvergenceRow *rows);

/**
 * Energy decay run of a built-in experiment at `n` cells per side with the
 * default rates and fit window.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` valid for writes.
 */
enum DwlStatus dwl_run_decay(const char *name, size_t n, struct DwlDecaySummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DWL_H */
