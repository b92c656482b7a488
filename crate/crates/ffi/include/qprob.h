#ifndef QPROB_H
#define QPROB_H

/* Generated by cbindgen from the qprob-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a call. Zero is success; everything else names the failure
// family, with the exact message available from `qprob_last_error_message`.
enum QprobStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  QPROB_STATUS_OK = 0,
  QPROB_STATUS_NULL_POINTER = 1,
  QPROB_STATUS_INVALID_GRID = 2,
  QPROB_STATUS_INVALID_UNITS = 3,
  QPROB_STATUS_DIMENSION_MISMATCH = 4,
  QPROB_STATUS_NON_FINITE = 5,
  QPROB_STATUS_NOT_NORMALIZED = 6,
  QPROB_STATUS_BOUNDARY_LEAK = 7,
  QPROB_STATUS_DEGENERATE = 8,
  QPROB_STATUS_INVALID_ARGUMENT = 9,
  QPROB_STATUS_CFL_VIOLATION = 10,
  QPROB_STATUS_INTERNAL = 100,
};
#ifndef __cplusplus
typedef int32_t QprobStatus;
#endif // __cplusplus

// Spatial grid handle.
typedef struct QprobGrid QprobGrid;

// Time stepper handle for the first-order wave equation.
typedef struct QprobSolver QprobSolver;

// Complex state handle, bound to the grid it was built on.
typedef struct QprobState QprobState;

// Physical constants, passed by value.
typedef struct {
  double hbar;
  double c;
  double m0;
  double e_charge;
} QprobUnits;

// A two-sided uncertainty statement: `spread * gradient_term >= bound`,
// with `satisfied` nonzero when the product clears the bound.
typedef struct {
  double spread;
  double gradient_term;
  double product;
  double bound;
  int32_t satisfied;
} QprobUncertainty;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. The pointer stays
// valid until the next failing call on the same thread. Never null.
const char *qprob_last_error_message(void);

// Build a grid on `[x_min, x_max]` with `n_points` samples. `periodic`
// nonzero makes the right endpoint wrap instead of being stored.
QprobStatus qprob_grid_new(double x_min,
                           double x_max,
                           size_t n_points,
                           int32_t periodic,
                           QprobGrid **out);

// Release a grid handle. Null is a no-op.
void qprob_grid_free(QprobGrid *grid);

// Number of samples the grid holds.
QprobStatus qprob_grid_n_points(const QprobGrid *grid, size_t *out);

// Normalized Gaussian packet `~ exp(-(x-center)^2 / 4 variance + i k0 x)`.
QprobStatus qprob_state_gaussian(const QprobGrid *grid,
                                 double center,
                                 double variance,
                                 double k0,
                                 QprobState **out);

// Build a state from caller-provided samples, `len` of each part, matching
// the grid point count. The values are copied; the caller keeps ownership
// of the input buffers.
QprobStatus qprob_state_from_values(const QprobGrid *grid,
                                    const double *re,
                                    const double *im,
                                    size_t len,
                                    QprobState **out);

// Release a state handle. Null is a no-op.
void qprob_state_free(QprobState *state);

// Squared norm of the state under the grid quadrature.
QprobStatus qprob_state_norm_squared(const QprobState *state, double *out);

// Copy the Born density `|psi|^2` into `out`, which must hold one value
// per grid point.
QprobStatus qprob_density(const QprobState *state, double *out, size_t len);

// Copy the probability current into `out`, scaled by `hbar / m0` when
// `physical` is nonzero and left bare otherwise.
QprobStatus qprob_current(const QprobState *state,
                          QprobUnits units,
                          int32_t physical,
                          double *out,
                          size_t len);

// Mean position of the state's density.
QprobStatus qprob_mean_x(const QprobState *state, double *out);

// Position variance of the state's density.
QprobStatus qprob_variance_x(const QprobState *state, double *out);

// Localization information `int (drho/dx)^2 / rho dx`.
QprobStatus qprob_fisher_x(const QprobState *state, double *out);

// Estimation bound for position: variance times information, which is at
// least one for normalized vanishing densities.
QprobStatus qprob_cramer_rao(const QprobState *state, QprobUncertainty *out);

// Position/wavenumber uncertainty product with the optimal shifts; the
// product is at least 1/4 and exactly 1/4 on Gaussian packets.
QprobStatus qprob_heisenberg(const QprobState *state, QprobUncertainty *out);

// Expectation of the position/derivative commutator; the imaginary part is
// one for any normalized vanishing state.
QprobStatus qprob_commutator(const QprobState *state, double *out_re, double *out_im);

// Build a free-particle stepper for the grid with time step `dt`. An
// optional external potential is passed as one sample per grid point;
// `potential` may be null for free evolution.
QprobStatus qprob_solver_new(const QprobGrid *grid,
                             QprobUnits units,
                             double dt,
                             const double *potential,
                             size_t potential_len,
                             QprobSolver **out);

// Release a solver handle. Null is a no-op.
void qprob_solver_free(QprobSolver *solver);

// Advance the state by `steps` time steps in place.
QprobStatus qprob_solver_evolve(const QprobSolver *solver, QprobState *state, size_t steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPROB_H */
