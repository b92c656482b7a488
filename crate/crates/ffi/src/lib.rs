//! C ABI over the qprob library.
//!
//! Grids, states, and solvers cross the boundary as opaque handles that the
//! caller allocates through `qprob_*_new` and releases through the matching
//! `qprob_*_free`. Every fallible call returns a [`QprobStatus`]; on failure
//! the full message is kept per thread and readable through
//! [`qprob_last_error_message`]. Panics are caught at the boundary and
//! surfaced as `QPROB_STATUS_INTERNAL` instead of unwinding into C.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use qprob::dynamics::SchrodingerSolver;
use qprob::fixtures::gaussian;
use qprob::grid::{Amplitude, Boundary, Grid1D, RealField, UnitSystem};
use qprob::prob::{
    born_density, commutator_expectation, cramer_rao, current_x, fisher_x, heisenberg, mean_x,
    variance_x, CurrentScale, Shift,
};
use qprob::QprobError;

/// Outcome of a call. Zero is success; everything else names the failure
/// family, with the exact message available from `qprob_last_error_message`.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QprobStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidGrid = 2,
    InvalidUnits = 3,
    DimensionMismatch = 4,
    NonFinite = 5,
    NotNormalized = 6,
    BoundaryLeak = 7,
    Degenerate = 8,
    InvalidArgument = 9,
    CflViolation = 10,
    Internal = 100,
}

/// Physical constants, passed by value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QprobUnits {
    pub hbar: f64,
    pub c: f64,
    pub m0: f64,
    pub e_charge: f64,
}

impl QprobUnits {
    fn to_units(self) -> UnitSystem {
        UnitSystem { hbar: self.hbar, c: self.c, m0: self.m0, e_charge: self.e_charge }
    }
}

/// A two-sided uncertainty statement: `spread * gradient_term >= bound`,
/// with `satisfied` nonzero when the product clears the bound.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QprobUncertainty {
    pub spread: f64,
    pub gradient_term: f64,
    pub product: f64,
    pub bound: f64,
    pub satisfied: i32,
}

/// Spatial grid handle.
pub struct QprobGrid {
    inner: Grid1D,
}

/// Complex state handle, bound to the grid it was built on.
pub struct QprobState {
    inner: Amplitude,
}

/// Time stepper handle for the first-order wave equation.
pub struct QprobSolver {
    inner: SchrodingerSolver,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").expect("empty message"));
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul bytes removed");
    });
}

fn status_of(err: &QprobError) -> QprobStatus {
    match err {
        QprobError::InvalidGrid(_) => QprobStatus::InvalidGrid,
        QprobError::InvalidUnits(_) => QprobStatus::InvalidUnits,
        QprobError::DimensionMismatch(_) => QprobStatus::DimensionMismatch,
        QprobError::NonFinite { .. } => QprobStatus::NonFinite,
        QprobError::NotNormalized { .. } => QprobStatus::NotNormalized,
        QprobError::BoundaryLeak(_) => QprobStatus::BoundaryLeak,
        QprobError::AllMasked | QprobError::DegenerateZero { .. } => QprobStatus::Degenerate,
        QprobError::CflViolation { .. } => QprobStatus::CflViolation,
        _ => QprobStatus::InvalidArgument,
    }
}

fn fail(err: &QprobError) -> QprobStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn null_pointer(what: &str) -> QprobStatus {
    set_error(&format!("{what} must not be null"));
    QprobStatus::NullPointer
}

/// Run a closure behind the unwind barrier; a panic becomes a status
/// instead of crossing the boundary.
fn guarded(body: impl FnOnce() -> QprobStatus) -> QprobStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            QprobStatus::Internal
        }
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn qprob_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Build a grid on `[x_min, x_max]` with `n_points` samples. `periodic`
/// nonzero makes the right endpoint wrap instead of being stored.
#[no_mangle]
pub extern "C" fn qprob_grid_new(
    x_min: f64,
    x_max: f64,
    n_points: usize,
    periodic: i32,
    out: *mut *mut QprobGrid,
) -> QprobStatus {
    guarded(|| {
        if out.is_null() {
            return null_pointer("out");
        }
        let boundary = if periodic != 0 { Boundary::Periodic } else { Boundary::Vanishing };
        match Grid1D::new(x_min, x_max, n_points, boundary) {
            Ok(grid) => {
                unsafe { *out = Box::into_raw(Box::new(QprobGrid { inner: grid })) };
                QprobStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a grid handle. Null is a no-op.
#[no_mangle]
pub extern "C" fn qprob_grid_free(grid: *mut QprobGrid) {
    if !grid.is_null() {
        drop(unsafe { Box::from_raw(grid) });
    }
}

/// Number of samples the grid holds.
#[no_mangle]
pub extern "C" fn qprob_grid_n_points(grid: *const QprobGrid, out: *mut usize) -> QprobStatus {
    guarded(|| {
        let Some(grid) = (unsafe { grid.as_ref() }) else {
            return null_pointer("grid");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        unsafe { *out = grid.inner.n_points() };
        QprobStatus::Ok
    })
}

/// Normalized Gaussian packet `~ exp(-(x-center)^2 / 4 variance + i k0 x)`.
#[no_mangle]
pub extern "C" fn qprob_state_gaussian(
    grid: *const QprobGrid,
    center: f64,
    variance: f64,
    k0: f64,
    out: *mut *mut QprobState,
) -> QprobStatus {
    guarded(|| {
        let Some(grid) = (unsafe { grid.as_ref() }) else {
            return null_pointer("grid");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        match gaussian(grid.inner, center, variance, k0) {
            Ok(psi) => {
                unsafe { *out = Box::into_raw(Box::new(QprobState { inner: psi })) };
                QprobStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Build a state from caller-provided samples, `len` of each part, matching
/// the grid point count. The values are copied; the caller keeps ownership
/// of the input buffers.
#[no_mangle]
pub extern "C" fn qprob_state_from_values(
    grid: *const QprobGrid,
    re: *const f64,
    im: *const f64,
    len: usize,
    out: *mut *mut QprobState,
) -> QprobStatus {
    guarded(|| {
        let Some(grid) = (unsafe { grid.as_ref() }) else {
            return null_pointer("grid");
        };
        if re.is_null() || im.is_null() {
            return null_pointer("re/im");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        if len != grid.inner.n_points() {
            set_error(&format!(
                "expected {} samples, got {len}",
                grid.inner.n_points()
            ));
            return QprobStatus::DimensionMismatch;
        }
        let re = unsafe { std::slice::from_raw_parts(re, len) };
        let im = unsafe { std::slice::from_raw_parts(im, len) };
        let values = re
            .iter()
            .zip(im)
            .map(|(r, i)| num_complex::Complex64::new(*r, *i))
            .collect();
        match Amplitude::new(grid.inner, values) {
            Ok(psi) => {
                unsafe { *out = Box::into_raw(Box::new(QprobState { inner: psi })) };
                QprobStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a state handle. Null is a no-op.
#[no_mangle]
pub extern "C" fn qprob_state_free(state: *mut QprobState) {
    if !state.is_null() {
        drop(unsafe { Box::from_raw(state) });
    }
}

/// Squared norm of the state under the grid quadrature.
#[no_mangle]
pub extern "C" fn qprob_state_norm_squared(
    state: *const QprobState,
    out: *mut f64,
) -> QprobStatus {
    guarded(|| {
        let Some(state) = (unsafe { state.as_ref() }) else {
            return null_pointer("state");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        unsafe { *out = state.inner.norm_squared() };
        QprobStatus::Ok
    })
}

fn copy_field(field: &RealField, out: *mut f64, len: usize) -> QprobStatus {
    if out.is_null() {
        return null_pointer("out");
    }
    if len != field.values().len() {
        set_error(&format!("expected a buffer of {} values, got {len}", field.values().len()));
        return QprobStatus::DimensionMismatch;
    }
    let target = unsafe { std::slice::from_raw_parts_mut(out, len) };
    target.copy_from_slice(field.values());
    QprobStatus::Ok
}

/// Copy the Born density `|psi|^2` into `out`, which must hold one value
/// per grid point.
#[no_mangle]
pub extern "C" fn qprob_density(
    state: *const QprobState,
    out: *mut f64,
    len: usize,
) -> QprobStatus {
    guarded(|| {
        let Some(state) = (unsafe { state.as_ref() }) else {
            return null_pointer("state");
        };
        copy_field(&born_density(&state.inner), out, len)
    })
}

/// Copy the probability current into `out`, scaled by `hbar / m0` when
/// `physical` is nonzero and left bare otherwise.
#[no_mangle]
pub extern "C" fn qprob_current(
    state: *const QprobState,
    units: QprobUnits,
    physical: i32,
    out: *mut f64,
    len: usize,
) -> QprobStatus {
    guarded(|| {
        let Some(state) = (unsafe { state.as_ref() }) else {
            return null_pointer("state");
        };
        let scale = if physical != 0 { CurrentScale::Physical } else { CurrentScale::Bare };
        match current_x(&state.inner, &units.to_units(), scale) {
            Ok(current) => copy_field(&current, out, len),
            Err(e) => fail(&e),
        }
    })
}

/// Mean position of the state's density.
#[no_mangle]
pub extern "C" fn qprob_mean_x(state: *const QprobState, out: *mut f64) -> QprobStatus {
    scalar_of_density(state, out, |rho| mean_x(rho))
}

/// Position variance of the state's density.
#[no_mangle]
pub extern "C" fn qprob_variance_x(state: *const QprobState, out: *mut f64) -> QprobStatus {
    scalar_of_density(state, out, |rho| variance_x(rho))
}

/// Localization information `int (drho/dx)^2 / rho dx`.
#[no_mangle]
pub extern "C" fn qprob_fisher_x(state: *const QprobState, out: *mut f64) -> QprobStatus {
    scalar_of_density(state, out, |rho| fisher_x(rho))
}

fn scalar_of_density(
    state: *const QprobState,
    out: *mut f64,
    f: impl Fn(&RealField) -> Result<f64, QprobError> + std::panic::RefUnwindSafe,
) -> QprobStatus {
    guarded(|| {
        let Some(state) = (unsafe { state.as_ref() }) else {
            return null_pointer("state");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        match f(&born_density(&state.inner)) {
            Ok(value) => {
                unsafe { *out = value };
                QprobStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Estimation bound for position: variance times information, which is at
/// least one for normalized vanishing densities.
#[no_mangle]
pub extern "C" fn qprob_cramer_rao(
    state: *const QprobState,
    out: *mut QprobUncertainty,
) -> QprobStatus {
    guarded(|| {
        let Some(state) = (unsafe { state.as_ref() }) else {
            return null_pointer("state");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        match cramer_rao(&born_density(&state.inner)) {
            Ok(report) => {
                unsafe {
                    *out = QprobUncertainty {
                        spread: report.spread,
                        gradient_term: report.gradient_term,
                        product: report.product,
                        bound: report.bound,
                        satisfied: report.satisfied as i32,
                    };
                }
                QprobStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Position/wavenumber uncertainty product with the optimal shifts; the
/// product is at least 1/4 and exactly 1/4 on Gaussian packets.
#[no_mangle]
pub extern "C" fn qprob_heisenberg(
    state: *const QprobState,
    out: *mut QprobUncertainty,
) -> QprobStatus {
    guarded(|| {
        let Some(state) = (unsafe { state.as_ref() }) else {
            return null_pointer("state");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        match heisenberg(&state.inner, Shift::Optimal, Shift::Optimal) {
            Ok(result) => {
                unsafe {
                    *out = QprobUncertainty {
                        spread: result.report.spread,
                        gradient_term: result.report.gradient_term,
                        product: result.report.product,
                        bound: result.report.bound,
                        satisfied: result.report.satisfied as i32,
                    };
                }
                QprobStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Expectation of the position/derivative commutator; the imaginary part is
/// one for any normalized vanishing state.
#[no_mangle]
pub extern "C" fn qprob_commutator(
    state: *const QprobState,
    out_re: *mut f64,
    out_im: *mut f64,
) -> QprobStatus {
    guarded(|| {
        let Some(state) = (unsafe { state.as_ref() }) else {
            return null_pointer("state");
        };
        if out_re.is_null() || out_im.is_null() {
            return null_pointer("out_re/out_im");
        }
        match commutator_expectation(&state.inner) {
            Ok(value) => {
                unsafe {
                    *out_re = value.re;
                    *out_im = value.im;
                }
                QprobStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Build a free-particle stepper for the grid with time step `dt`. An
/// optional external potential is passed as one sample per grid point;
/// `potential` may be null for free evolution.
#[no_mangle]
pub extern "C" fn qprob_solver_new(
    grid: *const QprobGrid,
    units: QprobUnits,
    dt: f64,
    potential: *const f64,
    potential_len: usize,
    out: *mut *mut QprobSolver,
) -> QprobStatus {
    guarded(|| {
        let Some(grid) = (unsafe { grid.as_ref() }) else {
            return null_pointer("grid");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        let field;
        let field_ref = if potential.is_null() {
            None
        } else {
            if potential_len != grid.inner.n_points() {
                set_error(&format!(
                    "expected {} potential samples, got {potential_len}",
                    grid.inner.n_points()
                ));
                return QprobStatus::DimensionMismatch;
            }
            let values = unsafe { std::slice::from_raw_parts(potential, potential_len) };
            field = match RealField::new(grid.inner, values.to_vec()) {
                Ok(f) => f,
                Err(e) => return fail(&e),
            };
            Some(&field)
        };
        match SchrodingerSolver::new(grid.inner, &units.to_units(), field_ref, dt) {
            Ok(solver) => {
                unsafe { *out = Box::into_raw(Box::new(QprobSolver { inner: solver })) };
                QprobStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a solver handle. Null is a no-op.
#[no_mangle]
pub extern "C" fn qprob_solver_free(solver: *mut QprobSolver) {
    if !solver.is_null() {
        drop(unsafe { Box::from_raw(solver) });
    }
}

/// Advance the state by `steps` time steps in place.
#[no_mangle]
pub extern "C" fn qprob_solver_evolve(
    solver: *const QprobSolver,
    state: *mut QprobState,
    steps: usize,
) -> QprobStatus {
    guarded(|| {
        let Some(solver) = (unsafe { solver.as_ref() }) else {
            return null_pointer("solver");
        };
        let Some(state) = (unsafe { state.as_mut() }) else {
            return null_pointer("state");
        };
        match solver.inner.evolve(&mut state.inner, steps) {
            Ok(()) => QprobStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;
    use std::ptr;

    fn natural() -> QprobUnits {
        QprobUnits { hbar: 1.0, c: 1.0, m0: 1.0, e_charge: 1.0 }
    }

    fn new_grid(n: usize) -> *mut QprobGrid {
        let mut grid: *mut QprobGrid = ptr::null_mut();
        let status = qprob_grid_new(-10.0, 10.0, n, 0, &mut grid);
        assert_eq!(status, QprobStatus::Ok);
        assert!(!grid.is_null());
        grid
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(qprob_last_error_message()) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn gaussian_round_trip_reports_the_usual_numbers() {
        let grid = new_grid(1001);
        let mut state: *mut QprobState = ptr::null_mut();
        assert_eq!(
            qprob_state_gaussian(grid, 0.5, 1.2, 0.8, &mut state),
            QprobStatus::Ok
        );

        let mut n = 0usize;
        assert_eq!(qprob_grid_n_points(grid, &mut n), QprobStatus::Ok);
        assert_eq!(n, 1001);

        let mut norm = 0.0;
        assert_eq!(qprob_state_norm_squared(state, &mut norm), QprobStatus::Ok);
        assert!((norm - 1.0).abs() < 1e-12, "norm {norm}");

        let mut mean = 0.0;
        assert_eq!(qprob_mean_x(state, &mut mean), QprobStatus::Ok);
        assert!((mean - 0.5).abs() < 1e-10, "mean {mean}");

        let mut var = 0.0;
        assert_eq!(qprob_variance_x(state, &mut var), QprobStatus::Ok);
        assert!((var - 1.2).abs() < 1e-10, "variance {var}");

        let mut fisher = 0.0;
        assert_eq!(qprob_fisher_x(state, &mut fisher), QprobStatus::Ok);
        assert!((fisher - 1.0 / 1.2).abs() < 1e-8, "fisher {fisher}");

        let mut report = QprobUncertainty {
            spread: 0.0,
            gradient_term: 0.0,
            product: 0.0,
            bound: 0.0,
            satisfied: 0,
        };
        assert_eq!(qprob_cramer_rao(state, &mut report), QprobStatus::Ok);
        assert!((report.product - 1.0).abs() < 1e-8, "product {}", report.product);
        assert_eq!(report.satisfied, 1);

        assert_eq!(qprob_heisenberg(state, &mut report), QprobStatus::Ok);
        assert!((report.product - 0.25).abs() < 1e-7, "product {}", report.product);

        let mut re = 0.0;
        let mut im = 0.0;
        assert_eq!(qprob_commutator(state, &mut re, &mut im), QprobStatus::Ok);
        assert!(re.abs() < 1e-10 && (im - 1.0).abs() < 1e-7, "({re}, {im})");

        qprob_state_free(state);
        qprob_grid_free(grid);
    }

    #[test]
    fn buffers_round_trip_and_length_mismatches_are_caught() {
        let grid = new_grid(801);
        let mut state: *mut QprobState = ptr::null_mut();
        assert_eq!(
            qprob_state_gaussian(grid, 0.0, 1.0, 1.3, &mut state),
            QprobStatus::Ok
        );

        let mut density = vec![0.0; 801];
        assert_eq!(
            qprob_density(state, density.as_mut_ptr(), density.len()),
            QprobStatus::Ok
        );
        let h = 20.0 / 800.0;
        let total: f64 = density.iter().sum::<f64>() * h;
        assert!((total - 1.0).abs() < 1e-6, "density integral {total}");

        let mut current = vec![0.0; 801];
        assert_eq!(
            qprob_current(state, natural(), 1, current.as_mut_ptr(), current.len()),
            QprobStatus::Ok
        );
        // A boosted packet carries velocity hbar k0 / m0.
        let flux: f64 = current.iter().sum::<f64>() * h;
        assert!((flux - 1.3).abs() < 1e-6, "flux {flux}");

        assert_eq!(
            qprob_density(state, density.as_mut_ptr(), 500),
            QprobStatus::DimensionMismatch
        );
        assert!(last_error().contains("500"), "{}", last_error());

        qprob_state_free(state);
        qprob_grid_free(grid);
    }

    #[test]
    fn states_built_from_values_validate_like_native_ones() {
        let grid = new_grid(401);
        let re = vec![0.1; 401];
        let im = vec![0.0; 401];
        let mut state: *mut QprobState = ptr::null_mut();
        assert_eq!(
            qprob_state_from_values(grid, re.as_ptr(), im.as_ptr(), 401, &mut state),
            QprobStatus::Ok
        );

        // Constant samples give a state that is neither normalized nor
        // boundary-clean; the bound checks must say so.
        let mut report = QprobUncertainty {
            spread: 0.0,
            gradient_term: 0.0,
            product: 0.0,
            bound: 0.0,
            satisfied: 0,
        };
        let status = qprob_cramer_rao(state, &mut report);
        assert_ne!(status, QprobStatus::Ok);
        assert!(!last_error().is_empty());

        let mut bad: *mut QprobState = ptr::null_mut();
        let nan = vec![f64::NAN; 401];
        assert_eq!(
            qprob_state_from_values(grid, nan.as_ptr(), im.as_ptr(), 401, &mut bad),
            QprobStatus::NonFinite
        );
        assert!(bad.is_null());

        qprob_state_free(state);
        qprob_grid_free(grid);
    }

    #[test]
    fn null_handles_are_rejected_not_dereferenced() {
        let mut out = 0.0;
        assert_eq!(
            qprob_state_norm_squared(ptr::null(), &mut out),
            QprobStatus::NullPointer
        );
        let grid = new_grid(101);
        let mut state: *mut QprobState = ptr::null_mut();
        assert_eq!(
            qprob_state_gaussian(grid, 0.0, 1.0, 0.0, &mut state),
            QprobStatus::Ok
        );
        assert_eq!(
            qprob_mean_x(state, ptr::null_mut()),
            QprobStatus::NullPointer
        );
        assert!(last_error().contains("null"));
        qprob_state_free(state);
        qprob_grid_free(grid);
        qprob_state_free(ptr::null_mut());
        qprob_grid_free(ptr::null_mut());
    }

    #[test]
    fn evolution_through_the_boundary_conserves_norm() {
        let grid = new_grid(601);
        let mut state: *mut QprobState = ptr::null_mut();
        assert_eq!(
            qprob_state_gaussian(grid, 0.0, 1.0, 0.5, &mut state),
            QprobStatus::Ok
        );
        let mut solver: *mut QprobSolver = ptr::null_mut();
        assert_eq!(
            qprob_solver_new(grid, natural(), 1e-3, ptr::null(), 0, &mut solver),
            QprobStatus::Ok
        );
        assert_eq!(qprob_solver_evolve(solver, state, 200), QprobStatus::Ok);

        let mut norm = 0.0;
        assert_eq!(qprob_state_norm_squared(state, &mut norm), QprobStatus::Ok);
        assert!((norm - 1.0).abs() < 1e-10, "norm {norm}");

        let mut mean = 0.0;
        assert_eq!(qprob_mean_x(state, &mut mean), QprobStatus::Ok);
        assert!((mean - 0.5 * 0.2).abs() < 1e-6, "mean {mean}");

        qprob_solver_free(solver);
        qprob_state_free(state);
        qprob_grid_free(grid);
    }

    #[test]
    fn invalid_grids_surface_their_message() {
        let mut grid: *mut QprobGrid = ptr::null_mut();
        let status = qprob_grid_new(5.0, -5.0, 100, 0, &mut grid);
        assert_eq!(status, QprobStatus::InvalidGrid);
        assert!(grid.is_null());
        assert!(!last_error().is_empty());
    }

    #[test]
    fn potential_buffers_are_validated() {
        let grid = new_grid(301);
        let potential = vec![0.5; 300];
        let mut solver: *mut QprobSolver = ptr::null_mut();
        assert_eq!(
            qprob_solver_new(grid, natural(), 1e-3, potential.as_ptr(), 300, &mut solver),
            QprobStatus::DimensionMismatch
        );
        assert!(solver.is_null());
        qprob_grid_free(grid);
    }
}
