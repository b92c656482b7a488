//! Classical-limit diagnostics: action fields, Hamilton-Jacobi residuals,
//! and a localization scan that watches wave packets turn into trajectories.

use crate::dynamics::{SchrodingerSolver, SolverConfig};
use crate::error::{QprobError, Result};
use crate::fixtures;
use crate::grid::{derivative_real, Amplitude, Grid1D, RealField, UnitSystem};
use crate::prob::{born_density, decompose, mean_x};

/// Relative amplitude below which a point is treated as outside the support
/// of the state during action extraction.
const SUPPORT_THRESHOLD: f64 = 1e-6;

/// An action function sampled on a grid, together with the mass and units
/// needed to turn it into dynamics.
#[derive(Debug, Clone)]
pub struct ActionField {
    pub s: RealField,
    pub m0: f64,
    pub units: UnitSystem,
}

impl ActionField {
    pub fn new(s: RealField, m0: f64, units: UnitSystem) -> Result<Self> {
        units.validate()?;
        if !(m0 > 0.0) || !m0.is_finite() {
            return Err(QprobError::InvalidConfig(format!(
                "action field mass must be positive and finite, got {m0}"
            )));
        }
        Ok(Self { s, m0, units })
    }
}

/// Pointwise Hamilton-Jacobi residual
/// `dS/dt + (S' - eA)^2 / 2m + eU`
/// for a particle of mass `m`. A vanishing residual means the action solves
/// the classical equation of motion; `scalar` and `vector` are the optional
/// external potentials `U` and `A`.
///
/// Shifting `S` by a constant leaves the residual unchanged up to rounding
/// in the derivative stencil.
pub fn hj_residual(
    action: &ActionField,
    ds_dt: &RealField,
    scalar: Option<&RealField>,
    vector: Option<&RealField>,
) -> Result<RealField> {
    check_same_grid(&action.s, ds_dt)?;
    if let Some(u) = scalar {
        check_same_grid(&action.s, u)?;
    }
    if let Some(a) = vector {
        check_same_grid(&action.s, a)?;
    }
    let e = action.units.e_charge;
    let grad = derivative_real(&action.s);
    let values = (0..action.s.values().len())
        .map(|i| {
            let p = grad.values()[i] - vector.map_or(0.0, |a| e * a.values()[i]);
            ds_dt.values()[i] + p * p / (2.0 * action.m0) + scalar.map_or(0.0, |u| e * u.values()[i])
        })
        .collect();
    RealField::new(*action.s.grid(), values)
}

/// Pointwise residual of the relativistic energy-momentum relation for an
/// action with the rest energy gauged away:
/// `(S')^2 + (m c)^2 - (dS/dt - m c^2)^2 / c^2`.
///
/// Written right side minus left side so that for slowly varying actions it
/// reduces to `2m` times [`hj_residual`] (minus an explicit `(dS/dt)^2/c^2`
/// correction).
pub fn relativistic_hj_residual(action: &ActionField, ds_dt: &RealField) -> Result<RealField> {
    check_same_grid(&action.s, ds_dt)?;
    let c = action.units.c;
    let mc = action.m0 * c;
    let grad = derivative_real(&action.s);
    let values = grad
        .values()
        .iter()
        .zip(ds_dt.values())
        .map(|(&sp, &st)| {
            let shifted = st - action.m0 * c * c;
            sp * sp + mc * mc - shifted * shifted / (c * c)
        })
        .collect();
    RealField::new(*action.s.grid(), values)
}

/// Splits a node-free amplitude into two real action-like fields:
/// `s1 = hbar * (unwrapped phase)` and `s2 = -(hbar/2) * ln(rho)`, so that
/// `psi = exp(-s2/hbar) * exp(i s1/hbar)`.
///
/// Points with `|psi|` below 1e-6 of the peak are treated as off-support:
/// `s1` carries the nearest trusted phase there and `s2` is clamped at the
/// threshold value. An off-support point strictly between on-support points
/// is an interior node and is rejected.
pub fn semiclassical_extract(
    psi: &Amplitude,
    units: &UnitSystem,
) -> Result<(RealField, RealField)> {
    units.validate()?;
    let peak = psi.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(QprobError::AllMasked);
    }
    let threshold = SUPPORT_THRESHOLD * peak;
    let parts = decompose(psi, threshold)?;

    let first = parts.node_mask.iter().position(|m| !m).expect("decompose rejects all-masked");
    let last = parts.node_mask.iter().rposition(|m| !m).expect("decompose rejects all-masked");
    if parts.node_mask[first..=last].iter().any(|&m| m) {
        return Err(QprobError::NodeEncountered(
            "state has an interior node; the action split is undefined there".into(),
        ));
    }

    let hbar = units.hbar;
    let floor = threshold * threshold;
    let s1 = RealField::new(*psi.grid(), parts.s.values().iter().map(|s| hbar * s).collect())?;
    let s2 = RealField::new(
        *psi.grid(),
        parts.rho.values().iter().map(|&r| -0.5 * hbar * r.max(floor).ln()).collect(),
    )?;
    Ok((s1, s2))
}

/// One row of a localization scan: the packet width, how far its mean
/// strayed from the straight classical path, and the density-weighted
/// Hamilton-Jacobi residual of the extracted phase action.
#[derive(Debug, Clone, Copy)]
pub struct LocalizationRow {
    pub sigma: f64,
    pub trajectory_error: f64,
    pub weighted_residual: f64,
}

/// Evolves free Gaussian packets of the given widths with momentum `p0` and
/// measures, per width, the worst deviation of the mean position from
/// `x = p0 t / m` and the mean absolute residual of `s1` in the classical
/// equation, density-weighted over the region where `rho` exceeds half its
/// maximum. Narrower packets spread faster, so the residual falls as `sigma`
/// grows (and as `hbar` shrinks, which is the classical limit).
///
/// The widths must be strictly monotone so the scan reads as a trend in
/// either direction.
pub fn localization_study(
    sigma_list: &[f64],
    p0: f64,
    grid: Grid1D,
    units: &UnitSystem,
    cfg: &SolverConfig,
) -> Result<Vec<LocalizationRow>> {
    units.validate()?;
    cfg.validate()?;
    if !p0.is_finite() {
        return Err(QprobError::InvalidConfig(format!("p0 must be finite, got {p0}")));
    }
    if sigma_list.is_empty() || sigma_list.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(QprobError::InvalidConfig(
            "sigma list must be nonempty with positive finite entries".into(),
        ));
    }
    if sigma_list.len() > 1 {
        let increasing = sigma_list.windows(2).all(|w| w[1] > w[0]);
        let decreasing = sigma_list.windows(2).all(|w| w[1] < w[0]);
        if !increasing && !decreasing {
            return Err(QprobError::InvalidConfig(
                "sigma list must be strictly monotone".into(),
            ));
        }
    }

    let solver = SchrodingerSolver::new(grid, units, None, cfg.dt)?;
    sigma_list
        .iter()
        .map(|&sigma| scan_one(sigma, p0, grid, units, cfg, &solver))
        .collect()
}

fn scan_one(
    sigma: f64,
    p0: f64,
    grid: Grid1D,
    units: &UnitSystem,
    cfg: &SolverConfig,
    solver: &SchrodingerSolver,
) -> Result<LocalizationRow> {
    let k0 = p0 / units.hbar;
    let mut psi = fixtures::gaussian(grid, 0.0, sigma * sigma, k0)?;
    let mut trajectory_error: f64 = 0.0;
    let mut before_last: Option<Amplitude> = None;

    for step in 0..=cfg.steps {
        if step % cfg.sample_every == 0 || step == cfg.steps {
            let t = step as f64 * cfg.dt;
            let mean = mean_x(&born_density(&psi))?;
            trajectory_error = trajectory_error.max((mean - p0 * t / units.m0).abs());
        }
        if step == cfg.steps {
            break;
        }
        if step + 1 == cfg.steps {
            before_last = Some(psi.clone());
        }
        solver.step(&mut psi)?;
    }

    let minus = before_last.expect("steps >= 1 by config validation");
    let mut plus = psi.clone();
    solver.step(&mut plus)?;

    let rho = born_density(&psi);
    let (s1_mid, _) = semiclassical_extract(&psi, units)?;
    let (s1_minus, _) = semiclassical_extract(&minus, units)?;
    let (s1_plus, _) = semiclassical_extract(&plus, units)?;

    let peak_index = rho
        .values()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid is nonempty");
    let wrap = std::f64::consts::TAU * units.hbar;
    let offset_minus =
        wrap * ((s1_minus.values()[peak_index] - s1_mid.values()[peak_index]) / wrap).round();
    let offset_plus =
        wrap * ((s1_plus.values()[peak_index] - s1_mid.values()[peak_index]) / wrap).round();
    let ds_dt = RealField::new(
        grid,
        s1_plus
            .values()
            .iter()
            .zip(s1_minus.values())
            .map(|(&p, &m)| ((p - offset_plus) - (m - offset_minus)) / (2.0 * cfg.dt))
            .collect(),
    )?;

    let action = ActionField::new(s1_mid, units.m0, *units)?;
    let residual = hj_residual(&action, &ds_dt, None, None)?;

    let half_max = 0.5 * rho.values()[peak_index];
    let mut weight_sum = 0.0;
    let mut weighted = 0.0;
    for (&r, &res) in rho.values().iter().zip(residual.values()) {
        if r > half_max {
            weight_sum += r;
            weighted += r * res.abs();
        }
    }
    Ok(LocalizationRow { sigma, trajectory_error, weighted_residual: weighted / weight_sum })
}

fn check_same_grid(a: &RealField, b: &RealField) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(QprobError::DimensionMismatch(
            "fields live on different grids".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    fn field_grid() -> Grid1D {
        Grid1D::new(-10.0, 10.0, 1001, Boundary::Vanishing).unwrap()
    }

    fn constant(grid: Grid1D, value: f64) -> RealField {
        RealField::from_fn(grid, |_| value).unwrap()
    }

    fn units_with(m0: f64, c: f64) -> UnitSystem {
        UnitSystem { hbar: 1.0, c, m0, e_charge: 1.0 }
    }

    #[test]
    fn free_action_has_no_residual() {
        let grid = field_grid();
        let (p, m) = (0.7, 1.3);
        let s = RealField::from_fn(grid, |x| p * x - 0.35).unwrap();
        let action = ActionField::new(s, m, units_with(m, 1.0)).unwrap();
        let ds_dt = constant(grid, -p * p / (2.0 * m));
        let residual = hj_residual(&action, &ds_dt, None, None).unwrap();
        let max = residual.values().iter().fold(0.0f64, |a, r| a.max(r.abs()));
        assert!(max < 1e-13, "free action residual {max:.3e}");
    }

    #[test]
    fn missing_energy_term_shows_up_as_constant_residual() {
        let grid = field_grid();
        let (p, m) = (0.7, 1.3);
        let s = RealField::from_fn(grid, |x| p * x).unwrap();
        let action = ActionField::new(s, m, units_with(m, 1.0)).unwrap();
        let residual = hj_residual(&action, &constant(grid, 0.0), None, None).unwrap();
        let expect = p * p / (2.0 * m);
        for r in residual.values() {
            assert!((r - expect).abs() < 1e-12, "residual {r} vs {expect}");
        }
    }

    #[test]
    fn constant_shift_of_action_is_inert() {
        let grid = field_grid();
        let m = 1.3;
        let s = RealField::from_fn(grid, |x| 0.4 * x + 0.05 * (0.8 * x).sin()).unwrap();
        let shifted =
            RealField::new(grid, s.values().iter().map(|v| v + 17.0).collect()).unwrap();
        let ds_dt = constant(grid, -0.1);
        let base = hj_residual(
            &ActionField::new(s, m, units_with(m, 1.0)).unwrap(),
            &ds_dt,
            None,
            None,
        )
        .unwrap();
        let moved = hj_residual(
            &ActionField::new(shifted, m, units_with(m, 1.0)).unwrap(),
            &ds_dt,
            None,
            None,
        )
        .unwrap();
        // The derivative stencil maps a constant to zero only up to rounding,
        // so the two residual fields agree to rounding rather than bitwise.
        for (a, b) in base.values().iter().zip(moved.values()) {
            assert!((a - b).abs() < 1e-10, "shift changed residual by {:.3e}", a - b);
        }
    }

    #[test]
    fn potentials_enter_the_residual() {
        let grid = field_grid();
        let m = 1.3;
        let units = UnitSystem { hbar: 1.0, c: 1.0, m0: m, e_charge: 0.8 };
        let (p, a0) = (0.7, 0.4);
        let s = RealField::from_fn(grid, |x| p * x).unwrap();
        let scalar = RealField::from_fn(grid, |x| 0.3 * x.cos()).unwrap();
        let vector = constant(grid, a0);
        let action = ActionField::new(s, m, units).unwrap();
        let residual =
            hj_residual(&action, &constant(grid, 0.0), Some(&scalar), Some(&vector)).unwrap();
        let kin = (p - units.e_charge * a0).powi(2) / (2.0 * m);
        for (r, x) in residual.values().iter().zip(grid.points()) {
            let expect = kin + units.e_charge * 0.3 * x.cos();
            assert!((r - expect).abs() < 1e-12, "at x={x}: {r} vs {expect}");
        }
    }

    #[test]
    fn relativistic_free_action_is_on_shell() {
        let grid = field_grid();
        let (p, m, c): (f64, f64, f64) = (0.7, 1.0, 2.0);
        let energy = (p * p * c * c + (m * c * c) * (m * c * c)).sqrt();
        let s = RealField::from_fn(grid, |x| p * x - 0.4 * (energy - m * c * c)).unwrap();
        let action = ActionField::new(s, m, units_with(m, c)).unwrap();
        let ds_dt = constant(grid, -(energy - m * c * c));
        let residual = relativistic_hj_residual(&action, &ds_dt).unwrap();
        let max = residual.values().iter().fold(0.0f64, |a, r| a.max(r.abs()));
        assert!(max < 1e-10, "on-shell residual {max:.3e}");
    }

    #[test]
    fn resting_action_is_exactly_on_shell() {
        let grid = field_grid();
        let (m, c) = (1.0, 2.0);
        let action =
            ActionField::new(constant(grid, 0.0), m, units_with(m, c)).unwrap();
        let residual = relativistic_hj_residual(&action, &constant(grid, 0.0)).unwrap();
        assert!(residual.values().iter().all(|r| *r == 0.0));
    }

    #[test]
    fn nonrelativistic_gap_scales_as_fourth_power_of_momentum() {
        let grid = field_grid();
        let (m, c) = (1.0, 2.0);
        let mut magnitudes = Vec::new();
        for halving in 0..4 {
            let p = 0.4 / f64::powi(2.0, halving);
            let s = RealField::from_fn(grid, |x| p * x).unwrap();
            let action = ActionField::new(s, m, units_with(m, c)).unwrap();
            let ds_dt = constant(grid, -p * p / (2.0 * m));
            let residual = relativistic_hj_residual(&action, &ds_dt).unwrap();
            let max = residual.values().iter().fold(0.0f64, |a, r| a.max(r.abs()));
            let expect = p.powi(4) / (4.0 * m * m * c * c);
            assert!(
                (max - expect).abs() < 0.01 * expect,
                "p={p}: residual {max:.6e} vs {expect:.6e}"
            );
            magnitudes.push(max);
        }
        for pair in magnitudes.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((ratio - 16.0).abs() < 0.3, "halving ratio {ratio}");
        }
    }

    #[test]
    fn slow_actions_reduce_to_the_nonrelativistic_residual() {
        let grid = field_grid();
        let (p, m, c) = (0.1, 1.0, 2.0);
        let s = RealField::from_fn(grid, |x| p * x).unwrap();
        let ds_dt = RealField::from_fn(grid, |x| 1e-3 * m * c * c * x.cos()).unwrap();
        let action = ActionField::new(s, m, units_with(m, c)).unwrap();
        let rel = relativistic_hj_residual(&action, &ds_dt).unwrap();
        let nonrel = hj_residual(&action, &ds_dt, None, None).unwrap();
        let bound = 1e-2 * m * m * c * c * (p / (m * c)).powi(2);
        for i in 0..rel.values().len() {
            let gap = rel.values()[i] - 2.0 * m * nonrel.values()[i];
            assert!(gap.abs() < bound, "gap {:.3e} exceeds {bound:.3e}", gap.abs());
            let exact = gap + ds_dt.values()[i].powi(2) / (c * c);
            assert!(exact.abs() < 1e-12, "identity gap {:.3e}", exact.abs());
        }
    }

    #[test]
    fn extract_recovers_boost_and_envelope() {
        let grid = Grid1D::new(-12.0, 12.0, 2401, Boundary::Vanishing).unwrap();
        let units = UnitSystem { hbar: 0.7, c: 1.0, m0: 1.0, e_charge: 1.0 };
        let (center, variance, k0) = (0.5, 1.2, 1.1);
        let psi = fixtures::gaussian(grid, center, variance, k0).unwrap();
        let (s1, s2) = semiclassical_extract(&psi, &units).unwrap();

        let rho = born_density(&psi);
        let peak = rho.values().iter().fold(0.0f64, |a, b| a.max(*b));
        let slope = derivative_real(&s1);
        let expect_slope = units.hbar * k0;
        for (i, x) in grid.points().into_iter().enumerate() {
            if rho.values()[i] < 1e-3 * peak {
                continue;
            }
            assert!(
                (slope.values()[i] - expect_slope).abs() < 1e-8,
                "phase slope at x={x}: {} vs {expect_slope}",
                slope.values()[i]
            );
            let expect_s2 = -0.5
                * units.hbar
                * (-(x - center).powi(2) / (2.0 * variance)
                    - 0.5 * (2.0 * std::f64::consts::PI * variance).ln());
            assert!(
                (s2.values()[i] - expect_s2).abs() < 1e-9 * expect_s2.abs().max(1.0),
                "s2 at x={x}: {} vs {expect_s2}",
                s2.values()[i]
            );
        }
    }

    #[test]
    fn extract_round_trip_reproduces_the_state() {
        let grid = Grid1D::new(-12.0, 12.0, 2401, Boundary::Vanishing).unwrap();
        let units = UnitSystem { hbar: 0.7, c: 1.0, m0: 1.0, e_charge: 1.0 };
        let psi = fixtures::gaussian(grid, -0.3, 0.9, 1.4).unwrap();
        let (s1, s2) = semiclassical_extract(&psi, &units).unwrap();

        let rho = born_density(&psi);
        let peak = rho.values().iter().fold(0.0f64, |a, b| a.max(*b));
        let mut worst = 0.0f64;
        for i in 0..grid.n_points() {
            if rho.values()[i] < SUPPORT_THRESHOLD.powi(2) * peak {
                continue;
            }
            let rebuilt = (-s2.values()[i] / units.hbar).exp()
                * num_complex::Complex64::new(0.0, s1.values()[i] / units.hbar).exp();
            worst = worst.max((rebuilt - psi.values()[i]).norm());
        }
        assert!(worst < 1e-9, "round trip error {worst:.3e}");
    }

    #[test]
    fn extract_rejects_an_interior_node() {
        let grid = Grid1D::new(-12.0, 12.0, 2401, Boundary::Vanishing).unwrap();
        let psi = fixtures::single_node_state(grid, 1.0).unwrap();
        let err = semiclassical_extract(&psi, &UnitSystem::natural()).unwrap_err();
        assert!(matches!(err, QprobError::NodeEncountered(_)), "got {err}");
    }

    #[test]
    fn real_states_have_flat_phase_action() {
        let grid = Grid1D::new(-12.0, 12.0, 2401, Boundary::Vanishing).unwrap();
        let psi = fixtures::gaussian(grid, 0.0, 1.0, 0.0).unwrap();
        let (s1, _) = semiclassical_extract(&psi, &UnitSystem::natural()).unwrap();
        let spread = s1.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(spread < 1e-12, "phase action spread {spread:.3e}");
    }

    /// Density-weighted mean of the quantum-potential residual for a free
    /// Gaussian of width-squared `var_t`, over the half-max window, computed
    /// by quadrature of the closed forms on an independent fine grid.
    fn gaussian_residual_oracle(hbar: f64, m: f64, var_t: f64) -> f64 {
        let half_width = (2.0 * var_t * f64::ln(2.0)).sqrt();
        let n = 200_001;
        let step = 2.0 * half_width / (n - 1) as f64;
        let mut weight = 0.0;
        let mut total = 0.0;
        for i in 0..n {
            let xi = -half_width + i as f64 * step;
            let rho = (-xi * xi / (2.0 * var_t)).exp();
            let q = hbar * hbar / (4.0 * m * var_t) * (1.0 - xi * xi / (2.0 * var_t));
            weight += rho;
            total += rho * q.abs();
        }
        total / weight
    }

    #[test]
    fn localization_study_tracks_classical_motion_and_residual_trend() {
        let grid = Grid1D::new(-12.0, 12.0, 1201, Boundary::Vanishing).unwrap();
        let units = UnitSystem::natural();
        let cfg = SolverConfig { dt: 5e-5, steps: 1000, sample_every: 100 };
        let sigmas = [0.6, 0.8, 1.0, 1.3];
        let rows = localization_study(&sigmas, 1.0, grid, &units, &cfg).unwrap();
        assert_eq!(rows.len(), 4);

        let t_end = cfg.dt * cfg.steps as f64;
        for row in &rows {
            assert!(
                row.trajectory_error < 1e-8,
                "sigma={}: trajectory error {:.3e}",
                row.sigma,
                row.trajectory_error
            );
            let var_t =
                row.sigma.powi(2) + (units.hbar * t_end / (2.0 * units.m0 * row.sigma)).powi(2);
            let expect = gaussian_residual_oracle(units.hbar, units.m0, var_t);
            let rel = (row.weighted_residual - expect).abs() / expect;
            assert!(
                rel < 0.05,
                "sigma={}: residual {:.6e} vs oracle {:.6e}",
                row.sigma,
                row.weighted_residual,
                expect
            );
        }
        for pair in rows.windows(2) {
            assert!(
                pair[1].weighted_residual < pair[0].weighted_residual,
                "residual did not fall from sigma={} to sigma={}",
                pair[0].sigma,
                pair[1].sigma
            );
        }
    }

    #[test]
    fn halving_hbar_at_least_halves_the_residual() {
        let grid = Grid1D::new(-12.0, 12.0, 1201, Boundary::Vanishing).unwrap();
        let cfg = SolverConfig { dt: 5e-5, steps: 1000, sample_every: 500 };
        let full = localization_study(&[1.0], 1.0, grid, &UnitSystem::natural(), &cfg).unwrap();
        let halved_units = UnitSystem { hbar: 0.5, ..UnitSystem::natural() };
        let halved = localization_study(&[1.0], 1.0, grid, &halved_units, &cfg).unwrap();
        let ratio = halved[0].weighted_residual / full[0].weighted_residual;
        assert!(ratio <= 0.5, "hbar halving only scaled the residual by {ratio}");
    }

    #[test]
    fn study_rejects_a_non_monotone_width_list() {
        let grid = Grid1D::new(-12.0, 12.0, 1201, Boundary::Vanishing).unwrap();
        let cfg = SolverConfig { dt: 5e-5, steps: 10, sample_every: 5 };
        let err = localization_study(&[0.8, 1.2, 1.0], 1.0, grid, &UnitSystem::natural(), &cfg)
            .unwrap_err();
        assert!(matches!(err, QprobError::InvalidConfig(_)), "got {err}");
    }
}
