//! Densities, currents, information integrals, and uncertainty reports.
//!
//! Everything here is a functional of a sampled state: no dynamics, no
//! potentials. The operations validate their own preconditions (normalized
//! input, boundary-vanishing tails) and return errors rather than quietly
//! integrating garbage.

use num_complex::Complex64;

use crate::error::{QprobError, Result};
use crate::grid::{
    self, derivative, derivative_real, Amplitude, RealField, UnitSystem,
};

/// Tolerance on `|integral(rho) - 1|` before moments are refused.
pub const NORMALIZATION_TOL: f64 = 1e-6;
/// Edge guard: `|x * rho|` at either end above this is a boundary leak.
pub const BOUNDARY_LEAK_TOL: f64 = 1e-8;
/// Points with `rho < FISHER_FLOOR * max(rho)` are excluded from the Fisher
/// integrand; below that the quotient is pure noise.
pub const FISHER_FLOOR: f64 = 1e-12;

/// Pointwise density `|psi|^2`.
pub fn born_density(psi: &Amplitude) -> RealField {
    RealField::new(*psi.grid(), psi.values().iter().map(|v| v.norm_sqr()).collect())
        .expect("|psi|^2 of a finite field is finite")
}

/// Polar split of an amplitude: density, unwrapped phase, and a mask of
/// points too close to a node for the phase to mean anything.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub rho: RealField,
    pub s: RealField,
    pub node_mask: Vec<bool>,
}

/// Split `psi` into `sqrt(rho) exp(i s)` with the phase unwrapped left to
/// right across unmasked points. Points with `|psi| < node_threshold` are
/// masked; the phase there is carried over from the last trusted point.
pub fn decompose(psi: &Amplitude, node_threshold: f64) -> Result<Decomposition> {
    let n = psi.grid().n_points();
    let mut s = vec![0.0; n];
    let mut mask = vec![false; n];
    let mut prev: Option<f64> = None;
    for (i, v) in psi.values().iter().enumerate() {
        if v.norm() < node_threshold {
            mask[i] = true;
            s[i] = prev.unwrap_or(0.0);
            continue;
        }
        let raw = v.arg();
        let unwrapped = match prev {
            None => raw,
            Some(p) => raw + std::f64::consts::TAU * ((p - raw) / std::f64::consts::TAU).round(),
        };
        s[i] = unwrapped;
        prev = Some(unwrapped);
    }
    if prev.is_none() {
        return Err(QprobError::AllMasked);
    }
    // Points masked before the first trusted one inherit its phase.
    let first = s
        .iter()
        .zip(&mask)
        .find(|(_, m)| !**m)
        .map(|(v, _)| *v)
        .expect("at least one unmasked point");
    for i in 0..n {
        if mask[i] {
            s[i] = first;
        } else {
            break;
        }
    }
    Ok(Decomposition {
        rho: born_density(psi),
        s: RealField::new(*psi.grid(), s)?,
        node_mask: mask,
    })
}

pub(crate) fn require_normalized(rho: &RealField) -> Result<()> {
    let defect = (rho.integral() - 1.0).abs();
    if defect > NORMALIZATION_TOL {
        return Err(QprobError::NotNormalized { defect, tol: NORMALIZATION_TOL });
    }
    Ok(())
}

pub(crate) fn require_boundary_decay(rho: &RealField) -> Result<()> {
    let grid = rho.grid();
    let n = grid.n_points();
    for (x, r) in [
        (grid.point(0), rho.values()[0]),
        (grid.point(n - 1), rho.values()[n - 1]),
    ] {
        let leak = (x * r).abs().max(r.abs());
        if leak > BOUNDARY_LEAK_TOL {
            return Err(QprobError::BoundaryLeak(format!(
                "|x rho| = {leak:.3e} at x = {x} exceeds {BOUNDARY_LEAK_TOL:.1e}"
            )));
        }
    }
    Ok(())
}

/// First position moment of a normalized density.
pub fn mean_x(rho: &RealField) -> Result<f64> {
    require_normalized(rho)?;
    let weighted: Vec<f64> =
        rho.values().iter().zip(rho.grid().points()).map(|(r, x)| r * x).collect();
    Ok(grid::quad_sum(rho.grid(), &weighted))
}

/// Centered second moment of a normalized density.
pub fn variance_x(rho: &RealField) -> Result<f64> {
    let mean = mean_x(rho)?;
    let weighted: Vec<f64> = rho
        .values()
        .iter()
        .zip(rho.grid().points())
        .map(|(r, x)| r * (x - mean) * (x - mean))
        .collect();
    Ok(grid::quad_sum(rho.grid(), &weighted))
}

/// Position-information integral `int (d rho / dx)^2 / rho dx`.
///
/// Near nodes the quotient blows up numerically while the true integrand
/// stays integrable; points below [`FISHER_FLOOR`] relative to the peak are
/// dropped instead.
pub fn fisher_x(rho: &RealField) -> Result<f64> {
    let drho = derivative_real(rho);
    let floor = FISHER_FLOOR * rho.values().iter().cloned().fold(0.0, f64::max);
    if floor <= 0.0 {
        return Err(QprobError::AllMasked);
    }
    let integrand: Vec<f64> = rho
        .values()
        .iter()
        .zip(drho.values())
        .map(|(r, d)| if *r >= floor { d * d / r } else { 0.0 })
        .collect();
    Ok(grid::quad_sum(rho.grid(), &integrand))
}

/// `int x (d rho / dx) dx`; equals -1 for a normalized boundary-vanishing
/// density, which is what powers the estimation bound below.
pub fn density_gradient_moment(rho: &RealField) -> Result<f64> {
    require_normalized(rho)?;
    require_boundary_decay(rho)?;
    let drho = derivative_real(rho);
    let weighted: Vec<f64> =
        drho.values().iter().zip(rho.grid().points()).map(|(d, x)| d * x).collect();
    Ok(grid::quad_sum(rho.grid(), &weighted))
}

/// Two-sided uncertainty statement: `spread * gradient_term >= bound`.
#[derive(Debug, Clone, Copy)]
pub struct UncertaintyReport {
    pub spread: f64,
    pub gradient_term: f64,
    pub product: f64,
    pub bound: f64,
    pub satisfied: bool,
    /// `product - bound`; zero (to rounding) on a saturating state.
    pub saturation_gap: f64,
}

impl UncertaintyReport {
    pub(crate) fn new(spread: f64, gradient_term: f64, bound: f64) -> Self {
        let product = spread * gradient_term;
        Self {
            spread,
            gradient_term,
            product,
            bound,
            // Float slack so exact saturators do not flip the flag.
            satisfied: product >= bound - 1e-9,
            saturation_gap: product - bound,
        }
    }
}

/// Estimation bound for position: variance times information is at least
/// one. Saturated exactly by Gaussian densities.
pub fn cramer_rao(rho: &RealField) -> Result<UncertaintyReport> {
    require_normalized(rho)?;
    require_boundary_decay(rho)?;
    Ok(UncertaintyReport::new(variance_x(rho)?, fisher_x(rho)?, 1.0))
}

/// Whether a current is reported in bare form `Im(conj(psi) dpsi/dx)` or
/// scaled by `hbar / m0` to carry velocity units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurrentScale {
    Bare,
    Physical,
}

/// Probability current. Identically zero for real amplitudes; for a
/// uniformly boosted packet it equals the boost velocity times the density.
pub fn current_x(psi: &Amplitude, units: &UnitSystem, scale: CurrentScale) -> Result<RealField> {
    units.validate()?;
    let factor = match scale {
        CurrentScale::Bare => 1.0,
        CurrentScale::Physical => {
            if units.m0 <= 0.0 {
                return Err(QprobError::InvalidUnits(
                    "physical current scale needs m0 > 0".into(),
                ));
            }
            units.hbar / units.m0
        }
    };
    let dpsi = derivative(psi);
    RealField::new(
        *psi.grid(),
        psi.values()
            .iter()
            .zip(dpsi.values())
            .map(|(v, d)| factor * (v.conj() * d).im)
            .collect(),
    )
}

/// Expectation `int [(x psi)* (-i dpsi) - (-i dpsi)* (x psi)] dx`.
///
/// For a normalized state with vanishing tails this is the imaginary unit,
/// independent of the state; it is the discrete shadow of the canonical
/// commutation relation.
pub fn commutator_expectation(psi: &Amplitude) -> Result<Complex64> {
    let rho = born_density(psi);
    require_normalized(&rho)?;
    require_boundary_decay(&rho)?;
    let dpsi = derivative(psi);
    let vals: Vec<Complex64> = psi
        .values()
        .iter()
        .zip(dpsi.values())
        .zip(psi.grid().points())
        .map(|((v, d), x)| {
            let a = v * x;
            let b = Complex64::new(0.0, -1.0) * d;
            a.conj() * b - b.conj() * a
        })
        .collect();
    Ok(grid::quad_sum(psi.grid(), &vals))
}

/// Shift parameter for [`heisenberg`]: a fixed value, or the minimizer
/// computed from the state itself.
#[derive(Debug, Clone, Copy)]
pub enum Shift {
    Value(f64),
    Optimal,
}

/// [`heisenberg`] output: the report plus the shifts actually used.
#[derive(Debug, Clone, Copy)]
pub struct HeisenbergResult {
    pub report: UncertaintyReport,
    pub center: f64,
    pub wavenumber_shift: f64,
}

/// Position/gradient uncertainty product
/// `int (x-a)^2 rho dx * int |(-i d/dx - b) psi|^2 dx >= 1/4`.
///
/// With `Shift::Optimal` the minimizing values are used: `a` is the position
/// mean and `b` the mean wavenumber.
pub fn heisenberg(psi: &Amplitude, a: Shift, b: Shift) -> Result<HeisenbergResult> {
    let rho = born_density(psi);
    require_normalized(&rho)?;
    require_boundary_decay(&rho)?;
    let dpsi = derivative(psi);
    let center = match a {
        Shift::Value(v) => v,
        Shift::Optimal => mean_x(&rho)?,
    };
    let wavenumber_shift = match b {
        Shift::Value(v) => v,
        Shift::Optimal => {
            let vals: Vec<Complex64> = psi
                .values()
                .iter()
                .zip(dpsi.values())
                .map(|(v, d)| v.conj() * Complex64::new(0.0, -1.0) * d)
                .collect();
            grid::quad_sum(psi.grid(), &vals).re
        }
    };
    let spread_vals: Vec<f64> = rho
        .values()
        .iter()
        .zip(psi.grid().points())
        .map(|(r, x)| (x - center) * (x - center) * r)
        .collect();
    let spread = grid::quad_sum(psi.grid(), &spread_vals);
    let grad_vals: Vec<f64> = psi
        .values()
        .iter()
        .zip(dpsi.values())
        .map(|(v, d)| {
            (Complex64::new(0.0, -1.0) * d - v * wavenumber_shift).norm_sqr()
        })
        .collect();
    let gradient_term = grid::quad_sum(psi.grid(), &grad_vals);
    Ok(HeisenbergResult {
        report: UncertaintyReport::new(spread, gradient_term, 0.25),
        center,
        wavenumber_shift,
    })
}

/// Split of the kinetic integral into an information part and a phase part:
/// `(hbar^2/2m) int |psi'|^2 = (hbar^2/8m) F + (hbar^2/2m) int rho s'^2`.
#[derive(Debug, Clone, Copy)]
pub struct KineticFisherReport {
    pub kinetic: f64,
    pub fisher_scaled: f64,
    pub phase_term: f64,
}

impl KineticFisherReport {
    /// `kinetic - fisher_scaled - phase_term`; zero up to discretization.
    pub fn residual(&self) -> f64 {
        self.kinetic - self.fisher_scaled - self.phase_term
    }
}

/// Evaluate the kinetic split. The phase part is computed from the bare
/// current as `j^2 / rho`, so the phase never has to be unwrapped.
pub fn kinetic_fisher_check(psi: &Amplitude, units: &UnitSystem) -> Result<KineticFisherReport> {
    units.validate()?;
    if units.m0 <= 0.0 {
        return Err(QprobError::InvalidUnits("kinetic split needs m0 > 0".into()));
    }
    let rho = born_density(psi);
    let dpsi = derivative(psi);
    let scale = units.hbar * units.hbar / (2.0 * units.m0);
    let kin_vals: Vec<f64> = dpsi.values().iter().map(|d| d.norm_sqr()).collect();
    let kinetic = scale * grid::quad_sum(psi.grid(), &kin_vals);
    let fisher_scaled = 0.25 * scale * fisher_x(&rho)?;
    let j = current_x(psi, units, CurrentScale::Bare)?;
    let floor = FISHER_FLOOR * rho.values().iter().cloned().fold(0.0, f64::max);
    let phase_vals: Vec<f64> = j
        .values()
        .iter()
        .zip(rho.values())
        .map(|(jv, r)| if *r >= floor { jv * jv / r } else { 0.0 })
        .collect();
    let phase_term = scale * grid::quad_sum(psi.grid(), &phase_vals);
    Ok(KineticFisherReport { kinetic, fisher_scaled, phase_term })
}

/// Exponentially decaying state `psi(x, t) = exp(-i omega t - t/(2 tau)) /
/// sqrt(tau) * spatial(x)` for `t >= 0`.
#[derive(Debug, Clone)]
pub struct DecayingState {
    pub omega: f64,
    pub tau: f64,
    pub spatial: Amplitude,
}

impl DecayingState {
    pub fn new(omega: f64, tau: f64, spatial: Amplitude) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(QprobError::InvalidConfig(format!(
                "decay time must be positive and finite, got {tau}"
            )));
        }
        if !omega.is_finite() {
            return Err(QprobError::InvalidConfig(format!("omega must be finite, got {omega}")));
        }
        Ok(Self { omega, tau, spatial })
    }
}

/// Lifetime/linewidth summary of a decaying state.
#[derive(Debug, Clone, Copy)]
pub struct TimeEnergyReport {
    /// `int t^2 |psi|^2 dt dx`, which is `2 tau^2` for unit spatial norm.
    pub mean_square_time: f64,
    /// Minimizer of the frequency dispersion; equals `omega`.
    pub optimal_shift: f64,
    /// `int |i dpsi/dt - d psi|^2 dt dx` at the optimal shift: `1/(4 tau^2)`.
    pub dispersion: f64,
    /// `mean_square_time * dispersion`, which is `1/2`, comfortably above
    /// the general lower bound of `1/4`.
    pub product: f64,
}

/// Frequency dispersion at a given shift `d`, in closed form:
/// `((omega - d)^2 + 1/(4 tau^2))` times the spatial norm.
pub fn frequency_dispersion(ds: &DecayingState, shift: f64) -> f64 {
    let n = ds.spatial.norm_squared();
    ((ds.omega - shift) * (ds.omega - shift) + 0.25 / (ds.tau * ds.tau)) * n
}

/// Closed-form time-energy summary (time integrals done analytically, spatial
/// norm by quadrature).
pub fn time_energy(ds: &DecayingState) -> TimeEnergyReport {
    let n = ds.spatial.norm_squared();
    let msq = 2.0 * ds.tau * ds.tau * n;
    let disp = 0.25 / (ds.tau * ds.tau) * n;
    TimeEnergyReport {
        mean_square_time: msq,
        optimal_shift: ds.omega,
        dispersion: disp,
        product: msq * disp,
    }
}

/// Same summary with the time integrals done by Simpson quadrature on
/// `[0, 80 tau]`; a cross-check of the closed forms.
pub fn time_energy_numeric(ds: &DecayingState) -> TimeEnergyReport {
    let n = ds.spatial.norm_squared();
    let steps = 200_000usize;
    let t_max = 80.0 * ds.tau;
    let h = t_max / steps as f64;
    let simpson = |f: &dyn Fn(f64) -> f64| -> f64 {
        let mut acc = f(0.0) + f(t_max);
        let mut odd = 0.0;
        let mut even = 0.0;
        for i in 1..steps {
            let v = f(i as f64 * h);
            if i % 2 == 1 {
                odd += v;
            } else {
                even += v;
            }
        }
        acc += 4.0 * odd + 2.0 * even;
        acc * h / 3.0
    };
    let tau = ds.tau;
    let weight = move |t: f64| (-t / tau).exp() / tau;
    let msq = simpson(&|t| t * t * weight(t)) * n;
    // d* = int Re[conj(psi) i dpsi/dt] / int |psi|^2 over the time axis.
    let num = simpson(&|t| ds.omega * weight(t));
    let den = simpson(&weight);
    let shift = num / den;
    let disp = simpson(&|t| ((ds.omega - shift).powi(2) + 0.25 / (tau * tau)) * weight(t)) * n;
    TimeEnergyReport {
        mean_square_time: msq,
        optimal_shift: shift,
        dispersion: disp,
        product: msq * disp,
    }
}

/// Total time current `int Re[conj(psi) i dpsi/dt] dx` at one instant.
/// Positive for positive-frequency states, and flips sign under complex
/// conjugation of the pair.
pub fn time_current_total(psi_t: &Amplitude, dpsi_dt: &Amplitude) -> Result<f64> {
    psi_t.same_grid(dpsi_dt)?;
    let vals: Vec<f64> = psi_t
        .values()
        .iter()
        .zip(dpsi_dt.values())
        .map(|(v, d)| (v.conj() * Complex64::new(0.0, 1.0) * d).re)
        .collect();
    Ok(grid::quad_sum(psi_t.grid(), &vals))
}
