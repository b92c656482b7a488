//! Canonical states shared by unit tests, the verification suite, and the
//! CLI fixture registry.
//!
//! Analytic normalization is used wherever a closed form exists, so moments
//! and information integrals of these states have exact reference values.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{QprobError, Result};
use crate::grid::{Amplitude, Boundary, Grid1D, RealField};

/// Normalized Gaussian packet with position variance exactly `variance`.
///
/// `psi(x) = (2 pi v)^(-1/4) exp(-(x-c)^2 / (4v)) exp(i k0 (x - c))`, so the
/// density is the normal density with variance `v` and the mean wavenumber
/// is `k0`.
pub fn gaussian(grid: Grid1D, center: f64, variance: f64, k0: f64) -> Result<Amplitude> {
    if !(variance > 0.0) {
        return Err(QprobError::InvalidConfig(format!(
            "gaussian variance must be positive, got {variance}"
        )));
    }
    let norm = (2.0 * PI * variance).powf(-0.25);
    Amplitude::from_fn(grid, |x| {
        let d = x - center;
        let mag = norm * (-d * d / (4.0 * variance)).exp();
        Complex64::from_polar(mag, k0 * d)
    })
}

/// Normal density with variance `variance`, normalized in closed form.
pub fn gaussian_density(grid: Grid1D, center: f64, variance: f64) -> Result<RealField> {
    let norm = 1.0 / (2.0 * PI * variance).sqrt();
    RealField::from_fn(grid, |x| {
        let d = x - center;
        norm * (-d * d / (2.0 * variance)).exp()
    })
}

/// One component of a Gaussian mixture.
#[derive(Debug, Clone, Copy)]
pub struct MixtureComponent {
    pub weight: f64,
    pub center: f64,
    pub variance: f64,
}

fn mixture_density_at(x: f64, parts: &[MixtureComponent], total_weight: f64) -> f64 {
    parts
        .iter()
        .map(|p| {
            let d = x - p.center;
            p.weight / total_weight / (2.0 * PI * p.variance).sqrt()
                * (-d * d / (2.0 * p.variance)).exp()
        })
        .sum()
}

/// Density of a Gaussian mixture; weights are normalized to sum to one.
pub fn mixture_density(grid: Grid1D, parts: &[MixtureComponent]) -> Result<RealField> {
    let total = validate_mixture(parts)?;
    RealField::from_fn(grid, |x| mixture_density_at(x, parts, total))
}

/// Closed-form spatial derivative of [`mixture_density`], independent of the
/// stencil machinery; used as an oracle in tests.
pub fn mixture_density_gradient(grid: Grid1D, parts: &[MixtureComponent]) -> Result<RealField> {
    let total = validate_mixture(parts)?;
    RealField::from_fn(grid, |x| {
        parts
            .iter()
            .map(|p| {
                let d = x - p.center;
                -d / p.variance * p.weight / total / (2.0 * PI * p.variance).sqrt()
                    * (-d * d / (2.0 * p.variance)).exp()
            })
            .sum()
    })
}

/// Real amplitude `sqrt(rho)` of a Gaussian mixture.
pub fn gaussian_mixture(grid: Grid1D, parts: &[MixtureComponent]) -> Result<Amplitude> {
    let total = validate_mixture(parts)?;
    Amplitude::from_fn(grid, |x| {
        Complex64::new(mixture_density_at(x, parts, total).sqrt(), 0.0)
    })
}

fn validate_mixture(parts: &[MixtureComponent]) -> Result<f64> {
    if parts.is_empty() {
        return Err(QprobError::InvalidConfig("mixture needs at least one component".into()));
    }
    for p in parts {
        if !(p.weight > 0.0) || !(p.variance > 0.0) || !p.center.is_finite() {
            return Err(QprobError::InvalidConfig(format!(
                "bad mixture component: weight {}, center {}, variance {}",
                p.weight, p.center, p.variance
            )));
        }
    }
    Ok(parts.iter().map(|p| p.weight).sum())
}

/// Smooth plateau density built from two tanh shoulders, numerically
/// normalized. A stand-in for "almost uniform" states with gentle tails.
pub fn smoothed_bump(grid: Grid1D, half_width: f64, edge_width: f64) -> Result<Amplitude> {
    if !(half_width > 0.0) || !(edge_width > 0.0) {
        return Err(QprobError::InvalidConfig(
            "smoothed bump needs positive half_width and edge_width".into(),
        ));
    }
    let mut psi = Amplitude::from_fn(grid, |x| {
        let rho = 0.5 * (((x + half_width) / edge_width).tanh() - ((x - half_width) / edge_width).tanh());
        Complex64::new(rho.max(0.0).sqrt(), 0.0)
    })?;
    psi.normalize()?;
    Ok(psi)
}

/// Odd state `x exp(-x^2/(4v))` with a single node at the origin,
/// normalized in closed form.
pub fn single_node_state(grid: Grid1D, variance: f64) -> Result<Amplitude> {
    if !(variance > 0.0) {
        return Err(QprobError::InvalidConfig("node state variance must be positive".into()));
    }
    let norm = 1.0 / (variance.sqrt() * (2.0 * PI * variance).powf(0.25));
    Amplitude::from_fn(grid, |x| {
        Complex64::new(norm * x * (-x * x / (4.0 * variance)).exp(), 0.0)
    })
}

/// Wavenumber of integer mode `m` on a periodic grid.
pub fn mode_wavenumber(grid: &Grid1D, mode: i64) -> f64 {
    2.0 * PI * mode as f64 / (grid.x_max() - grid.x_min())
}

/// Normalized plane wave `exp(i k x) / sqrt(L)` for an integer grid mode.
/// Only meaningful on periodic grids.
pub fn plane_wave(grid: Grid1D, mode: i64) -> Result<Amplitude> {
    if grid.boundary() != Boundary::Periodic {
        return Err(QprobError::InvalidConfig("plane waves need a periodic grid".into()));
    }
    let k = mode_wavenumber(&grid, mode);
    let norm = 1.0 / (grid.x_max() - grid.x_min()).sqrt();
    Amplitude::from_fn(grid, |x| Complex64::from_polar(norm, k * x))
}

/// Random normalized packet: Gaussian envelope times a low-order complex
/// trigonometric polynomial. Smooth, boundary-vanishing, and generic enough
/// for property tests.
pub fn random_smooth_packet(grid: Grid1D, rng: &mut impl Rng) -> Result<Amplitude> {
    let span = grid.x_max() - grid.x_min();
    let center = grid.x_min() + span * rng.gen_range(0.45..0.55);
    let sigma = span * rng.gen_range(0.04..0.06);
    let k0 = rng.gen_range(-2.0..2.0) / sigma * 0.3;
    let coeffs: Vec<(Complex64, f64)> = (0..3)
        .map(|m| {
            (
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                m as f64 * PI / span,
            )
        })
        .collect();
    let mut psi = Amplitude::from_fn(grid, |x| {
        let d = x - center;
        let env = (-d * d / (2.0 * sigma * sigma)).exp();
        let mut mods = Complex64::new(1.5, 0.0);
        for (c, w) in &coeffs {
            mods += c * (w * d).cos();
        }
        Complex64::from_polar(env, k0 * d) * mods
    })?;
    psi.normalize()?;
    Ok(psi)
}

/// Random smooth real field (for potentials and shift functions): a handful
/// of long-wavelength cosines with bounded amplitude.
pub fn random_smooth_real(grid: Grid1D, rng: &mut impl Rng, amplitude: f64) -> Result<RealField> {
    let span = grid.x_max() - grid.x_min();
    let coeffs: Vec<(f64, f64, f64)> = (1..4)
        .map(|m| {
            (
                rng.gen_range(-amplitude..amplitude),
                2.0 * PI * m as f64 / span,
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    RealField::from_fn(grid, |x| {
        coeffs.iter().map(|(a, w, phase)| a * (w * x + phase).cos()).sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn gaussian_is_normalized_on_a_wide_grid() {
        let grid = Grid1D::new(-12.0, 12.0, 1601, Boundary::Vanishing).unwrap();
        let psi = gaussian(grid, 0.5, 1.3, 2.0).unwrap();
        assert!((psi.norm_squared() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn mixture_weights_are_renormalized() {
        let grid = Grid1D::new(-20.0, 20.0, 2001, Boundary::Vanishing).unwrap();
        let parts = [
            MixtureComponent { weight: 2.0, center: -3.0, variance: 1.0 },
            MixtureComponent { weight: 6.0, center: 3.0, variance: 0.5 },
        ];
        let rho = mixture_density(grid, &parts).unwrap();
        assert!((rho.integral() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn mixture_gradient_matches_stencil_derivative() {
        let grid = Grid1D::new(-20.0, 20.0, 4001, Boundary::Vanishing).unwrap();
        let parts = [
            MixtureComponent { weight: 0.5, center: -2.0, variance: 0.8 },
            MixtureComponent { weight: 0.5, center: 2.0, variance: 1.1 },
        ];
        let analytic = mixture_density_gradient(grid, &parts).unwrap();
        let numeric = crate::grid::derivative_real(&mixture_density(grid, &parts).unwrap());
        let max_err = analytic
            .values()
            .iter()
            .zip(numeric.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1e-8, "gradient mismatch {max_err:.3e}");
    }

    #[test]
    fn single_node_state_is_normalized_and_odd() {
        let grid = Grid1D::new(-14.0, 14.0, 1401, Boundary::Vanishing).unwrap();
        let psi = single_node_state(grid, 1.0).unwrap();
        assert!((psi.norm_squared() - 1.0).abs() <= 1e-10);
        let mid = grid.n_points() / 2;
        assert!(psi.values()[mid].norm() <= 1e-12, "node should sit at the origin");
    }

    #[test]
    fn plane_wave_requires_periodic_grid() {
        let boxy = Grid1D::new(0.0, 1.0, 64, Boundary::Vanishing).unwrap();
        assert!(plane_wave(boxy, 1).is_err());
        let ring = Grid1D::new(0.0, 2.0 * PI, 64, Boundary::Periodic).unwrap();
        let psi = plane_wave(ring, 3).unwrap();
        assert!((psi.norm_squared() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn random_packets_are_normalized_and_boundary_small() {
        let grid = Grid1D::new(-10.0, 10.0, 801, Boundary::Vanishing).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..10 {
            let psi = random_smooth_packet(grid, &mut rng).unwrap();
            assert!((psi.norm_squared() - 1.0).abs() <= 1e-10);
            assert!(psi.values()[0].norm() <= 1e-8);
            assert!(psi.values()[grid.n_points() - 1].norm() <= 1e-8);
        }
    }

    #[test]
    fn smoothed_bump_is_normalized() {
        let grid = Grid1D::new(-10.0, 10.0, 1001, Boundary::Vanishing).unwrap();
        let psi = smoothed_bump(grid, 3.0, 0.5).unwrap();
        assert!((psi.norm_squared() - 1.0).abs() <= 1e-12);
    }
}
