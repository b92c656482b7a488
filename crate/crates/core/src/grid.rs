//! Uniform 1D grids with quadrature and finite-difference stencils, plus the
//! complex and real field containers the rest of the crate builds on.
//!
//! Quadrature is composite Simpson on box grids (exact through cubics) and
//! the rectangle rule on periodic grids, where it is spectrally accurate.
//! Derivatives are fourth order: central five-point stencils inside, Fornberg
//! one-sided stencils at box edges, wraparound on periodic grids.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QprobError, Result};

/// How a grid treats its ends.
///
/// `Vanishing` grids include both endpoints and assume fields decay to zero
/// well before reaching them. `Periodic` grids exclude `x_max`, which is
/// identified with `x_min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Vanishing,
    Periodic,
}

/// Uniform grid on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n_points: usize,
    boundary: Boundary,
}

impl Grid1D {
    /// Minimum point count; the widest stencil needs six nodes.
    pub const MIN_POINTS: usize = 8;

    pub fn new(x_min: f64, x_max: f64, n_points: usize, boundary: Boundary) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() {
            return Err(QprobError::InvalidGrid(format!(
                "bounds must be finite, got [{x_min}, {x_max}]"
            )));
        }
        if x_max <= x_min {
            return Err(QprobError::InvalidGrid(format!(
                "x_max must exceed x_min, got [{x_min}, {x_max}]"
            )));
        }
        if n_points < Self::MIN_POINTS {
            return Err(QprobError::InvalidGrid(format!(
                "need at least {} points, got {n_points}",
                Self::MIN_POINTS
            )));
        }
        Ok(Self { x_min, x_max, n_points, boundary })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Point spacing. Periodic grids divide the box into `n_points` cells,
    /// vanishing grids into `n_points - 1`.
    pub fn spacing(&self) -> f64 {
        let cells = match self.boundary {
            Boundary::Vanishing => self.n_points - 1,
            Boundary::Periodic => self.n_points,
        };
        (self.x_max - self.x_min) / cells as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    /// Per-point quadrature weights, for tensor-product integration. Agrees
    /// with [`integrate`] up to rounding.
    ///
    /// Simpson weights need an even number of intervals; vanishing grids with
    /// an odd interval count fall back to the trapezoid rule.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let n = self.n_points;
        match self.boundary {
            Boundary::Periodic => vec![h; n],
            Boundary::Vanishing => {
                if (n - 1) % 2 == 0 {
                    let mut w = vec![0.0; n];
                    w[0] = h / 3.0;
                    w[n - 1] = h / 3.0;
                    for (i, wi) in w.iter_mut().enumerate().take(n - 1).skip(1) {
                        *wi = if i % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
                    }
                    w
                } else {
                    let mut w = vec![h; n];
                    w[0] = h / 2.0;
                    w[n - 1] = h / 2.0;
                    w
                }
            }
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_points {
            return Err(QprobError::DimensionMismatch(format!(
                "grid has {} points but field has {len}",
                self.n_points
            )));
        }
        Ok(())
    }
}

/// Physical constants carried alongside fields. `natural()` sets every one
/// to 1, which is what most fixtures use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub hbar: f64,
    pub c: f64,
    pub m0: f64,
    pub e_charge: f64,
}

impl UnitSystem {
    pub fn natural() -> Self {
        Self { hbar: 1.0, c: 1.0, m0: 1.0, e_charge: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hbar > 0.0) || !self.hbar.is_finite() {
            return Err(QprobError::InvalidUnits(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(QprobError::InvalidUnits(format!("c must be positive, got {}", self.c)));
        }
        if !(self.m0 >= 0.0) || !self.m0.is_finite() {
            return Err(QprobError::InvalidUnits(format!("m0 must be nonnegative, got {}", self.m0)));
        }
        if !self.e_charge.is_finite() {
            return Err(QprobError::InvalidUnits(format!("e_charge must be finite, got {}", self.e_charge)));
        }
        Ok(())
    }
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::natural()
    }
}

/// Complex wave amplitude sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Amplitude {
    grid: Grid1D,
    values: Vec<Complex64>,
}

/// Real scalar field sampled on a grid (densities, phases, potentials).
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid1D,
    values: Vec<f64>,
}

impl Amplitude {
    pub fn new(grid: Grid1D, values: Vec<Complex64>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some(index) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(QprobError::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = grid.points().into_iter().map(f).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid1D {
        self.grid_ref()
    }

    fn grid_ref(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// `integral of |psi|^2`.
    pub fn norm_squared(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        quad_sum(&self.grid, &sq)
    }

    /// Rescale so `norm_squared` is 1. Fails on an (almost) zero field.
    pub fn normalize(&mut self) -> Result<()> {
        let n2 = self.norm_squared();
        if n2 < 1e-300 {
            return Err(QprobError::DegenerateZero { norm: n2.sqrt() });
        }
        let scale = 1.0 / n2.sqrt();
        for v in &mut self.values {
            *v *= scale;
        }
        Ok(())
    }

    pub fn conjugate(&self) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        let defect = (self.norm_squared() - 1.0).abs();
        if defect > tol {
            return Err(QprobError::NotNormalized { defect, tol });
        }
        Ok(())
    }

    pub fn same_grid(&self, other: &Amplitude) -> Result<()> {
        if self.grid != other.grid {
            return Err(QprobError::DimensionMismatch("amplitudes live on different grids".into()));
        }
        Ok(())
    }

    pub fn same_grid_real(&self, other: &RealField) -> Result<()> {
        if self.grid != *other.grid() {
            return Err(QprobError::DimensionMismatch(
                "amplitude and real field live on different grids".into(),
            ));
        }
        Ok(())
    }
}

impl RealField {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(QprobError::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().into_iter().map(f).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn integral(&self) -> f64 {
        quad_sum(&self.grid, &self.values)
    }
}

/// Weighted quadrature sum. Integer Simpson coefficients are accumulated
/// first and scaled once at the end, so constants integrate exactly.
pub(crate) fn quad_sum<T: Sample>(grid: &Grid1D, values: &[T]) -> T {
    let h = grid.spacing();
    let n = values.len();
    match grid.boundary() {
        Boundary::Periodic => {
            let mut acc = T::zero();
            for v in values {
                acc = acc + *v;
            }
            acc * h
        }
        Boundary::Vanishing => {
            if (n - 1) % 2 == 0 {
                let mut odd = T::zero();
                let mut even = T::zero();
                for i in (1..n - 1).step_by(2) {
                    odd = odd + values[i];
                }
                for i in (2..n - 1).step_by(2) {
                    even = even + values[i];
                }
                (values[0] + values[n - 1] + odd * 4.0 + even * 2.0) * (h / 3.0)
            } else {
                let mut acc = (values[0] + values[n - 1]) * 0.5;
                for v in &values[1..n - 1] {
                    acc = acc + *v;
                }
                acc * h
            }
        }
    }
}

/// `integral of f dx` over the grid the field lives on.
pub fn integrate(field: &Amplitude) -> Complex64 {
    quad_sum(&field.grid, &field.values)
}

/// Real-field counterpart of [`integrate`].
pub fn integrate_real(field: &RealField) -> f64 {
    field.integral()
}

/// Inner product `integral of conj(f) * g`.
pub fn inner(f: &Amplitude, g: &Amplitude) -> Result<Complex64> {
    f.same_grid(g)?;
    let prod: Vec<Complex64> =
        f.values.iter().zip(&g.values).map(|(a, b)| a.conj() * b).collect();
    Ok(quad_sum(&f.grid, &prod))
}

pub(crate) trait Sample:
    Copy + std::ops::Add<Output = Self> + std::ops::Mul<f64, Output = Self>
{
    fn zero() -> Self;
}

impl Sample for f64 {
    fn zero() -> Self {
        0.0
    }
}

impl Sample for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
}

/// Finite-difference weights for the `m`-th derivative at `z` from the nodes
/// `x`, after Fornberg (Math. Comp. 51, 1988). Exact for any node layout.
pub(crate) fn fd_weights(z: f64, x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    assert!(n > m, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[m]).collect()
}

/// Central five-point first-derivative weights, divided by `h` later.
pub(crate) const D1_CENTRAL: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
/// Central five-point second-derivative weights, divided by `h^2` later.
pub(crate) const D2_CENTRAL: [f64; 5] =
    [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];

fn apply_stencils<T: Sample>(values: &[T], grid: &Grid1D, order: usize) -> Vec<T> {
    let n = values.len();
    let h = grid.spacing();
    let scale = 1.0 / h.powi(order as i32);
    let central: &[f64; 5] = match order {
        1 => &D1_CENTRAL,
        2 => &D2_CENTRAL,
        _ => unreachable!("only first and second derivatives are provided"),
    };
    let mut out = vec![T::zero(); n];
    match grid.boundary() {
        Boundary::Periodic => {
            for i in 0..n {
                let mut acc = T::zero();
                for (k, w) in central.iter().enumerate() {
                    if *w == 0.0 {
                        continue;
                    }
                    let j = (i + n + k - 2) % n;
                    acc = acc + values[j] * *w;
                }
                out[i] = acc * scale;
            }
        }
        Boundary::Vanishing => {
            for i in 2..n - 2 {
                let mut acc = T::zero();
                for (k, w) in central.iter().enumerate() {
                    if *w == 0.0 {
                        continue;
                    }
                    acc = acc + values[i + k - 2] * *w;
                }
                out[i] = acc * scale;
            }
            // One-sided stencils at the edges keep fourth order: five nodes
            // for the first derivative, six for the second.
            let width = order + 4;
            let nodes: Vec<f64> = (0..width).map(|k| k as f64).collect();
            for i in [0usize, 1] {
                let w = fd_weights(i as f64, &nodes, order);
                let mut acc = T::zero();
                for (k, wk) in w.iter().enumerate() {
                    acc = acc + values[k] * *wk;
                }
                out[i] = acc * scale;
            }
            for i in [n - 2, n - 1] {
                let z = (i + width - n) as f64;
                let w = fd_weights(z, &nodes, order);
                let mut acc = T::zero();
                for (k, wk) in w.iter().enumerate() {
                    acc = acc + values[n - width + k] * *wk;
                }
                out[i] = acc * scale;
            }
        }
    }
    out
}

/// Fourth-order first derivative.
pub fn derivative(field: &Amplitude) -> Amplitude {
    Amplitude {
        grid: field.grid,
        values: apply_stencils(&field.values, &field.grid, 1),
    }
}

/// Fourth-order first derivative of a real field.
pub fn derivative_real(field: &RealField) -> RealField {
    RealField {
        grid: field.grid,
        values: apply_stencils(&field.values, &field.grid, 1),
    }
}

/// Fourth-order second derivative.
pub fn second_derivative(field: &Amplitude) -> Amplitude {
    Amplitude {
        grid: field.grid,
        values: apply_stencils(&field.values, &field.grid, 2),
    }
}

/// Fourth-order second derivative of a real field.
pub fn second_derivative_real(field: &RealField) -> RealField {
    RealField {
        grid: field.grid,
        values: apply_stencils(&field.values, &field.grid, 2),
    }
}
