//! Two free particles on a line: product-grid amplitudes, exchange
//! (anti)symmetrization, split-step evolution, and the rank-one residual
//! that witnesses entanglement in the joint density.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::SchrodingerSolver;
use crate::error::{QprobError, Result};
use crate::grid::{derivative, derivative_real, Amplitude, Grid1D, RealField, UnitSystem};
use crate::prob::NORMALIZATION_TOL;

/// A two-particle amplitude on the product of two 1D grids. Values are
/// stored row-major: `values[i * n2 + j]` is the amplitude at
/// `(x1 = grid1.point(i), x2 = grid2.point(j))`.
#[derive(Debug, Clone)]
pub struct Amplitude2 {
    grid1: Grid1D,
    grid2: Grid1D,
    masses: (f64, f64),
    values: Vec<Complex64>,
}

impl Amplitude2 {
    pub fn new(
        grid1: Grid1D,
        grid2: Grid1D,
        masses: (f64, f64),
        values: Vec<Complex64>,
    ) -> Result<Self> {
        if values.len() != grid1.n_points() * grid2.n_points() {
            return Err(QprobError::DimensionMismatch(format!(
                "expected {} x {} values, got {}",
                grid1.n_points(),
                grid2.n_points(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(QprobError::NonFinite { index });
        }
        for m in [masses.0, masses.1] {
            if !(m >= 0.0) || !m.is_finite() {
                return Err(QprobError::MassMismatch(format!(
                    "masses must be nonnegative and finite, got {masses:?}"
                )));
            }
        }
        Ok(Self { grid1, grid2, masses, values })
    }

    pub fn from_fn(
        grid1: Grid1D,
        grid2: Grid1D,
        masses: (f64, f64),
        f: impl Fn(f64, f64) -> Complex64,
    ) -> Result<Self> {
        let points2 = grid2.points();
        let mut values = Vec::with_capacity(grid1.n_points() * grid2.n_points());
        for x1 in grid1.points() {
            for &x2 in &points2 {
                values.push(f(x1, x2));
            }
        }
        Self::new(grid1, grid2, masses, values)
    }

    /// Tensor product of two one-particle amplitudes.
    pub fn product(a: &Amplitude, b: &Amplitude, masses: (f64, f64)) -> Result<Self> {
        let mut values = Vec::with_capacity(a.values().len() * b.values().len());
        for u in a.values() {
            for v in b.values() {
                values.push(u * v);
            }
        }
        Self::new(*a.grid(), *b.grid(), masses, values)
    }

    pub fn grid1(&self) -> &Grid1D {
        &self.grid1
    }

    pub fn grid2(&self) -> &Grid1D {
        &self.grid2
    }

    pub fn masses(&self) -> (f64, f64) {
        self.masses
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn norm_squared(&self) -> f64 {
        let w1 = self.grid1.quadrature_weights();
        let w2 = self.grid2.quadrature_weights();
        let n2 = self.grid2.n_points();
        self.values
            .chunks(n2)
            .zip(&w1)
            .map(|(row, wa)| {
                wa * row.iter().zip(&w2).map(|(v, wb)| wb * v.norm_sqr()).sum::<f64>()
            })
            .sum()
    }

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

    /// The same state with the particle labels swapped.
    pub fn exchanged(&self) -> Self {
        let n1 = self.grid1.n_points();
        let n2 = self.grid2.n_points();
        Self {
            grid1: self.grid2,
            grid2: self.grid1,
            masses: (self.masses.1, self.masses.0),
            values: transposed(&self.values, n1, n2),
        }
    }

    fn check_normalized(&self) -> Result<()> {
        let defect = (self.norm_squared() - 1.0).abs();
        if defect > NORMALIZATION_TOL {
            return Err(QprobError::NotNormalized { defect, tol: NORMALIZATION_TOL });
        }
        Ok(())
    }
}

fn transposed(values: &[Complex64], n1: usize, n2: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); values.len()];
    for i in 0..n1 {
        for j in 0..n2 {
            out[j * n1 + i] = values[i * n2 + j];
        }
    }
    out
}

/// Mean position of particle `j` (1 or 2) under the joint density.
pub fn mean_xj(psi2: &Amplitude2, j: u8) -> Result<f64> {
    psi2.check_normalized()?;
    let marginal_grid = match j {
        1 => psi2.grid1,
        2 => psi2.grid2,
        _ => {
            return Err(QprobError::InvalidConfig(format!(
                "particle index must be 1 or 2, got {j}"
            )))
        }
    };
    let w1 = psi2.grid1.quadrature_weights();
    let w2 = psi2.grid2.quadrature_weights();
    let n2 = psi2.grid2.n_points();
    let mut total = 0.0;
    for (i, row) in psi2.values.chunks(n2).enumerate() {
        for (k, v) in row.iter().enumerate() {
            let x = if j == 1 { psi2.grid1.point(i) } else { psi2.grid2.point(k) };
            total += w1[i] * w2[k] * x * v.norm_sqr();
        }
    }
    let _ = marginal_grid;
    Ok(total)
}

/// Exchange parity for [`symmetrize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeSign {
    Symmetric,
    Antisymmetric,
}

/// Projects onto the exchange-(anti)symmetric part and renormalizes.
/// Identical particles only: the grids and masses must agree, since exchange
/// is not a symmetry of the two-particle equation otherwise.
pub fn symmetrize(psi2: &Amplitude2, sign: ExchangeSign) -> Result<Amplitude2> {
    if psi2.grid1 != psi2.grid2 {
        return Err(QprobError::DimensionMismatch(
            "symmetrization needs identical grids for both particles".into(),
        ));
    }
    if psi2.masses.0 != psi2.masses.1 {
        return Err(QprobError::MassMismatch(format!(
            "symmetrization needs equal masses, got {:?}",
            psi2.masses
        )));
    }
    let n = psi2.grid1.n_points();
    let s = match sign {
        ExchangeSign::Symmetric => 1.0,
        ExchangeSign::Antisymmetric => -1.0,
    };
    let mut values = vec![Complex64::default(); n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] =
                0.5 * (psi2.values[i * n + j] + s * psi2.values[j * n + i]);
        }
    }
    let mut out = Amplitude2::new(psi2.grid1, psi2.grid2, psi2.masses, values)?;
    let norm = out.norm_squared();
    if norm < 1e-12 {
        return Err(QprobError::DegenerateZero { norm: norm.sqrt() });
    }
    out.normalize()?;
    Ok(out)
}

/// Largest `|psi(x, x)|` on the exchange diagonal; zero for antisymmetric
/// states. The grids must agree.
pub fn diagonal_peak(psi2: &Amplitude2) -> Result<f64> {
    if psi2.grid1 != psi2.grid2 {
        return Err(QprobError::DimensionMismatch(
            "the exchange diagonal needs identical grids".into(),
        ));
    }
    let n = psi2.grid1.n_points();
    Ok((0..n).map(|i| psi2.values[i * n + i].norm()).fold(0.0, f64::max))
}

/// Free two-particle Crank-Nicolson evolution, operator-split by dimension.
/// A half-step sweeps dimension 1 then dimension 2; a full step runs the
/// sweep pattern forward then reversed (Strang ordering), so both axes see
/// the identical update map and exchange symmetry survives exactly.
#[derive(Debug)]
pub struct TwoParticleSolver {
    axis1: SchrodingerSolver,
    axis2: SchrodingerSolver,
    grid1: Grid1D,
    grid2: Grid1D,
    masses: (f64, f64),
}

impl TwoParticleSolver {
    pub fn new(
        grid1: Grid1D,
        grid2: Grid1D,
        units: &UnitSystem,
        masses: (f64, f64),
        dt: f64,
    ) -> Result<Self> {
        units.validate()?;
        for m in [masses.0, masses.1] {
            if !(m > 0.0) || !m.is_finite() {
                return Err(QprobError::MassMismatch(format!(
                    "evolution needs positive masses, got {masses:?}"
                )));
            }
        }
        let units1 = UnitSystem { m0: masses.0, ..*units };
        let units2 = UnitSystem { m0: masses.1, ..*units };
        Ok(Self {
            axis1: SchrodingerSolver::new(grid1, &units1, None, 0.5 * dt)?,
            axis2: SchrodingerSolver::new(grid2, &units2, None, 0.5 * dt)?,
            grid1,
            grid2,
            masses,
        })
    }

    /// Forwards the per-axis step-size advisory, if either axis raises one.
    pub fn accuracy_warning(&self) -> Option<String> {
        self.axis1.accuracy_warning().or_else(|| self.axis2.accuracy_warning())
    }

    pub fn step(&self, psi2: &mut Amplitude2) -> Result<()> {
        if psi2.grid1 != self.grid1 || psi2.grid2 != self.grid2 {
            return Err(QprobError::DimensionMismatch(
                "state grids do not match the solver".into(),
            ));
        }
        if psi2.masses != self.masses {
            return Err(QprobError::MassMismatch(format!(
                "state masses {:?} do not match the solver {:?}",
                psi2.masses, self.masses
            )));
        }
        self.sweep_axis1(psi2)?;
        self.sweep_axis2(psi2)?;
        self.sweep_axis2(psi2)?;
        self.sweep_axis1(psi2)
    }

    pub fn evolve(&self, psi2: &mut Amplitude2, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(psi2)?;
        }
        Ok(())
    }

    fn sweep_axis1(&self, psi2: &mut Amplitude2) -> Result<()> {
        let n1 = self.grid1.n_points();
        let n2 = self.grid2.n_points();
        let mut flipped = transposed(&psi2.values, n1, n2);
        sweep_rows(&self.axis1, self.grid1, &mut flipped, n1)?;
        psi2.values = transposed(&flipped, n2, n1);
        Ok(())
    }

    fn sweep_axis2(&self, psi2: &mut Amplitude2) -> Result<()> {
        sweep_rows(&self.axis2, self.grid2, &mut psi2.values, self.grid2.n_points())
    }
}

fn sweep_rows(
    solver: &SchrodingerSolver,
    grid: Grid1D,
    values: &mut [Complex64],
    row_len: usize,
) -> Result<()> {
    values.par_chunks_mut(row_len).try_for_each(|row| {
        let mut slice = Amplitude::new(grid, row.to_vec())?;
        solver.step(&mut slice)?;
        row.copy_from_slice(slice.values());
        Ok(())
    })
}

/// A real field on the product grid, laid out like [`Amplitude2`].
#[derive(Debug, Clone)]
pub struct RealField2 {
    grid1: Grid1D,
    grid2: Grid1D,
    values: Vec<f64>,
}

impl RealField2 {
    pub fn new(grid1: Grid1D, grid2: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid1.n_points() * grid2.n_points() {
            return Err(QprobError::DimensionMismatch(format!(
                "expected {} x {} values, got {}",
                grid1.n_points(),
                grid2.n_points(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(QprobError::NonFinite { index });
        }
        Ok(Self { grid1, grid2, values })
    }

    pub fn from_fn(grid1: Grid1D, grid2: Grid1D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let points2 = grid2.points();
        let mut values = Vec::with_capacity(grid1.n_points() * grid2.n_points());
        for x1 in grid1.points() {
            for &x2 in &points2 {
                values.push(f(x1, x2));
            }
        }
        Self::new(grid1, grid2, values)
    }

    pub fn grid1(&self) -> &Grid1D {
        &self.grid1
    }

    pub fn grid2(&self) -> &Grid1D {
        &self.grid2
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Pointwise two-particle Hamilton-Jacobi residual
/// `dS/dt + (d1 S)^2 / 2m1 + (d2 S)^2 / 2m2`.
pub fn hj_residual_n(
    s: &RealField2,
    ds_dt: &RealField2,
    masses: (f64, f64),
) -> Result<RealField2> {
    if s.grid1 != ds_dt.grid1 || s.grid2 != ds_dt.grid2 {
        return Err(QprobError::DimensionMismatch(
            "action and its time derivative live on different grids".into(),
        ));
    }
    let n1 = s.grid1.n_points();
    let n2 = s.grid2.n_points();
    let d2 = real_axis_derivative(&s.values, s.grid2, n2);
    let d1_flipped = real_axis_derivative(&transposed_real(&s.values, n1, n2), s.grid1, n1);
    let d1 = transposed_real(&d1_flipped, n2, n1);
    let values = (0..n1 * n2)
        .map(|idx| {
            ds_dt.values[idx]
                + d1[idx] * d1[idx] / (2.0 * masses.0)
                + d2[idx] * d2[idx] / (2.0 * masses.1)
        })
        .collect();
    RealField2::new(s.grid1, s.grid2, values)
}

fn transposed_real(values: &[f64], n1: usize, n2: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 0..n1 {
        for j in 0..n2 {
            out[j * n1 + i] = values[i * n2 + j];
        }
    }
    out
}

fn real_axis_derivative(values: &[f64], grid: Grid1D, row_len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for row in values.chunks(row_len) {
        let field = RealField::new(grid, row.to_vec()).expect("rows of a finite field are finite");
        out.extend_from_slice(derivative_real(&field).values());
    }
    out
}

/// Product of two on-shell plane waves and its time derivative: the
/// two-particle free-wave fixture behind [`relativistic_invariant2`].
pub fn free_wave_pair(
    grid1: Grid1D,
    grid2: Grid1D,
    units: &UnitSystem,
    masses: (f64, f64),
    modes: (i64, i64),
) -> Result<(Amplitude2, Amplitude2)> {
    let state1 =
        crate::dynamics::kg_plane_wave(grid1, &UnitSystem { m0: masses.0, ..*units }, modes.0)?;
    let state2 =
        crate::dynamics::kg_plane_wave(grid2, &UnitSystem { m0: masses.1, ..*units }, modes.1)?;
    let psi = Amplitude2::product(&state1.psi, &state2.psi, masses)?;
    let mut dpsi = Amplitude2::product(&state1.dpsi_dt, &state2.psi, masses)?;
    let cross = Amplitude2::product(&state1.psi, &state2.dpsi_dt, masses)?;
    for (d, c) in dpsi.values_mut().iter_mut().zip(cross.values()) {
        *d += c;
    }
    Ok((psi, dpsi))
}

/// Two-particle relativistic invariant at a snapshot:
/// `(1/c^2) integral |dpsi/dt|^2 - sum_j integral |d_j psi|^2`, minus the
/// separable cross term `2 w1 w2 / c^2` predicted from the measured
/// per-particle wavenumber content and the rest masses (positive-frequency
/// branch). For products of on-shell plane waves this equals
/// `(m1^2 + m2^2) c^2 / hbar^2` times the squared norm.
pub fn relativistic_invariant2(
    psi2: &Amplitude2,
    dpsi2_dt: &Amplitude2,
    units: &UnitSystem,
) -> Result<f64> {
    units.validate()?;
    if psi2.grid1 != dpsi2_dt.grid1 || psi2.grid2 != dpsi2_dt.grid2 {
        return Err(QprobError::DimensionMismatch(
            "state and time derivative live on different grids".into(),
        ));
    }
    let norm = psi2.norm_squared();
    if norm < 1e-300 {
        return Err(QprobError::DegenerateZero { norm: norm.sqrt() });
    }
    let c = units.c;
    let time_part = dpsi2_dt.norm_squared() / (c * c);
    let grad2 = gradient_norm_squared(&psi2.values, psi2.grid1, psi2.grid2, 2);
    let grad1 = gradient_norm_squared(&psi2.values, psi2.grid1, psi2.grid2, 1);

    let rest = |m: f64| m * c * c / units.hbar;
    let omega1 = (c * c * grad1 / norm + rest(psi2.masses.0).powi(2)).sqrt();
    let omega2 = (c * c * grad2 / norm + rest(psi2.masses.1).powi(2)).sqrt();
    Ok(time_part - grad1 - grad2 - 2.0 * omega1 * omega2 * norm / (c * c))
}

fn gradient_norm_squared(values: &[Complex64], grid1: Grid1D, grid2: Grid1D, axis: u8) -> f64 {
    let n1 = grid1.n_points();
    let n2 = grid2.n_points();
    let (work, row_grid, outer_weights, row_len) = if axis == 2 {
        (values.to_vec(), grid2, grid1.quadrature_weights(), n2)
    } else {
        (transposed(values, n1, n2), grid1, grid2.quadrature_weights(), n1)
    };
    let row_weights = row_grid.quadrature_weights();
    work.chunks(row_len)
        .zip(&outer_weights)
        .map(|(row, wo)| {
            let amp =
                Amplitude::new(row_grid, row.to_vec()).expect("rows of a finite field are finite");
            let d = derivative(&amp);
            wo * d
                .values()
                .iter()
                .zip(&row_weights)
                .map(|(v, wr)| wr * v.norm_sqr())
                .sum::<f64>()
        })
        .sum()
}

/// Best rank-one fit residual of the weighted amplitude matrix:
/// `1 - sigma_1^2 / |psi|^2`, with the leading singular value found by power
/// iteration. Zero for product states; bounded away from zero for entangled
/// ones, which is the nonlocality witness.
pub fn nonlocality_witness(psi2: &Amplitude2) -> Result<f64> {
    let n1 = psi2.grid1.n_points();
    let n2 = psi2.grid2.n_points();
    let w1 = psi2.grid1.quadrature_weights();
    let w2 = psi2.grid2.quadrature_weights();
    let mut weighted = vec![Complex64::default(); n1 * n2];
    for i in 0..n1 {
        for j in 0..n2 {
            weighted[i * n2 + j] = psi2.values[i * n2 + j] * (w1[i] * w2[j]).sqrt();
        }
    }
    let frobenius: f64 = weighted.iter().map(|v| v.norm_sqr()).sum();
    if frobenius < 1e-300 {
        return Err(QprobError::DegenerateZero { norm: frobenius.sqrt() });
    }

    let column_norm = |j: usize| -> f64 {
        (0..n1).map(|i| weighted[i * n2 + j].norm_sqr()).sum::<f64>()
    };
    let start = (0..n2).max_by(|a, b| column_norm(*a).total_cmp(&column_norm(*b))).unwrap();
    let mut v: Vec<Complex64> = vec![Complex64::default(); n2];
    v[start] = Complex64::new(1.0, 0.0);

    let mut sigma_sq = 0.0;
    for _ in 0..500 {
        let mut u = vec![Complex64::default(); n1];
        for i in 0..n1 {
            for j in 0..n2 {
                u[i] += weighted[i * n2 + j] * v[j];
            }
        }
        let mut next = vec![Complex64::default(); n2];
        for i in 0..n1 {
            for j in 0..n2 {
                next[j] += weighted[i * n2 + j].conj() * u[i];
            }
        }
        let scale: f64 = next.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if scale == 0.0 {
            break;
        }
        for x in &mut next {
            *x /= scale;
        }
        let estimate: f64 = u.iter().map(|x| x.norm_sqr()).sum();
        v = next;
        if (estimate - sigma_sq).abs() <= 1e-14 * estimate.max(1e-300) {
            sigma_sq = estimate;
            break;
        }
        sigma_sq = estimate;
    }
    Ok((1.0 - sigma_sq / frobenius).max(0.0))
}
