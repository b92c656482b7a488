//! Banded complex linear systems for the implicit half of Crank-Nicolson.
//!
//! Periodic boundaries add a handful of entries in the matrix corners; those
//! are carried as a low-rank correction and folded back in with the Woodbury
//! identity, so one banded LU with partial pivoting covers both boundary
//! kinds. Bandwidths here are tiny (tridiagonal up to heptadiagonal), which
//! keeps factor and solve linear in the grid size.

use num_complex::Complex64;

use crate::error::{QprobError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Sparse assembly buffer for an `n x n` matrix with `kl` sub- and `ku`
/// super-diagonals. Entries outside the band (periodic corners) are kept
/// separately for the Woodbury correction.
#[derive(Debug, Clone)]
pub struct BandSystem {
    n: usize,
    kl: usize,
    ku: usize,
    /// Column-major band storage with `kl` extra rows for pivoting fill.
    band: Vec<Complex64>,
    stride: usize,
    wrap: Vec<(usize, usize, Complex64)>,
}

impl BandSystem {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let stride = 2 * kl + ku + 1;
        Self { n, kl, ku, band: vec![ZERO; stride * n], stride, wrap: Vec::new() }
    }

    fn band_index(&self, i: usize, j: usize) -> Option<usize> {
        let d = i as isize - j as isize;
        if d > self.kl as isize || d < -(self.ku as isize) {
            return None;
        }
        let row = (d + (self.kl + self.ku) as isize) as usize;
        Some(j * self.stride + row)
    }

    /// Accumulate `v` into entry `(i, j)`. Out-of-band entries are treated as
    /// periodic wrap terms.
    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        debug_assert!(i < self.n && j < self.n);
        if v == ZERO {
            return;
        }
        match self.band_index(i, j) {
            Some(idx) => self.band[idx] += v,
            None => self.wrap.push((i, j, v)),
        }
    }

    /// `y = A x`, including wrap entries.
    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.n);
        let mut y = vec![ZERO; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for i in lo..=hi {
                let idx = self.band_index(i, j).expect("in band by construction");
                let a = self.band[idx];
                if a != ZERO {
                    y[i] += a * x[j];
                }
            }
        }
        for &(i, j, v) in &self.wrap {
            y[i] += v * x[j];
        }
        y
    }

    /// LU-factor the system, folding wrap entries into a rank-`r` Woodbury
    /// correction.
    pub fn factor(self) -> Result<FactoredSystem> {
        let Self { n, kl, ku, mut band, stride, wrap } = self;
        let kw = kl + ku;
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let reach = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = band[Self::idx_static(stride, kw, j, j)].norm_sqr();
            for i in j + 1..=reach {
                let m = band[Self::idx_static(stride, kw, i, j)].norm_sqr();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(QprobError::InvalidConfig(format!(
                    "singular matrix: zero pivot column {j}"
                )));
            }
            ipiv[j] = p;
            // Row swaps widen U to kl+ku upper diagonals, no further.
            let row_hi = (j + kw).min(n - 1);
            if p != j {
                for col in j..=row_hi {
                    let a = Self::idx_static(stride, kw, j, col);
                    let b = Self::idx_static(stride, kw, p, col);
                    band.swap(a, b);
                }
            }
            let piv = band[Self::idx_static(stride, kw, j, j)];
            for i in j + 1..=reach {
                let li = Self::idx_static(stride, kw, i, j);
                let m = band[li] / piv;
                band[li] = m;
                if m != ZERO {
                    for col in j + 1..=row_hi {
                        let u = band[Self::idx_static(stride, kw, j, col)];
                        if u != ZERO {
                            band[Self::idx_static(stride, kw, i, col)] -= m * u;
                        }
                    }
                }
            }
        }
        let lu = BandLu { n, kl, kw, stride, band, ipiv };

        if wrap.is_empty() {
            return Ok(FactoredSystem { lu, woodbury: None });
        }
        // A = B + sum_m v_m e_{p_m} e_{q_m}^T. Solve B Z = U once, then cap
        // the correction with the dense r x r capacitance matrix.
        let r = wrap.len();
        let mut z = vec![ZERO; n * r];
        for (m, &(p, _, v)) in wrap.iter().enumerate() {
            let mut col = vec![ZERO; n];
            col[p] = v;
            lu.solve_in_place(&mut col);
            z[m * n..(m + 1) * n].copy_from_slice(&col);
        }
        let mut cap = vec![ZERO; r * r];
        for (mi, &(_, q, _)) in wrap.iter().enumerate() {
            for mj in 0..r {
                let mut c = if mi == mj { ONE } else { ZERO };
                c += z[mj * n + q];
                cap[mi * r + mj] = c;
            }
        }
        let cap_lu = DenseLu::factor(r, cap)?;
        let q_rows = wrap.iter().map(|&(_, q, _)| q).collect();
        Ok(FactoredSystem { lu, woodbury: Some(Woodbury { z, q_rows, cap_lu, r }) })
    }

    #[inline]
    fn idx_static(stride: usize, kw: usize, i: usize, j: usize) -> usize {
        j * stride + (i + kw - j)
    }
}

#[derive(Debug, Clone)]
struct BandLu {
    n: usize,
    kl: usize,
    kw: usize,
    stride: usize,
    band: Vec<Complex64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    fn solve_in_place(&self, b: &mut [Complex64]) {
        debug_assert_eq!(b.len(), self.n);
        let n = self.n;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != ZERO {
                let reach = (j + self.kl).min(n - 1);
                for i in j + 1..=reach {
                    let l = self.band[BandSystem::idx_static(self.stride, self.kw, i, j)];
                    if l != ZERO {
                        b[i] -= l * bj;
                    }
                }
            }
        }
        for j in (0..n).rev() {
            let piv = self.band[BandSystem::idx_static(self.stride, self.kw, j, j)];
            let xj = b[j] / piv;
            b[j] = xj;
            if xj != ZERO {
                let lo = j.saturating_sub(self.kw);
                for i in lo..j {
                    let u = self.band[BandSystem::idx_static(self.stride, self.kw, i, j)];
                    if u != ZERO {
                        b[i] -= u * xj;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Woodbury {
    /// `B^{-1} U`, column-major `n x r`.
    z: Vec<Complex64>,
    q_rows: Vec<usize>,
    cap_lu: DenseLu,
    r: usize,
}

/// Factored `A = LU` (plus optional Woodbury correction), ready for repeated
/// right-hand sides.
#[derive(Debug, Clone)]
pub struct FactoredSystem {
    lu: BandLu,
    woodbury: Option<Woodbury>,
}

impl FactoredSystem {
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        self.lu.solve_in_place(b);
        if let Some(w) = &self.woodbury {
            let n = self.lu.n;
            let mut rhs: Vec<Complex64> = w.q_rows.iter().map(|&q| b[q]).collect();
            w.cap_lu.solve_in_place(&mut rhs);
            for m in 0..w.r {
                let t = rhs[m];
                if t != ZERO {
                    let zc = &w.z[m * n..(m + 1) * n];
                    for i in 0..n {
                        b[i] -= zc[i] * t;
                    }
                }
            }
        }
    }
}

/// Dense LU with partial pivoting for the small Woodbury capacitance matrix.
#[derive(Debug, Clone)]
struct DenseLu {
    n: usize,
    a: Vec<Complex64>,
    ipiv: Vec<usize>,
}

impl DenseLu {
    fn factor(n: usize, mut a: Vec<Complex64>) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let mut p = j;
            let mut best = a[j * n + j].norm_sqr();
            for i in j + 1..n {
                let m = a[i * n + j].norm_sqr();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(QprobError::InvalidConfig(
                    "singular Woodbury capacitance matrix".into(),
                ));
            }
            ipiv[j] = p;
            if p != j {
                for col in 0..n {
                    a.swap(j * n + col, p * n + col);
                }
            }
            let piv = a[j * n + j];
            for i in j + 1..n {
                let m = a[i * n + j] / piv;
                a[i * n + j] = m;
                if m != ZERO {
                    for col in j + 1..n {
                        let u = a[j * n + col];
                        a[i * n + col] -= m * u;
                    }
                }
            }
        }
        Ok(Self { n, a, ipiv })
    }

    fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            for i in j + 1..n {
                b[i] -= self.a[i * n + j] * bj;
            }
        }
        for j in (0..n).rev() {
            let xj = b[j] / self.a[j * n + j];
            b[j] = xj;
            for i in 0..j {
                b[i] -= self.a[i * n + j] * xj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Naive dense solve, the oracle for every banded case.
    fn dense_solve(n: usize, a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        let mut m = a.to_vec();
        let mut x = b.to_vec();
        for j in 0..n {
            let mut p = j;
            for i in j + 1..n {
                if m[i * n + j].norm() > m[p * n + j].norm() {
                    p = i;
                }
            }
            for col in 0..n {
                m.swap(j * n + col, p * n + col);
            }
            x.swap(j, p);
            let piv = m[j * n + j];
            for i in j + 1..n {
                let f = m[i * n + j] / piv;
                for col in j..n {
                    let u = m[j * n + col];
                    m[i * n + col] -= f * u;
                }
                x[i] = x[i] - f * x[j];
            }
        }
        for j in (0..n).rev() {
            let mut s = x[j];
            for col in j + 1..n {
                s -= m[j * n + col] * x[col];
            }
            x[j] = s / m[j * n + j];
        }
        x
    }

    fn random_complex(rng: &mut ChaCha12Rng) -> Complex64 {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    fn random_system(
        rng: &mut ChaCha12Rng,
        n: usize,
        kl: usize,
        ku: usize,
        periodic_wrap: bool,
    ) -> (BandSystem, Vec<Complex64>) {
        let mut sys = BandSystem::new(n, kl, ku);
        let mut dense = vec![ZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = i as isize - j as isize;
                let in_band = d <= kl as isize && -d <= ku as isize;
                let wraps = periodic_wrap
                    && ((i + kl >= n && j <= (i + kl) - n) || (j + ku >= n && i <= (j + ku) - n));
                if in_band || wraps {
                    let mut v = random_complex(rng);
                    if i == j {
                        // Keep the matrix comfortably nonsingular.
                        v += Complex64::new(4.0, 4.0);
                    }
                    sys.add(i, j, v);
                    dense[i * n + j] += v;
                }
            }
        }
        (sys, dense)
    }

    #[test]
    fn tridiagonal_matches_dense_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.gen_range(8..40);
            let (sys, dense) = random_system(&mut rng, n, 1, 1, false);
            let b: Vec<Complex64> = (0..n).map(|_| random_complex(&mut rng)).collect();
            let want = dense_solve(n, &dense, &b);
            let mut got = b.clone();
            sys.factor().unwrap().solve_in_place(&mut got);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).norm() <= 1e-10, "tridiagonal solve drifted from oracle");
            }
        }
    }

    #[test]
    fn wide_bands_match_dense_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for &(kl, ku) in &[(2usize, 2usize), (5, 5), (3, 1)] {
            for _ in 0..8 {
                let n = rng.gen_range(16..60);
                let (sys, dense) = random_system(&mut rng, n, kl, ku, false);
                let b: Vec<Complex64> = (0..n).map(|_| random_complex(&mut rng)).collect();
                let want = dense_solve(n, &dense, &b);
                let mut got = b.clone();
                sys.factor().unwrap().solve_in_place(&mut got);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).norm() <= 1e-9, "banded solve kl={kl} ku={ku} drifted");
                }
            }
        }
    }

    #[test]
    fn periodic_wrap_entries_are_woodbury_corrected() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for &(kl, ku) in &[(1usize, 1usize), (2, 2), (5, 5)] {
            for _ in 0..8 {
                let n = rng.gen_range(20..50);
                let (sys, dense) = random_system(&mut rng, n, kl, ku, true);
                let b: Vec<Complex64> = (0..n).map(|_| random_complex(&mut rng)).collect();
                let want = dense_solve(n, &dense, &b);
                let mut got = b.clone();
                sys.factor().unwrap().solve_in_place(&mut got);
                for (g, w) in got.iter().zip(&want) {
                    assert!(
                        (g - w).norm() <= 1e-9,
                        "cyclic banded solve kl={kl} ku={ku} drifted from oracle"
                    );
                }
            }
        }
    }

    #[test]
    fn matvec_then_solve_roundtrips() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let (sys, _) = random_system(&mut rng, 64, 2, 2, true);
        let x: Vec<Complex64> = (0..64).map(|_| random_complex(&mut rng)).collect();
        let mut y = sys.matvec(&x);
        sys.clone().factor().unwrap().solve_in_place(&mut y);
        for (g, w) in y.iter().zip(&x) {
            assert!((g - w).norm() <= 1e-11, "solve(matvec(x)) should return x");
        }
    }

    #[test]
    fn singular_systems_are_reported() {
        let sys = BandSystem::new(8, 1, 1);
        assert!(matches!(sys.factor(), Err(QprobError::InvalidConfig(_))));
    }
}
