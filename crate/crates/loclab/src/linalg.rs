//! Symmetric band storage, banded LU with partial pivoting, and the
//! unpivoted LDLT pivot count used for spectrum slicing.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Symmetric matrix in diagonal-major band storage: `bands[k][i] = A[i, i+k]`
/// for `k = 0..=half_bandwidth`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    bands: Vec<Vec<f64>>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bands = (0..=bw).map(|k| vec![0.0; n.saturating_sub(k)]).collect();
        Self { n, bw, bands }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.bw {
            0.0
        } else {
            self.bands[k][lo]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        assert!(k <= self.bw, "entry ({i},{j}) outside bandwidth {}", self.bw);
        self.bands[k][lo] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        assert!(k <= self.bw, "entry ({i},{j}) outside bandwidth {}", self.bw);
        self.bands[k][lo] += v;
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.bands[0][i] * x[i];
        }
        for k in 1..=self.bw {
            for i in 0..self.n.saturating_sub(k) {
                let a = self.bands[k][i];
                if a != 0.0 {
                    out[i] += a * x[i + k];
                    out[i + k] += a * x[i];
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in 0..=self.bw.min(self.n - 1 - i) {
                m[(i, i + k)] = self.bands[k][i];
                m[(i + k, i)] = self.bands[k][i];
            }
        }
        m
    }

    /// Number of LDLT pivots of `A - shift I` below, at, and above zero.
    /// Equals the count of eigenvalues below / near / above `shift`.
    pub fn inertia_below(&self, shift: f64, pivot_tol: f64) -> Inertia {
        ldlt_inertia(self, shift, pivot_tol)
    }

    /// Gershgorin interval containing the whole spectrum.
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            let d = self.bands[0][i];
            let mut radius = 0.0;
            for k in 1..=self.bw {
                if i + k < self.n {
                    radius += self.bands[k][i].abs();
                }
                if i >= k {
                    radius += self.bands[k][i - k].abs();
                }
            }
            lo = lo.min(d - radius);
            hi = hi.max(d + radius);
        }
        (lo, hi)
    }
}

/// Pivot sign counts from the unpivoted LDLT of a shifted matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub below: usize,
    pub tiny: usize,
    pub above: usize,
}

/// Unpivoted banded LDLT of `A - shift I`, counting pivot signs. Pivots of
/// magnitude at most `pivot_tol` are counted in `tiny` and perturbed to
/// `±pivot_tol` so the factorization can continue; the count then brackets
/// the true eigenvalue count within `tiny` either way.
pub fn ldlt_inertia(a: &BandMatrix, shift: f64, pivot_tol: f64) -> Inertia {
    let n = a.n;
    let bw = a.bw;
    // l[k-1][j] holds L[j+k, j]; d[j] the pivots.
    let mut l: Vec<Vec<f64>> = (1..=bw).map(|k| vec![0.0; n.saturating_sub(k)]).collect();
    let mut d = vec![0.0; n];
    let mut inertia = Inertia {
        below: 0,
        tiny: 0,
        above: 0,
    };
    for j in 0..n {
        let start = j.saturating_sub(bw);
        let mut dj = a.bands[0][j] - shift;
        for k in start..j {
            let ljk = l[j - k - 1][k];
            dj -= ljk * ljk * d[k];
        }
        if dj.abs() <= pivot_tol {
            inertia.tiny += 1;
            dj = if dj < 0.0 { -pivot_tol } else { pivot_tol };
        } else if dj < 0.0 {
            inertia.below += 1;
        } else {
            inertia.above += 1;
        }
        d[j] = dj;
        let imax = (j + bw).min(n - 1);
        for i in j + 1..=imax {
            let mut v = a.get(i, j);
            let kstart = i.saturating_sub(bw);
            for k in kstart..j {
                v -= l[i - k - 1][k] * l[j - k - 1][k] * d[k];
            }
            l[i - j - 1][j] = v / dj;
        }
    }
    inertia
}

/// Banded LU factorization of `A - shift I` with partial pivoting, in the
/// classic column-band layout with `kl` extra superdiagonals for fill-in.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    kv: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &BandMatrix, shift: f64) -> Result<Self> {
        let n = a.n;
        let kl = a.bw;
        let ku = a.bw;
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        for j in 0..n {
            let ilo = j.saturating_sub(ku);
            let ihi = (j + kl).min(n - 1);
            for i in ilo..=ihi {
                let mut v = a.get(i, j);
                if i == j {
                    v -= shift;
                }
                ab[j * ldab + (kv + i - j)] = v;
            }
        }
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            // Pivot among rows j..=j+kl of column j.
            let tmax = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut vmax = ab[j * ldab + kv].abs();
            for t in 1..=tmax {
                let v = ab[j * ldab + kv + t].abs();
                if v > vmax {
                    vmax = v;
                    jp = t;
                }
            }
            ipiv[j] = j + jp;
            if vmax == 0.0 {
                return Err(Error::EigenFailure(format!(
                    "exactly singular pivot at column {j}"
                )));
            }
            if jp != 0 {
                let cend = (j + kv).min(n - 1);
                for col in j..=cend {
                    let r1 = col * ldab + kv + j - col;
                    let r2 = r1 + jp;
                    ab.swap(r1, r2);
                }
            }
            let piv = ab[j * ldab + kv];
            for t in 1..=tmax {
                ab[j * ldab + kv + t] /= piv;
            }
            let cend = (j + kv).min(n - 1);
            for col in j + 1..=cend {
                let u = ab[col * ldab + kv + j - col];
                if u != 0.0 {
                    for t in 1..=tmax {
                        ab[col * ldab + kv + j - col + t] -= ab[j * ldab + kv + t] * u;
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            kv,
            ldab,
            ab,
            ipiv,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                x.swap(j, p);
            }
            let tmax = self.kl.min(n - 1 - j);
            let xj = x[j];
            if xj != 0.0 {
                for t in 1..=tmax {
                    x[j + t] -= self.ab[j * self.ldab + self.kv + t] * xj;
                }
            }
        }
        for i in (0..n).rev() {
            let cend = (i + self.kv).min(n - 1);
            let mut v = x[i];
            for col in i + 1..=cend {
                v -= self.ab[col * self.ldab + self.kv + i - col] * x[col];
            }
            x[i] = v / self.ab[i * self.ldab + self.kv];
        }
    }
}

/// `f(A)` for symmetric `A` through its eigendecomposition.
pub fn sym_matrix_function(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let se = a
        .clone()
        .try_symmetric_eigen(1e-14, 10_000)
        .ok_or_else(|| Error::EigenFailure("symmetric eigensolver did not converge".into()))?;
    let mut scaled = se.eigenvectors.clone();
    for j in 0..n {
        let fj = f(se.eigenvalues[j]);
        scaled.column_mut(j).scale_mut(fj);
    }
    Ok(&scaled * se.eigenvectors.transpose())
}

pub fn dvector_from(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_band(n: usize, bw: usize, seed: u64) -> BandMatrix {
        let mut rng = crate::rng::stream_rng(seed, 0, crate::rng::Stream::Custom(7));
        let mut a = BandMatrix::zeros(n, bw);
        for i in 0..n {
            for k in 0..=bw.min(n - 1 - i) {
                a.set(i, i + k, rng.random_range(-1.0..1.0));
            }
            a.add(i, i, 2.0 * bw as f64 * if i % 3 == 0 { 1.0 } else { -1.0 });
        }
        a
    }

    #[test]
    fn matvec_matches_dense() {
        for &(n, bw) in &[(1usize, 0usize), (5, 1), (12, 3), (30, 5)] {
            let a = random_band(n, bw, 42);
            let dense = a.to_dense();
            let mut rng = crate::rng::stream_rng(9, 0, crate::rng::Stream::Custom(1));
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; n];
            a.matvec(&x, &mut out);
            let expect = &dense * dvector_from(&x);
            for i in 0..n {
                assert_relative_eq!(out[i], expect[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn band_lu_solves_against_dense_lu() {
        for &(n, bw) in &[(6usize, 1usize), (25, 2), (40, 4), (64, 7)] {
            for seed in 0..3u64 {
                let a = random_band(n, bw, seed);
                let dense = a.to_dense();
                let mut rng = crate::rng::stream_rng(seed, 1, crate::rng::Stream::Custom(2));
                let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                for &shift in &[0.0, 0.37, -1.2] {
                    let lu = BandLu::factor(&a, shift).unwrap();
                    let x = lu.solve(&b);
                    let shifted = &dense - DMatrix::identity(n, n) * shift;
                    let expect = shifted
                        .lu()
                        .solve(&dvector_from(&b))
                        .expect("dense solve");
                    for i in 0..n {
                        assert_relative_eq!(x[i], expect[i], epsilon = 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn band_lu_pivots_through_zero_diagonal() {
        // [[0, 1], [1, 0]] requires a row swap.
        let mut a = BandMatrix::zeros(2, 1);
        a.set(0, 1, 1.0);
        let lu = BandLu::factor(&a, 0.0).unwrap();
        let x = lu.solve(&[2.0, 3.0]);
        assert_relative_eq!(x[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn band_lu_reports_singularity() {
        let a = BandMatrix::zeros(3, 1);
        assert!(BandLu::factor(&a, 0.0).is_err());
    }

    #[test]
    fn inertia_counts_match_dense_eigenvalues() {
        for &(n, bw) in &[(20usize, 1usize), (40, 3), (60, 5)] {
            for seed in 0..3u64 {
                let a = random_band(n, bw, 100 + seed);
                let dense = a.to_dense();
                let mut eigs: Vec<f64> = dense
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .copied()
                    .collect();
                eigs.sort_by(f64::total_cmp);
                // Shifts at gap midpoints: counts are unambiguous there.
                for cut in [n / 4, n / 2, 3 * n / 4] {
                    let shift = (eigs[cut - 1] + eigs[cut]) / 2.0;
                    let inertia = a.inertia_below(shift, 1e-12);
                    assert_eq!(inertia.tiny, 0);
                    assert_eq!(inertia.below, cut, "n={n} bw={bw} seed={seed}");
                    assert_eq!(inertia.above, n - cut);
                }
            }
        }
    }

    #[test]
    fn inertia_is_monotone_in_shift() {
        let a = random_band(50, 4, 7);
        let mut last = 0;
        for i in 0..=40 {
            let shift = -10.0 + i as f64 * 0.5;
            let c = a.inertia_below(shift, 1e-12);
            let lower = c.below;
            assert!(lower + c.tiny >= last, "count dropped at shift {shift}");
            last = lower;
        }
    }

    #[test]
    fn inertia_flags_near_singular_shift() {
        let mut a = BandMatrix::zeros(3, 0);
        a.set(0, 0, 1.0);
        a.set(1, 1, 2.0);
        a.set(2, 2, 3.0);
        let inertia = a.inertia_below(2.0 + 1e-15, 1e-12);
        assert_eq!(inertia.tiny, 1);
        assert_eq!(inertia.below, 1);
        assert_eq!(inertia.above, 1);
    }

    #[test]
    fn matrix_function_inverse_sqrt() {
        let a = random_band(16, 2, 5).to_dense();
        let spd = &a * &a.transpose() + DMatrix::identity(16, 16);
        let inv_sqrt = sym_matrix_function(&spd, |l| 1.0 / l.sqrt()).unwrap();
        let should_be_identity = &inv_sqrt * &spd * &inv_sqrt;
        for i in 0..16 {
            for j in 0..16 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((should_be_identity[(i, j)] - expect).abs() < 1e-10);
            }
        }
    }
}
