//! Windowed eigensolves with inertia certificates, resolvent probes with
//! localized block norms, and unitary time evolution.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{dist, Cube};
use crate::linalg::{BandLu, BandMatrix};
use crate::operator::{DiscreteHamiltonian, DEFAULT_DENSE_CAP};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Eigenpairs in a window plus the inertia certificate that none were
/// missed. Eigenvectors are orthonormal in the discrete L² inner product.
#[derive(Debug, Clone)]
pub struct SpectralWindowResult {
    pub window: (f64, f64),
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// Eigenvalue count implied by LDLT inertia at the window edges.
    pub certified_count: usize,
}

impl SpectralWindowResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// CSV rows `index,eigenvalue,residual`.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "index,eigenvalue,residual")?;
        for (i, (l, r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
            writeln!(w, "{i},{l},{r}")?;
        }
        Ok(())
    }
}

/// Move `cut` downward until the LDLT factorization at it has no tiny
/// pivots, so the eigenvalue count below the returned cut is reliable.
fn settle_cut(band: &BandMatrix, cut: f64, scale: f64) -> (f64, usize) {
    let tol = 1e-12 * scale;
    let mut s = cut;
    for _ in 0..60 {
        let inertia = band.inertia_below(s, tol);
        if inertia.tiny == 0 {
            return (s, inertia.below);
        }
        s -= 7e-12 * scale;
    }
    (s, band.inertia_below(s, tol).below)
}

fn count_below(band: &BandMatrix, cut: f64, scale: f64) -> usize {
    settle_cut(band, cut, scale).1
}

pub fn eigen_window(
    ham: &DiscreteHamiltonian,
    window: (f64, f64),
) -> Result<SpectralWindowResult> {
    eigen_window_with_cap(ham, window, DEFAULT_DENSE_CAP)
}

/// `eigen_window` with an explicit dense cap so the sliced path can be
/// exercised on instances small enough to audit densely.
pub fn eigen_window_with_cap(
    ham: &DiscreteHamiltonian,
    window: (f64, f64),
    dense_cap: usize,
) -> Result<SpectralWindowResult> {
    let (lo, hi) = window;
    if !(lo <= hi) {
        return Err(Error::InvalidInput(format!("window [{lo}, {hi}] is empty")));
    }
    let band = ham.band();
    let (glo, ghi) = band.gershgorin_bounds();
    let scale = glo.abs().max(ghi.abs()).max(1.0);
    // Pad so eigenvalues equal to an endpoint count as inside, then settle
    // both cuts onto eigenvalue-free shifts.
    let edge = 1e-12 * scale;
    let (lo_s, below_lo) = settle_cut(&band, lo - edge, scale);
    let (hi_s, below_hi) = settle_cut(&band, hi + edge, scale);

    let empty = hi_s <= lo_s;
    let certified = if empty { 0 } else { below_hi - below_lo };

    let (mut eigenvalues, mut eigenvectors) = if empty {
        (Vec::new(), Vec::new())
    } else if ham.len() <= dense_cap {
        dense_window(ham, lo_s, hi_s)?
    } else {
        sliced_window(ham, &band, lo_s, hi_s, below_lo, scale, certified)?
    };

    // Sort ascending, then rescale to discrete-L² orthonormality.
    let grid = ham.grid();
    let hd_half = grid.h().powi(grid.dim() as i32).sqrt();
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));
    eigenvalues = order.iter().map(|&i| eigenvalues[i]).collect();
    eigenvectors = order
        .iter()
        .map(|&i| std::mem::take(&mut eigenvectors[i]))
        .collect();
    for v in &mut eigenvectors {
        let norm = crate::linalg::norm2(v);
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        let f = 1.0 / (norm * hd_half);
        for x in v.iter_mut() {
            *x *= f;
        }
    }

    let mut residuals = Vec::with_capacity(eigenvalues.len());
    let mut hv = vec![0.0; ham.len()];
    for (l, v) in eigenvalues.iter().zip(&eigenvectors) {
        ham.apply(v, &mut hv);
        for (slot, x) in hv.iter_mut().zip(v) {
            *slot -= l * x;
        }
        residuals.push(grid.l2_norm(&hv));
    }

    let found = eigenvalues.len();
    if found != certified {
        return Err(Error::EigenFailure(format!(
            "window [{lo}, {hi}]: found {found} eigenpairs but inertia certifies {certified}"
        )));
    }

    Ok(SpectralWindowResult {
        window,
        eigenvalues,
        eigenvectors,
        residuals,
        certified_count: certified,
    })
}

fn dense_window(
    ham: &DiscreteHamiltonian,
    lo: f64,
    hi: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let dense = ham.dense()?;
    let se = dense
        .try_symmetric_eigen(1e-14, 100_000)
        .ok_or_else(|| Error::EigenFailure("dense eigensolver did not converge".into()))?;
    let mut vals = Vec::new();
    let mut vecs = Vec::new();
    for j in 0..se.eigenvalues.len() {
        let l = se.eigenvalues[j];
        if l >= lo && l <= hi {
            vals.push(l);
            vecs.push(se.eigenvectors.column(j).iter().copied().collect());
        }
    }
    Ok((vals, vecs))
}

/// Spectrum slicing: bisect on inertia counts until an interval holds a
/// small cluster, then pull the cluster out by shift-inverted subspace
/// iteration with Rayleigh-Ritz extraction. Intervals whose extraction
/// converges too slowly are split further; every point of an interval is
/// closer to its midpoint than any spectrum outside it, so the wanted
/// eigenvectors always dominate once the interval is narrow enough.
#[allow(clippy::too_many_arguments)]
fn sliced_window(
    ham: &DiscreteHamiltonian,
    band: &BandMatrix,
    lo: f64,
    hi: f64,
    below_lo: usize,
    scale: f64,
    expected: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut vals: Vec<f64> = Vec::with_capacity(expected);
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(expected);
    if expected == 0 {
        return Ok((vals, vecs));
    }
    let iso_width = 1e-9 * scale;
    let mut stack = vec![(lo, hi, below_lo, expected)];
    while let Some((a, b, below_a, count)) = stack.pop() {
        if count == 0 {
            continue;
        }
        if count <= 2 && extract_cluster(ham, band, a, b, scale, count, &mut vals, &mut vecs)? {
            continue;
        }
        if b - a <= iso_width {
            return Err(Error::EigenFailure(format!(
                "cluster of {count} eigenvalues in [{a}, {b}] did not converge \
                 ({} of {expected} extracted so far)",
                vals.len()
            )));
        }
        let (mid, below_mid) = settle_cut(band, 0.5 * (a + b), scale);
        if mid <= a || mid >= b || below_mid < below_a || below_mid - below_a > count {
            return Err(Error::EigenFailure(format!(
                "inconsistent inertia counts while splitting [{a}, {b}]"
            )));
        }
        let left = below_mid - below_a;
        stack.push((a, mid, below_a, left));
        stack.push((mid, b, below_mid, count - left));
    }
    Ok((vals, vecs))
}

/// Project `q[idx]` against `fixed` and earlier columns, twice for
/// stability, renormalizing and reseeding rank-deficient columns.
fn orthonormalize(q: &mut [Vec<f64>], fixed: &[Vec<f64>], rng: &mut ChaCha8Rng) {
    for idx in 0..q.len() {
        loop {
            for _ in 0..2 {
                let (head, tail) = q.split_at_mut(idx);
                let col = &mut tail[0];
                for other in head.iter().chain(fixed) {
                    let c = crate::linalg::dot(col, other);
                    for (x, p) in col.iter_mut().zip(other) {
                        *x -= c * p;
                    }
                }
            }
            let norm = crate::linalg::norm2(&q[idx]);
            if norm > 1e-150 {
                for x in q[idx].iter_mut() {
                    *x /= norm;
                }
                break;
            }
            for x in q[idx].iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
    }
}

/// Returns true when all `count` eigenpairs certified inside `[a, b]` were
/// extracted; false asks the caller to split the interval and retry.
#[allow(clippy::too_many_arguments)]
fn extract_cluster(
    ham: &DiscreteHamiltonian,
    band: &BandMatrix,
    a: f64,
    b: f64,
    scale: f64,
    count: usize,
    vals: &mut Vec<f64>,
    vecs: &mut Vec<Vec<f64>>,
) -> Result<bool> {
    let n = ham.len();
    let nb = (count + 2).min(n - vecs.len()).max(count);
    let mut shift = 0.5 * (a + b);
    let lu = loop {
        match BandLu::factor(band, shift) {
            Ok(lu) => break lu,
            Err(_) => shift += 3e-12 * scale,
        }
    };
    let mut rng = stream_rng(0xE16E, vecs.len() as u64, Stream::Custom(nb as u64));
    let mut q: Vec<Vec<f64>> = (0..nb)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let accept = 1e-13 * scale * (n as f64).sqrt().max(1.0);
    let mut hq: Vec<Vec<f64>> = vec![vec![0.0; n]; nb];
    for _ in 0..300 {
        for v in &mut q {
            lu.solve_in_place(v);
        }
        orthonormalize(&mut q, vecs, &mut rng);
        for (v, out) in q.iter().zip(hq.iter_mut()) {
            ham.apply(v, out);
        }
        let mut proj = DMatrix::zeros(nb, nb);
        for i in 0..nb {
            for j in i..nb {
                let x = crate::linalg::dot(&q[i], &hq[j]);
                proj[(i, j)] = x;
                proj[(j, i)] = x;
            }
        }
        let se = proj.symmetric_eigen();
        let inside: Vec<usize> = (0..nb)
            .filter(|&j| se.eigenvalues[j] >= a && se.eigenvalues[j] <= b)
            .collect();
        if inside.len() != count {
            continue;
        }
        // Ritz vectors and residuals for the in-window values only.
        let mut ritz = Vec::with_capacity(count);
        let mut converged = true;
        for &j in &inside {
            let theta = se.eigenvalues[j];
            let mut y = vec![0.0; n];
            let mut hy = vec![0.0; n];
            for i in 0..nb {
                let u = se.eigenvectors[(i, j)];
                for t in 0..n {
                    y[t] += u * q[i][t];
                    hy[t] += u * hq[i][t];
                }
            }
            let mut res = 0.0;
            for t in 0..n {
                let r = hy[t] - theta * y[t];
                res += r * r;
            }
            if res.sqrt() > accept {
                converged = false;
                break;
            }
            ritz.push((theta, y));
        }
        if converged {
            for (theta, y) in ritz {
                vals.push(theta);
                vecs.push(y);
            }
            return Ok(true);
        }
    }
    Ok(false)
}

/// Distance from `e` to the spectrum, by full diagonalization under the
/// cap and inertia bisection above it.
pub fn spectral_distance(ham: &DiscreteHamiltonian, e: f64) -> Result<f64> {
    if ham.len() <= DEFAULT_DENSE_CAP {
        let se = ham
            .dense()?
            .try_symmetric_eigen(1e-14, 100_000)
            .ok_or_else(|| Error::EigenFailure("dense eigensolver did not converge".into()))?;
        return Ok(se
            .eigenvalues
            .iter()
            .map(|l| (l - e).abs())
            .fold(f64::INFINITY, f64::min));
    }
    let band = ham.band();
    let (glo, ghi) = band.gershgorin_bounds();
    let scale = glo.abs().max(ghi.abs()).max(1.0);
    let n = ham.len();
    let k = count_below(&band, e, scale);
    let mut result = f64::INFINITY;
    if k > 0 {
        // Largest eigenvalue at or below e.
        let mut a = glo - 1.0;
        let mut b = e;
        for _ in 0..200 {
            if b - a <= 1e-13 * scale {
                break;
            }
            let mid = 0.5 * (a + b);
            if count_below(&band, mid, scale) >= k {
                b = mid;
            } else {
                a = mid;
            }
        }
        result = result.min(e - 0.5 * (a + b));
    }
    if k < n {
        // Smallest eigenvalue above e.
        let mut a = e;
        let mut b = ghi + 1.0;
        for _ in 0..200 {
            if b - a <= 1e-13 * scale {
                break;
            }
            let mid = 0.5 * (a + b);
            if count_below(&band, mid, scale) > k {
                b = mid;
            } else {
                a = mid;
            }
        }
        result = result.min(0.5 * (a + b) - e);
    }
    Ok(result.max(0.0))
}

/// One localized resolvent norm `‖χ_x R(E) χ_y‖`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbePairNorm {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub distance: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolventProbe {
    pub energy: f64,
    /// `1 / dist(E, spectrum)`.
    pub norm: f64,
    pub spectral_dist: f64,
    pub localized: Vec<ProbePairNorm>,
}

impl ResolventProbe {
    /// CSV rows `x,y,distance,norm` (coordinates semicolon-joined).
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "x,y,distance,norm")?;
        for p in &self.localized {
            let xs: Vec<String> = p.x.iter().map(|v| v.to_string()).collect();
            let ys: Vec<String> = p.y.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{},{}", xs.join(";"), ys.join(";"), p.distance, p.norm)?;
        }
        Ok(())
    }
}

/// Nodes inside the side-`side` cube centered at `center`.
fn cube_nodes(ham: &DiscreteHamiltonian, center: &[f64], side: f64) -> Result<Vec<usize>> {
    let grid = ham.grid();
    let cube = Cube::new(grid.dim(), center, side)?;
    let mut nodes = Vec::new();
    for flat in 0..ham.len() {
        let x = grid.node(flat);
        if cube.contains(&x[..grid.dim()]) {
            nodes.push(flat);
        }
    }
    Ok(nodes)
}

pub fn resolvent_probe(
    ham: &DiscreteHamiltonian,
    e: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<ResolventProbe> {
    resolvent_probe_with_side(ham, e, pairs, 1.0)
}

/// `resolvent_probe` with a configurable indicator-cube side (the default
/// χ is the side-1 cube; larger sides serve monotonicity checks).
pub fn resolvent_probe_with_side(
    ham: &DiscreteHamiltonian,
    e: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
    side: f64,
) -> Result<ResolventProbe> {
    let sdist = spectral_distance(ham, e)?;
    if sdist <= 1e-12 {
        return Err(Error::Resonance {
            energy: e,
            dist: sdist,
        });
    }
    let band = ham.band();
    let lu = BandLu::factor(&band, e).map_err(|_| Error::Resonance {
        energy: e,
        dist: sdist,
    })?;
    let dim = ham.grid().dim();
    let n = ham.len();

    // Solve once per distinct y-column set.
    let mut localized = Vec::with_capacity(pairs.len());
    let mut cache: Vec<(Vec<usize>, Vec<Vec<f64>>)> = Vec::new();
    for (x, y) in pairs {
        let x_nodes = cube_nodes(ham, x, side)?;
        let y_nodes = cube_nodes(ham, y, side)?;
        let norm = if x_nodes.is_empty() || y_nodes.is_empty() {
            0.0
        } else {
            if !cache.iter().any(|(k, _)| *k == y_nodes) {
                let mut cols = Vec::with_capacity(y_nodes.len());
                for &j in &y_nodes {
                    let mut rhs = vec![0.0; n];
                    rhs[j] = 1.0;
                    lu.solve_in_place(&mut rhs);
                    cols.push(rhs);
                }
                cache.push((y_nodes.clone(), cols));
            }
            let columns = &cache.iter().find(|(k, _)| *k == y_nodes).unwrap().1;
            let mut block = DMatrix::zeros(x_nodes.len(), y_nodes.len());
            for (cj, col) in columns.iter().enumerate() {
                for (ri, &node) in x_nodes.iter().enumerate() {
                    block[(ri, cj)] = col[node];
                }
            }
            largest_singular_value(&block)
        };
        localized.push(ProbePairNorm {
            x: x.clone(),
            y: y.clone(),
            distance: dist(x, y, dim),
            norm,
        });
    }

    Ok(ResolventProbe {
        energy: e,
        norm: 1.0 / sdist,
        spectral_dist: sdist,
        localized,
    })
}

fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Apply the resolvent `(H - E)⁻¹` to one vector.
pub fn resolvent_apply(ham: &DiscreteHamiltonian, e: f64, b: &[f64]) -> Result<Vec<f64>> {
    let sdist = spectral_distance(ham, e)?;
    if sdist <= 1e-12 {
        return Err(Error::Resonance {
            energy: e,
            dist: sdist,
        });
    }
    let lu = BandLu::factor(&ham.band(), e).map_err(|_| Error::Resonance {
        energy: e,
        dist: sdist,
    })?;
    Ok(lu.solve(b))
}

pub const DEFAULT_PROPAGATOR_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_DEGREE: usize = 500_000;

/// `e^{-itH} ψ₀` for each requested time. Dense spectral path under the
/// cap; Chebyshev expansion with Bessel coefficients above it.
pub fn evolve(
    ham: &DiscreteHamiltonian,
    psi0: &[f64],
    times: &[f64],
) -> Result<Vec<Vec<Complex64>>> {
    evolve_with_cap(ham, psi0, times, DEFAULT_DENSE_CAP)
}

pub fn evolve_with_cap(
    ham: &DiscreteHamiltonian,
    psi0: &[f64],
    times: &[f64],
    dense_cap: usize,
) -> Result<Vec<Vec<Complex64>>> {
    let n = ham.len();
    if psi0.len() != n {
        return Err(Error::InvalidInput(
            "state length does not match operator".into(),
        ));
    }
    let norm0 = crate::linalg::norm2(psi0);
    if norm0 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let states = if n <= dense_cap {
        evolve_dense(ham, psi0, times)?
    } else {
        times
            .iter()
            .map(|&t| evolve_chebyshev(ham, psi0, t))
            .collect::<Result<Vec<_>>>()?
    };
    for (t, psi) in times.iter().zip(&states) {
        let nt = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (nt - norm0).abs() > 1e-8 * norm0 {
            return Err(Error::EigenFailure(format!(
                "evolution at t = {t} drifted the norm by {:.3e}",
                (nt - norm0).abs() / norm0
            )));
        }
    }
    Ok(states)
}

fn evolve_dense(
    ham: &DiscreteHamiltonian,
    psi0: &[f64],
    times: &[f64],
) -> Result<Vec<Vec<Complex64>>> {
    let se = ham
        .dense()?
        .try_symmetric_eigen(1e-14, 100_000)
        .ok_or_else(|| Error::EigenFailure("dense eigensolver did not converge".into()))?;
    let n = ham.len();
    let alpha = se.eigenvectors.transpose() * crate::linalg::dvector_from(psi0);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t == 0.0 {
            out.push(psi0.iter().map(|&x| Complex64::new(x, 0.0)).collect());
            continue;
        }
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for j in 0..n {
            let phase = -t * se.eigenvalues[j];
            let (s, c) = phase.sin_cos();
            let a = alpha[j];
            let col = se.eigenvectors.column(j);
            for i in 0..n {
                re[i] += c * a * col[i];
                im[i] += s * a * col[i];
            }
        }
        out.push(
            re.iter()
                .zip(&im)
                .map(|(&r, &i)| Complex64::new(r, i))
                .collect(),
        );
    }
    Ok(out)
}

fn evolve_chebyshev(ham: &DiscreteHamiltonian, psi0: &[f64], t: f64) -> Result<Vec<Complex64>> {
    let n = ham.len();
    if t == 0.0 {
        return Ok(psi0.iter().map(|&x| Complex64::new(x, 0.0)).collect());
    }
    let band = ham.band();
    let (glo, ghi) = band.gershgorin_bounds();
    let center = 0.5 * (glo + ghi);
    let radius = (0.5 * (ghi - glo)).max(1e-300) * (1.0 + 1e-12);
    let z = t.abs() * radius;

    let degree_guess = (z + 12.0 * z.cbrt() + 40.0).ceil() as usize;
    if degree_guess > DEFAULT_MAX_DEGREE {
        return Err(Error::PropagatorDegreeExceeded {
            tol: DEFAULT_PROPAGATOR_TOL,
            max_degree: DEFAULT_MAX_DEGREE,
        });
    }
    let bessel = bessel_j_sequence(z, degree_guess);
    let mut degree = degree_guess;
    while degree > 1 && bessel[degree].abs() < DEFAULT_PROPAGATOR_TOL / 1e3 {
        degree -= 1;
    }

    // Chebyshev recurrence on the scaled operator; the sign of t rides on
    // the coefficients, not the recurrence.
    let tsign = t.signum();
    let apply_scaled = |v: &[f64], out: &mut [f64]| {
        ham.apply(v, out);
        for (o, x) in out.iter_mut().zip(v) {
            *o = (*o - center * x) / radius;
        }
    };
    let mut t_prev = psi0.to_vec();
    let mut t_cur = vec![0.0; n];
    apply_scaled(&t_prev, &mut t_cur);
    let mut acc_re = vec![0.0; n];
    let mut acc_im = vec![0.0; n];
    for (i, &x) in t_prev.iter().enumerate() {
        acc_re[i] = bessel[0] * x;
    }
    let mut scratch = vec![0.0; n];
    for k in 1..=degree {
        let coeff = 2.0 * bessel[k];
        // (−i·sign)^k components.
        let (cr, ci) = match k % 4 {
            0 => (1.0, 0.0),
            1 => (0.0, -tsign),
            2 => (-1.0, 0.0),
            _ => (0.0, tsign),
        };
        if cr != 0.0 {
            for i in 0..n {
                acc_re[i] += coeff * cr * t_cur[i];
            }
        } else {
            for i in 0..n {
                acc_im[i] += coeff * ci * t_cur[i];
            }
        }
        if k < degree {
            apply_scaled(&t_cur, &mut scratch);
            for i in 0..n {
                let next = 2.0 * scratch[i] - t_prev[i];
                t_prev[i] = t_cur[i];
                t_cur[i] = next;
            }
        }
    }
    // Global phase e^{−i t c}.
    let (ps, pc) = (-t * center).sin_cos();
    Ok((0..n)
        .map(|i| {
            let re = acc_re[i];
            let im = acc_im[i];
            Complex64::new(re * pc - im * ps, re * ps + im * pc)
        })
        .collect())
}

/// `J_k(z)` for `k = 0..=k_max`, by Miller's downward recurrence with the
/// `J₀ + 2ΣJ_{2k} = 1` normalization. Requires `z ≥ 0`.
pub fn bessel_j_sequence(z: f64, k_max: usize) -> Vec<f64> {
    assert!(z >= 0.0, "downward recurrence implemented for z >= 0");
    let mut out = vec![0.0; k_max + 1];
    if z == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = {
        let base = k_max.max(z as usize) + 1;
        let m = base + (15.0 * (base as f64).sqrt()) as usize + 30;
        m + (m & 1)
    };
    let mut f_next = 0.0f64;
    let mut f_cur = 1e-300f64;
    let mut even_sum = if start % 2 == 0 { f_cur } else { 0.0 };
    if start <= k_max {
        out[start] = f_cur;
    }
    let mut k = start;
    while k > 0 {
        let f_prev = (2.0 * k as f64 / z) * f_cur - f_next;
        f_next = f_cur;
        f_cur = f_prev;
        k -= 1;
        if k <= k_max {
            out[k] = f_cur;
        }
        if k % 2 == 0 && k > 0 {
            even_sum += f_cur;
        }
        if f_cur.abs() > 1e250 {
            let s = 1e-250;
            f_cur *= s;
            f_next *= s;
            even_sum *= s;
            for slot in out.iter_mut() {
                *slot *= s;
            }
        }
    }
    let norm = f_cur + 2.0 * even_sum;
    for slot in out.iter_mut() {
        *slot /= norm;
    }
    out
}
