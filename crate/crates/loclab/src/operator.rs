//! Dirichlet finite-difference discretization of −Δ + V on a box, and the
//! comparison operator Γ(E) = (H⁽²⁾+1)^{-1/2} (1 + E − V⁽¹⁾) (H⁽²⁾+1)^{-1/2}
//! together with its diagnostic report.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geometry::{Cube, MAX_DIM};
use crate::linalg::{sym_matrix_function, BandMatrix};
use crate::potential::SplitSelection;
use crate::stats::{fit_line, LineFit};
use crate::{Error, Result};

/// Node-count cap for any grid.
pub const DEFAULT_GRID_CAP: usize = 10_000_000;
/// Node-count cap for operations needing full spectra or matrix functions.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Uniform grid of strictly interior nodes with spacing `h`, `h·(n+1) = L`
/// per axis. Flat indexing is lexicographic with axis 0 fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    cube: Cube,
    h: f64,
    n_axis: usize,
}

pub fn build_grid(cube: &Cube, h: f64) -> Result<Grid> {
    build_grid_capped(cube, h, DEFAULT_GRID_CAP)
}

pub fn build_grid_capped(cube: &Cube, h: f64, cap: usize) -> Result<Grid> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("spacing {h} must be positive")));
    }
    let ratio = cube.side() / h;
    let rounded = ratio.round();
    let rem = (ratio - rounded).abs();
    if rem > 1e-9 || rounded < 2.0 {
        return Err(Error::NonCommensurateSpacing {
            h,
            side: cube.side(),
            rem,
        });
    }
    let n_axis = rounded as usize - 1;
    let nodes = (n_axis as u128).pow(cube.dim() as u32);
    if nodes > cap as u128 {
        return Err(Error::GridCapExceeded {
            nodes: nodes as usize,
            cap,
        });
    }
    Ok(Grid {
        cube: *cube,
        h,
        n_axis,
    })
}

impl Grid {
    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    pub fn dim(&self) -> usize {
        self.cube.dim()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n_axis
    }

    pub fn len(&self) -> usize {
        self.n_axis.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stride of axis `k` in the flat index.
    pub fn stride(&self, k: usize) -> usize {
        self.n_axis.pow(k as u32)
    }

    pub fn multi(&self, flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        let mut rest = flat;
        for k in 0..self.dim() {
            idx[k] = rest % self.n_axis;
            rest /= self.n_axis;
        }
        idx
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for k in (0..self.dim()).rev() {
            flat = flat * self.n_axis + idx[k];
        }
        flat
    }

    /// Coordinates of a node by flat index.
    pub fn node(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.multi(flat);
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim() {
            x[k] = self.cube.lo(k) + self.h * (idx[k] as f64 + 1.0);
        }
        x
    }

    /// Discrete L² norm: `(h^d Σ v_i²)^{1/2}`.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        let hd = self.h.powi(self.dim() as i32);
        (hd * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }

    /// Discrete L² inner product `h^d Σ u_i v_i`.
    pub fn l2_dot(&self, u: &[f64], v: &[f64]) -> f64 {
        let hd = self.h.powi(self.dim() as i32);
        hd * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Closed-form Dirichlet Laplacian eigenvalues for one axis:
    /// `(4/h²) sin²(kπ / (2(n+1)))`, `k = 1..=n`.
    pub fn laplacian_axis_eigenvalues(&self) -> Vec<f64> {
        let n = self.n_axis as f64;
        (1..=self.n_axis)
            .map(|k| {
                let s = (k as f64 * std::f64::consts::PI / (2.0 * (n + 1.0))).sin();
                4.0 / (self.h * self.h) * s * s
            })
            .collect()
    }

    /// Squared norm of the forward-difference gradient with Dirichlet
    /// padding, which reproduces the quadratic form of −Δ_h exactly.
    pub fn grad_norm_sq(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.len());
        let dim = self.dim();
        let mut sum = 0.0;
        for flat in 0..v.len() {
            let idx = self.multi(flat);
            for k in 0..dim {
                // Forward edge out of this node along axis k; the virtual
                // node beyond the last interior one is 0.
                let forward = if idx[k] + 1 < self.n_axis {
                    v[flat + self.stride(k)]
                } else {
                    0.0
                };
                let d = forward - v[flat];
                sum += d * d;
                // The edge from the Dirichlet wall into the first node.
                if idx[k] == 0 {
                    sum += v[flat] * v[flat];
                }
            }
        }
        sum * self.h.powi(self.dim() as i32 - 2)
    }
}

/// `−Δ_h + V` on a grid: matrix-free apply plus banded/dense/triplet forms.
#[derive(Debug, Clone)]
pub struct DiscreteHamiltonian {
    grid: Grid,
    v: Vec<f64>,
}

/// Sample a potential at every node and assemble the operator.
pub fn assemble(grid: &Grid, potential: impl Fn(&[f64]) -> f64) -> Result<DiscreteHamiltonian> {
    let dim = grid.dim();
    let mut v = Vec::with_capacity(grid.len());
    for flat in 0..grid.len() {
        let x = grid.node(flat);
        let value = potential(&x[..dim]);
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!(
                "potential is not finite at node {:?}",
                &x[..dim]
            )));
        }
        v.push(value);
    }
    Ok(DiscreteHamiltonian {
        grid: grid.clone(),
        v,
    })
}

impl DiscreteHamiltonian {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential(&self) -> &[f64] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Matrix-free `out = H x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        assert_eq!(x.len(), n);
        assert_eq!(out.len(), n);
        let dim = self.grid.dim();
        let h2 = self.grid.h() * self.grid.h();
        let diag = 2.0 * dim as f64 / h2;
        let off = -1.0 / h2;
        let n_axis = self.grid.nodes_per_axis();
        for flat in 0..n {
            out[flat] = (diag + self.v[flat]) * x[flat];
        }
        for k in 0..dim {
            let stride = self.grid.stride(k);
            for flat in 0..n {
                let pos = flat / stride % n_axis;
                if pos + 1 < n_axis {
                    let other = flat + stride;
                    out[flat] += off * x[other];
                    out[other] += off * x[flat];
                }
            }
        }
    }

    /// Symmetric band form; half-bandwidth is the largest axis stride.
    pub fn band(&self) -> BandMatrix {
        let n = self.len();
        let dim = self.grid.dim();
        let h2 = self.grid.h() * self.grid.h();
        let n_axis = self.grid.nodes_per_axis();
        let bw = self.grid.stride(dim - 1);
        let mut band = BandMatrix::zeros(n, bw);
        for flat in 0..n {
            band.set(flat, flat, 2.0 * dim as f64 / h2 + self.v[flat]);
            for k in 0..dim {
                let stride = self.grid.stride(k);
                let pos = flat / stride % n_axis;
                if pos + 1 < n_axis {
                    band.set(flat, flat + stride, -1.0 / h2);
                }
            }
        }
        band
    }

    pub fn dense(&self) -> Result<DMatrix<f64>> {
        if self.len() > DEFAULT_DENSE_CAP {
            return Err(Error::DenseCapExceeded {
                nodes: self.len(),
                cap: DEFAULT_DENSE_CAP,
            });
        }
        Ok(self.band().to_dense())
    }

    /// Nonzero entries as `(row, col, value)`, row-major, both triangles.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let n = self.len();
        let dim = self.grid.dim();
        let h2 = self.grid.h() * self.grid.h();
        let n_axis = self.grid.nodes_per_axis();
        let mut out = Vec::new();
        for flat in 0..n {
            let mut row = Vec::new();
            for k in (0..dim).rev() {
                let stride = self.grid.stride(k);
                let pos = flat / stride % n_axis;
                if pos > 0 {
                    row.push((flat - stride, -1.0 / h2));
                }
            }
            row.push((flat, 2.0 * dim as f64 / h2 + self.v[flat]));
            for k in 0..dim {
                let stride = self.grid.stride(k);
                let pos = flat / stride % n_axis;
                if pos + 1 < n_axis {
                    row.push((flat + stride, -1.0 / h2));
                }
            }
            for (col, val) in row {
                out.push((flat, col, val));
            }
        }
        out
    }

    /// Coordinate-triplet text export: one `row col value` line per entry.
    pub fn export_triplets(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v}")?;
        }
        Ok(())
    }
}

/// Γ(E) in dense form, with the pieces needed to audit it.
#[derive(Debug, Clone)]
pub struct GammaOperator {
    grid: Grid,
    energy: f64,
    gamma: DMatrix<f64>,
    /// `(H⁽²⁾+1)^{-1/2}`.
    s: DMatrix<f64>,
    v1: Vec<f64>,
    v2: Vec<f64>,
    /// Eigenvalues of Γ in descending order.
    eigs: Vec<f64>,
    /// Top eigenvector (ℓ² unit).
    top: Vec<f64>,
}

pub fn build_gamma(grid: &Grid, sel: &SplitSelection, energy: f64) -> Result<GammaOperator> {
    let dim = grid.dim();
    let mut v1 = Vec::with_capacity(grid.len());
    let mut v2 = Vec::with_capacity(grid.len());
    for flat in 0..grid.len() {
        let x = grid.node(flat);
        v1.push(sel.eval_v1(&x[..dim]));
        v2.push(sel.eval_v2(&x[..dim]));
    }
    build_gamma_from_samples(grid, v1, v2, energy)
}

/// Γ from explicit potential samples; the engineered-instance entry point.
pub fn build_gamma_from_samples(
    grid: &Grid,
    v1: Vec<f64>,
    v2: Vec<f64>,
    energy: f64,
) -> Result<GammaOperator> {
    let n = grid.len();
    if n > DEFAULT_DENSE_CAP {
        return Err(Error::DenseCapExceeded {
            nodes: n,
            cap: DEFAULT_DENSE_CAP,
        });
    }
    if v1.len() != n || v2.len() != n {
        return Err(Error::InvalidInput(
            "potential sample length does not match grid".into(),
        ));
    }
    let h2_op = DiscreteHamiltonian {
        grid: grid.clone(),
        v: v2.clone(),
    };
    let mut h2_dense = h2_op.dense()?;
    for i in 0..n {
        h2_dense[(i, i)] += 1.0;
    }
    let s = sym_matrix_function(&h2_dense, |l| 1.0 / l.sqrt())?;
    let mut m_s = s.clone();
    for i in 0..n {
        let mi = 1.0 + energy - v1[i];
        m_s.row_mut(i).scale_mut(mi);
    }
    let gamma = &s * m_s;
    // Symmetrize away the last-ULP asymmetry of the triple product.
    let gamma = (&gamma + gamma.transpose()) * 0.5;

    let se = gamma
        .clone()
        .try_symmetric_eigen(1e-14, 10_000)
        .ok_or_else(|| Error::EigenFailure("Γ eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let eigs: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let top: Vec<f64> = se.eigenvectors.column(order[0]).iter().copied().collect();

    Ok(GammaOperator {
        grid: grid.clone(),
        energy,
        gamma,
        s,
        v1,
        v2,
        eigs,
        top,
    })
}

impl GammaOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn v1(&self) -> &[f64] {
        &self.v1
    }

    pub fn v2(&self) -> &[f64] {
        &self.v2
    }

    /// Operator norm: largest-magnitude eigenvalue.
    pub fn norm(&self) -> f64 {
        self.eigs
            .iter()
            .fold(0.0f64, |acc, &l| acc.max(l.abs()))
    }

    /// Largest (signed) eigenvalue.
    pub fn top_eigenvalue(&self) -> f64 {
        self.eigs[0]
    }

    /// Gap between the two largest eigenvalues.
    pub fn top_gap(&self) -> f64 {
        if self.eigs.len() > 1 {
            self.eigs[0] - self.eigs[1]
        } else {
            f64::INFINITY
        }
    }

    pub fn top_eigenvector(&self) -> &[f64] {
        &self.top
    }
}

/// One pairing sample `⟨τ_a V⁽¹⁾ g, g⟩`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairingSample {
    pub shift: Vec<f64>,
    pub radius: f64,
    pub value: f64,
}

/// Both sides of `c (1−√E₀)² ≤ c' E₀^{1/4} K^{d+1}`; a positive margin
/// means the inequality fails, which is the contradiction the argument
/// wants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContradictionCheck {
    /// Measured infimum of the translation-averaged field.
    pub c_average: f64,
    /// Measured pairing constant: max value / (E₀^{1/4}(|a|+1)).
    pub c_pairing: f64,
    pub k_radius: f64,
    /// `c (1−√E₀)²`.
    pub lhs: f64,
    /// `c_pairing E₀^{1/4} ∫_{[-K,K]^d}(|a|+1) da`.
    pub rhs: f64,
    /// `lhs − rhs`.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaReport {
    pub gamma_norm: f64,
    pub e0: f64,
    /// Whether `‖Γ‖ > 1 − E₀`; if not, the remaining fields stay `None`.
    pub hypothesis_holds: bool,
    /// Top eigenvalue gap below 1e-10: the transported vector is one
    /// arbitrary choice from a near-degenerate eigenspace.
    pub degenerate_top: bool,
    pub g_norm: Option<f64>,
    pub g_norm_window: (f64, f64),
    pub grad_norm: Option<f64>,
    pub grad_bound: f64,
    pub pairing: Vec<PairingSample>,
    pub pairing_min: Option<f64>,
    pub pairing_fit: Option<LineFit>,
    pub contradiction: Option<ContradictionCheck>,
}

/// Evaluate the §2 chain for one Γ: transport the top eigenvector into
/// `g = (H⁽²⁾+1)^{-1/2} φ`, check the norm window `[1−√E₀, 1]` and the
/// gradient bound `2E₀^{1/4}`, sample the pairing over a deterministic
/// sublattice of shifts, and evaluate the combined inequality using the
/// measured average-field constant.
pub fn gamma_diagnostics(
    gamma: &GammaOperator,
    sel: &SplitSelection,
    e0: f64,
    c_average: f64,
    k_radius: f64,
) -> Result<GammaReport> {
    if !(e0 > 0.0 && e0 < 1.0) {
        return Err(Error::InvalidInput(format!("E₀ = {e0} must lie in (0,1)")));
    }
    let grid = gamma.grid();
    let dim = grid.dim();
    let norm = gamma.norm();
    let window = (1.0 - e0.sqrt(), 1.0);
    let grad_bound = 2.0 * e0.powf(0.25);
    let mut report = GammaReport {
        gamma_norm: norm,
        e0,
        hypothesis_holds: norm > 1.0 - e0,
        degenerate_top: false,
        g_norm: None,
        g_norm_window: window,
        grad_norm: None,
        grad_bound,
        pairing: Vec::new(),
        pairing_min: None,
        pairing_fit: None,
        contradiction: None,
    };
    if !report.hypothesis_holds {
        return Ok(report);
    }
    report.degenerate_top = gamma.top_gap() < 1e-10;

    // φ normalized in discrete L²; g = S φ.
    let mut phi = gamma.top_eigenvector().to_vec();
    let phi_norm = grid.l2_norm(&phi);
    for x in &mut phi {
        *x /= phi_norm;
    }
    let phi_v = crate::linalg::dvector_from(&phi);
    let g_v = gamma.inv_sqrt() * phi_v;
    let g: Vec<f64> = g_v.iter().copied().collect();

    let g_norm = grid.l2_norm(&g);
    report.g_norm = Some(g_norm);
    report.grad_norm = Some(grid.grad_norm_sq(&g).sqrt());

    // Pairing over a deterministic shift sublattice of spacing ℓ₀/2,
    // covering [−L/2, L/2] per axis.
    let spacing = sel.cell_scale() / 2.0;
    let half = grid.cube().side() / 2.0;
    let steps = (half / spacing).floor() as i64;
    let mut axis_offsets = Vec::new();
    for k in -steps..=steps {
        axis_offsets.push(k as f64 * spacing);
    }
    let hd = grid.h().powi(dim as i32);
    let per_axis = axis_offsets.len();
    let total = per_axis.pow(dim as u32);
    let mut min_pairing = f64::INFINITY;
    let mut radii = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rest = flat;
        let mut a = [0.0; MAX_DIM];
        for k in 0..dim {
            a[k] = axis_offsets[rest % per_axis];
            rest /= per_axis;
        }
        let mut value = 0.0;
        for node in 0..grid.len() {
            let x = grid.node(node);
            let mut y = [0.0; MAX_DIM];
            for k in 0..dim {
                y[k] = x[k] - a[k];
            }
            let v1 = sel.eval_v1(&y[..dim]);
            if v1 != 0.0 {
                value += v1 * g[node] * g[node];
            }
        }
        value *= hd;
        let radius = crate::geometry::dist(&a[..dim], &[0.0; MAX_DIM][..dim], dim);
        min_pairing = min_pairing.min(value);
        radii.push(radius);
        values.push(value);
        report.pairing.push(PairingSample {
            shift: a[..dim].to_vec(),
            radius,
            value,
        });
    }
    report.pairing_min = Some(min_pairing);
    if radii.len() >= 2 {
        report.pairing_fit = Some(fit_line(&radii, &values));
    }

    let e0q = e0.powf(0.25);
    let c_pairing = report
        .pairing
        .iter()
        .map(|s| s.value / (e0q * (s.radius + 1.0)))
        .fold(0.0f64, f64::max);

    // ∫_{[-K,K]^d} (|a|+1) da by midpoint quadrature.
    let m: usize = match dim {
        1 => 4096,
        2 => 512,
        _ => 96,
    };
    let step = 2.0 * k_radius / m as f64;
    let mut integral = 0.0;
    for flat in 0..m.pow(dim as u32) {
        let mut rest = flat;
        let mut a = [0.0; MAX_DIM];
        for k in 0..dim {
            a[k] = -k_radius + (rest % m) as f64 * step + step / 2.0;
            rest /= m;
        }
        integral += crate::geometry::dist(&a[..dim], &[0.0; MAX_DIM][..dim], dim) + 1.0;
    }
    integral *= step.powi(dim as i32);

    let lhs = c_average * (1.0 - e0.sqrt()).powi(2);
    let rhs = c_pairing * e0q * integral;
    report.contradiction = Some(ContradictionCheck {
        c_average,
        c_pairing,
        k_radius,
        lhs,
        rhs,
        margin: lhs - rhs,
    });
    Ok(report)
}
