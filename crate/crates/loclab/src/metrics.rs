//! Localization diagnostics: per-cube eigenfunction norms, exponential
//! decay fits, stretched-exponential pair bounds, dynamical moments,
//! spectral multiplicity, and participation ratios.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{dist, Cube};
use crate::operator::{DiscreteHamiltonian, Grid};
use crate::spectral::eigen_window;
use crate::stats::fit_line;
use crate::{Error, Result};

/// Centers of the unit cubes tiling `cube` (half-open, so every grid node
/// lands in exactly one cube even when the side is not an integer).
pub fn unit_cover_centers(cube: &Cube) -> Vec<Vec<f64>> {
    let dim = cube.dim();
    let per_axis = cube.side().ceil().max(1.0) as usize;
    let mut centers = vec![Vec::with_capacity(dim)];
    for k in 0..dim {
        let mut next = Vec::with_capacity(centers.len() * per_axis);
        for c in &centers {
            for j in 0..per_axis {
                let mut ext = c.clone();
                ext.push(cube.lo(k) + 0.5 + j as f64);
                next.push(ext);
            }
        }
        centers = next;
    }
    centers
}

/// `‖χ_x φ‖` for each center: the discrete L² norm of `φ` restricted to
/// the half-open unit cube at `x`. The grid must resolve unit cubes.
pub fn local_norms(phi: &[f64], grid: &Grid, centers: &[Vec<f64>]) -> Result<Vec<f64>> {
    if grid.h() > 0.25 {
        return Err(Error::InvalidInput(format!(
            "grid spacing {} too coarse to resolve unit cubes (need h <= 1/4)",
            grid.h()
        )));
    }
    if phi.len() != grid.len() {
        return Err(Error::InvalidInput(
            "vector length does not match grid".into(),
        ));
    }
    let dim = grid.dim();
    let hd = grid.h().powi(dim as i32);
    let mut sums = vec![0.0f64; centers.len()];
    let cubes: Vec<Cube> = centers
        .iter()
        .map(|c| Cube::new(dim, c, 1.0))
        .collect::<Result<_>>()?;
    for flat in 0..phi.len() {
        let x = grid.node(flat);
        for (slot, cube) in sums.iter_mut().zip(&cubes) {
            if cube.contains(&x[..dim]) {
                *slot += phi[flat] * phi[flat];
            }
        }
    }
    Ok(sums.iter().map(|s| (s * hd).sqrt()).collect())
}

/// Exponential decay profile fitted to per-cube norms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    /// Decay rate (minus the fitted log-slope).
    pub m: f64,
    /// `e^intercept`.
    pub prefactor: f64,
    pub r_squared: f64,
    /// Distance window the fit used.
    pub window: (f64, f64),
    pub points: usize,
    pub shells: usize,
}

pub const DECAY_NORM_FLOOR: f64 = 1e-14;
pub const MIN_DECAY_SHELLS: usize = 5;

/// Point-collection policy for [`decay_fit_with_config`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayFitConfig {
    /// Distance window; `None` selects the annulus `[L/4, L/2 - 1]`.
    pub window: Option<(f64, f64)>,
    /// Local norms at or below this value are dropped before taking logs.
    pub floor: f64,
    /// `Some(w)`: merge cubes into radial shells of width `w`, taking the
    /// root of the summed squares per shell. `None`: one point per cube.
    pub shell_width: Option<f64>,
}

impl Default for DecayFitConfig {
    fn default() -> Self {
        Self {
            window: None,
            floor: DECAY_NORM_FLOOR,
            shell_width: None,
        }
    }
}

impl DecayFitConfig {
    /// Whole-box radial profile: every interior shell from the anchor
    /// outward, width-2 shells, floor above dense-eigensolver noise.
    /// Resonant side lobes average into the shell sums instead of forming
    /// a second log-branch, so this is the robust choice for fits anchored
    /// at an eigenfunction's own localization center.
    pub fn whole_box() -> Self {
        Self {
            window: Some((0.0, f64::INFINITY)),
            floor: 1e-10,
            shell_width: Some(2.0),
        }
    }
}

/// Fit `log ‖χ_x φ‖` against `|x - center|` over the default annulus
/// `[L/4, L/2 - 1]`, which skips the pre-asymptotic core and the outermost
/// shell the Dirichlet wall suppresses.
pub fn decay_fit(phi: &[f64], grid: &Grid, center: &[f64]) -> Result<DecayFit> {
    decay_fit_with_config(phi, grid, center, &DecayFitConfig::default())
}

pub fn decay_fit_with_window(
    phi: &[f64],
    grid: &Grid,
    center: &[f64],
    window: (f64, f64),
) -> Result<DecayFit> {
    let config = DecayFitConfig {
        window: Some(window),
        ..DecayFitConfig::default()
    };
    decay_fit_with_config(phi, grid, center, &config)
}

pub fn decay_fit_with_config(
    phi: &[f64],
    grid: &Grid,
    center: &[f64],
    config: &DecayFitConfig,
) -> Result<DecayFit> {
    let cube = grid.cube();
    let l = cube.side();
    let window = config.window.unwrap_or((l / 4.0, l / 2.0 - 1.0));
    let centers = unit_cover_centers(cube);
    let norms = local_norms(phi, grid, &centers)?;
    let dim = grid.dim();
    let mut raw: Vec<(f64, f64)> = Vec::new();
    for (c, &norm) in centers.iter().zip(&norms) {
        // Dirichlet walls suppress the outermost cube layer regardless of
        // where the fit is anchored, so exclude it geometrically.
        let clearance = (0..dim)
            .map(|ax| (c[ax] - cube.lo(ax)).min(cube.hi(ax) - c[ax]))
            .fold(f64::INFINITY, f64::min);
        if clearance < 1.0 - 1e-9 {
            continue;
        }
        raw.push((dist(c, center, dim), norm));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    if let Some(width) = config.shell_width {
        if !(width > 0.0) {
            return Err(Error::InvalidInput(format!(
                "shell width {width} must be positive"
            )));
        }
        let mut shells: BTreeMap<i64, f64> = BTreeMap::new();
        for &(r, norm) in &raw {
            *shells.entry((r / width).floor() as i64).or_insert(0.0) += norm * norm;
        }
        for (&k, &sq) in &shells {
            let r = (k as f64 + 0.5) * width;
            let norm = sq.sqrt();
            if r < window.0 || r > window.1 || norm <= config.floor {
                continue;
            }
            xs.push(r);
            ys.push(norm.ln());
        }
    } else {
        for &(r, norm) in &raw {
            if r < window.0 || r > window.1 || norm <= config.floor {
                continue;
            }
            xs.push(r);
            ys.push(norm.ln());
        }
    }
    let mut shells: Vec<f64> = xs.clone();
    shells.sort_by(f64::total_cmp);
    shells.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);
    if shells.len() < MIN_DECAY_SHELLS {
        return Err(Error::InsufficientDecayRange {
            found: shells.len(),
            need: MIN_DECAY_SHELLS,
        });
    }
    let fit = fit_line(&xs, &ys);
    let hi = if window.1.is_finite() {
        window.1
    } else {
        xs.iter().cloned().fold(0.0, f64::max)
    };
    Ok(DecayFit {
        m: -fit.slope,
        prefactor: fit.intercept.exp(),
        r_squared: fit.r_squared,
        window: (window.0, hi),
        points: xs.len(),
        shells: shells.len(),
    })
}

/// Grid coordinates of the largest-magnitude component of `phi`: the
/// natural anchor for radial decay fits, since the profile then falls off
/// on both sides instead of splitting into two log-branches.
pub fn localization_center(phi: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    if phi.len() != grid.len() {
        return Err(Error::InvalidInput(
            "vector length does not match grid".into(),
        ));
    }
    let mut best = 0usize;
    let mut best_abs = -1.0f64;
    for (flat, &value) in phi.iter().enumerate() {
        if value.abs() > best_abs {
            best_abs = value.abs();
            best = flat;
        }
    }
    if best_abs <= 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(grid.node(best)[..grid.dim()].to_vec())
}

/// Parameters of the stretched-exponential pair bound
/// `‖χ_xψ‖‖χ_yφ‖ ≤ C ‖T⁻¹ψ‖‖T⁻¹φ‖ e^{⟨y⟩^τ} e^{−|x−y|^s}`
/// with `T(x) = ⟨x⟩^ν` measured from the box center.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SudecParams {
    pub nu: f64,
    pub tau: f64,
    pub s: f64,
}

impl SudecParams {
    pub fn new(dim: usize, nu: f64, tau: f64, s: f64) -> Result<Self> {
        if !(nu > dim as f64 / 2.0) {
            return Err(Error::InvalidInput(format!(
                "weight exponent nu = {nu} must exceed d/2 = {}",
                dim as f64 / 2.0
            )));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidInput(format!(
                "stretch exponent s = {s} must lie in (0, 1)"
            )));
        }
        if !(tau > 1.0) {
            return Err(Error::InvalidInput(format!(
                "center exponent tau = {tau} must exceed 1"
            )));
        }
        Ok(Self { nu, tau, s })
    }

    /// ν = d/2 + 1/2, τ = 1.1, s = 0.9.
    pub fn defaults(dim: usize) -> Self {
        Self {
            nu: dim as f64 / 2.0 + 0.5,
            tau: 1.1,
            s: 0.9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SudecFit {
    /// Max ratio over all probes: the minimal admissible constant.
    pub c: f64,
    pub worst_x: Vec<f64>,
    pub worst_y: Vec<f64>,
    pub probes: usize,
}

/// Relative cutoff below which a local norm is treated as eigensolver
/// noise rather than eigenfunction tail. Tails this far below the peak
/// sit under the dense-solver residual, and dividing noise by the deep
/// `e^{−|x−y|^s}` factor would dominate the fitted constant.
pub const SUDEC_TAIL_FLOOR: f64 = 1e-10;

/// Minimal constant C making the pair bound hold for every supplied
/// eigenvector pair and every ordered pair of unit-lattice probe cubes.
/// Ratios are formed in log space so large `e^{⟨y⟩^τ}` factors stay
/// finite. Local norms below `SUDEC_TAIL_FLOOR` times the pair's peak are
/// skipped; the cutoff is relative, so scalar rescaling of either vector
/// never changes the probe set.
pub fn sudec_fit(
    pairs: &[(Vec<f64>, Vec<f64>)],
    params: &SudecParams,
    grid: &Grid,
) -> Result<SudecFit> {
    let dim = grid.dim();
    SudecParams::new(dim, params.nu, params.tau, params.s)?;
    let centers = unit_cover_centers(grid.cube());
    let bc = grid.cube().center();
    let gauge: Vec<f64> = centers
        .iter()
        .map(|c| {
            let r = dist(c, bc, dim);
            (1.0 + r * r).sqrt()
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut worst = None;
    let mut probes = 0usize;
    for (psi, phi) in pairs {
        let npsi = local_norms(psi, grid, &centers)?;
        let nphi = local_norms(phi, grid, &centers)?;
        let tpsi = t_weighted_norm(psi, grid, bc, params.nu);
        let tphi = t_weighted_norm(phi, grid, bc, params.nu);
        if tpsi == 0.0 || tphi == 0.0 {
            return Err(Error::ZeroVector);
        }
        let floor_psi = SUDEC_TAIL_FLOOR * npsi.iter().fold(0.0f64, |a, &b| a.max(b));
        let floor_phi = SUDEC_TAIL_FLOOR * nphi.iter().fold(0.0f64, |a, &b| a.max(b));
        let base = tpsi.ln() + tphi.ln();
        for (ix, x) in centers.iter().enumerate() {
            if npsi[ix] <= floor_psi {
                continue;
            }
            let lx = npsi[ix].ln();
            for (iy, y) in centers.iter().enumerate() {
                if nphi[iy] <= floor_phi {
                    continue;
                }
                probes += 1;
                let r = dist(x, y, dim);
                let log_ratio =
                    lx + nphi[iy].ln() - base - gauge[iy].powf(params.tau) + r.powf(params.s);
                if log_ratio > best {
                    best = log_ratio;
                    worst = Some((ix, iy));
                }
            }
        }
    }
    let (worst_x, worst_y) = match worst {
        Some((ix, iy)) => (centers[ix].clone(), centers[iy].clone()),
        None => (Vec::new(), Vec::new()),
    };
    Ok(SudecFit {
        c: if worst.is_some() { best.exp() } else { 0.0 },
        worst_x,
        worst_y,
        probes,
    })
}

/// `‖T⁻¹φ‖` with `T(x) = ⟨x − origin⟩^ν` applied at the nodes.
fn t_weighted_norm(phi: &[f64], grid: &Grid, origin: &[f64], nu: f64) -> f64 {
    let dim = grid.dim();
    let hd = grid.h().powi(dim as i32);
    let mut sum = 0.0;
    for (flat, &v) in phi.iter().enumerate() {
        let x = grid.node(flat);
        let r = dist(&x[..dim], origin, dim);
        let w = (1.0 + r * r).powf(-nu / 2.0);
        sum += (v * w) * (v * w);
    }
    (sum * hd).sqrt()
}

/// Moment trajectory `t ↦ ‖⟨x⟩^{p/2} e^{−itH} P_{[0,E₀]} χ_0‖²_HS`, the
/// order-p spread of the spectrally filtered evolution started from the
/// unit cube at the box center, plus its supremum over the time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicalMoment {
    pub p: f64,
    pub e0: f64,
    pub trajectory: Vec<(f64, f64)>,
    pub sup: f64,
    /// True when no eigenvalue fell in `[0, E₀]`; the moment is then 0.
    pub window_empty: bool,
    pub states: usize,
}

impl DynamicalMoment {
    /// CSV rows `t,moment_hs` (Hilbert-Schmidt convention).
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "t,moment_hs")?;
        for (t, m) in &self.trajectory {
            writeln!(w, "{t},{m}")?;
        }
        Ok(())
    }
}

pub fn dynamical_moment(
    ham: &DiscreteHamiltonian,
    e0: f64,
    p: f64,
    times: &[f64],
) -> Result<DynamicalMoment> {
    if !(p > 0.0) {
        return Err(Error::InvalidInput(format!(
            "moment order p = {p} must be positive"
        )));
    }
    let win = eigen_window(ham, (0.0, e0))?;
    let grid = ham.grid();
    let dim = grid.dim();
    let bc = grid.cube().center().to_vec();
    let chi0 = Cube::new(dim, &bc, 1.0)?;
    let cube_nodes: Vec<usize> = (0..grid.len())
        .filter(|&flat| chi0.contains(&grid.node(flat)[..dim]))
        .collect();
    if win.is_empty() || cube_nodes.is_empty() {
        return Ok(DynamicalMoment {
            p,
            e0,
            trajectory: times.iter().map(|&t| (t, 0.0)).collect(),
            sup: 0.0,
            window_empty: true,
            states: 0,
        });
    }
    let n = grid.len();
    let k_dim = win.len();
    let hd = grid.h().powi(dim as i32);
    // ⟨x⟩^{p/2} at the nodes, relative to the box center.
    let weight: Vec<f64> = (0..n)
        .map(|flat| {
            let x = grid.node(flat);
            let r = dist(&x[..dim], &bc, dim);
            (1.0 + r * r).powf(p / 4.0)
        })
        .collect();
    // The evolution restricted to the window subspace is exact in its
    // eigenbasis: e^{−itH} P e_j = Σ_k e^{−itλ_k} (h^d v_k[j]) v_k.
    let mut trajectory = Vec::with_capacity(times.len());
    let mut sup = 0.0f64;
    for &t in times {
        let phases: Vec<(f64, f64)> = win
            .eigenvalues
            .iter()
            .map(|&l| (-t * l).sin_cos())
            .collect();
        let mut total = 0.0;
        for &j in &cube_nodes {
            let mut yre = vec![0.0f64; n];
            let mut yim = vec![0.0f64; n];
            for k in 0..k_dim {
                let vk = &win.eigenvectors[k];
                let a = hd * vk[j];
                let (s, c) = phases[k];
                for i in 0..n {
                    yre[i] += c * a * vk[i];
                    yim[i] += s * a * vk[i];
                }
            }
            for i in 0..n {
                let w = weight[i];
                total += (w * yre[i]) * (w * yre[i]) + (w * yim[i]) * (w * yim[i]);
            }
        }
        sup = sup.max(total);
        trajectory.push((t, total));
    }
    Ok(DynamicalMoment {
        p,
        e0,
        trajectory,
        sup,
        window_empty: false,
        states: k_dim,
    })
}

/// Cluster sorted eigenvalues whose consecutive gaps stay within `tol`
/// and histogram the cluster sizes.
pub fn multiplicity_histogram(eigenvalues: &[f64], tol: f64) -> BTreeMap<usize, usize> {
    let mut sorted = eigenvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut hist = BTreeMap::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] - sorted[j - 1] <= tol {
            j += 1;
        }
        *hist.entry(j - i).or_insert(0) += 1;
        i = j;
    }
    hist
}

/// Inverse participation ratio `Σφ⁴h^d / (Σφ²h^d)²`; `1/(volume covered)`
/// for flat profiles, up to `1/h^d` for a single-node spike.
pub fn ipr(phi: &[f64], grid: &Grid) -> Result<f64> {
    let hd = grid.h().powi(grid.dim() as i32);
    let mut s2 = 0.0;
    let mut s4 = 0.0;
    for &v in phi {
        s2 += v * v;
        s4 += v * v * v * v;
    }
    if s2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(s4 * hd / (s2 * hd * (s2 * hd)))
}
