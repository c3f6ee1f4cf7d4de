//! The single-site bump, the total Poisson potential, its split over the
//! doubled sublattice, and the translation-averaged field.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{dist, CellGrid, MAX_DIM};
use crate::point_process::PointConfig;
use crate::{Error, Result};

/// Compactly supported radial single-site potential.
///
/// The default profile is the polynomial bump
/// `u(x) = (1 - |x|²/r²)²` for `|x| < r`: nonnegative, `u(0) = 1`,
/// `u ≤ 1`, and C¹ across the support boundary (the radial derivative
/// vanishes at `|x| = r`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireSpec", into = "WireSpec")]
pub struct SingleSiteSpec {
    radius: f64,
}

pub const DEFAULT_SITE_RADIUS: f64 = 0.5;

#[derive(Serialize, Deserialize)]
struct WireSpec {
    profile: String,
    radius: f64,
}

impl From<SingleSiteSpec> for WireSpec {
    fn from(s: SingleSiteSpec) -> Self {
        WireSpec {
            profile: "poly_bump".into(),
            radius: s.radius,
        }
    }
}

impl TryFrom<WireSpec> for SingleSiteSpec {
    type Error = Error;

    fn try_from(w: WireSpec) -> Result<Self> {
        if w.profile != "poly_bump" {
            return Err(Error::InvalidInput(format!(
                "unknown single-site profile {:?}",
                w.profile
            )));
        }
        SingleSiteSpec::poly_bump(w.radius)
    }
}

impl Default for SingleSiteSpec {
    fn default() -> Self {
        Self {
            radius: DEFAULT_SITE_RADIUS,
        }
    }
}

impl SingleSiteSpec {
    pub fn poly_bump(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidInput(format!(
                "support radius {radius} must be positive"
            )));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `u` as a function of the squared distance from the site.
    #[inline]
    pub fn eval_r2(&self, r2: f64) -> f64 {
        let s = r2 / (self.radius * self.radius);
        if s >= 1.0 {
            0.0
        } else {
            let t = 1.0 - s;
            t * t
        }
    }

    /// `u(x)` for a displacement vector `x` (first `dim` coordinates).
    pub fn eval(&self, x: &[f64], dim: usize) -> f64 {
        let r2: f64 = x[..dim].iter().map(|c| c * c).sum();
        self.eval_r2(r2)
    }

    /// Gradient of `u` at displacement `x`.
    pub fn gradient(&self, x: &[f64], dim: usize) -> [f64; MAX_DIM] {
        let r2: f64 = x[..dim].iter().map(|c| c * c).sum();
        let mut g = [0.0; MAX_DIM];
        let s = r2 / (self.radius * self.radius);
        if s < 1.0 {
            let factor = -4.0 * (1.0 - s) / (self.radius * self.radius);
            for k in 0..dim {
                g[k] = factor * x[k];
            }
        }
        g
    }

    /// Supremum of `|∇u|` over the support: attained at `|x| = r/√3`.
    pub fn gradient_sup_norm(&self) -> f64 {
        8.0 / (3.0 * 3f64.sqrt() * self.radius)
    }

    /// Closed-form total mass `∫_{R^d} u`.
    pub fn mass(&self, dim: usize) -> f64 {
        let r = self.radius;
        match dim {
            1 => 16.0 * r / 15.0,
            2 => std::f64::consts::PI * r * r / 3.0,
            3 => 32.0 * std::f64::consts::PI * r.powi(3) / 105.0,
            _ => unreachable!("dimension is 1, 2, or 3"),
        }
    }
}

/// Spatial bucket index over points, with bucket side equal to the site
/// radius so that only the 3^d neighbouring buckets can contribute at any
/// evaluation point. Buckets are keyed on the global integer lattice, so
/// queries may lie outside the box.
#[derive(Debug, Clone)]
struct BucketIndex {
    side: f64,
    buckets: HashMap<[i64; MAX_DIM], Vec<usize>>,
    dim: usize,
}

impl BucketIndex {
    fn build<'a>(points: impl Iterator<Item = &'a [f64]>, dim: usize, side: f64) -> Self {
        let mut buckets: HashMap<[i64; MAX_DIM], Vec<usize>> = HashMap::new();
        for (i, p) in points.enumerate() {
            buckets.entry(Self::key(p, dim, side)).or_default().push(i);
        }
        Self { side, buckets, dim }
    }

    #[inline]
    fn key(p: &[f64], dim: usize, side: f64) -> [i64; MAX_DIM] {
        let mut k = [0i64; MAX_DIM];
        for a in 0..dim {
            k[a] = (p[a] / side).floor() as i64;
        }
        k
    }

    /// Visit indices of all points that can lie within `side` of `x`.
    fn for_neighbors(&self, x: &[f64], mut f: impl FnMut(usize)) {
        let center = Self::key(x, self.dim, self.side);
        let deltas: &[i64] = &[-1, 0, 1];
        let mut visit = |k: [i64; MAX_DIM]| {
            if let Some(v) = self.buckets.get(&k) {
                for &i in v {
                    f(i);
                }
            }
        };
        match self.dim {
            1 => {
                for &dx in deltas {
                    visit([center[0] + dx, 0, 0]);
                }
            }
            2 => {
                for &dx in deltas {
                    for &dy in deltas {
                        visit([center[0] + dx, center[1] + dy, 0]);
                    }
                }
            }
            _ => {
                for &dx in deltas {
                    for &dy in deltas {
                        for &dz in deltas {
                            visit([center[0] + dx, center[1] + dy, center[2] + dz]);
                        }
                    }
                }
            }
        }
    }
}

/// Evaluable total potential `V(x) = Σ_ζ t_ζ ε_ζ u(x - ζ)` with a bucket
/// index so evaluation cost is proportional to the number of nearby points.
#[derive(Debug, Clone)]
pub struct PotentialField {
    config: PointConfig,
    spec: SingleSiteSpec,
    index: BucketIndex,
}

impl PotentialField {
    pub fn new(config: &PointConfig, spec: &SingleSiteSpec) -> Self {
        let index = BucketIndex::build(config.points(), config.dim(), spec.radius());
        Self {
            config: config.clone(),
            spec: *spec,
            index,
        }
    }

    pub fn config(&self) -> &PointConfig {
        &self.config
    }

    pub fn spec(&self) -> &SingleSiteSpec {
        &self.spec
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let dim = self.config.dim();
        let r = self.spec.radius();
        let r2max = r * r;
        let mut total = 0.0;
        self.index.for_neighbors(x, |i| {
            let p = self.config.point(i);
            let r2: f64 = (0..dim).map(|k| (x[k] - p[k]).powi(2)).sum();
            if r2 < r2max {
                total += self.config.weight(i) * self.spec.eval_r2(r2);
            }
        });
        total
    }
}

/// Direct `O(N)` summation, kept as an independent cross-check of the
/// bucketed evaluation.
pub fn eval_total_naive(config: &PointConfig, spec: &SingleSiteSpec, x: &[f64]) -> f64 {
    let dim = config.dim();
    (0..config.len())
        .map(|i| {
            let p = config.point(i);
            let r2: f64 = (0..dim).map(|k| (x[k] - p[k]).powi(2)).sum();
            config.weight(i) * spec.eval_r2(r2)
        })
        .sum()
}

/// The split `V = V⁽¹⁾ + V⁽²⁾`: one site per cell of the doubled sublattice
/// contributes to `V⁽¹⁾`, everything else to `V⁽²⁾`.
///
/// Selected bumps are pairwise disjoint (enforced by the margin condition
/// `2ℓ - ℓ√d > 2 r_u`), so `0 ≤ V⁽¹⁾ ≤ 1` pointwise, and `V⁽²⁾ ≥ 0`.
#[derive(Debug, Clone)]
pub struct SplitSelection {
    grid: CellGrid,
    spec: SingleSiteSpec,
    /// One `(cell index, site)` pair per even-sublattice cell.
    selected: Vec<([i64; MAX_DIM], [f64; MAX_DIM])>,
    /// All other points with their potential weights.
    remainder: Vec<([f64; MAX_DIM], f64)>,
    remainder_index: BucketIndex,
}

impl SplitSelection {
    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn spec(&self) -> &SingleSiteSpec {
        &self.spec
    }

    pub fn cell_scale(&self) -> f64 {
        self.grid.cell_side()
    }

    pub fn selected(&self) -> &[([i64; MAX_DIM], [f64; MAX_DIM])] {
        &self.selected
    }

    pub fn remainder(&self) -> &[([f64; MAX_DIM], f64)] {
        &self.remainder
    }

    /// `V⁽¹⁾(x)`: the disjoint sum over selected sites.
    pub fn eval_v1(&self, x: &[f64]) -> f64 {
        let dim = self.grid.dim();
        let r = self.spec.radius();
        let mut total = 0.0;
        for (_, site) in &self.selected {
            let d = dist(x, site, dim);
            if d < r {
                total += self.spec.eval_r2(d * d);
            }
        }
        total
    }

    /// `V⁽²⁾(x)`: the weighted sum over the remainder.
    pub fn eval_v2(&self, x: &[f64]) -> f64 {
        let dim = self.grid.dim();
        let r2max = self.spec.radius().powi(2);
        let mut total = 0.0;
        self.remainder_index.for_neighbors(x, |i| {
            let (p, w) = &self.remainder[i];
            let r2: f64 = (0..dim).map(|k| (x[k] - p[k]).powi(2)).sum();
            if r2 < r2max {
                total += w * self.spec.eval_r2(r2);
            }
        });
        total
    }

    /// Replace the remainder weights (the `t_ζ` of the robustness clause).
    pub fn with_remainder_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.remainder.len() {
            return Err(Error::InvalidInput(format!(
                "{} weights for {} remainder points",
                weights.len(),
                self.remainder.len()
            )));
        }
        if weights.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidInput("weights must lie in [0,1]".into()));
        }
        for (slot, &w) in self.remainder.iter_mut().zip(weights) {
            slot.1 = w;
        }
        Ok(self)
    }
}

#[cfg(test)]
impl SplitSelection {
    pub(crate) fn clear_selected_for_tests(&mut self) {
        self.selected.clear();
    }
}

/// Build the sublattice split. Requires every ℓ₀-cell to be occupied (run
/// `cell_event_check` first) and the disjointness margin `2ℓ - ℓ√d > 2r_u`.
///
/// The selected site of a cell is the point nearest the cell center, ties
/// broken by canonical point order.
pub fn split_potential(
    config: &PointConfig,
    ell0: f64,
    spec: &SingleSiteSpec,
) -> Result<SplitSelection> {
    let grid = CellGrid::new(config.cube(), ell0)?;
    let dim = config.dim();
    let ell = grid.cell_side();
    if 2.0 * ell - ell * (dim as f64).sqrt() <= 2.0 * spec.radius() {
        return Err(Error::SupportsMayOverlap {
            ell,
            r_u: spec.radius(),
        });
    }

    // Nearest-to-center point of each even-sublattice cell; scanning in
    // canonical order makes the strict `<` a canonical tie-break.
    let mut best: HashMap<[i64; MAX_DIM], (f64, usize)> = HashMap::new();
    for i in 0..config.len() {
        let p = config.point(i);
        let idx = grid.cell_of(p);
        if (0..dim).any(|k| idx[k] % 2 != 0) {
            continue;
        }
        let center = grid.cell_center(&idx);
        let d = dist(p, &center[..dim], dim);
        match best.get(&idx) {
            Some(&(dbest, _)) if dbest <= d => {}
            _ => {
                best.insert(idx, (d, i));
            }
        }
    }

    let mut selected = Vec::new();
    let mut selected_point_ids = std::collections::HashSet::new();
    for idx in grid.iter_cells() {
        if (0..dim).any(|k| idx[k] % 2 != 0) {
            continue;
        }
        match best.get(&idx) {
            Some(&(_, i)) => {
                let mut site = [0.0; MAX_DIM];
                site[..dim].copy_from_slice(config.point(i));
                selected.push((idx, site));
                selected_point_ids.insert(i);
            }
            None => {
                return Err(Error::EmptySublatticeCell {
                    cell: idx[..dim].to_vec(),
                });
            }
        }
    }

    let mut remainder = Vec::new();
    for i in 0..config.len() {
        if selected_point_ids.contains(&i) {
            continue;
        }
        let mut p = [0.0; MAX_DIM];
        p[..dim].copy_from_slice(config.point(i));
        remainder.push((p, config.weight(i)));
    }
    let remainder_index = BucketIndex::build(
        remainder.iter().map(|(p, _)| &p[..dim]),
        dim,
        spec.radius(),
    );

    let sel = SplitSelection {
        grid,
        spec: *spec,
        selected,
        remainder,
        remainder_index,
    };

    // Probe V¹ ≤ 1 on a coarse lattice; the disjointness margin makes this
    // a pure sanity check.
    let cube = config.cube();
    let probes = 17usize;
    for flat in 0..probes.pow(dim as u32) {
        let mut x = [0.0; MAX_DIM];
        let mut rest = flat;
        for k in 0..dim {
            let i = rest % probes;
            rest /= probes;
            x[k] = cube.lo(k) + (i as f64 + 0.5) / probes as f64 * cube.side();
        }
        let v1 = sel.eval_v1(&x[..dim]);
        if !(..=1.0 + 1e-12).contains(&v1) {
            return Err(Error::InvalidInput(format!(
                "V¹({:?}) = {v1} exceeds 1; selected supports overlap",
                &x[..dim]
            )));
        }
    }

    Ok(sel)
}

/// The translation-averaged field `A(x) = ∫_{[-K,K]^d} V⁽¹⁾(x - a) da`
/// evaluated on a probe grid, with the measured infimum over probe points
/// in the `K`-interior of the box.
#[derive(Debug, Clone)]
pub struct TranslationAverage {
    pub probe_grid: CellGrid,
    /// Field values at probe-cell centers, in flat-index order.
    pub field: Vec<f64>,
    /// Infimum over probe centers farther than `K` from the boundary;
    /// `None` when no probe point is that deep.
    pub inf_interior: Option<f64>,
    /// Midpoint quadrature resolution actually used.
    pub resolution: f64,
}

/// Default quadrature resolution: `min(r_u/8, ℓ₀/16)`.
pub fn default_average_resolution(spec: &SingleSiteSpec, ell0: f64) -> f64 {
    (spec.radius() / 8.0).min(ell0 / 16.0)
}

pub fn translation_average(
    sel: &SplitSelection,
    k_radius: f64,
    probe_grid: &CellGrid,
) -> Result<TranslationAverage> {
    let res = default_average_resolution(sel.spec(), sel.cell_scale());
    translation_average_with_resolution(sel, k_radius, probe_grid, res)
}

pub fn translation_average_with_resolution(
    sel: &SplitSelection,
    k_radius: f64,
    probe_grid: &CellGrid,
    resolution: f64,
) -> Result<TranslationAverage> {
    let dim = probe_grid.dim();
    let limit = sel.spec().radius() / 4.0;
    if resolution > limit {
        return Err(Error::QuadratureTooCoarse {
            res: resolution,
            limit,
        });
    }
    if k_radius < 2.0 * sel.cell_scale() {
        return Err(Error::InvalidInput(format!(
            "averaging radius K = {k_radius} must be at least 2ℓ₀ = {}",
            2.0 * sel.cell_scale()
        )));
    }

    // Midpoint tensor rule over [-K, K]^d with the step shrunk to divide 2K.
    let m = (2.0 * k_radius / resolution).ceil() as usize;
    let step = 2.0 * k_radius / m as f64;
    let weight = step.powi(dim as i32);

    let cube = probe_grid.cube();
    let mut field = Vec::with_capacity(probe_grid.num_cells() as usize);
    let mut inf_interior: Option<f64> = None;
    for idx in probe_grid.iter_cells() {
        let x = probe_grid.cell_center(&idx);
        let mut acc = 0.0;
        let mut a = [0.0; MAX_DIM];
        for flat in 0..m.pow(dim as u32) {
            let mut rest = flat;
            for k in 0..dim {
                let i = rest % m;
                rest /= m;
                a[k] = -k_radius + (i as f64 + 0.5) * step;
            }
            let mut y = [0.0; MAX_DIM];
            for k in 0..dim {
                y[k] = x[k] - a[k];
            }
            acc += sel.eval_v1(&y[..dim]);
        }
        let value = acc * weight;
        field.push(value);

        let interior =
            (0..dim).all(|k| x[k] - cube.lo(k) >= k_radius && cube.hi(k) - x[k] >= k_radius);
        if interior {
            inf_interior = Some(match inf_interior {
                Some(v) => v.min(value),
                None => value,
            });
        }
    }

    Ok(TranslationAverage {
        probe_grid: probe_grid.clone(),
        field,
        inf_interior,
        resolution: step,
    })
}
