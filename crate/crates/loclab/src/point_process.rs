//! Poisson point configurations in boxes: sampling, thinning, counting,
//! snapping to fine cell grids, and equivalence by occupancy.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::geometry::{CellGrid, Cube, MAX_DIM};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Default refusal threshold on the expected point count of one sample.
pub const DEFAULT_POINT_CAP: f64 = 1e7;

/// A finite point configuration in a box, with seed provenance and optional
/// per-point Bernoulli marks, attenuations `t ∈ [0,1]`, and free-site flags.
///
/// Points are kept in canonical (lexicographic by coordinates) order, so two
/// configurations are equal iff they are bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireConfig", into = "WireConfig")]
pub struct PointConfig {
    cube: Cube,
    density: f64,
    seed: u64,
    coords: Vec<f64>,
    marks: Option<Vec<u8>>,
    attenuations: Option<Vec<f64>>,
    free_flags: Option<Vec<bool>>,
}

impl PointConfig {
    pub fn from_points(
        cube: &Cube,
        density: f64,
        seed: u64,
        points: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = cube.dim();
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "point has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        let mut cfg = Self {
            cube: *cube,
            density,
            seed,
            coords,
            marks: None,
            attenuations: None,
            free_flags: None,
        };
        cfg.canonicalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    pub fn dim(&self) -> usize {
        self.cube.dim()
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim())
    }

    pub fn marks(&self) -> Option<&[u8]> {
        self.marks.as_deref()
    }

    pub fn attenuations(&self) -> Option<&[f64]> {
        self.attenuations.as_deref()
    }

    pub fn free_flags(&self) -> Option<&[bool]> {
        self.free_flags.as_deref()
    }

    /// Weight of point `i` in the potential sum: `t_i · ε_i`, both default 1.
    pub fn weight(&self, i: usize) -> f64 {
        let t = self.attenuations.as_ref().map_or(1.0, |a| a[i]);
        let eps = self.marks.as_ref().map_or(1.0, |m| f64::from(m[i]));
        t * eps
    }

    pub fn with_attenuations(mut self, attenuations: Vec<f64>) -> Result<Self> {
        if attenuations.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} attenuations for {} points",
                attenuations.len(),
                self.len()
            )));
        }
        self.attenuations = Some(attenuations);
        self.validate()?;
        Ok(self)
    }

    pub fn with_free_flags(mut self, free_flags: Vec<bool>) -> Result<Self> {
        if free_flags.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} free flags for {} points",
                free_flags.len(),
                self.len()
            )));
        }
        self.free_flags = Some(free_flags);
        Ok(self)
    }

    /// The ε = 1 sub-configuration of a marked configuration, with the
    /// density of the thinned target process (half the carrier density).
    pub fn marked_subconfig(&self) -> Result<Self> {
        let marks = self
            .marks
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("configuration carries no marks".into()))?;
        let d = self.dim();
        let mut coords = Vec::new();
        let mut atten = Vec::new();
        let mut flags = Vec::new();
        for i in 0..self.len() {
            if marks[i] == 1 {
                coords.extend_from_slice(self.point(i));
                if let Some(a) = &self.attenuations {
                    atten.push(a[i]);
                }
                if let Some(f) = &self.free_flags {
                    flags.push(f[i]);
                }
            }
        }
        let _ = d;
        Ok(Self {
            cube: self.cube,
            density: self.density / 2.0,
            seed: self.seed,
            coords,
            marks: None,
            attenuations: self.attenuations.as_ref().map(|_| atten),
            free_flags: self.free_flags.as_ref().map(|_| flags),
        })
    }

    /// Sort points lexicographically, carrying per-point attributes along.
    fn canonicalize(&mut self) {
        let d = self.dim();
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        let coords = &self.coords;
        order.sort_by(|&a, &b| {
            let pa = &coords[a * d..(a + 1) * d];
            let pb = &coords[b * d..(b + 1) * d];
            pa.iter()
                .zip(pb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|c| c.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut new_coords = Vec::with_capacity(self.coords.len());
        for &i in &order {
            new_coords.extend_from_slice(&coords[i * d..(i + 1) * d]);
        }
        self.coords = new_coords;
        if let Some(m) = &self.marks {
            self.marks = Some(order.iter().map(|&i| m[i]).collect());
        }
        if let Some(a) = &self.attenuations {
            self.attenuations = Some(order.iter().map(|&i| a[i]).collect());
        }
        if let Some(f) = &self.free_flags {
            self.free_flags = Some(order.iter().map(|&i| f[i]).collect());
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.coords.len() % d != 0 {
            return Err(Error::InvalidInput("ragged coordinate buffer".into()));
        }
        for p in self.points() {
            if !self.cube.contains(p) {
                return Err(Error::InvalidInput(format!(
                    "point {p:?} lies outside the box"
                )));
            }
        }
        if let Some(m) = &self.marks {
            if m.len() != self.len() || m.iter().any(|&e| e > 1) {
                return Err(Error::InvalidInput("marks must be 0/1, one per point".into()));
            }
        }
        if let Some(a) = &self.attenuations {
            if a.len() != self.len() || a.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
                return Err(Error::InvalidInput(
                    "attenuations must lie in [0,1], one per point".into(),
                ));
            }
        }
        if let Some(f) = &self.free_flags {
            if f.len() != self.len() {
                return Err(Error::InvalidInput("one free flag per point".into()));
            }
        }
        Ok(())
    }
}

/// Wire format for `PointConfig`: a flat JSON record that round-trips
/// bit-exactly (floats serialize in shortest round-trip form).
#[derive(Serialize, Deserialize, Clone)]
struct WireConfig {
    dimension: usize,
    center: Vec<f64>,
    side: f64,
    density: f64,
    seed: u64,
    points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marks: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attenuations: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    free_flags: Option<Vec<bool>>,
}

impl From<PointConfig> for WireConfig {
    fn from(cfg: PointConfig) -> Self {
        WireConfig {
            dimension: cfg.dim(),
            center: cfg.cube.center().to_vec(),
            side: cfg.cube.side(),
            density: cfg.density,
            seed: cfg.seed,
            points: cfg.points().map(|p| p.to_vec()).collect(),
            marks: cfg.marks.clone(),
            attenuations: cfg.attenuations.clone(),
            free_flags: cfg.free_flags.clone(),
        }
    }
}

impl TryFrom<WireConfig> for PointConfig {
    type Error = Error;

    fn try_from(w: WireConfig) -> Result<Self> {
        let cube = Cube::new(w.dimension, &w.center, w.side)?;
        let mut cfg = PointConfig::from_points(&cube, w.density, w.seed, w.points)?;
        if let Some(m) = w.marks {
            cfg.marks = Some(m);
        }
        if let Some(a) = w.attenuations {
            cfg.attenuations = Some(a);
        }
        if let Some(f) = w.free_flags {
            cfg.free_flags = Some(f);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sample_uniform_points(
    cube: &Cube,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let d = cube.dim();
    let mut coords = Vec::with_capacity(n * d);
    for _ in 0..n {
        for k in 0..d {
            coords.push(rng.random_range(cube.lo(k)..cube.hi(k)));
        }
    }
    coords
}

fn poisson_count(mean: f64, rng: &mut impl Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite mean");
    dist.sample(rng) as usize
}

/// Sample a Poisson configuration of the given density:
/// `N ~ Poisson(ρ·|Λ|)`, then `N` i.i.d. uniform points in the box.
pub fn sample_poisson(cube: &Cube, density: f64, seed: u64) -> Result<PointConfig> {
    sample_poisson_capped(cube, density, seed, DEFAULT_POINT_CAP)
}

pub fn sample_poisson_capped(
    cube: &Cube,
    density: f64,
    seed: u64,
    cap: f64,
) -> Result<PointConfig> {
    if !(density > 0.0) {
        return Err(Error::InvalidInput(format!("density {density} must be positive")));
    }
    let mean = density * cube.volume();
    if mean > cap {
        return Err(Error::PointCapExceeded { expected: mean, cap });
    }
    let mut rng = stream_rng(seed, 0, Stream::Points);
    let n = poisson_count(mean, &mut rng);
    let coords = sample_uniform_points(cube, n, &mut rng);
    let mut cfg = PointConfig {
        cube: *cube,
        density,
        seed,
        coords,
        marks: None,
        attenuations: None,
        free_flags: None,
    };
    cfg.canonicalize();
    Ok(cfg)
}

/// Sample a thinned representation of a density-`ρ` process: a carrier
/// Poisson process of density `2ρ` whose points carry independent fair
/// Bernoulli marks. The ε = 1 sub-configuration is distributionally
/// Poisson of density `ρ`.
pub fn sample_thinned(cube: &Cube, density: f64, seed: u64) -> Result<PointConfig> {
    sample_thinned_capped(cube, density, seed, DEFAULT_POINT_CAP)
}

pub fn sample_thinned_capped(
    cube: &Cube,
    density: f64,
    seed: u64,
    cap: f64,
) -> Result<PointConfig> {
    let mut cfg = sample_poisson_capped(cube, 2.0 * density, seed, cap)?;
    let mut rng = stream_rng(seed, 0, Stream::Marks);
    let marks: Vec<u8> = (0..cfg.len()).map(|_| u8::from(rng.random::<bool>())).collect();
    cfg.marks = Some(marks);
    Ok(cfg)
}

/// Number of points of the configuration inside `region` (half-open faces).
pub fn count(config: &PointConfig, region: &Cube) -> usize {
    config.points().filter(|p| region.contains(p)).count()
}

/// Per-cell occupancy counts on the δ-grid, keyed by cell multi-index.
pub type Occupancy = BTreeMap<[i64; MAX_DIM], u32>;

/// Occupancy map of a configuration on the grid of side `delta`.
pub fn occupancy_map(config: &PointConfig, delta: f64) -> Result<(CellGrid, Occupancy)> {
    let grid = CellGrid::new(config.cube(), delta)?;
    let mut occ = Occupancy::new();
    for p in config.points() {
        *occ.entry(grid.cell_of(p)).or_insert(0) += 1;
    }
    Ok((grid, occ))
}

/// Result of snapping a configuration to the δ-cell centers.
#[derive(Debug, Clone)]
pub struct SnapOutcome {
    pub snapped: PointConfig,
    pub grid: CellGrid,
    pub occupancy: Occupancy,
    /// True iff every δ-cell holds at most one point.
    pub admissible: bool,
}

/// Replace each point by the center of its δ-cell. Displacements are
/// bounded by the cell half-diagonal `δ√d/2`.
pub fn snap(config: &PointConfig, delta: f64) -> Result<SnapOutcome> {
    if !(delta > 0.0) || delta > config.cube().side() {
        return Err(Error::InvalidInput(format!(
            "snap resolution {delta} must lie in (0, L]"
        )));
    }
    let (grid, occupancy) = occupancy_map(config, delta)?;
    let d = config.dim();
    let mut snapped = config.clone();
    for i in 0..config.len() {
        let center = grid.cell_center(&grid.cell_of(config.point(i)));
        snapped.coords[i * d..(i + 1) * d].copy_from_slice(&center[..d]);
    }
    snapped.canonicalize();
    let admissible = occupancy.values().all(|&c| c <= 1);
    Ok(SnapOutcome {
        snapped,
        grid,
        occupancy,
        admissible,
    })
}

/// Whether two configurations in the same box are indistinguishable by the
/// counting functions on the δ-grid.
pub fn same_class(c1: &PointConfig, c2: &PointConfig, delta: f64) -> Result<bool> {
    if c1.cube() != c2.cube() {
        return Err(Error::InvalidInput(
            "configurations live in different boxes".into(),
        ));
    }
    let (_, o1) = occupancy_map(c1, delta)?;
    let (_, o2) = occupancy_map(c2, delta)?;
    Ok(o1 == o2)
}

/// Redraw each point uniformly inside its own δ-cell. The result is in the
/// same δ-equivalence class as the input by construction.
pub fn resample_within_cells(
    config: &PointConfig,
    delta: f64,
    rng: &mut impl Rng,
) -> Result<PointConfig> {
    let grid = CellGrid::new(config.cube(), delta)?;
    let d = config.dim();
    let half = 0.5 * grid.cell_side();
    let mut out = config.clone();
    for i in 0..config.len() {
        let center = grid.cell_center(&grid.cell_of(config.point(i)));
        for k in 0..d {
            out.coords[i * d + k] = rng.random_range(center[k] - half..center[k] + half);
        }
    }
    out.canonicalize();
    Ok(out)
}

/// Verdict of the per-cell occupancy event `1 ≤ N(Λ(j)) ≤ factor·ρ·ℓ^d`.
#[derive(Debug, Clone)]
pub struct CellEventReport {
    pub holds: bool,
    pub grid: CellGrid,
    /// Dense per-cell counts in flat-index order.
    pub counts: Vec<u32>,
    pub upper_bound: f64,
    pub first_violation: Option<[i64; MAX_DIM]>,
}

/// Check that every ℓ₀-cell of the box holds at least one point and at most
/// `upper_factor·ρ·ℓ^d` points (ℓ the effective cell side after the floor
/// rule).
pub fn cell_event_check(
    config: &PointConfig,
    ell0: f64,
    upper_factor: f64,
) -> Result<CellEventReport> {
    let grid = CellGrid::new(config.cube(), ell0)?;
    if grid.num_cells() > 100_000_000 {
        return Err(Error::InvalidInput(format!(
            "{} cells is too many for a dense occupancy check",
            grid.num_cells()
        )));
    }
    let mut counts = vec![0u32; grid.num_cells() as usize];
    for p in config.points() {
        counts[grid.flat_index(&grid.cell_of(p))] += 1;
    }
    let cell_volume = grid.cell_side().powi(config.dim() as i32);
    let upper_bound = upper_factor * config.density() * cell_volume;
    let mut first_violation = None;
    for idx in grid.iter_cells() {
        let c = counts[grid.flat_index(&idx)];
        if c < 1 || f64::from(c) > upper_bound {
            first_violation = Some(idx);
            break;
        }
    }
    Ok(CellEventReport {
        holds: first_violation.is_none(),
        grid,
        counts,
        upper_bound,
        first_violation,
    })
}
