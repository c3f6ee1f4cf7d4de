//! Boxes and cell decompositions.
//!
//! Cells are half-open, `[a, a + ℓ)` per axis, so a cell decomposition is an
//! exact partition and counting functions have no tie ambiguity on shared
//! faces.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MAX_DIM: usize = 3;

/// Axis-aligned cube: a center and a side length in dimension 1, 2, or 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    dim: usize,
    center: [f64; MAX_DIM],
    side: f64,
}

impl Cube {
    pub fn new(dim: usize, center: &[f64], side: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidBox(format!("dimension {dim} not in 1..=3")));
        }
        if center.len() != dim {
            return Err(Error::InvalidBox(format!(
                "center has {} coordinates, expected {dim}",
                center.len()
            )));
        }
        if !(side > 0.0) || !side.is_finite() {
            return Err(Error::InvalidBox(format!("side {side} must be positive")));
        }
        let mut c = [0.0; MAX_DIM];
        c[..dim].copy_from_slice(center);
        Ok(Self { dim, center: c, side })
    }

    /// Cube of the given side centered at the origin.
    pub fn centered(dim: usize, side: f64) -> Result<Self> {
        Self::new(dim, &[0.0; MAX_DIM][..dim], side)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn center(&self) -> &[f64] {
        &self.center[..self.dim]
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.center[axis] - 0.5 * self.side
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.center[axis] + 0.5 * self.side
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Half-open membership: `lo ≤ x < hi` on every axis.
    pub fn contains(&self, p: &[f64]) -> bool {
        (0..self.dim).all(|k| p[k] >= self.lo(k) && p[k] < self.hi(k))
    }

    /// Sub-cube of side `side` centered at `center` (not required to be
    /// contained in `self`).
    pub fn subcube(&self, center: &[f64], side: f64) -> Result<Cube> {
        Cube::new(self.dim, center, side)
    }
}

/// Decomposition of a cube into equal half-open cells.
///
/// When the requested cell side does not divide the box side exactly, the
/// grid uses `floor(L/ℓ)` cells per axis of side `L/floor(L/ℓ)`, which keeps
/// the tiling an exact partition with no remainder slivers.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    cube: Cube,
    cells_per_axis: usize,
    cell_side: f64,
}

impl CellGrid {
    pub fn new(cube: &Cube, requested_cell_side: f64) -> Result<Self> {
        if !(requested_cell_side > 0.0) {
            return Err(Error::InvalidBox(format!(
                "cell side {requested_cell_side} must be positive"
            )));
        }
        if requested_cell_side > cube.side() {
            return Err(Error::InvalidBox(format!(
                "cell side {requested_cell_side} exceeds box side {}",
                cube.side()
            )));
        }
        let cells_per_axis = (cube.side() / requested_cell_side).floor().max(1.0) as usize;
        let cell_side = cube.side() / cells_per_axis as f64;
        Ok(Self {
            cube: *cube,
            cells_per_axis,
            cell_side,
        })
    }

    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    pub fn dim(&self) -> usize {
        self.cube.dim()
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn cell_side(&self) -> f64 {
        self.cell_side
    }

    /// Total number of cells, which can overflow `usize` for very fine grids;
    /// callers that materialize per-cell data must check this first.
    pub fn num_cells(&self) -> u128 {
        (self.cells_per_axis as u128).pow(self.dim() as u32)
    }

    /// Multi-index of the cell containing `p`. Points must lie in the cube;
    /// the index is clamped against roundoff at the far faces.
    pub fn cell_of(&self, p: &[f64]) -> [i64; MAX_DIM] {
        let mut idx = [0i64; MAX_DIM];
        for k in 0..self.dim() {
            let t = ((p[k] - self.cube.lo(k)) / self.cell_side).floor() as i64;
            idx[k] = t.clamp(0, self.cells_per_axis as i64 - 1);
        }
        idx
    }

    /// Center of the cell with the given multi-index.
    pub fn cell_center(&self, idx: &[i64; MAX_DIM]) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        for k in 0..self.dim() {
            c[k] = self.cube.lo(k) + (idx[k] as f64 + 0.5) * self.cell_side;
        }
        c
    }

    /// The cell with the given multi-index as a cube region.
    pub fn cell_cube(&self, idx: &[i64; MAX_DIM]) -> Cube {
        let c = self.cell_center(idx);
        Cube::new(self.dim(), &c[..self.dim()], self.cell_side).expect("valid cell")
    }

    /// Flat index for dense per-cell storage (lexicographic, axis 0 fastest).
    pub fn flat_index(&self, idx: &[i64; MAX_DIM]) -> usize {
        let m = self.cells_per_axis as i64;
        let mut flat = 0i64;
        for k in (0..self.dim()).rev() {
            flat = flat * m + idx[k];
        }
        flat as usize
    }

    /// Iterate all cell multi-indices. Only valid when the cell count fits
    /// in memory; use `num_cells` to check.
    pub fn iter_cells(&self) -> impl Iterator<Item = [i64; MAX_DIM]> + '_ {
        let m = self.cells_per_axis as i64;
        let dim = self.dim();
        let total = (m as u128).pow(dim as u32) as i64;
        (0..total).map(move |flat| {
            let mut idx = [0i64; MAX_DIM];
            let mut rest = flat;
            for item in idx.iter_mut().take(dim) {
                *item = rest % m;
                rest /= m;
            }
            idx
        })
    }
}

/// Euclidean distance between the first `dim` coordinates.
pub fn dist(a: &[f64], b: &[f64], dim: usize) -> f64 {
    (0..dim).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}
