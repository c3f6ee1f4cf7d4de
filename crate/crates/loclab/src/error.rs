//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("expected point count {expected:.3e} exceeds hard cap {cap:.3e}; refusing to sample")]
    PointCapExceeded { expected: f64, cap: f64 },

    #[error("grid spacing {h} does not divide side {side} (remainder {rem:.3e})")]
    NonCommensurateSpacing { h: f64, side: f64, rem: f64 },

    #[error("grid has {nodes} nodes, exceeding cap {cap}")]
    GridCapExceeded { nodes: usize, cap: usize },

    #[error("operation requires a dense path but {nodes} nodes exceed the dense cap {cap}")]
    DenseCapExceeded { nodes: usize, cap: usize },

    #[error("sublattice cell {cell:?} contains no points; run the cell-occupancy check first")]
    EmptySublatticeCell { cell: Vec<i64> },

    #[error(
        "single-site supports may overlap: need 2ℓ - ℓ√d > 2r_u, got ℓ = {ell}, r_u = {r_u}"
    )]
    SupportsMayOverlap { ell: f64, r_u: f64 },

    #[error("quadrature resolution {res} is coarser than r_u/4 = {limit}; refusing to undersample the bump")]
    QuadratureTooCoarse { res: f64, limit: f64 },

    #[error("energy {energy} is within {dist:.3e} of the spectrum; resolvent solve refused")]
    Resonance { energy: f64, dist: f64 },

    #[error("eigensolver did not converge: {0}")]
    EigenFailure(String),

    #[error("polynomial propagator cannot reach tolerance {tol:.1e} within degree {max_degree}")]
    PropagatorDegreeExceeded { tol: f64, max_degree: usize },

    #[error("insufficient decay range: {found} usable distance shells, need at least {need}")]
    InsufficientDecayRange { found: usize, need: usize },

    #[error("{n_free} free sites exceed the exhaustive-search cap {cap}; reduce the scale")]
    FreeSiteCapExceeded { n_free: usize, cap: usize },

    #[error("scale derivation failed: {0}")]
    ScaleDerivation(String),

    #[error("zero vector where a normalized state was required")]
    ZeroVector,

    #[error("{0}")]
    InvalidInput(String),
}
