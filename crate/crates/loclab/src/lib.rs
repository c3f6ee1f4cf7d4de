//! Finite-volume laboratory for Schrödinger operators with Poisson random
//! potentials.
//!
//! The crate builds Dirichlet restrictions `H = -Δ + V` of the Poisson
//! Hamiltonian to boxes, where `V` is a sum of compactly supported bumps
//! placed at the points of a seeded Poisson process, and measures the
//! quantities that localization theory is made of: eigenfunction decay
//! rates, eigenfunction correlators, dynamical moments, resolvent norms and
//! their off-diagonal decay, the `Γ`-operator of the initial-scale argument,
//! free-site tuning, and eigenvalue stability under fine-cell moves of the
//! point configuration.
//!
//! Everything is deterministic: realizations are keyed by
//! `(master seed, realization index, stream purpose)` so reruns reproduce
//! bit-identical results independent of scheduling.

pub mod error;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod msa;
pub mod operator;
pub mod point_process;
pub mod potential;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
