//! Two-dimensional magnetostatics on one machine pole.
//!
//! Linear triangles discretize `-div(nu grad A) = J + curl H_pm` with
//! homogeneous Dirichlet conditions at shaft and stator back and
//! antiperiodic coupling between the two pole sides. The magnet geometry
//! enters only through an affine decomposition, so re-solving for a new
//! magnet needs no element loop.

pub mod affine;
pub mod assembly;
pub mod geometry;
pub mod mesh;
pub mod solve;
pub mod sparse;
pub mod verification;

use thiserror::Error;

pub use affine::{assemble_affine, precompute_affine, AffineSystem, Excitation};
pub use assembly::{assemble_direct, Sources};
pub use geometry::{Materials, Phase, PmParams, PoleGeometry, SlotSpec, Winding};
pub use mesh::{build_reference_mesh, BoundaryTag, Mesh, Region};
pub use solve::{flux_linkage, solve, FieldSolution, SolverPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("inadmissible magnet parameters {p:?} mm: {reason}")]
    InadmissiblePm { p: [f64; 3], reason: String },
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("reduced system not positive definite (pivot {pivot}: {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown phase '{0}'")]
    UnknownPhase(String),
}
