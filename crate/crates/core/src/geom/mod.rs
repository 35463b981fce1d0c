//! Geometry core: rotations, rigid and similarity registration, 2D affine
//! grid resampling, positional encodings, Laplacian smoothing, and a
//! finite-difference gradient checker.
//!
//! Everything here is a pure function of its inputs and safe to call from
//! multiple threads.

mod affine;
mod gradcheck;
mod grid;
mod mesh;
pub mod obj;
mod rigid;
mod rotation;

pub use affine::Affine2D;
pub use gradcheck::{check_gradient, GradCheckReport};
pub use grid::{positional_encoding_2d, resample_grid, resample_vjp, TokenGrid};
pub use mesh::{laplacian_smooth, vertex_adjacency, Mesh};
pub use rigid::{
    apply_rigid, kabsch_differential, kabsch_rigid, procrustes_similarity, registration_residual,
    RigidTransform,
};
pub use rotation::{
    axis_angle_to_matrix, geodesic_angle, log_map_differential, matrix_to_axis_angle,
    rodrigues_jacobian, AxisAngle, RotationMatrix,
};

use thiserror::Error;

/// Errors raised by geometry operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("matrix is not a rotation (orthonormality/determinant check failed)")]
    NotARotation,
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("invalid grid dimensions: {0}")]
    InvalidDims(&'static str),
    #[error("vertex {0} in smoothing set has no neighbors")]
    IsolatedVertex(usize),
    #[error("function evaluated to a non-finite value during gradient check")]
    NonFiniteEvaluation,
    #[error("affine linear part is not invertible")]
    SingularAffine,
    #[error("dimension mismatch: {0}")]
    DimMismatch(&'static str),
    #[error("mesh face references vertex {0} out of bounds")]
    FaceIndexOutOfBounds(usize),
}
