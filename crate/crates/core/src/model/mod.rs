//! Parametric articulated mesh models: a toy body and a toy hand that mirror
//! the structure of full-scale whole-body/hand models at reduced vertex
//! counts. Covers spec loading and validation, shape blending, forward
//! kinematics, linear blend skinning, keypoints, and pinhole projection.

mod camera;
pub mod diff;
mod kinematics;
mod pose;
mod spec;
mod toy;

pub use camera::{project_points, Camera};
pub use kinematics::{
    forward_kinematics, global_joint_orientation, keypoints_3d, rest_global_transforms,
    shape_mesh, skin_mesh, ShapedModel,
};
pub use pose::PoseState;
pub use spec::{
    load_model_spec, save_model_spec, ArticulatedModelSpec, HandRegion, HandSide, MarkerName,
    ModelKind, SCHEMA_VERSION,
};
pub use toy::generate_toy_spec;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to parse model spec: {0}")]
    ParseError(String),
    #[error("model spec invariant violated in field `{field}`: {detail}")]
    InvariantViolation { field: &'static str, detail: String },
    #[error("dimension mismatch: {0}")]
    DimMismatch(&'static str),
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("unknown side")]
    UnknownSide,
    #[error("point {0} is behind the camera")]
    BehindCamera(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl ModelError {
    pub fn invariant(field: &'static str, detail: impl Into<String>) -> Self {
        ModelError::InvariantViolation {
            field,
            detail: detail.into(),
        }
    }

    /// The field named by an invariant violation, for tests.
    pub fn violated_field(&self) -> Option<&'static str> {
        match self {
            ModelError::InvariantViolation { field, .. } => Some(field),
            _ => None,
        }
    }
}
