//! Pose state of one model instance.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::RotationMatrix;

use super::{ArticulatedModelSpec, ModelError};

/// Root transform, per-joint local rotations, and shape coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseState {
    pub root_orientation: RotationMatrix,
    pub root_translation: Vector3<f64>,
    /// One local rotation per non-root joint, indexed by `joint - 1`.
    pub local_rotations: Vec<RotationMatrix>,
    pub shape: Vec<f64>,
}

impl PoseState {
    /// Identity rotations, zero translation, zero shape.
    pub fn rest(spec: &ArticulatedModelSpec) -> Self {
        PoseState {
            root_orientation: RotationMatrix::identity(),
            root_translation: Vector3::zeros(),
            local_rotations: vec![RotationMatrix::identity(); spec.joint_count - 1],
            shape: vec![0.0; spec.shape_dim()],
        }
    }

    pub fn validate_for(&self, spec: &ArticulatedModelSpec) -> Result<(), ModelError> {
        if self.local_rotations.len() != spec.joint_count - 1 {
            return Err(ModelError::DimMismatch("local_rotations length must be J-1"));
        }
        if self.shape.len() != spec.shape_dim() {
            return Err(ModelError::DimMismatch("shape length must be B"));
        }
        Ok(())
    }

    /// Local rotation of the given joint (root joint returns the root
    /// orientation).
    pub fn joint_rotation(&self, joint: usize) -> &RotationMatrix {
        if joint == 0 {
            &self.root_orientation
        } else {
            &self.local_rotations[joint - 1]
        }
    }

    /// Exact float equality across every field, for frozen-baseline checks.
    pub fn bits_eq(&self, other: &PoseState) -> bool {
        let m_eq = |a: &RotationMatrix, b: &RotationMatrix| {
            a.0.iter().zip(b.0.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        m_eq(&self.root_orientation, &other.root_orientation)
            && self
                .root_translation
                .iter()
                .zip(other.root_translation.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits())
            && self.local_rotations.len() == other.local_rotations.len()
            && self
                .local_rotations
                .iter()
                .zip(&other.local_rotations)
                .all(|(a, b)| m_eq(a, b))
            && self.shape.len() == other.shape.len()
            && self
                .shape
                .iter()
                .zip(&other.shape)
                .all(|(x, y)| x.to_bits() == y.to_bits())
    }
}
