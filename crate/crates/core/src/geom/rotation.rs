//! Rotation matrices, axis-angle vectors, and their derivatives.
//!
//! Rotations are stored as 3×3 matrices throughout the pipeline; axis-angle
//! appears only at I/O and loss boundaries. The axis-angle canonical form has
//! angle in `[0, π]`, with the axis sign at exactly π fixed so that losses on
//! axis-angle coordinates are reproducible.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeomError;

const ORTHONORMALITY_TOL: f64 = 1e-9;

/// A proper rotation: orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix(pub Matrix3<f64>);

/// Axis-angle vector: direction is the rotation axis, norm is the angle in
/// radians. Canonical form keeps the norm in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle(pub Vector3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Wraps a matrix after verifying orthonormality and determinant +1.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeomError> {
        let r = RotationMatrix(m);
        if r.is_valid(ORTHONORMALITY_TOL) {
            Ok(r)
        } else {
            Err(GeomError::NotARotation)
        }
    }

    /// Wraps a matrix that is known to be a rotation by construction.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let gram = self.0.transpose() * self.0;
        let dev = (gram - Matrix3::identity()).amax();
        dev <= tol && (self.0.determinant() - 1.0).abs() <= tol
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn compose(&self, other: &Self) -> Self {
        RotationMatrix(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Rotation about the x axis.
    pub fn rot_x(angle: f64) -> Self {
        axis_angle_to_matrix(&AxisAngle(Vector3::new(angle, 0.0, 0.0)))
    }

    /// Rotation about the y axis.
    pub fn rot_y(angle: f64) -> Self {
        axis_angle_to_matrix(&AxisAngle(Vector3::new(0.0, angle, 0.0)))
    }

    /// Rotation about the z axis.
    pub fn rot_z(angle: f64) -> Self {
        axis_angle_to_matrix(&AxisAngle(Vector3::new(0.0, 0.0, angle)))
    }
}

impl AxisAngle {
    pub fn zero() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// Skew-symmetric cross-product matrix `[v]×`.
pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula. The zero vector maps to the identity; angles are
/// 2π-periodic.
pub fn axis_angle_to_matrix(v: &AxisAngle) -> RotationMatrix {
    let theta = v.0.norm();
    if theta < 1e-12 {
        // Second-order expansion keeps the map smooth through zero.
        let k = skew(&v.0);
        return RotationMatrix(Matrix3::identity() + k + k * k * 0.5);
    }
    let axis = v.0 / theta;
    let k = skew(&axis);
    let m = Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos());
    RotationMatrix(m)
}

/// Logarithm map to canonical axis-angle: angle in `[0, π]`, and at exactly π
/// the axis sign is fixed by making its first nonzero component positive.
pub fn matrix_to_axis_angle(r: &RotationMatrix) -> Result<AxisAngle, GeomError> {
    if !r.is_valid(1e-7) {
        return Err(GeomError::NotARotation);
    }
    let m = &r.0;
    let trace = m.m11 + m.m22 + m.m33;
    let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();

    // w = (R - Rᵀ)^∨ = 2 sin(θ) * axis
    let w = Vector3::new(m.m32 - m.m23, m.m13 - m.m31, m.m21 - m.m12);

    if theta < 1e-7 {
        // R ≈ I + [v]×, so v ≈ w / 2.
        return Ok(AxisAngle(w * 0.5));
    }
    if std::f64::consts::PI - theta > 1e-6 {
        let axis = w / (2.0 * theta.sin());
        return Ok(AxisAngle(axis * theta));
    }

    // Near π the anti-symmetric part vanishes; recover the axis from the
    // symmetric part R + I = 2 aaᵀ (1 + cos θ) / ... via the largest diagonal.
    let b = (m + Matrix3::identity()) * 0.5; // ≈ aaᵀ at θ = π
    let diag = [b.m11, b.m22, b.m33];
    let k = if diag[0] >= diag[1] && diag[0] >= diag[2] {
        0
    } else if diag[1] >= diag[2] {
        1
    } else {
        2
    };
    let mut axis = Vector3::new(
        b[(0, k)] / diag[k].sqrt().max(1e-12),
        b[(1, k)] / diag[k].sqrt().max(1e-12),
        b[(2, k)] / diag[k].sqrt().max(1e-12),
    );
    axis.normalize_mut();
    // Close to (but not at) π the sign still comes from w; at π it is fixed
    // by the first-nonzero-positive convention.
    if w.norm() > 1e-12 {
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
    } else {
        for i in 0..3 {
            if axis[i].abs() > 1e-12 {
                if axis[i] < 0.0 {
                    axis = -axis;
                }
                break;
            }
        }
    }
    Ok(AxisAngle(axis * theta))
}

/// Geodesic angle between two rotations, in radians.
pub fn geodesic_angle(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let rel = a.0.transpose() * b.0;
    let trace = rel.m11 + rel.m22 + rel.m33;
    ((trace - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

/// Derivative of the Rodrigues map: `∂R/∂v_k` for each axis-angle component.
///
/// Uses the closed form of Gallego & Yezzi; at small angles the limit
/// `∂R/∂v_k = [e_k]×` is used.
pub fn rodrigues_jacobian(v: &AxisAngle) -> [Matrix3<f64>; 3] {
    let theta2 = v.0.norm_squared();
    let r = axis_angle_to_matrix(v).0;
    let mut out = [Matrix3::zeros(); 3];
    if theta2 < 1e-14 {
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = 1.0;
            out[k] = skew(&e);
        }
        return out;
    }
    let eye = Matrix3::identity();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = 1.0;
        let cross = v.0.cross(&((eye - r) * e));
        let m = (skew(&v.0) * v.0[k] + skew(&cross)) / theta2;
        out[k] = m * r;
    }
    out
}

/// Differential of the canonical log map: given a rotation `r` and a
/// perturbation `dr` of its entries, returns the induced change in the
/// canonical axis-angle vector.
///
/// Valid away from θ = π, where the log map is not differentiable.
pub fn log_map_differential(r: &RotationMatrix, dr: &Matrix3<f64>) -> Vector3<f64> {
    let m = &r.0;
    let trace = m.m11 + m.m22 + m.m33;
    let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let w = Vector3::new(m.m32 - m.m23, m.m13 - m.m31, m.m21 - m.m12);
    let dw = Vector3::new(dr.m32 - dr.m23, dr.m13 - dr.m31, dr.m21 - dr.m12);
    let dtrace = dr.m11 + dr.m22 + dr.m33;

    // v = f(θ) w with f = θ / (2 sin θ); dθ = -dtrace / (2 sin θ).
    if theta < 1e-4 {
        // f ≈ 1/2 + θ²/12; the (f'(θ)·dθ)·w term reduces to -(dtrace/12)·w
        // at leading order, negligible against f·dw for small w.
        let f = 0.5 + theta * theta / 12.0;
        return dw * f - w * (dtrace / 12.0);
    }
    let sin_theta = theta.sin();
    let f = theta / (2.0 * sin_theta);
    let fprime = (sin_theta - theta * cos_theta) / (2.0 * sin_theta * sin_theta);
    let dtheta = -dtrace / (2.0 * sin_theta);
    dw * f + w * (fprime * dtheta)
}
