//! 2D affine maps between grid coordinate frames and full-image pixels.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::GeomError;

/// A 2×3 affine map from crop/grid coordinates to full-image pixel
/// coordinates: `p_image = A · p_grid + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2D {
    /// Linear part, row-major.
    pub linear: [[f64; 2]; 2],
    /// Translation part.
    pub offset: [f64; 2],
}

impl Affine2D {
    pub fn new(linear: [[f64; 2]; 2], offset: [f64; 2]) -> Self {
        Affine2D { linear, offset }
    }

    pub fn identity() -> Self {
        Affine2D::new([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    }

    /// Axis-aligned map: grid coords scaled by `(sx, sy)` then shifted.
    pub fn scale_offset(sx: f64, sy: f64, ox: f64, oy: f64) -> Self {
        Affine2D::new([[sx, 0.0], [0.0, sy]], [ox, oy])
    }

    fn linear_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(
            self.linear[0][0],
            self.linear[0][1],
            self.linear[1][0],
            self.linear[1][1],
        )
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.linear[0][0] * x + self.linear[0][1] * y + self.offset[0],
            self.linear[1][0] * x + self.linear[1][1] * y + self.offset[1],
        )
    }

    pub fn determinant(&self) -> f64 {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    pub fn is_invertible(&self) -> bool {
        self.determinant().abs() > 1e-12
    }

    /// Inverse map (image pixels back to grid coordinates).
    pub fn inverse(&self) -> Result<Affine2D, GeomError> {
        if !self.is_invertible() {
            return Err(GeomError::SingularAffine);
        }
        let inv = self
            .linear_matrix()
            .try_inverse()
            .ok_or(GeomError::SingularAffine)?;
        let b = inv * Vector2::new(self.offset[0], self.offset[1]);
        Ok(Affine2D::new(
            [[inv.m11, inv.m12], [inv.m21, inv.m22]],
            [-b.x, -b.y],
        ))
    }

    /// Flat `[a00, a01, a10, a11, b0, b1]` form for binary records.
    pub fn to_flat(&self) -> [f64; 6] {
        [
            self.linear[0][0],
            self.linear[0][1],
            self.linear[1][0],
            self.linear[1][1],
            self.offset[0],
            self.offset[1],
        ]
    }

    pub fn from_flat(f: &[f64; 6]) -> Self {
        Affine2D::new([[f[0], f[1]], [f[2], f[3]]], [f[4], f[5]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips() {
        let a = Affine2D::new([[2.0, 0.5], [-0.25, 3.0]], [10.0, -4.0]);
        let inv = a.inverse().unwrap();
        let (x, y) = a.apply(1.5, -2.0);
        let (bx, by) = inv.apply(x, y);
        assert!((bx - 1.5).abs() < 1e-12 && (by + 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_affine_rejected() {
        let a = Affine2D::new([[1.0, 2.0], [2.0, 4.0]], [0.0, 0.0]);
        assert_eq!(a.inverse().unwrap_err(), GeomError::SingularAffine);
    }
}
