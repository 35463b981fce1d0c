//! Pinhole camera and point projection.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Focal lengths in pixels.
    pub focal: (f64, f64),
    /// Principal point in pixels.
    pub principal: (f64, f64),
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Camera {
            focal: (fx, fy),
            principal: (cx, cy),
        }
    }
}

const MIN_DEPTH: f64 = 1e-6;

/// `(fx·x/z + cx, fy·y/z + cy)` per point; fails on the first point with
/// depth at or below the minimum.
pub fn project_points(
    camera: &Camera,
    pts: &[Vector3<f64>],
) -> Result<Vec<Vector2<f64>>, ModelError> {
    let mut out = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        if p.z <= MIN_DEPTH {
            return Err(ModelError::BehindCamera(i));
        }
        out.push(Vector2::new(
            camera.focal.0 * p.x / p.z + camera.principal.0,
            camera.focal.1 * p.y / p.z + camera.principal.1,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::new(1000.0, 1000.0, 500.0, 500.0)
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let px = project_points(&cam(), &[Vector3::new(0.0, 0.0, 1.0)]).unwrap();
        assert_eq!(px[0], Vector2::new(500.0, 500.0));
    }

    #[test]
    fn analytic_pinhole_offset() {
        let px = project_points(&cam(), &[Vector3::new(0.1, 0.0, 1.0)]).unwrap();
        assert_eq!(px[0], Vector2::new(600.0, 500.0));
    }

    #[test]
    fn doubling_depth_halves_pixel_offset() {
        let c = cam();
        let near = project_points(&c, &[Vector3::new(0.2, -0.3, 1.0)]).unwrap()[0];
        let far = project_points(&c, &[Vector3::new(0.2, -0.3, 2.0)]).unwrap()[0];
        let off_near = near - Vector2::new(500.0, 500.0);
        let off_far = far - Vector2::new(500.0, 500.0);
        assert!((off_near * 0.5 - off_far).amax() < 1e-9);
    }

    #[test]
    fn behind_camera_reports_index() {
        let pts = [Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, -0.5)];
        match project_points(&cam(), &pts) {
            Err(ModelError::BehindCamera(1)) => {}
            other => panic!("expected BehindCamera(1), got {other:?}"),
        }
    }
}
