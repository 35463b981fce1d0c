//! The rendering protocol of the synthetic universe.
//!
//! Scenes are "photographed" into token grids instead of pixels: projected
//! keypoints are splatted as Gaussians whose amplitudes carry payload values,
//! plus seeded noise. The protocol pins the channel layout and the amplitude
//! conventions, and both the dataset generator and the frozen toy hand
//! decoder are built against it — the hand estimator plays the role of a
//! model pretrained on this universe, so its decoder knows the conventions.
//!
//! Body-stream channels (C = 32):
//!   0..6    joint presence splats (joint j → channel j mod 6, amplitude 1)
//!   6..32   payload slots, splatted at every joint location:
//!           6..9   root orientation (axis-angle)
//!           9..12  root translation offset from the nominal camera distance
//!           12..18 left/right shoulder local rotation
//!           18..24 left/right elbow local rotation
//!           24..30 left/right wrist local rotation, scaled by
//!                  `body_wrist_gain` — the "limited hand diversity" of
//!                  whole-body training data
//!           30..32 first two shape coefficients
//!
//! Hand-stream channels (C = 32), rendered per side into a fine full-image
//! grid and cropped:
//!   0..8    hand joint presence splats (joint j → channel j mod 8)
//!   8..16   hand articulation latent z (θ = Θ·z)
//!   16..26  hand shape β
//!   26..32  camera-frame wrist orientation as the first two columns of
//!           R_offset·R_wrist (a 6D rotation encoding, with noise) —
//!           accurate about the hand but expressed in a frame the body
//!           chain knows nothing about

use nalgebra::{Matrix3, Vector3};

use crate::geom::{axis_angle_to_matrix, AxisAngle, RotationMatrix};

pub const CHANNELS: usize = 32;
/// Nominal body depth in meters; the translation payload and the pose head
/// are both expressed as offsets from it.
pub const NOMINAL_DEPTH: f64 = 2.6;
pub const HAND_LATENT_DIM: usize = 8;
pub const HAND_THETA_DIM: usize = 45;
pub const HAND_SHAPE_DIM: usize = 10;

pub const BODY_PRESENCE_CHANNELS: usize = 6;
pub const BODY_PAYLOAD_OFFSET: usize = 6;
pub const BODY_PAYLOAD_DIM: usize = 26;

pub const HAND_PRESENCE_CHANNELS: usize = 8;
pub const HAND_PAYLOAD_OFFSET: usize = 8;
pub const WRIST_6D_DIM: usize = 6;
pub const HAND_PAYLOAD_DIM: usize = HAND_LATENT_DIM + HAND_SHAPE_DIM + WRIST_6D_DIM;
/// Amplitude the hand stream's payload channels are rendered at (and the
/// decoder divides out). A specialized hand encoder emits a strong signal;
/// the gain also sets how much leverage the modulator's unit-scale inputs
/// carry.
pub const HAND_PAYLOAD_GAIN: f64 = 24.0;

/// Fixed rotation offset between the hand stream's camera frame and the body
/// frame. Copying the hand-stream wrist orientation verbatim inherits this
/// offset wholesale; a trained modulator can learn to undo it.
pub fn hand_stream_frame_offset() -> RotationMatrix {
    axis_angle_to_matrix(&AxisAngle::new(0.7, -0.8, 0.5))
}

/// Fixed synthesis matrix Θ mapping the hand articulation latent to the 15
/// per-joint axis-angle rotations (45 values, finger-major).
///
/// Latent slots: 0..5 per-finger curl, 5 spread, 6 global curl, 7 alternating
/// wiggle.
pub fn theta_synthesis() -> Vec<f64> {
    let mut theta = vec![0.0; HAND_THETA_DIM * HAND_LATENT_DIM];
    let mut add = |finger: usize, joint_in_finger: usize, axis: Vector3<f64>, latent: usize, gain: f64| {
        let joint = finger * 3 + joint_in_finger; // 0..15
        for k in 0..3 {
            theta[(joint * 3 + k) * HAND_LATENT_DIM + latent] += axis[k] * gain;
        }
    };
    for f in 0..5 {
        let phi = (2.0 - f as f64) * 0.10;
        // Curl axis: y rotated by the finger fan angle about z.
        let axis = Vector3::new(-phi.sin(), phi.cos(), 0.0);
        // Per-finger curl.
        add(f, 0, axis, f, 0.9);
        add(f, 1, axis, f, 1.0);
        add(f, 2, axis, f, 0.7);
        // Global curl.
        add(f, 0, axis, 6, 0.5);
        add(f, 1, axis, 6, 0.6);
        add(f, 2, axis, 6, 0.4);
        // Spread at the MCP about z.
        let spread = (f as f64 - 2.0) / 2.0;
        add(f, 0, Vector3::new(0.0, 0.0, 1.0), 5, 0.30 * spread);
        // Wiggle.
        let sign = if f % 2 == 0 { 1.0 } else { -1.0 };
        add(f, 0, Vector3::new(0.0, 0.0, 1.0), 7, 0.15 * sign);
    }
    theta
}

/// θ = Θ·z as 15 axis-angle rotations.
pub fn theta_from_latent(z: &[f64]) -> Vec<AxisAngle> {
    assert_eq!(z.len(), HAND_LATENT_DIM);
    let synth = theta_synthesis();
    (0..15)
        .map(|joint| {
            let mut v = Vector3::zeros();
            for k in 0..3 {
                let row = joint * 3 + k;
                for (l, &zl) in z.iter().enumerate() {
                    v[k] += synth[row * HAND_LATENT_DIM + l] * zl;
                }
            }
            AxisAngle(v)
        })
        .collect()
}

/// Camera-frame wrist payload: the offset frame composed with the true
/// global wrist orientation.
pub fn wrist_cam_from_global(wrist_global: &RotationMatrix) -> RotationMatrix {
    RotationMatrix::from_matrix_unchecked(hand_stream_frame_offset().0 * wrist_global.0)
}

/// Undo of [`wrist_cam_from_global`], available to evaluation oracles.
pub fn wrist_global_from_cam(wrist_cam: &Matrix3<f64>) -> RotationMatrix {
    RotationMatrix::from_matrix_unchecked(hand_stream_frame_offset().0.transpose() * wrist_cam)
}

/// 6D encoding of a rotation: its first two columns, column-major.
pub fn rotation_to_6d(r: &Matrix3<f64>) -> [f64; 6] {
    [r.m11, r.m21, r.m31, r.m12, r.m22, r.m32]
}

/// Gram-Schmidt reconstruction of a rotation from its (possibly noisy) 6D
/// encoding.
pub fn rotation_from_6d(v: &[f64; 6]) -> RotationMatrix {
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let c1 = a.normalize();
    let c2 = (b - c1 * c1.dot(&b)).normalize();
    let c3 = c1.cross(&c2);
    RotationMatrix::from_matrix_unchecked(Matrix3::from_columns(&[c1, c2, c3]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_budget_fits() {
        assert!(BODY_PAYLOAD_OFFSET + BODY_PAYLOAD_DIM <= CHANNELS);
        assert!(HAND_PAYLOAD_OFFSET + HAND_PAYLOAD_DIM <= CHANNELS);
    }

    #[test]
    fn theta_synthesis_is_latent_linear() {
        let z1 = vec![0.5, -0.2, 0.1, 0.0, 0.3, 0.2, -0.4, 0.1];
        let z2 = vec![-0.1, 0.6, 0.0, 0.2, -0.3, 0.0, 0.2, -0.2];
        let sum: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a + b).collect();
        let t1 = theta_from_latent(&z1);
        let t2 = theta_from_latent(&z2);
        let ts = theta_from_latent(&sum);
        for ((a, b), s) in t1.iter().zip(&t2).zip(&ts) {
            assert!((a.0 + b.0 - s.0).norm() < 1e-12);
        }
    }

    #[test]
    fn frame_offset_round_trips() {
        let wrist = axis_angle_to_matrix(&AxisAngle::new(0.2, 0.5, -0.3));
        let cam = wrist_cam_from_global(&wrist);
        let back = wrist_global_from_cam(&cam.0);
        assert!((back.0 - wrist.0).amax() < 1e-12);
    }

    #[test]
    fn six_d_round_trips() {
        let r = axis_angle_to_matrix(&AxisAngle::new(0.7, -0.2, 1.1));
        let v = rotation_to_6d(&r.0);
        let back = rotation_from_6d(&v);
        assert!((back.0 - r.0).amax() < 1e-12);
        assert!(back.is_valid(1e-9));
    }
}
