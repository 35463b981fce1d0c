//! Training losses and their adjoints.
//!
//! Rotation losses are ℓ1 distances in canonicalized axis-angle coordinates;
//! keypoint losses subtract a per-kind reference joint (pelvis for full-body
//! samples, right wrist for interacting-hand samples, the own wrist for
//! single-hand samples) before the ℓ1. The upright regularizer keeps the
//! root pose vertical for samples without full-body annotations.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{matrix_to_axis_angle, RotationMatrix};
use crate::model::{global_joint_orientation, ArticulatedModelSpec, Camera, HandSide, PoseState};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    FullBody,
    InteractingHands,
    SingleHand,
}

impl SampleKind {
    /// Whether the sample carries full-body pose/shape annotations.
    pub fn has_body_annotations(&self) -> bool {
        matches!(self, SampleKind::FullBody)
    }

    pub fn as_u8(&self) -> u8 {
        match self {
            SampleKind::FullBody => 0,
            SampleKind::InteractingHands => 1,
            SampleKind::SingleHand => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<SampleKind> {
        match v {
            0 => Some(SampleKind::FullBody),
            1 => Some(SampleKind::InteractingHands),
            2 => Some(SampleKind::SingleHand),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub pose: f64,
    pub shape: f64,
    pub keypoint_3d: f64,
    pub keypoint_2d: f64,
    pub wrist_orientation: f64,
    pub upright: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // All terms equally weighted.
        LossWeights {
            pose: 1.0,
            shape: 1.0,
            keypoint_3d: 1.0,
            keypoint_2d: 1.0,
            wrist_orientation: 1.0,
            upright: 1.0,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean ℓ1 distance between canonicalized axis-angle coordinate vectors.
pub fn axis_angle_l1(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64, TrainError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(TrainError::DimMismatch("rotation counts differ"));
    }
    let mut acc = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for k in 0..3 {
            acc += (p[k] - g[k]).abs();
        }
    }
    Ok(acc / (3.0 * pred.len() as f64))
}

/// Gradient of [`axis_angle_l1`] with respect to `pred`.
pub fn axis_angle_l1_grad(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let scale = 1.0 / (3.0 * pred.len() as f64);
    pred.iter()
        .zip(gt)
        .map(|(p, g)| Vector3::new(sign(p.x - g.x), sign(p.y - g.y), sign(p.z - g.z)) * scale)
        .collect()
}

/// Mean ℓ1 over canonicalized axis-angle components of rotation lists.
pub fn pose_loss(pred: &[RotationMatrix], gt: &[RotationMatrix]) -> Result<f64, TrainError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(TrainError::DimMismatch("rotation counts differ"));
    }
    let pred_aa: Vec<Vector3<f64>> = pred
        .iter()
        .map(|r| matrix_to_axis_angle(r).map(|v| v.0))
        .collect::<Result<_, _>>()?;
    let gt_aa: Vec<Vector3<f64>> = gt
        .iter()
        .map(|r| matrix_to_axis_angle(r).map(|v| v.0))
        .collect::<Result<_, _>>()?;
    axis_angle_l1(&pred_aa, &gt_aa)
}

/// ℓ1 on the axis-angle of the predicted global wrist orientation against a
/// ground-truth global wrist rotation.
pub fn wrist_orientation_loss(
    body_spec: &ArticulatedModelSpec,
    pred_pose: &PoseState,
    gt_global_wrist: &RotationMatrix,
    side: HandSide,
) -> Result<f64, TrainError> {
    let pred = global_joint_orientation(body_spec, pred_pose, side.wrist_joint_name())?;
    pose_loss(&[pred], &[*gt_global_wrist])
}

/// ℓ1 against ground truth when present, mean-square magnitude penalty
/// otherwise.
pub fn shape_loss(pred_beta: &[f64], gt_beta: Option<&[f64]>) -> f64 {
    match gt_beta {
        Some(gt) => {
            let n = pred_beta.len().max(1);
            pred_beta
                .iter()
                .zip(gt)
                .map(|(p, g)| (p - g).abs())
                .sum::<f64>()
                / n as f64
        }
        None => {
            let n = pred_beta.len().max(1);
            pred_beta.iter().map(|b| b * b).sum::<f64>() / n as f64
        }
    }
}

pub fn shape_loss_grad(pred_beta: &[f64], gt_beta: Option<&[f64]>) -> Vec<f64> {
    let n = pred_beta.len().max(1) as f64;
    match gt_beta {
        Some(gt) => pred_beta
            .iter()
            .zip(gt)
            .map(|(p, g)| sign(p - g) / n)
            .collect(),
        None => pred_beta.iter().map(|b| 2.0 * b / n).collect(),
    }
}

/// Millimeters per meter: 3D keypoint losses work in millimeters so their
/// magnitudes line up with the pixel-scale 2D terms and the reported metrics.
const KEYPOINT_MM: f64 = 1000.0;

/// Reference-relative mean ℓ1 keypoint loss in millimeters. `reference`
/// indexes both lists.
pub fn keypoint_loss_3d(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    reference: usize,
) -> Result<f64, TrainError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(TrainError::DimMismatch("keypoint counts differ"));
    }
    if reference >= pred.len() {
        return Err(TrainError::MissingReference);
    }
    let pr = pred[reference];
    let gr = gt[reference];
    let mut acc = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let d = (p - pr) - (g - gr);
        acc += d.x.abs() + d.y.abs() + d.z.abs();
    }
    Ok(acc * KEYPOINT_MM / (3.0 * pred.len() as f64))
}

/// Gradient of [`keypoint_loss_3d`] w.r.t. the predicted keypoints (the
/// reference point collects the negated sum).
pub fn keypoint_loss_3d_grad(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    reference: usize,
) -> Vec<Vector3<f64>> {
    let scale = KEYPOINT_MM / (3.0 * pred.len() as f64);
    let pr = pred[reference];
    let gr = gt[reference];
    let mut grads = vec![Vector3::zeros(); pred.len()];
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        let d = (p - pr) - (g - gr);
        let s = Vector3::new(sign(d.x), sign(d.y), sign(d.z)) * scale;
        grads[i] += s;
        grads[reference] -= s;
    }
    grads
}

/// Mean ℓ1 pixel loss of projected 3D keypoints against 2D ground truth.
pub fn keypoint_loss_2d(
    pred3d: &[Vector3<f64>],
    camera: &Camera,
    gt2d: &[Vector2<f64>],
) -> Result<f64, TrainError> {
    if pred3d.len() != gt2d.len() || pred3d.is_empty() {
        return Err(TrainError::DimMismatch("keypoint counts differ"));
    }
    let projected = crate::model::project_points(camera, pred3d)?;
    let mut acc = 0.0;
    for (p, g) in projected.iter().zip(gt2d) {
        acc += (p.x - g.x).abs() + (p.y - g.y).abs();
    }
    Ok(acc / (2.0 * pred3d.len() as f64))
}

/// Gradient of [`keypoint_loss_2d`] w.r.t. the 3D points, through the
/// pinhole projection.
pub fn keypoint_loss_2d_grad(
    pred3d: &[Vector3<f64>],
    camera: &Camera,
    gt2d: &[Vector2<f64>],
) -> Result<Vec<Vector3<f64>>, TrainError> {
    let projected = crate::model::project_points(camera, pred3d)?;
    let scale = 1.0 / (2.0 * pred3d.len() as f64);
    let (fx, fy) = camera.focal;
    Ok(pred3d
        .iter()
        .zip(projected.iter().zip(gt2d))
        .map(|(p, (px, g))| {
            let sx = sign(px.x - g.x) * scale;
            let sy = sign(px.y - g.y) * scale;
            let z = p.z;
            Vector3::new(
                sx * fx / z,
                sy * fy / z,
                -sx * fx * p.x / (z * z) - sy * fy * p.y / (z * z),
            )
        })
        .collect())
}

/// The model-frame axis that should point up in the world.
pub const BODY_UP_AXIS: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// `1 − (R·body_up)·world_up`: zero when upright, 2 when upside down.
pub fn root_upright_loss(root: &RotationMatrix, world_up: &Vector3<f64>) -> f64 {
    1.0 - (root.0 * BODY_UP_AXIS).dot(world_up)
}

/// Gradient on the root rotation matrix entries.
pub fn root_upright_loss_grad(world_up: &Vector3<f64>) -> Matrix3<f64> {
    -world_up * BODY_UP_AXIS.transpose()
}

/// Adjoint of the canonical log map: folds a gradient on the axis-angle
/// vector into a gradient on the rotation matrix entries. Valid away from
/// θ = π.
pub fn log_map_vjp(r: &RotationMatrix, d_aa: &Vector3<f64>) -> Matrix3<f64> {
    let m = &r.0;
    let trace = m.m11 + m.m22 + m.m33;
    let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let w = Vector3::new(m.m32 - m.m23, m.m13 - m.m31, m.m21 - m.m12);

    let (f, diag_coeff) = if theta < 1e-4 {
        // dv = f·dw − w·(dtrace/12) at leading order.
        (0.5 + theta * theta / 12.0, -d_aa.dot(&w) / 12.0)
    } else {
        let sin_theta = theta.sin();
        let f = theta / (2.0 * sin_theta);
        let fprime = (sin_theta - theta * cos_theta) / (2.0 * sin_theta * sin_theta);
        (f, -d_aa.dot(&w) * fprime / (2.0 * sin_theta))
    };

    // d_aa·dw picks the antisymmetric entries.
    let mut out = Matrix3::from_diagonal_element(diag_coeff);
    out[(2, 1)] += f * d_aa.x;
    out[(1, 2)] -= f * d_aa.x;
    out[(0, 2)] += f * d_aa.y;
    out[(2, 0)] -= f * d_aa.y;
    out[(1, 0)] += f * d_aa.z;
    out[(0, 1)] -= f * d_aa.z;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{axis_angle_to_matrix, AxisAngle};
    use crate::model::{generate_toy_spec, ModelKind};
    use crate::rng;

    #[test]
    fn pose_loss_zero_on_equal_rotations() {
        let rots = vec![RotationMatrix::rot_x(0.4), RotationMatrix::rot_z(-1.0)];
        assert_eq!(pose_loss(&rots, &rots).unwrap(), 0.0);
    }

    #[test]
    fn pose_loss_closed_form_single_offset() {
        // One joint off by (0.3, 0, 0) among J joints: mean ℓ1 = 0.3 / (3J).
        let j = 7;
        let mut pred = vec![RotationMatrix::identity(); j];
        let gt = vec![RotationMatrix::identity(); j];
        pred[2] = axis_angle_to_matrix(&AxisAngle::new(0.3, 0.0, 0.0));
        let loss = pose_loss(&pred, &gt).unwrap();
        assert!((loss - 0.3 / (3.0 * j as f64)).abs() < 1e-12);
    }

    #[test]
    fn pose_loss_is_symmetric() {
        let mut r = rng::seeded(3);
        for _ in 0..50 {
            let a: Vec<RotationMatrix> = (0..4)
                .map(|_| {
                    axis_angle_to_matrix(&AxisAngle::new(
                        rng::normal(&mut r),
                        rng::normal(&mut r),
                        rng::normal(&mut r),
                    ))
                })
                .collect();
            let b: Vec<RotationMatrix> = (0..4)
                .map(|_| {
                    axis_angle_to_matrix(&AxisAngle::new(
                        rng::normal(&mut r),
                        rng::normal(&mut r),
                        rng::normal(&mut r),
                    ))
                })
                .collect();
            let ab = pose_loss(&a, &b).unwrap();
            let ba = pose_loss(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn wrist_loss_zero_for_matching_global_orientation_via_different_chains() {
        let spec = generate_toy_spec(ModelKind::Body, 3);
        let shoulder = spec.joint_index("left_shoulder").unwrap();
        let elbow = spec.joint_index("left_elbow").unwrap();
        let wrist = spec.joint_index("left_wrist").unwrap();

        // Pose A: all rotation at the shoulder. Pose B: split across the
        // chain. Same global wrist orientation.
        let total = RotationMatrix::rot_z(0.9).compose(&RotationMatrix::rot_x(0.3));
        let mut pose_a = PoseState::rest(&spec);
        pose_a.local_rotations[shoulder - 1] = total;
        let mut pose_b = PoseState::rest(&spec);
        let part = RotationMatrix::rot_z(0.9);
        pose_b.local_rotations[shoulder - 1] = part;
        pose_b.local_rotations[elbow - 1] =
            RotationMatrix::from_matrix_unchecked(part.0.transpose() * total.0);
        let _ = wrist;

        let gt = global_joint_orientation(&spec, &pose_a, "left_wrist").unwrap();
        let a = wrist_orientation_loss(&spec, &pose_a, &gt, HandSide::Left).unwrap();
        let b = wrist_orientation_loss(&spec, &pose_b, &gt, HandSide::Left).unwrap();
        assert!(a < 1e-12, "{a}");
        assert!(b < 1e-9, "{b}");

        // Perturbed wrist has positive loss.
        let mut pose_c = pose_b.clone();
        pose_c.local_rotations[wrist - 1] = RotationMatrix::rot_y(0.2);
        assert!(wrist_orientation_loss(&spec, &pose_c, &gt, HandSide::Left).unwrap() > 1e-3);
    }

    #[test]
    fn shape_loss_cases() {
        let gt = vec![0.5, -0.2, 0.1];
        assert_eq!(shape_loss(&gt, Some(&gt)), 0.0);
        assert_eq!(shape_loss(&[0.0; 10], None), 0.0);
        let mut beta = vec![0.0; 10];
        beta[0] = 1.0;
        assert!((shape_loss(&beta, None) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn keypoint_loss_is_translation_invariant_for_every_kind() {
        let mut r = rng::seeded(8);
        for reference in [0usize, 3] {
            for _ in 0..50 {
                let gt: Vec<Vector3<f64>> = (0..6)
                    .map(|_| {
                        Vector3::new(rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r))
                    })
                    .collect();
                let shift = Vector3::new(
                    rng::normal(&mut r) * 10.0,
                    rng::normal(&mut r) * 10.0,
                    rng::normal(&mut r) * 10.0,
                );
                let pred: Vec<Vector3<f64>> = gt.iter().map(|p| p + shift).collect();
                let loss = keypoint_loss_3d(&pred, &gt, reference).unwrap();
                assert!(loss < 1e-9, "{loss}"); // millimeters
            }
        }
    }

    #[test]
    fn keypoint_loss_closed_form_single_perturbation() {
        let gt: Vec<Vector3<f64>> = (0..5)
            .map(|i| Vector3::new(i as f64, 0.0, 0.0))
            .collect();
        let mut pred = gt.clone();
        pred[2] += Vector3::new(0.0, 0.6, 0.0); // 600 mm on one coordinate
        let loss = keypoint_loss_3d(&pred, &gt, 0).unwrap();
        assert!((loss - 600.0 / 15.0).abs() < 1e-9);
    }

    #[test]
    fn keypoint_loss_missing_reference() {
        let pts = vec![Vector3::zeros(); 3];
        assert!(matches!(
            keypoint_loss_3d(&pts, &pts, 7),
            Err(TrainError::MissingReference)
        ));
    }

    #[test]
    fn keypoint_2d_loss_cases() {
        let cam = Camera::new(500.0, 500.0, 128.0, 96.0);
        let pts = vec![
            Vector3::new(0.1, -0.2, 2.0),
            Vector3::new(-0.3, 0.1, 2.5),
        ];
        let gt = crate::model::project_points(&cam, &pts).unwrap();
        assert_eq!(keypoint_loss_2d(&pts, &cam, &gt).unwrap(), 0.0);

        let shifted: Vec<Vector2<f64>> = gt.iter().map(|p| p + Vector2::new(3.0, 0.0)).collect();
        let loss = keypoint_loss_2d(&pts, &cam, &shifted).unwrap();
        assert!((loss - 1.5).abs() < 1e-12); // 3px on half the coordinates

        // Doubling fx doubles the x-residual contribution.
        let cam2 = Camera::new(1000.0, 500.0, 128.0, 96.0);
        let gt2: Vec<Vector2<f64>> = pts
            .iter()
            .map(|p| {
                Vector2::new(
                    500.0 * p.x / p.z + 128.0 + 4.0,
                    500.0 * p.y / p.z + 96.0,
                )
            })
            .collect();
        let l1 = keypoint_loss_2d(&pts, &cam, &gt2).unwrap();
        let gt3: Vec<Vector2<f64>> = pts
            .iter()
            .map(|p| {
                Vector2::new(
                    1000.0 * p.x / p.z + 128.0 + 8.0,
                    500.0 * p.y / p.z + 96.0,
                )
            })
            .collect();
        let l2 = keypoint_loss_2d(&pts, &cam2, &gt3).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn upright_loss_analytic_values() {
        let up = Vector3::new(0.0, 1.0, 0.0);
        assert!(root_upright_loss(&RotationMatrix::identity(), &up).abs() < 1e-15);
        let upside_down = RotationMatrix::rot_z(std::f64::consts::PI);
        assert!((root_upright_loss(&upside_down, &up) - 2.0).abs() < 1e-9);
        let tilted = RotationMatrix::rot_z(std::f64::consts::FRAC_PI_2);
        assert!((root_upright_loss(&tilted, &up) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_map_vjp_matches_forward_differential() {
        let mut r = rng::seeded(12);
        for _ in 0..30 {
            let v = AxisAngle::new(
                rng::normal(&mut r) * 0.7,
                rng::normal(&mut r) * 0.7,
                rng::normal(&mut r) * 0.7,
            );
            let rot = axis_angle_to_matrix(&v);
            let d_aa = Vector3::new(rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r));
            let vjp = log_map_vjp(&rot, &d_aa);
            // Pair against the forward differential on random matrix moves.
            let dr = Matrix3::from_fn(|_, _| rng::normal(&mut r));
            let forward = crate::geom::log_map_differential(&rot, &dr);
            let lhs = d_aa.dot(&forward);
            let rhs = vjp.component_mul(&dr).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn kind_tags_round_trip() {
        for kind in [
            SampleKind::FullBody,
            SampleKind::InteractingHands,
            SampleKind::SingleHand,
        ] {
            assert_eq!(SampleKind::from_u8(kind.as_u8()), Some(kind));
        }
    }
}
