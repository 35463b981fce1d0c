//! End-to-end loss and gradient composition for CHAM training.
//!
//! The forward pass runs hand backbone → CHAM → body backbone → kinematics →
//! transfer; the backward pass folds every active loss term into a gradient
//! on the raw body head vector (through the decode, kinematics, skinning and
//! alignment adjoints), pushes it back through the frozen backbone to the
//! modulation stack, and finally through CHAM to its parameters. The frozen
//! backbones receive no gradient by construction.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use std::collections::BTreeMap;

use crate::backbone::{
    body_backbone_backward, body_backbone_forward, decode_backward, hand_backbone_forward,
    BodyBackboneParams, BodyForwardTrace, HandBackboneParams, HandObservation,
};
use crate::cham::{cham_backward, cham_forward, ChamGrads, ChamParams, ChamTrace};
use crate::data::SampleRecord;
use crate::geom::{matrix_to_axis_angle, Affine2D, RigidTransform};
use crate::model::diff::{fk_backward, lbs_backward_sparse, shape_backward_sparse, TransformGrads};
use crate::model::{
    forward_kinematics, global_joint_orientation, project_points, shape_mesh,
    ArticulatedModelSpec, HandSide, PoseState, ShapedModel,
};
use crate::transfer::{
    alignment_vjp, body_target_points, canonical_marker_points, canonical_hand_keypoints,
    marker_support, skin_vertices_sparse, MarkerSupport, SmoothingConfig, TransferError,
};

use super::loss::{
    axis_angle_l1, axis_angle_l1_grad, keypoint_loss_2d, keypoint_loss_2d_grad, keypoint_loss_3d,
    keypoint_loss_3d_grad, log_map_vjp, root_upright_loss, root_upright_loss_grad, shape_loss,
    shape_loss_grad, LossWeights, SampleKind,
};
use super::TrainError;

pub const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// Everything frozen that the training loop needs, with per-side marker
/// supports precomputed.
pub struct PipelineBundle<'a> {
    pub body_spec: &'a ArticulatedModelSpec,
    pub hand_spec: &'a ArticulatedModelSpec,
    pub body_backbone: &'a BodyBackboneParams,
    pub hand_backbone: &'a HandBackboneParams,
    pub smoothing: SmoothingConfig,
    pub image_dims: (f64, f64),
    pub supports: BTreeMap<HandSide, MarkerSupport>,
}

impl<'a> PipelineBundle<'a> {
    pub fn new(
        body_spec: &'a ArticulatedModelSpec,
        hand_spec: &'a ArticulatedModelSpec,
        body_backbone: &'a BodyBackboneParams,
        hand_backbone: &'a HandBackboneParams,
        smoothing: SmoothingConfig,
        image_dims: (f64, f64),
    ) -> Result<Self, TrainError> {
        let mut supports = BTreeMap::new();
        for side in [HandSide::Left, HandSide::Right] {
            supports.insert(side, marker_support(body_spec, side)?);
        }
        Ok(PipelineBundle {
            body_spec,
            hand_spec,
            body_backbone,
            hand_backbone,
            smoothing,
            image_dims,
            supports,
        })
    }

    pub fn body_affine(&self) -> Affine2D {
        let cfg = &self.body_backbone.config;
        Affine2D::scale_offset(
            self.image_dims.0 / cfg.grid_w as f64,
            self.image_dims.1 / cfg.grid_h as f64,
            0.0,
            0.0,
        )
    }
}

/// Forward state cached for the backward pass.
pub struct PipelinePrediction {
    pub observations: BTreeMap<HandSide, HandObservation>,
    pub pose: PoseState,
    pub body_trace: BodyForwardTrace,
    pub cham_trace: Option<ChamTrace>,
    pub shaped: ShapedModel,
    pub globals: Vec<RigidTransform>,
    /// Per detected side: canonical keypoints, alignment, placed keypoints.
    pub hands: BTreeMap<HandSide, HandPlacement>,
}

pub struct HandPlacement {
    pub canonical_kps: Vec<Vector3<f64>>,
    pub targets: [Vector3<f64>; 5],
    pub alignment: RigidTransform,
    pub placed_kps: Vec<Vector3<f64>>,
}

/// Runs the frozen hand backbone on each detected crop.
pub fn hand_observations(
    record: &SampleRecord,
    bundle: &PipelineBundle,
) -> Result<BTreeMap<HandSide, HandObservation>, TrainError> {
    let mut observations = BTreeMap::new();
    for side in [HandSide::Left, HandSide::Right] {
        let hand = record.hand(side);
        let obs = if hand.detected {
            hand_backbone_forward(bundle.hand_backbone, side, &hand.crop_grid)?
        } else {
            let full = Affine2D::scale_offset(
                bundle.image_dims.0 / crate::backbone::HAND_GRID as f64,
                bundle.image_dims.1 / crate::backbone::HAND_GRID as f64,
                0.0,
                0.0,
            );
            HandObservation::undetected(side, bundle.hand_backbone.channels, full)
        };
        observations.insert(side, obs);
    }
    Ok(observations)
}

/// Runs the feed-forward pipeline on one sample. With `cham = None` the body
/// backbone runs unmodulated (the frozen baseline).
pub fn forward_pipeline(
    record: &SampleRecord,
    bundle: &PipelineBundle,
    cham: Option<&ChamParams>,
) -> Result<PipelinePrediction, TrainError> {
    let observations = hand_observations(record, bundle)?;
    forward_with_observations(record, bundle, observations, cham)
}

/// Pipeline forward from precomputed hand observations (the seam used by the
/// finite-difference suites, which run at reduced channel counts the real
/// hand decoder does not support).
pub fn forward_with_observations(
    record: &SampleRecord,
    bundle: &PipelineBundle,
    observations: BTreeMap<HandSide, HandObservation>,
    cham: Option<&ChamParams>,
) -> Result<PipelinePrediction, TrainError> {
    let (modulation, cham_trace) = match cham {
        Some(params) => {
            let cfg = &bundle.body_backbone.config;
            let (stack, trace) = cham_forward(
                &observations[&HandSide::Left],
                &observations[&HandSide::Right],
                params,
                (cfg.grid_h, cfg.grid_w),
                &bundle.body_affine(),
                bundle.image_dims,
            )?;
            (Some(stack), Some(trace))
        }
        None => (None, None),
    };

    let (pose, body_trace) =
        body_backbone_forward(bundle.body_backbone, &record.body_grid, modulation.as_ref())?;

    let shaped = shape_mesh(bundle.body_spec, &pose.shape)?;
    let globals = forward_kinematics(bundle.body_spec, &pose, &shaped.rest_joints);

    let mut hands = BTreeMap::new();
    for (side, obs) in &observations {
        if !obs.detected {
            continue;
        }
        let theta = obs.theta.as_ref().expect("detected hand has theta");
        let beta = obs.beta.as_ref().expect("detected hand has beta");
        let canonical_kps = canonical_hand_keypoints(bundle.hand_spec, theta, beta)?;
        let targets = targets_from_state(bundle, *side, &shaped, &globals)?;
        let src = canonical_marker_points(bundle.hand_spec, &canonical_kps)?;
        let alignment = crate::geom::kabsch_rigid(&src, targets.as_slice())?;
        let placed_kps = canonical_kps
            .iter()
            .map(|p| alignment.apply_point(p))
            .collect();
        hands.insert(
            *side,
            HandPlacement {
                canonical_kps,
                targets,
                alignment,
                placed_kps,
            },
        );
    }

    Ok(PipelinePrediction {
        observations,
        pose,
        body_trace,
        cham_trace,
        shaped,
        globals,
        hands,
    })
}

fn targets_from_state(
    bundle: &PipelineBundle,
    side: HandSide,
    shaped: &ShapedModel,
    globals: &[RigidTransform],
) -> Result<[Vector3<f64>; 5], TrainError> {
    let support = &bundle.supports[&side];
    let skinned = skin_vertices_sparse(
        bundle.body_spec,
        &shaped.vertices,
        &shaped.rest_joints,
        globals,
        &support.vertex_ids,
    );
    let mut out = [Vector3::zeros(); 5];
    for (m, row) in support.weights.iter().enumerate() {
        for (w, v) in row.iter().zip(&skinned) {
            out[m] += v * *w;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub pose: f64,
    pub shape: f64,
    pub keypoint_3d: f64,
    pub keypoint_2d: f64,
    pub wrist_orientation: f64,
    pub upright: f64,
}

/// Ground-truth quantities shared by loss evaluation and its backward pass.
struct GroundTruth {
    aa: Vec<Vector3<f64>>,
    joints: Vec<Vector3<f64>>,
    wrist_globals: BTreeMap<HandSide, crate::geom::RotationMatrix>,
    hand_kps: BTreeMap<HandSide, Vec<Vector3<f64>>>,
}

fn ground_truth(record: &SampleRecord, bundle: &PipelineBundle) -> Result<GroundTruth, TrainError> {
    let pose = &record.body_pose;
    let mut aa = Vec::with_capacity(bundle.body_spec.joint_count);
    aa.push(matrix_to_axis_angle(&pose.root_orientation)?.0);
    for r in &pose.local_rotations {
        aa.push(matrix_to_axis_angle(r)?.0);
    }
    let shaped = shape_mesh(bundle.body_spec, &pose.shape)?;
    let globals = forward_kinematics(bundle.body_spec, pose, &shaped.rest_joints);
    let joints = globals.iter().map(|g| g.translation).collect();

    let mut wrist_globals = BTreeMap::new();
    let mut hand_kps = BTreeMap::new();
    for side in [HandSide::Left, HandSide::Right] {
        wrist_globals.insert(
            side,
            global_joint_orientation(bundle.body_spec, pose, side.wrist_joint_name())?,
        );
        let hand = record.hand(side);
        let theta = record.theta(side);
        let kps = canonical_hand_keypoints(bundle.hand_spec, &theta, &hand.beta)?;
        let targets = body_target_points(bundle.body_spec, pose, side)?;
        let src = canonical_marker_points(bundle.hand_spec, &kps)?;
        let t = crate::geom::kabsch_rigid(&src, targets.as_slice())?;
        hand_kps.insert(side, kps.iter().map(|p| t.apply_point(p)).collect());
    }
    Ok(GroundTruth {
        aa,
        joints,
        wrist_globals,
        hand_kps,
    })
}

/// Hand keypoint layout for the per-kind 3D/2D losses: interacting samples
/// concatenate right then left (right wrist is the reference at index 0);
/// single-hand samples use the detected side (own wrist at index 0).
fn hand_layout(
    kind: SampleKind,
    prediction: &PipelinePrediction,
) -> Result<Vec<HandSide>, TrainError> {
    let sides = match kind {
        SampleKind::InteractingHands => {
            if !prediction.hands.contains_key(&HandSide::Right)
                || !prediction.hands.contains_key(&HandSide::Left)
            {
                return Err(TrainError::MissingReference);
            }
            vec![HandSide::Right, HandSide::Left]
        }
        SampleKind::SingleHand => {
            let detected: Vec<HandSide> = prediction.hands.keys().copied().collect();
            if detected.len() != 1 {
                return Err(TrainError::MissingReference);
            }
            detected
        }
        SampleKind::FullBody => Vec::new(),
    };
    Ok(sides)
}

/// Loss evaluation plus the full backward pass to CHAM parameter gradients.
///
/// The returned gradients cover every CHAM tensor; the frozen backbone and
/// hand estimator receive none (there is no gradient path into them).
pub fn total_loss_with_grads(
    record: &SampleRecord,
    bundle: &PipelineBundle,
    cham: &ChamParams,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ChamGrads), TrainError> {
    let observations = hand_observations(record, bundle)?;
    total_loss_with_grads_given_obs(record, bundle, observations, cham, weights)
}

/// [`total_loss_with_grads`] from precomputed hand observations.
pub fn total_loss_with_grads_given_obs(
    record: &SampleRecord,
    bundle: &PipelineBundle,
    observations: BTreeMap<HandSide, HandObservation>,
    cham: &ChamParams,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ChamGrads), TrainError> {
    let prediction = forward_with_observations(record, bundle, observations, Some(cham))?;
    let (breakdown, d_raw) = loss_and_head_gradient(record, bundle, &prediction, weights)?;
    if !breakdown.total.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }

    let d_mods = body_backbone_backward(bundle.body_backbone, &prediction.body_trace, &d_raw, None);
    let (grads, _, _) = cham_backward(
        cham,
        &prediction.observations[&HandSide::Left],
        &prediction.observations[&HandSide::Right],
        prediction.cham_trace.as_ref().expect("cham ran"),
        &d_mods,
    )?;
    Ok((breakdown, grads))
}

/// Loss terms and the gradient on the raw body-head vector. Shared by CHAM
/// training and the gradient test suite.
pub fn loss_and_head_gradient(
    record: &SampleRecord,
    bundle: &PipelineBundle,
    prediction: &PipelinePrediction,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>), TrainError> {
    let gt = ground_truth(record, bundle)?;
    let spec = bundle.body_spec;
    let j = spec.joint_count;
    let pose = &prediction.pose;
    let decode = &prediction.body_trace.decode;

    let mut breakdown = LossBreakdown::default();
    // Gradient accumulators on the decode outputs.
    let mut d_aa_direct = vec![Vector3::zeros(); j];
    let mut d_rot = vec![Matrix3::zeros(); j];
    let mut d_translation = Vector3::zeros();
    let mut d_shape = vec![0.0; spec.shape_dim()];
    // Accumulators on the global transforms and rest joints.
    let mut d_globals = TransformGrads::zeros(j);
    let mut d_rest_from_lbs = vec![Vector3::zeros(); j];
    let mut sparse_vertex_ids: Vec<usize> = Vec::new();
    let mut sparse_vertex_grads: Vec<Vector3<f64>> = Vec::new();

    match record.kind {
        SampleKind::FullBody => {
            // Pose: mean ℓ1 on axis-angle over all joints, root included.
            breakdown.pose = axis_angle_l1(&decode.aa, &gt.aa)?;
            let g = axis_angle_l1_grad(&decode.aa, &gt.aa);
            for (acc, gg) in d_aa_direct.iter_mut().zip(g) {
                *acc += gg * weights.pose;
            }

            breakdown.shape = shape_loss(&pose.shape, Some(&record.body_pose.shape));
            let gs = shape_loss_grad(&pose.shape, Some(&record.body_pose.shape));
            for (acc, gg) in d_shape.iter_mut().zip(gs) {
                *acc += gg * weights.shape;
            }

            let pelvis = spec.joint_index("pelvis")?;
            let pred_joints: Vec<Vector3<f64>> =
                prediction.globals.iter().map(|g| g.translation).collect();
            breakdown.keypoint_3d = keypoint_loss_3d(&pred_joints, &gt.joints, pelvis)?;
            let g3 = keypoint_loss_3d_grad(&pred_joints, &gt.joints, pelvis);
            for (jj, gg) in g3.iter().enumerate() {
                d_globals.translation[jj] += gg * weights.keypoint_3d;
            }

            let gt_px = project_points(&record.camera, &gt.joints)?;
            breakdown.keypoint_2d = keypoint_loss_2d(&pred_joints, &record.camera, &gt_px)?;
            let g2 = keypoint_loss_2d_grad(&pred_joints, &record.camera, &gt_px)?;
            for (jj, gg) in g2.iter().enumerate() {
                d_globals.translation[jj] += gg * weights.keypoint_2d;
            }
        }
        SampleKind::InteractingHands | SampleKind::SingleHand => {
            // Wrist orientation supervision per detected side.
            for side in prediction.hands.keys() {
                let wrist = spec.joint_index(side.wrist_joint_name())?;
                let pred_global = prediction.globals[wrist].rotation;
                let pred_aa = matrix_to_axis_angle(&pred_global)?.0;
                let gt_aa = matrix_to_axis_angle(&gt.wrist_globals[side])?.0;
                breakdown.wrist_orientation += axis_angle_l1(&[pred_aa], &[gt_aa])?;
                let g = axis_angle_l1_grad(&[pred_aa], &[gt_aa])[0] * weights.wrist_orientation;
                d_globals.rotation[wrist] += log_map_vjp(&pred_global, &g);
            }

            // Shape regularizer (no body shape ground truth).
            breakdown.shape = shape_loss(&pose.shape, None);
            let gs = shape_loss_grad(&pose.shape, None);
            for (acc, gg) in d_shape.iter_mut().zip(gs) {
                *acc += gg * weights.shape;
            }

            // Hand keypoints in the kind's reference frame.
            let layout = hand_layout(record.kind, prediction)?;
            let mut pred_kps = Vec::new();
            let mut gt_kps = Vec::new();
            for side in &layout {
                pred_kps.extend_from_slice(&prediction.hands[side].placed_kps);
                gt_kps.extend_from_slice(&gt.hand_kps[side]);
            }
            breakdown.keypoint_3d = keypoint_loss_3d(&pred_kps, &gt_kps, 0)?;
            let mut d_kps = keypoint_loss_3d_grad(&pred_kps, &gt_kps, 0);
            for g in d_kps.iter_mut() {
                *g *= weights.keypoint_3d;
            }

            let gt_px = project_points(&record.camera, &gt_kps)?;
            breakdown.keypoint_2d = keypoint_loss_2d(&pred_kps, &record.camera, &gt_px)?;
            let g2 = keypoint_loss_2d_grad(&pred_kps, &record.camera, &gt_px)?;
            for (acc, gg) in d_kps.iter_mut().zip(g2) {
                *acc += gg * weights.keypoint_2d;
            }

            // Back through the rigid alignment into the body targets.
            let mut at = 0;
            for side in &layout {
                let placement = &prediction.hands[side];
                let n = placement.canonical_kps.len();
                let d_side = &d_kps[at..at + n];
                at += n;

                let mut d_r = Matrix3::zeros();
                let mut d_t = Vector3::zeros();
                for (d, k) in d_side.iter().zip(&placement.canonical_kps) {
                    d_r += d * k.transpose();
                    d_t += d;
                }
                match alignment_vjp(
                    bundle.hand_spec,
                    &placement.canonical_kps,
                    &placement.targets,
                    &d_r,
                    &d_t,
                ) {
                    Ok(d_targets) => {
                        // Targets are marker-weighted skinned vertices.
                        let support = &bundle.supports[side];
                        let mut d_skinned = vec![Vector3::zeros(); support.vertex_ids.len()];
                        for (m, row) in support.weights.iter().enumerate() {
                            for (w, acc) in row.iter().zip(d_skinned.iter_mut()) {
                                *acc += d_targets[m] * *w;
                            }
                        }
                        let d_shaped = lbs_backward_sparse(
                            spec,
                            &prediction.shaped.vertices,
                            &prediction.shaped.rest_joints,
                            &prediction.globals,
                            &support.vertex_ids,
                            &d_skinned,
                            &mut d_globals,
                            &mut d_rest_from_lbs,
                        );
                        sparse_vertex_ids.extend_from_slice(&support.vertex_ids);
                        sparse_vertex_grads.extend_from_slice(&d_shaped);
                    }
                    // A near-degenerate alignment contributes loss but no
                    // alignment gradient for this sample.
                    Err(TransferError::NearDegenerateAlignment) => {}
                    Err(other) => return Err(other.into()),
                }
            }

            // Root pose regularizer for samples without full-body labels.
            breakdown.upright = root_upright_loss(&pose.root_orientation, &WORLD_UP);
            d_rot[0] += root_upright_loss_grad(&WORLD_UP) * weights.upright;
        }
    }

    breakdown.total = weights.pose * breakdown.pose
        + weights.shape * breakdown.shape
        + weights.keypoint_3d * breakdown.keypoint_3d
        + weights.keypoint_2d * breakdown.keypoint_2d
        + weights.wrist_orientation * breakdown.wrist_orientation
        + weights.upright * breakdown.upright;

    // Kinematics backward: one pass over the accumulated transform grads.
    let fk = fk_backward(
        spec,
        pose,
        &prediction.shaped.rest_joints,
        &prediction.globals,
        &d_globals,
    );
    d_rot[0] += fk.root_orientation;
    for jj in 1..j {
        d_rot[jj] += fk.local_rotations[jj - 1];
    }
    d_translation += fk.root_translation;

    let mut d_rest_total = fk.rest_joints;
    for (a, b) in d_rest_total.iter_mut().zip(&d_rest_from_lbs) {
        *a += b;
    }
    let d_beta_geo = shape_backward_sparse(
        spec,
        &sparse_vertex_ids,
        &sparse_vertex_grads,
        &d_rest_total,
    );
    for (acc, g) in d_shape.iter_mut().zip(d_beta_geo) {
        *acc += g;
    }

    let d_raw = decode_backward(
        &bundle.body_backbone.config,
        &prediction.body_trace,
        &d_aa_direct,
        &d_rot,
        d_translation,
        &d_shape,
    );
    if d_raw.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok((breakdown, d_raw))
}
