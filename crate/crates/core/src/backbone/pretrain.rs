//! Body backbone pretraining.
//!
//! Reproduces the supervision gap: the backbone trains on full-body samples
//! with clean body labels but wrist-orientation labels corrupted by fixed
//! per-sample axis-angle noise, and its input stream carries only a weak
//! wrist payload. After training the parameters are frozen and hashed; the
//! held-out report shows low body error next to a persistent wrist
//! orientation error — the gap the modulator is trained to close.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::data::Dataset;
use crate::geom::{axis_angle_to_matrix, geodesic_angle, matrix_to_axis_angle, AxisAngle};
use crate::model::diff::{fk_backward, shape_backward_sparse, TransformGrads};
use crate::model::{forward_kinematics, global_joint_orientation, shape_mesh, skin_mesh, HandSide};
use crate::rng;
use crate::train::{
    axis_angle_l1, axis_angle_l1_grad, keypoint_loss_3d, keypoint_loss_3d_grad, mpvpe, shape_loss,
    shape_loss_grad, SampleKind, TrainError,
};

use super::body::{
    body_backbone_backward, body_backbone_forward, decode_backward, init_body_backbone,
    BodyBackboneParams, BodyParamGrads,
};
use super::content_hash;

pub use crate::config::PretrainConfig;

#[derive(Debug, Clone, Serialize)]
pub struct PretrainReport {
    pub steps: usize,
    pub train_samples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
    pub heldout_body_mpvpe: f64,
    pub heldout_wrist_geodesic: f64,
    pub content_hash: String,
}

/// Corrupted wrist label: `exp(ν)·R` with ν fixed per `(seed, sample, side)`.
fn corrupted_wrist_aa(
    clean: &crate::geom::RotationMatrix,
    sigma: f64,
    seed: u64,
    sample: usize,
    side: HandSide,
) -> Vector3<f64> {
    let label = 2 * sample as u64 + if side == HandSide::Left { 0 } else { 1 };
    let mut r = rng::substream(seed ^ 0x636f7272, label);
    let noise = AxisAngle::new(
        rng::normal(&mut r) * sigma,
        rng::normal(&mut r) * sigma,
        rng::normal(&mut r) * sigma,
    );
    let corrupted = axis_angle_to_matrix(&noise).0 * clean.0;
    matrix_to_axis_angle(&crate::geom::RotationMatrix::from_matrix_unchecked(corrupted))
        .map(|v| v.0)
        .unwrap_or_else(|_| Vector3::zeros())
}

struct PretrainSampleLoss {
    total: f64,
    d_raw: Vec<f64>,
}

fn sample_loss(
    params: &BodyBackboneParams,
    dataset: &Dataset,
    index: usize,
    sigma: f64,
    seed: u64,
    config_weights: (f64, f64, f64),
) -> Result<(PretrainSampleLoss, super::body::BodyForwardTrace), TrainError> {
    let record = dataset.read_sample(index)?;
    let spec = &dataset.body_spec;
    let (pose, trace) = body_backbone_forward(params, &record.body_grid, None)?;

    // Labels: clean everywhere except the wrist slots.
    let gt_pose = &record.body_pose;
    let mut gt_aa = Vec::with_capacity(spec.joint_count);
    gt_aa.push(matrix_to_axis_angle(&gt_pose.root_orientation)?.0);
    for r in &gt_pose.local_rotations {
        gt_aa.push(matrix_to_axis_angle(r)?.0);
    }
    for side in [HandSide::Left, HandSide::Right] {
        let wrist = spec.joint_index(side.wrist_joint_name())?;
        gt_aa[wrist] = corrupted_wrist_aa(
            &gt_pose.local_rotations[wrist - 1],
            sigma,
            seed,
            index,
            side,
        );
    }

    let pcfg = &config_weights;
    let decode = &trace.decode;
    let pose_term = pcfg.0 * axis_angle_l1(&decode.aa, &gt_aa)?;
    let mut d_aa = axis_angle_l1_grad(&decode.aa, &gt_aa);
    for g in d_aa.iter_mut() {
        *g *= pcfg.0;
    }

    let shape_term = pcfg.1 * shape_loss(&pose.shape, Some(&gt_pose.shape));
    let d_shape_term: Vec<f64> = shape_loss_grad(&pose.shape, Some(&gt_pose.shape))
        .iter()
        .map(|g| g * pcfg.1)
        .collect();

    // 3D keypoints, pelvis-relative, against the clean skeleton.
    let shaped = shape_mesh(spec, &pose.shape)?;
    let globals = forward_kinematics(spec, &pose, &shaped.rest_joints);
    let pred_joints: Vec<Vector3<f64>> = globals.iter().map(|g| g.translation).collect();
    let gt_shaped = shape_mesh(spec, &gt_pose.shape)?;
    let gt_joints: Vec<Vector3<f64>> =
        forward_kinematics(spec, gt_pose, &gt_shaped.rest_joints)
            .iter()
            .map(|g| g.translation)
            .collect();
    let pelvis = spec.joint_index("pelvis")?;
    let kp_term = pcfg.2 * keypoint_loss_3d(&pred_joints, &gt_joints, pelvis)?;
    let d_joints = keypoint_loss_3d_grad(&pred_joints, &gt_joints, pelvis);

    let mut d_globals = TransformGrads::zeros(spec.joint_count);
    for (j, g) in d_joints.iter().enumerate() {
        d_globals.translation[j] += g * pcfg.2;
    }
    let fk = fk_backward(spec, &pose, &shaped.rest_joints, &globals, &d_globals);
    let mut d_rot = vec![Matrix3::zeros(); spec.joint_count];
    d_rot[0] += fk.root_orientation;
    for j in 1..spec.joint_count {
        d_rot[j] += fk.local_rotations[j - 1];
    }
    let mut d_shape = shape_backward_sparse(spec, &[], &[], &fk.rest_joints);
    for (acc, g) in d_shape.iter_mut().zip(&d_shape_term) {
        *acc += g;
    }

    let d_raw = decode_backward(
        &params.config,
        &trace,
        &d_aa,
        &d_rot,
        fk.root_translation,
        &d_shape,
    );
    let total = pose_term + shape_term + kp_term;
    if !total.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok((PretrainSampleLoss { total, d_raw }, trace))
}

fn scale_params(grads: &mut BodyParamGrads, scale: f64) {
    for b in grads.blocks.iter_mut() {
        for v in b
            .token_mix
            .iter_mut()
            .chain(b.token_bias.iter_mut())
            .chain(b.mlp_w.iter_mut())
            .chain(b.mlp_b.iter_mut())
        {
            *v *= scale;
        }
    }
    for v in grads.head_w.iter_mut().chain(grads.head_b.iter_mut()) {
        *v *= scale;
    }
}

fn apply_update(params: &mut BodyBackboneParams, grads: &BodyParamGrads, lr: f64) {
    for (p, g) in params.blocks.iter_mut().zip(&grads.blocks) {
        for (a, b) in p.token_mix.iter_mut().zip(&g.token_mix) {
            *a -= lr * b;
        }
        for (a, b) in p.token_bias.iter_mut().zip(&g.token_bias) {
            *a -= lr * b;
        }
        for (a, b) in p.mlp_w.iter_mut().zip(&g.mlp_w) {
            *a -= lr * b;
        }
        for (a, b) in p.mlp_b.iter_mut().zip(&g.mlp_b) {
            *a -= lr * b;
        }
    }
    for (a, b) in params.head_w.iter_mut().zip(&grads.head_w) {
        *a -= lr * b;
    }
    for (a, b) in params.head_b.iter_mut().zip(&grads.head_b) {
        *a -= lr * b;
    }
}

/// Trains the body backbone on the full-body portion of the train split by
/// plain gradient descent (learning rate ×0.1 at 3/4 of the steps), then
/// freezes and hashes it.
pub fn pretrain_body_backbone(
    dataset: &Dataset,
    config: &PipelineConfig,
    seed: u64,
) -> Result<(BodyBackboneParams, PretrainReport), TrainError> {
    let mut params = init_body_backbone(config.backbone_seed, config.backbone.clone());
    params.frozen = false;
    let pcfg = &config.pretrain;

    let train_indices: Vec<usize> = dataset
        .split("train")?
        .iter()
        .copied()
        .filter(|&i| {
            dataset
                .read_sample(i)
                .map(|r| r.kind == SampleKind::FullBody)
                .unwrap_or(false)
        })
        .collect();
    if train_indices.is_empty() {
        return Err(TrainError::Data(crate::data::DataError::EmptySplit(
            "train (full-body portion)".into(),
        )));
    }

    let mut batch_rng = rng::substream(seed ^ 0x70726574, 0);
    let mut loss_trace = Vec::with_capacity(pcfg.steps);
    let decay_at = pcfg.steps * 3 / 4;
    for step in 0..pcfg.steps {
        let lr = if step >= decay_at {
            pcfg.learning_rate * 0.1
        } else {
            pcfg.learning_rate
        };
        let mut grads = BodyParamGrads::zeros(&params);
        let mut batch_loss = 0.0;
        for _ in 0..pcfg.batch_size {
            let pick = (rng::uniform(&mut batch_rng, 0.0, train_indices.len() as f64) as usize)
                .min(train_indices.len() - 1);
            let index = train_indices[pick];
            let (loss, trace) = sample_loss(
                &params,
                dataset,
                index,
                pcfg.wrist_label_noise,
                seed,
                (pcfg.pose_weight, pcfg.shape_weight, pcfg.keypoint_weight),
            )?;
            batch_loss += loss.total;
            let _ = body_backbone_backward(&params, &trace, &loss.d_raw, Some(&mut grads));
        }
        batch_loss /= pcfg.batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss);
        }
        scale_params(&mut grads, 1.0 / pcfg.batch_size as f64);
        apply_update(&mut params, &grads, lr);
        loss_trace.push(batch_loss);
    }

    params.frozen = true;
    let hash = content_hash(&params);

    // Held-out report: body-only mesh MPVPE and the wrist orientation gap.
    let heldout = dataset.split("heldout")?;
    let spec = &dataset.body_spec;
    let mut mpvpe_acc = 0.0;
    let mut geo_acc = 0.0;
    let mut geo_n = 0usize;
    for &i in heldout {
        let record = dataset.read_sample(i)?;
        let (pose, _) = body_backbone_forward(&params, &record.body_grid, None)?;
        let shaped = shape_mesh(spec, &pose.shape)?;
        let globals = forward_kinematics(spec, &pose, &shaped.rest_joints);
        let mesh = skin_mesh(spec, &shaped, &globals)?;
        let gt_shaped = shape_mesh(spec, &record.body_pose.shape)?;
        let gt_globals = forward_kinematics(spec, &record.body_pose, &gt_shaped.rest_joints);
        let gt_mesh = skin_mesh(spec, &gt_shaped, &gt_globals)?;
        let pelvis = spec.joint_index("pelvis")?;
        mpvpe_acc += mpvpe(
            &mesh.vertices,
            &gt_mesh.vertices,
            &globals[pelvis].translation,
            &gt_globals[pelvis].translation,
        )?;
        for side in [HandSide::Left, HandSide::Right] {
            let pred = global_joint_orientation(spec, &pose, side.wrist_joint_name())?;
            let gt = global_joint_orientation(spec, &record.body_pose, side.wrist_joint_name())?;
            geo_acc += geodesic_angle(&pred, &gt);
            geo_n += 1;
        }
    }
    let report = PretrainReport {
        steps: pcfg.steps,
        train_samples: train_indices.len(),
        initial_loss: loss_trace.first().copied().unwrap_or(0.0),
        final_loss: loss_trace.last().copied().unwrap_or(0.0),
        loss_trace,
        heldout_body_mpvpe: mpvpe_acc / heldout.len() as f64,
        heldout_wrist_geodesic: geo_acc / geo_n.max(1) as f64,
        content_hash: hash,
    };
    Ok((params, report))
}
