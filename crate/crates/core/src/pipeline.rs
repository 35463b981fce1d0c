//! End-to-end inference, evaluation, baseline strategies, and timing.

use nalgebra::Vector3;
use serde::Serialize;
use std::collections::BTreeMap;
use std::time::Instant;

use crate::cham::ChamParams;
use crate::data::{Dataset, SampleRecord};
use crate::geom::{geodesic_angle, Mesh, RotationMatrix};
use crate::model::{
    forward_kinematics, global_joint_orientation, shape_mesh, skin_mesh, HandSide, PoseState,
};
use crate::train::{
    forward_pipeline, mpvpe, mrrpe, pa_mpvpe, MetricsReport, PipelineBundle, SampleMetrics,
    TrainError,
};
use crate::transfer::{
    align_hand_to_body, body_target_points, canonical_hand_mesh, transfer_hand,
};

/// How the whole-body and hand streams are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Frozen body backbone, no modulation; hand transfer from the hand
    /// stream's finger pose and shape.
    Frozen,
    /// Frozen body backbone with the wrist joints overwritten by the hand
    /// stream's camera-frame wrist orientation.
    WristCopy,
    /// Full pipeline with the trained modulator.
    Cham,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frozen" => Ok(Strategy::Frozen),
            "wrist_copy" => Ok(Strategy::WristCopy),
            "cham" => Ok(Strategy::Cham),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug)]
pub struct InferOutput {
    pub mesh: Mesh,
    pub pose: PoseState,
    pub detected: Vec<HandSide>,
    pub metrics: Option<SampleMetrics>,
}

/// Overwrites the pose's local wrist rotation so the global wrist
/// orientation equals `target_global`.
fn overwrite_global_wrist(
    spec: &crate::model::ArticulatedModelSpec,
    pose: &mut PoseState,
    side: HandSide,
    target_global: &RotationMatrix,
) -> Result<(), TrainError> {
    let wrist = spec.joint_index(side.wrist_joint_name())?;
    let parent = spec.parents[wrist].expect("wrist has a parent");
    // Global orientation of the parent chain.
    let mut chain = Vec::new();
    let mut cur = parent;
    loop {
        chain.push(cur);
        match spec.parents[cur] {
            Some(p) => cur = p,
            None => break,
        }
    }
    let mut parent_global = RotationMatrix::identity();
    for &j in chain.iter().rev() {
        parent_global = parent_global.compose(pose.joint_rotation(j));
    }
    pose.local_rotations[wrist - 1] =
        RotationMatrix::from_matrix_unchecked(parent_global.0.transpose() * target_global.0);
    Ok(())
}

/// Runs the feed-forward pipeline on one sample under a strategy and
/// computes metrics against the stored ground truth.
pub fn infer(
    record: &SampleRecord,
    bundle: &PipelineBundle,
    cham: Option<&ChamParams>,
    strategy: Strategy,
) -> Result<InferOutput, TrainError> {
    let cham_for_forward = match strategy {
        Strategy::Cham => cham,
        _ => None,
    };
    let prediction = forward_pipeline(record, bundle, cham_for_forward)?;
    let mut pose = prediction.pose.clone();
    let observations = &prediction.observations;

    if strategy == Strategy::WristCopy {
        for side in [HandSide::Left, HandSide::Right] {
            if let Some(cam) = observations[&side].wrist_cam {
                overwrite_global_wrist(bundle.body_spec, &mut pose, side, &cam)?;
            }
        }
    }

    // Body mesh from the (possibly adjusted) pose, then per-hand transfer.
    let shaped = shape_mesh(bundle.body_spec, &pose.shape)?;
    let globals = forward_kinematics(bundle.body_spec, &pose, &shaped.rest_joints);
    let mut mesh = skin_mesh(bundle.body_spec, &shaped, &globals)?;
    let mut detected = Vec::new();
    for side in [HandSide::Left, HandSide::Right] {
        let obs = &observations[&side];
        if !obs.detected {
            continue;
        }
        detected.push(side);
        let theta = obs.theta.as_ref().expect("detected hand");
        let beta = obs.beta.as_ref().expect("detected hand");
        let (hand_mesh, kps) = canonical_hand_mesh(bundle.hand_spec, theta, beta)?;
        let targets = body_target_points(bundle.body_spec, &pose, side)?;
        let t = align_hand_to_body(bundle.hand_spec, &kps, &targets)?;
        mesh = transfer_hand(&mesh, &hand_mesh, &t, bundle.body_spec, side, &bundle.smoothing)?;
    }

    let metrics = sample_metrics(record, bundle, &pose, &mesh, &detected)?;
    Ok(InferOutput {
        mesh,
        pose,
        detected,
        metrics: Some(metrics),
    })
}

/// GT-fed oracle: injects the ground-truth finger pose, hand shape, body
/// shape, and global wrist orientation into the pipeline's transfer stage.
/// With exact inputs the transferred hand region reproduces the ground-truth
/// hand up to the seam smoothing, so it is usually run with zero smoothing
/// iterations.
pub fn infer_oracle(
    record: &SampleRecord,
    bundle: &PipelineBundle,
) -> Result<InferOutput, TrainError> {
    let prediction = forward_pipeline(record, bundle, None)?;
    let mut pose = prediction.pose.clone();
    // Body shape scales the marker constellation and the marker-to-wrist
    // offsets; the closed loop needs the ground-truth value.
    pose.shape = record.body_pose.shape.clone();
    for side in [HandSide::Left, HandSide::Right] {
        let gt_global = global_joint_orientation(
            bundle.body_spec,
            &record.body_pose,
            side.wrist_joint_name(),
        )?;
        overwrite_global_wrist(bundle.body_spec, &mut pose, side, &gt_global)?;
    }
    let shaped = shape_mesh(bundle.body_spec, &pose.shape)?;
    let globals = forward_kinematics(bundle.body_spec, &pose, &shaped.rest_joints);
    let mut mesh = skin_mesh(bundle.body_spec, &shaped, &globals)?;
    let mut detected = Vec::new();
    for side in [HandSide::Left, HandSide::Right] {
        if !prediction.observations[&side].detected {
            continue;
        }
        detected.push(side);
        let theta = record.theta(side);
        let beta = &record.hand(side).beta;
        let (hand_mesh, kps) = canonical_hand_mesh(bundle.hand_spec, &theta, beta)?;
        let targets = body_target_points(bundle.body_spec, &pose, side)?;
        let t = align_hand_to_body(bundle.hand_spec, &kps, &targets)?;
        mesh = transfer_hand(&mesh, &hand_mesh, &t, bundle.body_spec, side, &bundle.smoothing)?;
    }
    let metrics = sample_metrics(record, bundle, &pose, &mesh, &detected)?;
    Ok(InferOutput {
        mesh,
        pose,
        detected,
        metrics: Some(metrics),
    })
}

fn sample_metrics(
    record: &SampleRecord,
    bundle: &PipelineBundle,
    pose: &PoseState,
    mesh: &Mesh,
    detected: &[HandSide],
) -> Result<SampleMetrics, TrainError> {
    let spec = bundle.body_spec;
    let scene = record_scene(record);
    let (gt_mesh, _) =
        crate::data::ground_truth_mesh(&scene, spec, bundle.hand_spec, &bundle.smoothing)?;

    let shaped = shape_mesh(spec, &pose.shape)?;
    let globals = forward_kinematics(spec, pose, &shaped.rest_joints);
    let gt_shaped = shape_mesh(spec, &record.body_pose.shape)?;
    let gt_globals = forward_kinematics(spec, &record.body_pose, &gt_shaped.rest_joints);

    let pelvis = spec.joint_index("pelvis")?;
    let mpvpe_full = mpvpe(
        &mesh.vertices,
        &gt_mesh.vertices,
        &globals[pelvis].translation,
        &gt_globals[pelvis].translation,
    )?;
    let pa = pa_mpvpe(&mesh.vertices, &gt_mesh.vertices)?;

    let lw = spec.joint_index("left_wrist")?;
    let rw = spec.joint_index("right_wrist")?;
    let mrrpe_val = mrrpe(
        &globals[lw].translation,
        &globals[rw].translation,
        &gt_globals[lw].translation,
        &gt_globals[rw].translation,
    );

    let mut hand_err = Vec::new();
    let mut geo = Vec::new();
    for &side in detected {
        let region = spec.hand_region(side)?;
        let pred_hand: Vec<Vector3<f64>> = region
            .vertex_indices
            .iter()
            .map(|&v| mesh.vertices[v])
            .collect();
        let gt_hand: Vec<Vector3<f64>> = region
            .vertex_indices
            .iter()
            .map(|&v| gt_mesh.vertices[v])
            .collect();
        let wrist = spec.joint_index(side.wrist_joint_name())?;
        hand_err.push(mpvpe(
            &pred_hand,
            &gt_hand,
            &globals[wrist].translation,
            &gt_globals[wrist].translation,
        )?);
        let pred_global = global_joint_orientation(spec, pose, side.wrist_joint_name())?;
        let gt_global =
            global_joint_orientation(spec, &record.body_pose, side.wrist_joint_name())?;
        geo.push(geodesic_angle(&pred_global, &gt_global));
    }

    Ok(SampleMetrics {
        index: record.index,
        kind: format!("{:?}", record.kind),
        mpvpe_full,
        mpvpe_hands: if hand_err.is_empty() {
            None
        } else {
            Some(hand_err.iter().sum::<f64>() / hand_err.len() as f64)
        },
        mrrpe: Some(mrrpe_val),
        pa_mpvpe: pa,
        wrist_geodesic: if geo.is_empty() {
            None
        } else {
            Some(geo.iter().sum::<f64>() / geo.len() as f64)
        },
    })
}

/// Rehydrates a scene view of a stored record (ground truth only; the noise
/// seed is irrelevant after rendering).
pub fn record_scene(record: &SampleRecord) -> crate::data::Scene {
    crate::data::Scene {
        index: record.index,
        kind: record.kind,
        camera: record.camera,
        body_pose: record.body_pose.clone(),
        hands: record
            .hands
            .iter()
            .map(|(side, h)| {
                (
                    *side,
                    crate::data::scene::HandTruth {
                        detected: h.detected,
                        latent: h.latent.clone(),
                        theta: crate::data::protocol::theta_from_latent(&h.latent),
                        beta: h.beta.clone(),
                        wrist_cam_payload: h.wrist_cam_payload,
                        crop_box: h.crop_box,
                    },
                )
            })
            .collect(),
        noise_seed: 0,
    }
}

/// Schema for the metrics JSON artifact.
#[derive(Debug, Serialize)]
pub struct EvaluationArtifact {
    pub schema: String,
    pub split: String,
    pub strategy: Strategy,
    pub seeds: BTreeMap<String, u64>,
    pub backbone_hashes: BTreeMap<String, String>,
    pub config: crate::config::PipelineConfig,
    pub metrics: MetricsReport,
}

pub const METRICS_SCHEMA: &str = "posefuse-metrics-v1";

/// Evaluates a split under a strategy; per-sample metrics in index order.
pub fn evaluate(
    dataset: &Dataset,
    split: &str,
    bundle: &PipelineBundle,
    cham: Option<&ChamParams>,
    strategy: Strategy,
) -> Result<MetricsReport, TrainError> {
    let indices = dataset.split(split)?;
    let mut per_sample = Vec::with_capacity(indices.len());
    for &i in indices {
        let record = dataset.read_sample(i)?;
        let out = infer(&record, bundle, cham, strategy)?;
        per_sample.push(out.metrics.expect("metrics computed"));
    }
    Ok(MetricsReport::aggregate(per_sample))
}

/// One of the combination baselines (frozen, wrist copy, CHAM).
pub fn run_baseline(
    strategy: Strategy,
    dataset: &Dataset,
    split: &str,
    bundle: &PipelineBundle,
    cham: Option<&ChamParams>,
) -> Result<MetricsReport, TrainError> {
    evaluate(dataset, split, bundle, cham, strategy)
}

#[derive(Debug, Serialize)]
pub struct StageTiming {
    pub mean_ms: f64,
    pub runs: usize,
}

#[derive(Debug, Serialize)]
pub struct TimingReport {
    pub stages: BTreeMap<String, StageTiming>,
    pub total_mean_ms: f64,
}

/// Per-stage wall-time means over at least `runs` pipeline executions.
pub fn report_timings(
    record: &SampleRecord,
    bundle: &PipelineBundle,
    cham: &ChamParams,
    runs: usize,
) -> Result<TimingReport, TrainError> {
    let runs = runs.max(100);
    let mut hand_ms = 0.0;
    let mut cham_ms = 0.0;
    let mut body_ms = 0.0;
    let mut transfer_ms = 0.0;

    for _ in 0..runs {
        let t0 = Instant::now();
        let mut observations = BTreeMap::new();
        for side in [HandSide::Left, HandSide::Right] {
            let hand = record.hand(side);
            let obs = if hand.detected {
                crate::backbone::hand_backbone_forward(bundle.hand_backbone, side, &hand.crop_grid)?
            } else {
                crate::backbone::HandObservation::undetected(
                    side,
                    bundle.hand_backbone.channels,
                    record.body_grid.affine,
                )
            };
            observations.insert(side, obs);
        }
        let t1 = Instant::now();
        let cfg = &bundle.body_backbone.config;
        let (stack, _) = crate::cham::cham_forward(
            &observations[&HandSide::Left],
            &observations[&HandSide::Right],
            cham,
            (cfg.grid_h, cfg.grid_w),
            &bundle.body_affine(),
            bundle.image_dims,
        )?;
        let t2 = Instant::now();
        let (pose, _) =
            crate::backbone::body_backbone_forward(bundle.body_backbone, &record.body_grid, Some(&stack))?;
        let t3 = Instant::now();
        let shaped = shape_mesh(bundle.body_spec, &pose.shape)?;
        let globals = forward_kinematics(bundle.body_spec, &pose, &shaped.rest_joints);
        let mut mesh = skin_mesh(bundle.body_spec, &shaped, &globals)?;
        for (side, obs) in &observations {
            if !obs.detected {
                continue;
            }
            let (hand_mesh, kps) = canonical_hand_mesh(
                bundle.hand_spec,
                obs.theta.as_ref().unwrap(),
                obs.beta.as_ref().unwrap(),
            )?;
            let targets = body_target_points(bundle.body_spec, &pose, *side)?;
            let t = align_hand_to_body(bundle.hand_spec, &kps, &targets)?;
            mesh = transfer_hand(&mesh, &hand_mesh, &t, bundle.body_spec, *side, &bundle.smoothing)?;
        }
        let t4 = Instant::now();

        hand_ms += (t1 - t0).as_secs_f64() * 1e3;
        cham_ms += (t2 - t1).as_secs_f64() * 1e3;
        body_ms += (t3 - t2).as_secs_f64() * 1e3;
        transfer_ms += (t4 - t3).as_secs_f64() * 1e3;
    }

    let n = runs as f64;
    let mut stages = BTreeMap::new();
    stages.insert("hand_backbone".to_string(), StageTiming { mean_ms: hand_ms / n, runs });
    stages.insert("cham".to_string(), StageTiming { mean_ms: cham_ms / n, runs });
    stages.insert("body_backbone".to_string(), StageTiming { mean_ms: body_ms / n, runs });
    stages.insert("transfer".to_string(), StageTiming { mean_ms: transfer_ms / n, runs });
    let total = (hand_ms + cham_ms + body_ms + transfer_ms) / n;
    Ok(TimingReport {
        stages,
        total_mean_ms: total,
    })
}
