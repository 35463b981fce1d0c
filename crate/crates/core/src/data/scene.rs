//! Scene sampling and token-grid rendering.
//!
//! A scene is ground-truth geometry plus everything the pipeline sees:
//! the body-stream token grid (projected joints splatted as Gaussians whose
//! amplitudes carry the protocol payload, plus seeded noise), per-hand crop
//! grids resampled from a finer hand-stream grid, detection flags, and crop
//! boxes derived from the projected ground-truth hand keypoints with padding.

use nalgebra::{Vector2, Vector3};
use std::collections::BTreeMap;

use crate::config::GenerateConfig;
use crate::geom::{
    axis_angle_to_matrix, matrix_to_axis_angle, resample_grid, Affine2D, AxisAngle, Mesh,
    RigidTransform, RotationMatrix, TokenGrid,
};
use crate::model::{
    forward_kinematics, project_points, shape_mesh, skin_mesh, ArticulatedModelSpec, Camera,
    HandSide, PoseState,
};
use crate::rng;
use crate::train::SampleKind;
use crate::transfer::{
    align_hand_to_body, body_target_points, canonical_hand_mesh, transfer_hand, SmoothingConfig,
};

use super::protocol;
use super::DataError;

/// Hand-stream source grid resolution (cells); crop grids are resampled from
/// it, so boxes snap outward to its cell size.
pub const HAND_STREAM_W: usize = 64;
pub const HAND_STREAM_H: usize = 48;

#[derive(Debug, Clone)]
pub struct HandTruth {
    pub detected: bool,
    pub latent: Vec<f64>,
    pub theta: Vec<AxisAngle>,
    pub beta: Vec<f64>,
    /// Hand-stream camera-frame wrist payload: noisy 6D encoding of the
    /// offset frame composed with the true global wrist orientation.
    pub wrist_cam_payload: [f64; 6],
    /// Crop box in pixels: (x0, y0, side).
    pub crop_box: (f64, f64, f64),
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub index: usize,
    pub kind: SampleKind,
    pub camera: Camera,
    pub body_pose: PoseState,
    pub hands: BTreeMap<HandSide, HandTruth>,
    pub noise_seed: u64,
}

impl Scene {
    pub fn detected_sides(&self) -> Vec<HandSide> {
        [HandSide::Left, HandSide::Right]
            .into_iter()
            .filter(|s| self.hands[s].detected)
            .collect()
    }
}

/// Deterministic kind assignment matching the mixture within ±1 sample.
pub fn kind_for_index(index: usize, total: usize, mixture: &[f64; 3]) -> SampleKind {
    let sum: f64 = mixture.iter().sum();
    let u = (index as f64 + 0.5) / total as f64 * sum;
    if u < mixture[0] {
        SampleKind::FullBody
    } else if u < mixture[0] + mixture[1] {
        SampleKind::InteractingHands
    } else {
        SampleKind::SingleHand
    }
}

fn sample_aa<R: rand::Rng>(r: &mut R, spread: f64) -> AxisAngle {
    AxisAngle::new(
        rng::normal(r) * spread,
        rng::normal(r) * spread,
        rng::normal(r) * spread,
    )
}

/// Samples one scene. Every random draw comes from substreams of
/// `(seed, index, attempt)`, so scenes are independent of generation order;
/// draws whose hands leave the image frame are rejected and resampled.
pub fn sample_scene(
    config: &GenerateConfig,
    body_spec: &ArticulatedModelSpec,
    hand_spec: &ArticulatedModelSpec,
    index: usize,
    total: usize,
    seed: u64,
) -> Result<Scene, DataError> {
    const MAX_ATTEMPTS: u64 = 64;
    const FRAME_MARGIN: f64 = 4.0;
    for attempt in 0..MAX_ATTEMPTS {
        let scene = sample_scene_attempt(config, body_spec, hand_spec, index, total, seed, attempt)?;
        let (_, hand_kps) =
            ground_truth_mesh(&scene, body_spec, hand_spec, &SmoothingConfig::default())?;
        let mut in_frame = true;
        'sides: for side in [HandSide::Left, HandSide::Right] {
            let projected = match project_points(&scene.camera, &hand_kps[&side]) {
                Ok(p) => p,
                Err(_) => {
                    in_frame = false;
                    break 'sides;
                }
            };
            for p in projected {
                if p.x < FRAME_MARGIN
                    || p.x > config.camera.image_w - FRAME_MARGIN
                    || p.y < FRAME_MARGIN
                    || p.y > config.camera.image_h - FRAME_MARGIN
                {
                    in_frame = false;
                    break 'sides;
                }
            }
        }
        if !in_frame {
            continue;
        }
        let mut scene = scene;
        for side in [HandSide::Left, HandSide::Right] {
            let projected = project_points(&scene.camera, &hand_kps[&side]).map_err(config_err)?;
            let crop = crop_box_for(
                &projected,
                config.box_padding,
                config.camera.image_w,
                config.camera.image_h,
            );
            scene.hands.get_mut(&side).unwrap().crop_box = crop;
        }
        return Ok(scene);
    }
    Err(DataError::ConfigError(format!(
        "scene {index}: no in-frame pose found in {MAX_ATTEMPTS} attempts"
    )))
}

fn sample_scene_attempt(
    config: &GenerateConfig,
    body_spec: &ArticulatedModelSpec,
    hand_spec: &ArticulatedModelSpec,
    index: usize,
    total: usize,
    seed: u64,
    attempt: u64,
) -> Result<Scene, DataError> {
    let _ = hand_spec;
    let kind = kind_for_index(index, total, &config.kind_mixture);
    let mut r = rng::substream(seed, index as u64 * 64 + attempt);
    let camera = Camera::new(
        config.camera.focal,
        config.camera.focal,
        config.camera.image_w / 2.0,
        config.camera.image_h / 2.0,
    );

    let mut pose = PoseState::rest(body_spec);
    pose.root_orientation = axis_angle_to_matrix(&sample_aa(&mut r, config.root_spread));
    pose.root_translation = Vector3::new(
        rng::normal(&mut r) * 0.10,
        rng::normal(&mut r) * 0.06,
        crate::data::protocol::NOMINAL_DEPTH + rng::normal(&mut r) * 0.10,
    );
    for b in pose.shape.iter_mut() {
        *b = rng::normal(&mut r) * config.body_shape_spread;
    }

    // Joint posing: arms carry the variation; everything else stays mild.
    let arm_joints = [
        "left_shoulder",
        "left_elbow",
        "right_shoulder",
        "right_elbow",
    ];
    for j in 1..body_spec.joint_count {
        pose.local_rotations[j - 1] = axis_angle_to_matrix(&sample_aa(&mut r, config.minor_joint_spread));
    }
    for name in arm_joints {
        let j = body_spec.joint_index(name).unwrap();
        pose.local_rotations[j - 1] = axis_angle_to_matrix(&sample_aa(&mut r, config.arm_spread));
    }
    for name in ["left_wrist", "right_wrist"] {
        let j = body_spec.joint_index(name).unwrap();
        pose.local_rotations[j - 1] = axis_angle_to_matrix(&sample_aa(&mut r, config.wrist_spread));
    }
    if kind == SampleKind::InteractingHands {
        // Swing the forearms toward the body front so the hands meet.
        for (name, dir) in [("left_shoulder", 1.0), ("right_shoulder", -1.0)] {
            let j = body_spec.joint_index(name).unwrap();
            let swing = RotationMatrix::rot_y(dir * rng::uniform(&mut r, 0.45, 0.8));
            pose.local_rotations[j - 1] = RotationMatrix::from_matrix_unchecked(
                swing.0 * pose.local_rotations[j - 1].0,
            );
        }
        for (name, dir) in [("left_elbow", 1.0), ("right_elbow", -1.0)] {
            let j = body_spec.joint_index(name).unwrap();
            let swing = RotationMatrix::rot_y(dir * rng::uniform(&mut r, 0.3, 0.7));
            pose.local_rotations[j - 1] = RotationMatrix::from_matrix_unchecked(
                swing.0 * pose.local_rotations[j - 1].0,
            );
        }
    }

    // Detections per kind.
    let (left_detected, right_detected) = match kind {
        SampleKind::InteractingHands => (true, true),
        SampleKind::SingleHand => {
            if rng::uniform(&mut r, 0.0, 1.0) < 0.5 {
                (true, false)
            } else {
                (false, true)
            }
        }
        SampleKind::FullBody => (
            rng::uniform(&mut r, 0.0, 1.0) >= config.miss_rate,
            rng::uniform(&mut r, 0.0, 1.0) >= config.miss_rate,
        ),
    };

    let shaped = shape_mesh(body_spec, &pose.shape).map_err(config_err)?;
    let globals = forward_kinematics(body_spec, &pose, &shaped.rest_joints);

    let mut hands = BTreeMap::new();
    for (side, detected) in [(HandSide::Left, left_detected), (HandSide::Right, right_detected)] {
        let latent: Vec<f64> = (0..protocol::HAND_LATENT_DIM)
            .map(|_| rng::normal(&mut r) * config.hand_latent_spread)
            .collect();
        let theta = protocol::theta_from_latent(&latent);
        let beta: Vec<f64> = (0..protocol::HAND_SHAPE_DIM)
            .map(|_| rng::normal(&mut r) * config.hand_shape_spread)
            .collect();

        let wrist_joint = body_spec.joint_index(side.wrist_joint_name()).unwrap();
        let wrist_global = globals[wrist_joint].rotation;
        let cam_frame = protocol::wrist_cam_from_global(&wrist_global);
        let mut wrist_cam_payload = protocol::rotation_to_6d(&cam_frame.0);
        for v in wrist_cam_payload.iter_mut() {
            *v += rng::normal(&mut r) * config.hand_wrist_noise;
        }

        hands.insert(
            side,
            HandTruth {
                detected,
                latent,
                theta,
                beta,
                wrist_cam_payload,
                crop_box: (0.0, 0.0, 0.0),
            },
        );
    }

    Ok(Scene {
        index,
        kind,
        camera,
        body_pose: pose,
        hands,
        noise_seed: seed ^ 0x6e6f_6973,
    })
}

fn config_err<E: std::fmt::Display>(e: E) -> DataError {
    DataError::ConfigError(e.to_string())
}

/// Padded square crop box snapped outward to hand-stream cells and clamped
/// to the image.
pub fn crop_box_for(
    projected: &[Vector2<f64>],
    padding: f64,
    image_w: f64,
    image_h: f64,
) -> (f64, f64, f64) {
    let cell = image_w / HAND_STREAM_W as f64;
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in projected {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let extent = (max_x - min_x).max(max_y - min_y).max(8.0);
    let side = extent * (1.0 + 2.0 * padding);
    let cx = 0.5 * (min_x + max_x);
    let cy = 0.5 * (min_y + max_y);
    let mut x0 = cx - side / 2.0;
    let mut y0 = cy - side / 2.0;
    // Snap outward to source-grid cells.
    let mut side = (side / cell).ceil() * cell;
    x0 = (x0 / cell).floor() * cell;
    y0 = (y0 / cell).floor() * cell;
    side = side.min(image_w.min(image_h));
    // Clamp into the image.
    x0 = x0.clamp(0.0, image_w - side);
    y0 = y0.clamp(0.0, image_h - side);
    (x0, y0, side)
}

pub fn crop_affine(crop_box: (f64, f64, f64), cells: usize) -> Affine2D {
    let (x0, y0, side) = crop_box;
    let s = side / cells as f64;
    Affine2D::scale_offset(s, s, x0, y0)
}

/// Ground-truth full mesh: body skinned at the GT pose with both GT hands
/// transferred, plus per-side world-space hand keypoints.
pub fn ground_truth_mesh(
    scene: &Scene,
    body_spec: &ArticulatedModelSpec,
    hand_spec: &ArticulatedModelSpec,
    smoothing: &SmoothingConfig,
) -> Result<(Mesh, BTreeMap<HandSide, Vec<Vector3<f64>>>), DataError> {
    let shaped = shape_mesh(body_spec, &scene.body_pose.shape).map_err(config_err)?;
    let globals = forward_kinematics(body_spec, &scene.body_pose, &shaped.rest_joints);
    let mut mesh = skin_mesh(body_spec, &shaped, &globals).map_err(config_err)?;
    let mut kps_out = BTreeMap::new();
    for side in [HandSide::Left, HandSide::Right] {
        let truth = &scene.hands[&side];
        let (hand_mesh, kps) =
            canonical_hand_mesh(hand_spec, &truth.theta, &truth.beta).map_err(config_err)?;
        let targets = body_target_points(body_spec, &scene.body_pose, side).map_err(config_err)?;
        let t = align_hand_to_body(hand_spec, &kps, &targets).map_err(config_err)?;
        mesh = transfer_hand(&mesh, &hand_mesh, &t, body_spec, side, smoothing)
            .map_err(config_err)?;
        kps_out.insert(
            side,
            kps.iter().map(|p| t.apply_point(p)).collect::<Vec<_>>(),
        );
    }
    Ok((mesh, kps_out))
}

struct Splat {
    gx: f64,
    gy: f64,
}

fn splat_positions(
    points: &[Vector3<f64>],
    camera: &Camera,
    grid_affine: &Affine2D,
) -> Result<Vec<Splat>, DataError> {
    let projected = project_points(camera, points).map_err(config_err)?;
    let inv = grid_affine.inverse().map_err(config_err)?;
    Ok(projected
        .iter()
        .map(|p| {
            let (gx, gy) = inv.apply(p.x, p.y);
            Splat { gx, gy }
        })
        .collect())
}

fn add_gaussian(grid: &mut TokenGrid, splat: &Splat, channel: usize, amplitude: f64, sigma: f64) {
    let two_sigma_sq = 2.0 * sigma * sigma;
    for y in 0..grid.h {
        for x in 0..grid.w {
            let dx = (x as f64 + 0.5) - splat.gx;
            let dy = (y as f64 + 0.5) - splat.gy;
            let d2 = dx * dx + dy * dy;
            if d2 > 9.0 * sigma * sigma {
                continue;
            }
            *grid.at_mut(y, x, channel) += amplitude * (-d2 / two_sigma_sq).exp();
        }
    }
}

/// Renders the body-stream token grid: joint presence splats plus payload
/// amplitudes at every joint site, plus seeded per-cell noise.
pub fn render_body_grid(
    scene: &Scene,
    body_spec: &ArticulatedModelSpec,
    config: &GenerateConfig,
    grid_h: usize,
    grid_w: usize,
) -> Result<TokenGrid, DataError> {
    let affine = Affine2D::scale_offset(
        config.camera.image_w / grid_w as f64,
        config.camera.image_h / grid_h as f64,
        0.0,
        0.0,
    );
    let mut grid = TokenGrid::zeros(grid_h, grid_w, protocol::CHANNELS, affine);

    let shaped = shape_mesh(body_spec, &scene.body_pose.shape).map_err(config_err)?;
    let globals = forward_kinematics(body_spec, &scene.body_pose, &shaped.rest_joints);
    let joints: Vec<Vector3<f64>> = globals.iter().map(|g| g.translation).collect();
    let splats = splat_positions(&joints, &scene.camera, &affine)?;

    // Payload vector per the protocol layout.
    let pose = &scene.body_pose;
    let root_aa = matrix_to_axis_angle(&pose.root_orientation)
        .map(|v| v.0)
        .unwrap_or_else(|_| Vector3::zeros());
    let mut payload = vec![0.0; protocol::BODY_PAYLOAD_DIM];
    payload[0] = root_aa.x;
    payload[1] = root_aa.y;
    payload[2] = root_aa.z;
    payload[3] = pose.root_translation.x;
    payload[4] = pose.root_translation.y;
    payload[5] = pose.root_translation.z - protocol::NOMINAL_DEPTH;
    let mut slot = 6;
    for name in ["left_shoulder", "right_shoulder", "left_elbow", "right_elbow"] {
        let j = body_spec.joint_index(name).unwrap();
        let aa = matrix_to_axis_angle(&pose.local_rotations[j - 1])
            .map(|v| v.0)
            .unwrap_or_else(|_| Vector3::zeros());
        payload[slot] = aa.x;
        payload[slot + 1] = aa.y;
        payload[slot + 2] = aa.z;
        slot += 3;
    }
    // Wrist payload: attenuated and blurred by per-sample noise so the body
    // stream never resolves the wrist orientation cleanly.
    let mut wrist_noise = rng::substream(scene.noise_seed ^ 0x7772, scene.index as u64);
    for name in ["left_wrist", "right_wrist"] {
        let j = body_spec.joint_index(name).unwrap();
        let aa = matrix_to_axis_angle(&pose.local_rotations[j - 1])
            .map(|v| v.0)
            .unwrap_or_else(|_| Vector3::zeros());
        for k in 0..3 {
            let blurred = aa[k] + rng::normal(&mut wrist_noise) * config.body_wrist_noise;
            payload[slot + k] = blurred * config.body_wrist_gain;
        }
        slot += 3;
    }
    payload[slot] = pose.shape[0];
    payload[slot + 1] = pose.shape[1];

    let sigma = 1.2;
    for (j, splat) in splats.iter().enumerate() {
        add_gaussian(&mut grid, splat, j % protocol::BODY_PRESENCE_CHANNELS, 1.0, sigma);
        for (p, &v) in payload.iter().enumerate() {
            if v != 0.0 {
                add_gaussian(
                    &mut grid,
                    splat,
                    protocol::BODY_PAYLOAD_OFFSET + p,
                    v,
                    sigma,
                );
            }
        }
    }

    let mut noise = rng::substream(scene.noise_seed, scene.index as u64);
    for v in grid.data.iter_mut() {
        *v += rng::normal(&mut noise) * config.token_noise;
    }
    Ok(grid)
}

/// Renders one hand's crop grid by resampling the fine hand-stream grid
/// through the crop affine.
pub fn render_hand_crop(
    scene: &Scene,
    side: HandSide,
    hand_kps_world: &[Vector3<f64>],
    config: &GenerateConfig,
) -> Result<TokenGrid, DataError> {
    let truth = &scene.hands[&side];
    let full_affine = Affine2D::scale_offset(
        config.camera.image_w / HAND_STREAM_W as f64,
        config.camera.image_h / HAND_STREAM_H as f64,
        0.0,
        0.0,
    );
    let mut full = TokenGrid::zeros(HAND_STREAM_H, HAND_STREAM_W, protocol::CHANNELS, full_affine);

    // Presence splats at the projected hand keypoints.
    let splats = splat_positions(hand_kps_world, &scene.camera, &full_affine)?;
    for (j, splat) in splats.iter().enumerate() {
        add_gaussian(&mut full, splat, j % protocol::HAND_PRESENCE_CHANNELS, 1.0, 1.0);
    }

    // Payload: constant inside the padded box plus one source cell of margin.
    let mut payload = vec![0.0; protocol::HAND_PAYLOAD_DIM];
    payload[..protocol::HAND_LATENT_DIM].copy_from_slice(&truth.latent);
    payload[protocol::HAND_LATENT_DIM..protocol::HAND_LATENT_DIM + protocol::HAND_SHAPE_DIM]
        .copy_from_slice(&truth.beta);
    let off = protocol::HAND_LATENT_DIM + protocol::HAND_SHAPE_DIM;
    payload[off..off + protocol::WRIST_6D_DIM].copy_from_slice(&truth.wrist_cam_payload);

    let (x0, y0, side_px) = truth.crop_box;
    let cell_w = config.camera.image_w / HAND_STREAM_W as f64;
    let cell_h = config.camera.image_h / HAND_STREAM_H as f64;
    for y in 0..HAND_STREAM_H {
        for x in 0..HAND_STREAM_W {
            let px = (x as f64 + 0.5) * cell_w;
            let py = (y as f64 + 0.5) * cell_h;
            if px >= x0 - cell_w
                && px <= x0 + side_px + cell_w
                && py >= y0 - cell_h
                && py <= y0 + side_px + cell_h
            {
                for (p, &v) in payload.iter().enumerate() {
                    *full.at_mut(y, x, protocol::HAND_PAYLOAD_OFFSET + p) =
                        v * protocol::HAND_PAYLOAD_GAIN;
                }
            }
        }
    }

    let mut noise = rng::substream(
        scene.noise_seed ^ if side == HandSide::Left { 1 } else { 2 },
        scene.index as u64,
    );
    for v in full.data.iter_mut() {
        *v += rng::normal(&mut noise) * config.token_noise;
    }

    let affine = crop_affine(truth.crop_box, crate::backbone::HAND_GRID);
    Ok(resample_grid(
        &full,
        &affine,
        crate::backbone::HAND_GRID,
        crate::backbone::HAND_GRID,
        0.0,
    )
    .map_err(config_err)?)
}

/// The GT global wrist orientation of a scene.
pub fn gt_wrist_global(
    scene: &Scene,
    body_spec: &ArticulatedModelSpec,
    side: HandSide,
) -> RotationMatrix {
    crate::model::global_joint_orientation(body_spec, &scene.body_pose, side.wrist_joint_name())
        .expect("wrist joint exists")
}

/// Placement of an undetected hand's observation: the full-image affine.
pub fn full_image_affine(config: &GenerateConfig) -> Affine2D {
    Affine2D::scale_offset(
        config.camera.image_w / crate::backbone::HAND_GRID as f64,
        config.camera.image_h / crate::backbone::HAND_GRID as f64,
        0.0,
        0.0,
    )
}

/// Rigid transform that carries GT hand keypoints for metric checks.
pub fn gt_alignment(
    scene: &Scene,
    body_spec: &ArticulatedModelSpec,
    hand_spec: &ArticulatedModelSpec,
    side: HandSide,
) -> Result<RigidTransform, DataError> {
    let truth = &scene.hands[&side];
    let (_, kps) = canonical_hand_mesh(hand_spec, &truth.theta, &truth.beta).map_err(config_err)?;
    let targets = body_target_points(body_spec, &scene.body_pose, side).map_err(config_err)?;
    align_hand_to_body(hand_spec, &kps, &targets).map_err(config_err)
}
