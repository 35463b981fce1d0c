//! Finger articulation and hand shape transfer.
//!
//! The hand estimator's finger pose and shape produce a canonical hand mesh
//! (identity wrist orientation at the origin). A rigid Kabsch alignment over
//! the wrist and four MCP joints carries it onto the body mesh, whose
//! hand-region vertices are then replaced through the stored correspondence;
//! a short Laplacian pass smooths the wrist seam. The alignment is
//! differentiable with respect to the body-side target points, which is the
//! gradient path from hand keypoint losses back into the body wrist chain.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geom::{
    apply_rigid, kabsch_differential, kabsch_rigid, laplacian_smooth, vertex_adjacency, AxisAngle,
    GeomError, Mesh, RigidTransform, RotationMatrix,
};
use crate::model::{
    forward_kinematics, shape_mesh, skin_mesh, ArticulatedModelSpec, HandSide, MarkerName,
    ModelError, PoseState,
};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(&'static str),
    #[error("degenerate alignment configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("alignment gradient unreliable: singular-value gap below tolerance")]
    NearDegenerateAlignment,
    #[error("body spec does not define the requested hand correspondence")]
    CorrespondenceMissing,
    #[error("model error: {0}")]
    Model(#[from] ModelError),
}

impl From<GeomError> for TransferError {
    fn from(e: GeomError) -> Self {
        match e {
            GeomError::DegenerateConfiguration(d) => {
                TransferError::DegenerateConfiguration(d.to_string())
            }
            GeomError::DimMismatch(d) => TransferError::DimMismatch(d),
            other => TransferError::DegenerateConfiguration(other.to_string()),
        }
    }
}

/// Singular-value separation below which the alignment Jacobian is refused.
pub const SV_GAP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct SmoothingConfig {
    pub lambda: f64,
    pub iters: usize,
    /// Graph-distance radius around the boundary ring included in smoothing.
    pub band: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            lambda: 0.5,
            iters: 5,
            band: 1,
        }
    }
}

/// Hand mesh and keypoints in the canonical (identity) wrist orientation
/// space: root rotation fixed to identity, zero translation.
pub fn canonical_hand_mesh(
    hand_spec: &ArticulatedModelSpec,
    theta: &[AxisAngle],
    beta: &[f64],
) -> Result<(Mesh, Vec<Vector3<f64>>), TransferError> {
    if theta.len() != hand_spec.joint_count - 1 {
        return Err(TransferError::DimMismatch("theta must have J-1 rotations"));
    }
    let pose = PoseState {
        root_orientation: RotationMatrix::identity(),
        root_translation: Vector3::zeros(),
        local_rotations: theta.iter().map(crate::geom::axis_angle_to_matrix).collect(),
        shape: beta.to_vec(),
    };
    pose.validate_for(hand_spec)?;
    let shaped = shape_mesh(hand_spec, beta)?;
    let globals = forward_kinematics(hand_spec, &pose, &shaped.rest_joints);
    let mesh = skin_mesh(hand_spec, &shaped, &globals)?;
    let keypoints = globals.iter().map(|g| g.translation).collect();
    Ok((mesh, keypoints))
}

/// Canonical hand keypoints only (skips the mesh skinning) — the cheap
/// variant used inside training loops.
pub fn canonical_hand_keypoints(
    hand_spec: &ArticulatedModelSpec,
    theta: &[AxisAngle],
    beta: &[f64],
) -> Result<Vec<Vector3<f64>>, TransferError> {
    if theta.len() != hand_spec.joint_count - 1 {
        return Err(TransferError::DimMismatch("theta must have J-1 rotations"));
    }
    let pose = PoseState {
        root_orientation: RotationMatrix::identity(),
        root_translation: Vector3::zeros(),
        local_rotations: theta.iter().map(crate::geom::axis_angle_to_matrix).collect(),
        shape: beta.to_vec(),
    };
    pose.validate_for(hand_spec)?;
    let shaped = shape_mesh(hand_spec, beta)?;
    let globals = forward_kinematics(hand_spec, &pose, &shaped.rest_joints);
    Ok(globals.iter().map(|g| g.translation).collect())
}

/// The five alignment keypoints (wrist + index/middle/ring/pinky MCP) of a
/// canonical hand, selected from its keypoint list.
pub fn canonical_marker_points(
    hand_spec: &ArticulatedModelSpec,
    canonical_kps: &[Vector3<f64>],
) -> Result<[Vector3<f64>; 5], TransferError> {
    let mut out = [Vector3::zeros(); 5];
    for (i, marker) in MarkerName::ALL.iter().enumerate() {
        let j = hand_spec.joint_index(marker.joint_name())?;
        if j >= canonical_kps.len() {
            return Err(TransferError::DimMismatch("keypoint list too short"));
        }
        out[i] = canonical_kps[j];
    }
    Ok(out)
}

/// Vertex ids (body indexing) carrying nonzero marker weight, with the
/// marker weight rows re-expressed over that support. Shared by the forward
/// markers and their backward pass.
pub struct MarkerSupport {
    pub vertex_ids: Vec<usize>,
    /// 5 rows over `vertex_ids`.
    pub weights: Vec<Vec<f64>>,
}

pub fn marker_support(
    body_spec: &ArticulatedModelSpec,
    side: HandSide,
) -> Result<MarkerSupport, TransferError> {
    let region = body_spec.hand_region(side)?;
    // Region-local slot per supported vertex, in first-seen order.
    let mut slot_of_region_k: Vec<Option<usize>> = vec![None; region.vertex_indices.len()];
    let mut vertex_ids = Vec::new();
    for row in &region.marker_weights {
        for (k, &w) in row.iter().enumerate() {
            if w != 0.0 && slot_of_region_k[k].is_none() {
                slot_of_region_k[k] = Some(vertex_ids.len());
                vertex_ids.push(region.vertex_indices[k]);
            }
        }
    }
    let weights = region
        .marker_weights
        .iter()
        .map(|row| {
            let mut out = vec![0.0; vertex_ids.len()];
            for (k, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    out[slot_of_region_k[k].unwrap()] = w;
                }
            }
            out
        })
        .collect();
    Ok(MarkerSupport {
        vertex_ids,
        weights,
    })
}

/// Skins only the requested vertices.
pub fn skin_vertices_sparse(
    spec: &ArticulatedModelSpec,
    shaped_vertices: &[Vector3<f64>],
    rest_joints: &[Vector3<f64>],
    globals: &[RigidTransform],
    ids: &[usize],
) -> Vec<Vector3<f64>> {
    ids.iter()
        .map(|&vid| {
            let v = shaped_vertices[vid];
            let mut acc = Vector3::zeros();
            for (j, &w) in spec.skinning_weights[vid].iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let g = &globals[j];
                acc += (g.rotation.0 * (v - rest_joints[j]) + g.translation) * w;
            }
            acc
        })
        .collect()
}

/// Posed positions of the five body-side markers (wrist + 4 MCPs) for one
/// side, regressed from the skinned hand-region vertices. Depends on the
/// body wrist orientation through the kinematic chain.
pub fn body_target_points(
    body_spec: &ArticulatedModelSpec,
    body_pose: &PoseState,
    side: HandSide,
) -> Result<[Vector3<f64>; 5], TransferError> {
    body_pose.validate_for(body_spec)?;
    let shaped = shape_mesh(body_spec, &body_pose.shape)?;
    let globals = forward_kinematics(body_spec, body_pose, &shaped.rest_joints);
    let support = marker_support(body_spec, side)?;
    let skinned = skin_vertices_sparse(
        body_spec,
        &shaped.vertices,
        &shaped.rest_joints,
        &globals,
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

/// Rigid alignment of the canonical hand onto the body targets over the five
/// marker correspondences. No scale: size mismatch stays in the residual.
pub fn align_hand_to_body(
    hand_spec: &ArticulatedModelSpec,
    canonical_kps: &[Vector3<f64>],
    targets: &[Vector3<f64>; 5],
) -> Result<RigidTransform, TransferError> {
    let src = canonical_marker_points(hand_spec, canonical_kps)?;
    Ok(kabsch_rigid(&src, targets.as_slice())?)
}

/// Replaces the body's hand-region vertices with the rigidly placed hand
/// mesh and smooths the seam band. Vertices outside the region and the
/// smoothing band are byte-identical to the input.
pub fn transfer_hand(
    body_mesh: &Mesh,
    hand_mesh: &Mesh,
    transform: &RigidTransform,
    body_spec: &ArticulatedModelSpec,
    side: HandSide,
    smooth: &SmoothingConfig,
) -> Result<Mesh, TransferError> {
    let region = body_spec
        .hand_regions
        .as_ref()
        .and_then(|m| m.get(&side))
        .ok_or(TransferError::CorrespondenceMissing)?;
    if hand_mesh.vertices.len() != region.correspondence.len() {
        return Err(TransferError::DimMismatch(
            "hand mesh vertex count must match correspondence",
        ));
    }
    let aligned = apply_rigid(transform, &hand_mesh.vertices);
    let mut out = body_mesh.clone();
    for (k, &body_vid) in region.vertex_indices.iter().enumerate() {
        out.vertices[body_vid] = aligned[region.correspondence[k]];
    }
    if smooth.iters > 0 {
        let set = smoothing_set(body_spec, side, smooth.band)?;
        out = laplacian_smooth(&out, &set, smooth.lambda, smooth.iters)?;
    }
    Ok(out)
}

/// The boundary ring plus its `band`-ring graph neighborhood on the body
/// mesh.
pub fn smoothing_set(
    body_spec: &ArticulatedModelSpec,
    side: HandSide,
    band: usize,
) -> Result<Vec<usize>, TransferError> {
    let region = body_spec.hand_region(side)?;
    let adjacency = vertex_adjacency(body_spec.vertex_count(), &body_spec.faces);
    let mut set: Vec<usize> = region.boundary_ring.clone();
    let mut frontier = set.clone();
    let mut seen = vec![false; body_spec.vertex_count()];
    for &v in &set {
        seen[v] = true;
    }
    for _ in 0..band {
        let mut next = Vec::new();
        for &v in &frontier {
            for &n in &adjacency[v] {
                if !seen[n] {
                    seen[n] = true;
                    set.push(n);
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    Ok(set)
}

/// Seam discontinuity: the max over cross-seam edges (one endpoint in the
/// hand region, one outside) of the ratio of the current edge length to its
/// rest-pose length.
pub fn seam_discontinuity(
    mesh: &Mesh,
    rest_vertices: &[Vector3<f64>],
    body_spec: &ArticulatedModelSpec,
    side: HandSide,
) -> Result<f64, TransferError> {
    let region = body_spec.hand_region(side)?;
    let mut in_region = vec![false; body_spec.vertex_count()];
    for &v in &region.vertex_indices {
        in_region[v] = true;
    }
    let mut worst: f64 = 0.0;
    let mut seen = std::collections::BTreeSet::new();
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            if in_region[a] == in_region[b] {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                continue;
            }
            let rest = (rest_vertices[a] - rest_vertices[b]).norm();
            if rest < 1e-12 {
                continue;
            }
            let cur = (mesh.vertices[a] - mesh.vertices[b]).norm();
            worst = worst.max(cur / rest);
        }
    }
    Ok(worst)
}

/// Directional derivative of the aligned placement with respect to the five
/// target points.
pub fn alignment_differential(
    hand_spec: &ArticulatedModelSpec,
    canonical_kps: &[Vector3<f64>],
    targets: &[Vector3<f64>; 5],
    d_targets: &[Vector3<f64>; 5],
) -> Result<(Matrix3<f64>, Vector3<f64>), TransferError> {
    let src = canonical_marker_points(hand_spec, canonical_kps)?;
    kabsch_differential(&src, targets.as_slice(), d_targets.as_slice(), SV_GAP_TOL).map_err(
        |e| match e {
            GeomError::DegenerateConfiguration("singular value gap below tolerance") => {
                TransferError::NearDegenerateAlignment
            }
            other => other.into(),
        },
    )
}

/// Jacobian of each probe vertex's aligned position with respect to the 15
/// target coordinates: rows are (x, y, z) of the moved vertex, columns the
/// flattened targets.
pub fn transfer_jacobian(
    hand_spec: &ArticulatedModelSpec,
    canonical_kps: &[Vector3<f64>],
    targets: &[Vector3<f64>; 5],
    probe_vertices: &[Vector3<f64>],
) -> Result<Vec<[[f64; 15]; 3]>, TransferError> {
    let mut jac = vec![[[0.0; 15]; 3]; probe_vertices.len()];
    for col in 0..15 {
        let mut dir = [Vector3::zeros(); 5];
        dir[col / 3][col % 3] = 1.0;
        let (dr, dt) = alignment_differential(hand_spec, canonical_kps, targets, &dir)?;
        for (v, out) in probe_vertices.iter().zip(jac.iter_mut()) {
            let dv = dr * v + dt;
            for row in 0..3 {
                out[row][col] = dv[row];
            }
        }
    }
    Ok(jac)
}

/// Adjoint of the alignment: folds upstream gradients on `(R, t)` into
/// gradients on the five target points.
pub fn alignment_vjp(
    hand_spec: &ArticulatedModelSpec,
    canonical_kps: &[Vector3<f64>],
    targets: &[Vector3<f64>; 5],
    d_rotation: &Matrix3<f64>,
    d_translation: &Vector3<f64>,
) -> Result<[Vector3<f64>; 5], TransferError> {
    let mut out = [Vector3::zeros(); 5];
    for col in 0..15 {
        let mut dir = [Vector3::zeros(); 5];
        dir[col / 3][col % 3] = 1.0;
        let (dr, dt) = alignment_differential(hand_spec, canonical_kps, targets, &dir)?;
        out[col / 3][col % 3] = dr.component_mul(d_rotation).sum() + dt.dot(d_translation);
    }
    Ok(out)
}
