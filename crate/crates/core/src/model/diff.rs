//! Reverse-mode derivatives through shape blending, forward kinematics, and
//! skinning. These back the training losses; each adjoint is checked against
//! finite differences in the tests.

use nalgebra::{Matrix3, Vector3};

use crate::geom::RigidTransform;

use super::{ArticulatedModelSpec, PoseState};

/// Upstream gradients on a set of global joint transforms.
#[derive(Debug, Clone)]
pub struct TransformGrads {
    pub rotation: Vec<Matrix3<f64>>,
    pub translation: Vec<Vector3<f64>>,
}

impl TransformGrads {
    pub fn zeros(joint_count: usize) -> Self {
        TransformGrads {
            rotation: vec![Matrix3::zeros(); joint_count],
            translation: vec![Vector3::zeros(); joint_count],
        }
    }
}

/// Gradients of a scalar with respect to the pose inputs of
/// `forward_kinematics`, plus the pass-through gradient on the rest joints
/// (which the shape backward converts into β gradients).
#[derive(Debug, Clone)]
pub struct FkGrads {
    /// Gradient on the root orientation matrix entries.
    pub root_orientation: Matrix3<f64>,
    pub root_translation: Vector3<f64>,
    /// Gradient on each local rotation's matrix entries, indexed `joint − 1`.
    pub local_rotations: Vec<Matrix3<f64>>,
    pub rest_joints: Vec<Vector3<f64>>,
}

/// Reverse pass through `forward_kinematics`.
///
/// `globals` must be the forward result for `(spec, pose, rest_joints)`.
pub fn fk_backward(
    spec: &ArticulatedModelSpec,
    pose: &PoseState,
    rest_joints: &[Vector3<f64>],
    globals: &[RigidTransform],
    upstream: &TransformGrads,
) -> FkGrads {
    let j = spec.joint_count;
    let mut d_rot = upstream.rotation.clone();
    let mut d_tr = upstream.translation.clone();
    let mut grads = FkGrads {
        root_orientation: Matrix3::zeros(),
        root_translation: Vector3::zeros(),
        local_rotations: vec![Matrix3::zeros(); j - 1],
        rest_joints: vec![Vector3::zeros(); j],
    };

    let order = spec.topological_order();
    for &jj in order.iter().rev() {
        match spec.parents[jj] {
            None => {
                // G₀ = (Q, t + j₀)
                grads.root_orientation += d_rot[0];
                grads.root_translation += d_tr[0];
                grads.rest_joints[0] += d_tr[0];
            }
            Some(p) => {
                let r_parent = globals[p].rotation.0;
                let r_local = pose.local_rotations[jj - 1].0;
                let offset = rest_joints[jj] - rest_joints[p];
                // G_j.R = G_p.R · R_l
                grads.local_rotations[jj - 1] += r_parent.transpose() * d_rot[jj];
                let d_tr_j = d_tr[jj];
                let mut to_parent_rot = d_rot[jj] * r_local.transpose();
                // G_j.t = G_p.R · c + G_p.t
                to_parent_rot += d_tr_j * offset.transpose();
                let d_offset = r_parent.transpose() * d_tr_j;
                grads.rest_joints[jj] += d_offset;
                grads.rest_joints[p] -= d_offset;
                d_rot[p] += to_parent_rot;
                d_tr[p] += d_tr_j;
            }
        }
    }
    grads
}

/// Reverse pass through linear blend skinning for a sparse set of vertices.
///
/// Accumulates into `d_globals` and `d_rest_joints`, and returns the gradient
/// on the shaped vertex positions (same sparse order as `vertex_ids`).
pub fn lbs_backward_sparse(
    spec: &ArticulatedModelSpec,
    shaped_vertices: &[Vector3<f64>],
    rest_joints: &[Vector3<f64>],
    globals: &[RigidTransform],
    vertex_ids: &[usize],
    d_vertices: &[Vector3<f64>],
    d_globals: &mut TransformGrads,
    d_rest_joints: &mut [Vector3<f64>],
) -> Vec<Vector3<f64>> {
    let mut d_shaped = vec![Vector3::zeros(); vertex_ids.len()];
    for (k, (&vid, dv)) in vertex_ids.iter().zip(d_vertices).enumerate() {
        let v = shaped_vertices[vid];
        for (jj, &w) in spec.skinning_weights[vid].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let g = &globals[jj];
            let centered = v - rest_joints[jj];
            // v' += w · (R (v − j) + t)
            d_globals.rotation[jj] += (dv * centered.transpose()) * w;
            d_globals.translation[jj] += dv * w;
            let back = g.rotation.0.transpose() * dv * w;
            d_shaped[k] += back;
            d_rest_joints[jj] -= back;
        }
    }
    d_shaped
}

/// Converts gradients on shaped vertices and rest joints into a shape
/// coefficient gradient: `vertices = template + Σ β_b basis_b`,
/// `rest_joints = regressor · vertices`.
pub fn shape_backward_sparse(
    spec: &ArticulatedModelSpec,
    sparse_vertex_ids: &[usize],
    d_shaped_sparse: &[Vector3<f64>],
    d_rest_joints: &[Vector3<f64>],
) -> Vec<f64> {
    // First fold the rest-joint gradient into a dense vertex gradient via the
    // regressor transpose, then contract with each basis field.
    let mut d_beta = vec![0.0; spec.shape_dim()];
    for (b, field) in spec.shape_basis.iter().enumerate() {
        let mut acc = 0.0;
        for (&vid, dv) in sparse_vertex_ids.iter().zip(d_shaped_sparse) {
            let d = field[vid];
            acc += dv.x * d[0] + dv.y * d[1] + dv.z * d[2];
        }
        for (jj, dj) in d_rest_joints.iter().enumerate() {
            if dj.x == 0.0 && dj.y == 0.0 && dj.z == 0.0 {
                continue;
            }
            let row = &spec.rest_joint_regressor[jj];
            // d/dβ_b of j = Σ_i w_i (template_i + Σ β basis)  →  Σ_i w_i basis_b_i
            let mut jb = Vector3::zeros();
            for (i, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    let d = field[i];
                    jb += Vector3::new(d[0], d[1], d[2]) * w;
                }
            }
            acc += dj.dot(&jb);
        }
        d_beta[b] = acc;
    }
    d_beta
}
