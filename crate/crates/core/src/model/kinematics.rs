//! Shape blending, forward kinematics, and linear blend skinning.

use nalgebra::Vector3;

use crate::geom::{Mesh, RigidTransform, RotationMatrix};

use super::{ArticulatedModelSpec, ModelError, PoseState};

/// Shaped template and the rest joints regressed from it.
#[derive(Debug, Clone)]
pub struct ShapedModel {
    pub vertices: Vec<Vector3<f64>>,
    pub rest_joints: Vec<Vector3<f64>>,
}

/// Applies the linear shape basis and regresses rest joints:
/// `vertices = template + Σ_b β_b · basis_b`, `rest_joints = regressor · vertices`.
pub fn shape_mesh(spec: &ArticulatedModelSpec, beta: &[f64]) -> Result<ShapedModel, ModelError> {
    if beta.len() != spec.shape_dim() {
        return Err(ModelError::DimMismatch("beta length must equal shape basis size"));
    }
    let mut vertices = spec.template();
    for (b, field) in spec.shape_basis.iter().enumerate() {
        let coeff = beta[b];
        if coeff == 0.0 {
            continue;
        }
        for (v, d) in vertices.iter_mut().zip(field) {
            v.x += coeff * d[0];
            v.y += coeff * d[1];
            v.z += coeff * d[2];
        }
    }
    let rest_joints = regress_joints(spec, &vertices);
    Ok(ShapedModel {
        vertices,
        rest_joints,
    })
}

pub(crate) fn regress_joints(
    spec: &ArticulatedModelSpec,
    vertices: &[Vector3<f64>],
) -> Vec<Vector3<f64>> {
    spec.rest_joint_regressor
        .iter()
        .map(|row| {
            let mut acc = Vector3::zeros();
            for (w, v) in row.iter().zip(vertices) {
                if *w != 0.0 {
                    acc += v * *w;
                }
            }
            acc
        })
        .collect()
}

/// Global joint transforms.
///
/// The root transform is `(root_orientation, root_translation + j₀)`; each
/// child composes its parent with the local rotation taken about the child's
/// rest offset: `G_j = G_parent ∘ (R_j, j_j − j_parent)`. Posed joint
/// positions are the translation parts.
pub fn forward_kinematics(
    spec: &ArticulatedModelSpec,
    pose: &PoseState,
    rest_joints: &[Vector3<f64>],
) -> Vec<RigidTransform> {
    let mut globals = vec![RigidTransform::identity(); spec.joint_count];
    for &j in &spec.topological_order() {
        match spec.parents[j] {
            None => {
                globals[j] = RigidTransform::new(
                    pose.root_orientation,
                    pose.root_translation + rest_joints[0],
                );
            }
            Some(p) => {
                let local = RigidTransform::new(
                    pose.local_rotations[j - 1],
                    rest_joints[j] - rest_joints[p],
                );
                globals[j] = globals[p].compose(&local);
            }
        }
    }
    globals
}

/// Rest-pose global transforms: identity rotations with the rest joint
/// positions as translations.
pub fn rest_global_transforms(rest_joints: &[Vector3<f64>]) -> Vec<RigidTransform> {
    rest_joints
        .iter()
        .map(|j| RigidTransform::new(RotationMatrix::identity(), *j))
        .collect()
}

/// Product of rotations along the root→joint chain, including the root
/// orientation.
pub fn global_joint_orientation(
    spec: &ArticulatedModelSpec,
    pose: &PoseState,
    joint_name: &str,
) -> Result<RotationMatrix, ModelError> {
    let target = spec.joint_index(joint_name)?;
    let mut chain = Vec::new();
    let mut cur = target;
    loop {
        chain.push(cur);
        match spec.parents[cur] {
            Some(p) => cur = p,
            None => break,
        }
    }
    let mut rot = RotationMatrix::identity();
    for &j in chain.iter().rev() {
        rot = rot.compose(pose.joint_rotation(j));
    }
    Ok(rot)
}

/// Linear blend skinning: `v' = Σ_j w_ij · (G_j ∘ G_rest_j⁻¹)(v)`.
///
/// With rest-pose globals `(I, j_j)` this reduces to
/// `v' = Σ_j w_ij [G_j.R · (v − j_j) + G_j.t]`.
pub fn skin_mesh(
    spec: &ArticulatedModelSpec,
    shaped: &ShapedModel,
    globals: &[RigidTransform],
) -> Result<Mesh, ModelError> {
    if globals.len() != spec.joint_count {
        return Err(ModelError::DimMismatch("global transform count must be J"));
    }
    if shaped.vertices.len() != spec.vertex_count() {
        return Err(ModelError::DimMismatch("shaped vertex count must be V"));
    }
    let mut out = Vec::with_capacity(shaped.vertices.len());
    for (v, weights) in shaped.vertices.iter().zip(&spec.skinning_weights) {
        let mut acc = Vector3::zeros();
        for (j, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let g = &globals[j];
            acc += (g.rotation.0 * (v - shaped.rest_joints[j]) + g.translation) * w;
        }
        out.push(acc);
    }
    let mut mesh = Mesh::new(out, spec.faces.clone());
    mesh.boundary_ring = spec.boundary_ring.clone();
    Ok(mesh)
}

/// Posed joint positions from shape + forward kinematics.
pub fn keypoints_3d(
    spec: &ArticulatedModelSpec,
    pose: &PoseState,
) -> Result<Vec<Vector3<f64>>, ModelError> {
    pose.validate_for(spec)?;
    let shaped = shape_mesh(spec, &pose.shape)?;
    let globals = forward_kinematics(spec, pose, &shaped.rest_joints);
    Ok(globals.iter().map(|g| g.translation).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_rigid, AxisAngle};
    use crate::model::{generate_toy_spec, ModelKind};
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn body() -> ArticulatedModelSpec {
        generate_toy_spec(ModelKind::Body, 7)
    }

    fn random_pose(spec: &ArticulatedModelSpec, seed: u64, spread: f64) -> PoseState {
        let mut r = rng::seeded(seed);
        let mut pose = PoseState::rest(spec);
        pose.root_orientation = crate::geom::axis_angle_to_matrix(&AxisAngle::new(
            rng::normal(&mut r) * spread,
            rng::normal(&mut r) * spread,
            rng::normal(&mut r) * spread,
        ));
        pose.root_translation = Vector3::new(
            rng::normal(&mut r),
            rng::normal(&mut r),
            rng::normal(&mut r),
        );
        for rot in pose.local_rotations.iter_mut() {
            *rot = crate::geom::axis_angle_to_matrix(&AxisAngle::new(
                rng::normal(&mut r) * spread,
                rng::normal(&mut r) * spread,
                rng::normal(&mut r) * spread,
            ));
        }
        for b in pose.shape.iter_mut() {
            *b = rng::normal(&mut r) * 0.5;
        }
        pose
    }

    #[test]
    fn zero_shape_returns_template_exactly() {
        let spec = body();
        let shaped = shape_mesh(&spec, &vec![0.0; spec.shape_dim()]).unwrap();
        for (a, b) in shaped.vertices.iter().zip(&spec.template()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn unit_shape_adds_first_basis_column() {
        let spec = body();
        let mut beta = vec![0.0; spec.shape_dim()];
        beta[0] = 1.0;
        let shaped = shape_mesh(&spec, &beta).unwrap();
        for ((a, t), d) in shaped
            .vertices
            .iter()
            .zip(&spec.template())
            .zip(&spec.shape_basis[0])
        {
            let expected = t + Vector3::new(d[0], d[1], d[2]);
            assert_abs_diff_eq!(*a, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn shape_superposition_is_exact() {
        let spec = body();
        let template = shape_mesh(&spec, &vec![0.0; spec.shape_dim()]).unwrap();
        let mut r = rng::seeded(42);
        for _ in 0..100 {
            let b1: Vec<f64> = (0..spec.shape_dim()).map(|_| rng::normal(&mut r)).collect();
            let b2: Vec<f64> = (0..spec.shape_dim()).map(|_| rng::normal(&mut r)).collect();
            let sum: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
            let s1 = shape_mesh(&spec, &b1).unwrap();
            let s2 = shape_mesh(&spec, &b2).unwrap();
            let s12 = shape_mesh(&spec, &sum).unwrap();
            for i in 0..spec.vertex_count() {
                let lhs = s1.vertices[i] + s2.vertices[i] - template.vertices[i];
                assert!((lhs - s12.vertices[i]).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_pose_reproduces_rest_joints() {
        let spec = body();
        let shaped = shape_mesh(&spec, &vec![0.0; spec.shape_dim()]).unwrap();
        let globals = forward_kinematics(&spec, &PoseState::rest(&spec), &shaped.rest_joints);
        for (g, j) in globals.iter().zip(&shaped.rest_joints) {
            assert!((g.translation - j).amax() < 1e-12);
        }
    }

    #[test]
    fn elbow_rotation_moves_wrist_analytically() {
        let spec = body();
        let shaped = shape_mesh(&spec, &vec![0.0; spec.shape_dim()]).unwrap();
        let elbow = spec.joint_index("left_elbow").unwrap();
        let wrist = spec.joint_index("left_wrist").unwrap();
        let mut pose = PoseState::rest(&spec);
        let rz = RotationMatrix::rot_z(FRAC_PI_2);
        pose.local_rotations[elbow - 1] = rz;
        let globals = forward_kinematics(&spec, &pose, &shaped.rest_joints);
        let expected = shaped.rest_joints[elbow]
            + rz.0 * (shaped.rest_joints[wrist] - shaped.rest_joints[elbow]);
        assert!((globals[wrist].translation - expected).amax() < 1e-12);
    }

    #[test]
    fn root_translation_shifts_every_joint() {
        let spec = body();
        let shaped = shape_mesh(&spec, &vec![0.0; spec.shape_dim()]).unwrap();
        let mut pose = PoseState::rest(&spec);
        pose.root_translation = Vector3::new(0.3, -1.0, 2.0);
        let globals = forward_kinematics(&spec, &pose, &shaped.rest_joints);
        for (g, j) in globals.iter().zip(&shaped.rest_joints) {
            assert!((g.translation - j - pose.root_translation).amax() < 1e-14);
        }
    }

    #[test]
    fn global_orientation_composes_along_chain() {
        let spec = body();
        let shoulder = spec.joint_index("left_shoulder").unwrap();
        let elbow = spec.joint_index("left_elbow").unwrap();
        let mut pose = PoseState::rest(&spec);
        let rz = RotationMatrix::rot_z(30f64.to_radians());
        let rx = RotationMatrix::rot_x(40f64.to_radians());
        pose.local_rotations[shoulder - 1] = rz;
        pose.local_rotations[elbow - 1] = rx;
        let got = global_joint_orientation(&spec, &pose, "left_wrist").unwrap();
        assert!((got.0 - rz.0 * rx.0).amax() < 1e-12);
    }

    #[test]
    fn zero_pose_orientation_is_identity_everywhere() {
        let spec = body();
        let pose = PoseState::rest(&spec);
        for name in spec.named_joints.keys() {
            let r = global_joint_orientation(&spec, &pose, name).unwrap();
            assert_eq!(r.0, nalgebra::Matrix3::identity());
        }
    }

    #[test]
    fn pure_root_orientation_propagates_to_all_joints() {
        let spec = body();
        let mut pose = PoseState::rest(&spec);
        pose.root_orientation = RotationMatrix::rot_y(1.1);
        for name in spec.named_joints.keys() {
            let r = global_joint_orientation(&spec, &pose, name).unwrap();
            assert!((r.0 - pose.root_orientation.0).amax() < 1e-15);
        }
    }

    #[test]
    fn unknown_joint_rejected() {
        let spec = body();
        assert!(matches!(
            global_joint_orientation(&spec, &PoseState::rest(&spec), "tail"),
            Err(ModelError::UnknownJoint(_))
        ));
    }

    #[test]
    fn zero_pose_skinning_is_identity() {
        let spec = body();
        let shaped = shape_mesh(&spec, &vec![0.0; spec.shape_dim()]).unwrap();
        let globals = forward_kinematics(&spec, &PoseState::rest(&spec), &shaped.rest_joints);
        let mesh = skin_mesh(&spec, &shaped, &globals).unwrap();
        for (a, b) in mesh.vertices.iter().zip(&shaped.vertices) {
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn lbs_is_rigid_equivariant() {
        // A rigid root pose moves the whole mesh by the rigid motion
        // `(Q, t + j₀ − Q·j₀)` — rotation about the shaped pelvis.
        let spec = body();
        let mut r = rng::seeded(9);
        for trial in 0..100 {
            let beta: Vec<f64> = (0..spec.shape_dim())
                .map(|_| rng::normal(&mut r) * 0.5)
                .collect();
            let shaped = shape_mesh(&spec, &beta).unwrap();
            let mut pose = PoseState::rest(&spec);
            pose.shape = beta.clone();
            pose.root_orientation = crate::geom::axis_angle_to_matrix(&AxisAngle::new(
                rng::normal(&mut r),
                rng::normal(&mut r),
                rng::normal(&mut r),
            ));
            pose.root_translation = Vector3::new(
                rng::normal(&mut r),
                rng::normal(&mut r),
                rng::normal(&mut r),
            );
            let globals = forward_kinematics(&spec, &pose, &shaped.rest_joints);
            let mesh = skin_mesh(&spec, &shaped, &globals).unwrap();

            let j0 = shaped.rest_joints[0];
            let equivalent = RigidTransform::new(
                pose.root_orientation,
                pose.root_translation + j0 - pose.root_orientation.0 * j0,
            );
            let expected = apply_rigid(&equivalent, &shaped.vertices);
            for (a, b) in mesh.vertices.iter().zip(&expected) {
                assert!((a - b).amax() < 1e-9, "trial {trial}");
            }
        }
    }

    #[test]
    fn fully_bound_vertex_follows_its_joint_frame() {
        let spec = body();
        // Hand-region vertices are bound 1.0 to the wrist.
        let region = spec.hand_region(crate::model::HandSide::Left).unwrap();
        let wrist = spec.joint_index("left_wrist").unwrap();
        let vid = region.vertex_indices[0];
        assert_eq!(spec.skinning_weights[vid][wrist], 1.0);

        let shaped = shape_mesh(&spec, &vec![0.0; spec.shape_dim()]).unwrap();
        let pose = random_pose(&spec, 33, 0.4);
        let globals = forward_kinematics(&spec, &pose, &shaped.rest_joints);
        let mesh = skin_mesh(&spec, &shaped, &globals).unwrap();
        let g = &globals[wrist];
        let expected = g.rotation.0 * (shaped.vertices[vid] - shaped.rest_joints[wrist]) + g.translation;
        assert!((mesh.vertices[vid] - expected).amax() < 1e-12);
    }

    #[test]
    fn keypoints_match_fk_translations() {
        let spec = body();
        let pose = random_pose(&spec, 4, 0.5);
        let kps = keypoints_3d(&spec, &pose).unwrap();
        let shaped = shape_mesh(&spec, &pose.shape).unwrap();
        let globals = forward_kinematics(&spec, &pose, &shaped.rest_joints);
        for (k, g) in kps.iter().zip(&globals) {
            assert_eq!(k, &g.translation);
        }
    }

    #[test]
    fn fk_chain_composition_consistency() {
        // Concatenating the locals along any chain reproduces the global.
        let spec = body();
        for seed in 0..20 {
            let pose = random_pose(&spec, 100 + seed, 0.6);
            let shaped = shape_mesh(&spec, &pose.shape).unwrap();
            let globals = forward_kinematics(&spec, &pose, &shaped.rest_joints);
            for (name, &j) in &spec.named_joints {
                let mut chain = Vec::new();
                let mut cur = j;
                loop {
                    chain.push(cur);
                    match spec.parents[cur] {
                        Some(p) => cur = p,
                        None => break,
                    }
                }
                let mut acc = RigidTransform::identity();
                for &link in chain.iter().rev() {
                    let local = match spec.parents[link] {
                        None => RigidTransform::new(
                            pose.root_orientation,
                            pose.root_translation + shaped.rest_joints[0],
                        ),
                        Some(p) => RigidTransform::new(
                            *pose.joint_rotation(link),
                            shaped.rest_joints[link] - shaped.rest_joints[p],
                        ),
                    };
                    acc = acc.compose(&local);
                }
                assert!(
                    (acc.rotation.0 - globals[j].rotation.0).amax() < 1e-9
                        && (acc.translation - globals[j].translation).amax() < 1e-9,
                    "joint {name} seed {seed}"
                );
            }
        }
    }
}
