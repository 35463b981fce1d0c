//! Deterministic toy model construction.
//!
//! The toy body (22 joints) and toy hand (16 joints) mirror full-scale
//! whole-body/hand model topology at reduced vertex counts. Geometry is built
//! from capsule-like ring tubes; each joint owns a mesh ring centered exactly
//! on it, so the uniform joint regressor reproduces joint positions exactly.
//!
//! The body's per-side hand regions are placed copies of the hand template
//! (the left side is a rotated, not mirrored, copy — the toy universe treats
//! both hands as proper-rotation instances of one canonical hand), which
//! makes every hand-region correspondence the identity permutation and keeps
//! the wrist+MCP markers exactly consistent between the two models.

use nalgebra::Vector3;
use std::collections::BTreeMap;

use crate::geom::{RigidTransform, RotationMatrix};
use crate::rng;

use super::spec::{ArticulatedModelSpec, HandRegion, HandSide, MarkerName, ModelKind, SCHEMA_VERSION};

const RING_N: usize = 16;
const FINGER_RING_N: usize = 8;

const PALM_LEN: f64 = 0.24;
const FINGER_SEGS: [f64; 3] = [0.10, 0.075, 0.055];

struct Builder {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    skin_joint: Vec<usize>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            vertices: Vec::new(),
            faces: Vec::new(),
            skin_joint: Vec::new(),
        }
    }

    fn push_vertex(&mut self, p: Vector3<f64>, joint: usize) -> usize {
        self.vertices.push(p);
        self.skin_joint.push(joint);
        self.vertices.len() - 1
    }

    /// Elliptical ring of `n` vertices around `axis` at `center`.
    fn add_ring(
        &mut self,
        center: Vector3<f64>,
        axis: Vector3<f64>,
        ru: f64,
        rv: f64,
        n: usize,
        joint: usize,
    ) -> Vec<usize> {
        let d = axis.normalize();
        let up = if d.y.abs() < 0.9 {
            Vector3::new(0.0, 1.0, 0.0)
        } else {
            Vector3::new(1.0, 0.0, 0.0)
        };
        let u = up.cross(&d).normalize();
        let v = d.cross(&u);
        (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                self.push_vertex(center + u * (ru * a.cos()) + v * (rv * a.sin()), joint)
            })
            .collect()
    }

    /// Triangle strip between two rings of equal size, pairing each vertex of
    /// `a` with its nearest in `b` and walking both rings in consistent order.
    fn connect_rings(&mut self, a: &[usize], b: &[usize]) {
        assert_eq!(a.len(), b.len());
        let n = a.len();
        let nearest = |p: Vector3<f64>| -> usize {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, &bi) in b.iter().enumerate() {
                let d = (self.vertices[bi] - p).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        };
        let offset = nearest(self.vertices[a[0]]);
        let fwd = (self.vertices[b[(offset + 1) % n]] - self.vertices[a[1]]).norm_squared();
        let bwd = (self.vertices[b[(offset + n - 1) % n]] - self.vertices[a[1]]).norm_squared();
        let dir: isize = if fwd <= bwd { 1 } else { -1 };
        let bi = |k: usize| -> usize {
            let idx = offset as isize + dir * k as isize;
            b[idx.rem_euclid(n as isize) as usize]
        };
        for k in 0..n {
            let k1 = (k + 1) % n;
            self.faces.push([a[k], a[k1], bi(k)]);
            self.faces.push([a[k1], bi(k1), bi(k)]);
        }
    }

    fn add_cap(&mut self, center: Vector3<f64>, ring: &[usize], joint: usize) -> usize {
        let c = self.push_vertex(center, joint);
        for k in 0..ring.len() {
            self.faces.push([ring[k], ring[(k + 1) % ring.len()], c]);
        }
        c
    }
}

/// Per-vertex labels of the hand template, used to build its shape basis.
#[derive(Clone, Copy)]
enum HandPart {
    Palm,
    /// Finger index and arclength from the MCP.
    Finger(usize, f64),
}

struct HandGeometry {
    builder: Builder,
    joints: Vec<Vector3<f64>>,
    parents: Vec<Option<usize>>,
    /// Regressor ring per joint.
    joint_rings: Vec<Vec<usize>>,
    boundary_ring: Vec<usize>,
    parts: Vec<HandPart>,
    finger_dirs: Vec<Vector3<f64>>,
}

fn finger_base(f: usize) -> (Vector3<f64>, Vector3<f64>) {
    let y = (2.0 - f as f64) * 0.052;
    let phi = (2.0 - f as f64) * 0.10;
    let dir = Vector3::new(phi.cos(), phi.sin(), 0.0);
    (Vector3::new(PALM_LEN, y, 0.0), dir)
}

/// Builds the canonical hand: wrist at the origin, fingers along +x, palm
/// width along y. The wrist seam is the open ring at x = 0.
fn build_hand_geometry() -> HandGeometry {
    let mut b = Builder::new();
    let mut parts = Vec::new();

    // Joints: wrist + 5 fingers × (mcp, pip, dip).
    let mut joints = vec![Vector3::zeros()];
    let mut parents = vec![None];
    let mut finger_dirs = Vec::new();
    for f in 0..5 {
        let (mcp, dir) = finger_base(f);
        finger_dirs.push(dir);
        let pip = mcp + dir * FINGER_SEGS[0];
        let dip = pip + dir * FINGER_SEGS[1];
        joints.extend([mcp, pip, dip]);
        parents.extend([Some(0), Some(1 + 3 * f), Some(2 + 3 * f)]);
    }
    let mut joint_rings: Vec<Vec<usize>> = vec![Vec::new(); joints.len()];

    // Palm tube along +x; ring 0 is the wrist seam.
    let palm_rings = 7;
    let mut prev: Option<Vec<usize>> = None;
    let mut boundary_ring = Vec::new();
    for k in 0..palm_rings {
        let t = k as f64 / (palm_rings - 1) as f64;
        let ry = 0.060 + 0.065 * t;
        let rz = 0.050 - 0.015 * t;
        let ring = b.add_ring(
            Vector3::new(PALM_LEN * t, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            ry,
            rz,
            RING_N,
            0,
        );
        parts.extend(std::iter::repeat(HandPart::Palm).take(RING_N));
        if k == 0 {
            boundary_ring = ring.clone();
            joint_rings[0] = ring.clone();
        }
        if let Some(p) = prev {
            b.connect_rings(&p, &ring);
        }
        prev = Some(ring);
    }
    let palm_end = prev.unwrap();

    // Fingers: rings at mcp, mid, pip, mid, dip, mid, tip, plus a cap.
    for f in 0..5 {
        let (mcp, dir) = finger_base(f);
        let mcp_joint = 1 + 3 * f;
        let total = FINGER_SEGS.iter().sum::<f64>();
        let stops = [
            0.0,
            0.5 * FINGER_SEGS[0],
            FINGER_SEGS[0],
            FINGER_SEGS[0] + 0.5 * FINGER_SEGS[1],
            FINGER_SEGS[0] + FINGER_SEGS[1],
            FINGER_SEGS[0] + FINGER_SEGS[1] + 0.5 * FINGER_SEGS[2],
            total,
        ];
        let mut prev: Option<Vec<usize>> = None;
        for (si, &t) in stops.iter().enumerate() {
            let joint = if t < FINGER_SEGS[0] {
                mcp_joint
            } else if t < FINGER_SEGS[0] + FINGER_SEGS[1] {
                mcp_joint + 1
            } else {
                mcp_joint + 2
            };
            let r = 0.020 - 0.008 * t / total;
            let ring = b.add_ring(mcp + dir * t, dir, r, r, FINGER_RING_N, joint);
            parts.extend(std::iter::repeat(HandPart::Finger(f, t)).take(FINGER_RING_N));
            match si {
                0 => joint_rings[mcp_joint] = ring.clone(),
                2 => joint_rings[mcp_joint + 1] = ring.clone(),
                4 => joint_rings[mcp_joint + 2] = ring.clone(),
                _ => {}
            }
            if let Some(p) = prev {
                b.connect_rings(&p, &ring);
            } else {
                // Attach the finger base to the palm end ring for adjacency.
                for k in 0..ring.len() {
                    let mut best = palm_end[0];
                    let mut best_d = f64::INFINITY;
                    for &pi in &palm_end {
                        let d = (b.vertices[pi] - b.vertices[ring[k]]).norm_squared();
                        if d < best_d {
                            best_d = d;
                            best = pi;
                        }
                    }
                    b.faces.push([ring[k], ring[(k + 1) % ring.len()], best]);
                }
            }
            prev = Some(ring);
        }
        let tip_ring = prev.unwrap();
        b.add_cap(mcp + dir * (total + 0.012), &tip_ring, mcp_joint + 2);
        parts.push(HandPart::Finger(f, total + 0.012));
    }

    HandGeometry {
        builder: b,
        joints,
        parents,
        joint_rings,
        boundary_ring,
        parts,
        finger_dirs,
    }
}

fn uniform_row(len: usize, support: &[usize]) -> Vec<f64> {
    let mut row = vec![0.0; len];
    let w = 1.0 / support.len() as f64;
    for &i in support {
        row[i] = w;
    }
    row
}

fn hard_skin_rows(joint_count: usize, assignment: &[usize]) -> Vec<Vec<f64>> {
    assignment
        .iter()
        .map(|&j| {
            let mut row = vec![0.0; joint_count];
            row[j] = 1.0;
            row
        })
        .collect()
}

/// Seeded smooth displacement field used for the trailing shape basis slots.
fn smooth_field(
    positions: &[Vector3<f64>],
    seed: u64,
    amplitude: f64,
    damp: impl Fn(usize) -> f64,
) -> Vec<[f64; 3]> {
    let mut r = rng::seeded(seed);
    let mut waves = Vec::new();
    for _ in 0..3 {
        let a = Vector3::new(
            rng::normal(&mut r),
            rng::normal(&mut r),
            rng::normal(&mut r),
        ) * amplitude;
        let omega = Vector3::new(
            rng::uniform(&mut r, 1.0, 3.0),
            rng::uniform(&mut r, 1.0, 3.0),
            rng::uniform(&mut r, 1.0, 3.0),
        );
        let phase = rng::uniform(&mut r, 0.0, std::f64::consts::TAU);
        waves.push((a, omega, phase));
    }
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d = Vector3::zeros();
            for (a, omega, phase) in &waves {
                let s = (omega.dot(p) + phase).sin();
                d += a * s;
            }
            d *= damp(i);
            [d.x, d.y, d.z]
        })
        .collect()
}

fn hand_shape_basis(geo: &HandGeometry, seed: u64) -> Vec<Vec<[f64; 3]>> {
    let verts = &geo.builder.vertices;
    let mut basis: Vec<Vec<[f64; 3]>> = Vec::new();

    // Global scale about the wrist.
    basis.push(verts.iter().map(|p| [(p.x) * 0.05, p.y * 0.05, p.z * 0.05]).collect());
    // All fingers lengthen.
    basis.push(
        verts
            .iter()
            .zip(&geo.parts)
            .map(|(_, part)| match part {
                HandPart::Finger(f, t) => {
                    let d = geo.finger_dirs[*f] * (t * 0.12);
                    [d.x, d.y, d.z]
                }
                HandPart::Palm => [0.0; 3],
            })
            .collect(),
    );
    // Width and thickness.
    basis.push(verts.iter().map(|p| [0.0, p.y * 0.10, 0.0]).collect());
    basis.push(verts.iter().map(|p| [0.0, 0.0, p.z * 0.45]).collect());
    // Relative per-finger lengths for the first four fingers, orthogonal to
    // the common lengthening mode so the basis stays full rank.
    for f in 0..4 {
        basis.push(
            verts
                .iter()
                .zip(&geo.parts)
                .map(|(_, part)| match part {
                    HandPart::Finger(ff, t) => {
                        let own = if *ff == f { 1.0 } else { 0.0 };
                        let d = geo.finger_dirs[*ff] * (t * 0.10 * (own - 0.2));
                        [d.x, d.y, d.z]
                    }
                    HandPart::Palm => [0.0; 3],
                })
                .collect(),
        );
    }
    // Finger droop (out-of-plane offset growing along the finger).
    basis.push(
        verts
            .iter()
            .zip(&geo.parts)
            .map(|(_, part)| match part {
                HandPart::Finger(_, t) => [0.0, 0.0, t * 0.10],
                HandPart::Palm => [0.0; 3],
            })
            .collect(),
    );
    // Seeded smooth residual mode.
    basis.push(smooth_field(verts, seed.wrapping_add(101), 0.006, |_| 1.0));
    basis
}

fn hand_named_joints() -> BTreeMap<String, usize> {
    let fingers = ["thumb", "index", "middle", "ring", "pinky"];
    let mut named = BTreeMap::new();
    named.insert("wrist".to_string(), 0usize);
    for (f, name) in fingers.iter().enumerate() {
        named.insert(format!("{name}_mcp"), 1 + 3 * f);
        named.insert(format!("{name}_pip"), 2 + 3 * f);
        named.insert(format!("{name}_dip"), 3 + 3 * f);
    }
    named
}

fn build_hand_spec(seed: u64) -> ArticulatedModelSpec {
    let geo = build_hand_geometry();
    let v = geo.builder.vertices.len();
    let regressor = geo
        .joint_rings
        .iter()
        .map(|ring| uniform_row(v, ring))
        .collect();
    ArticulatedModelSpec {
        schema: SCHEMA_VERSION.to_string(),
        kind: ModelKind::Hand,
        joint_count: geo.joints.len(),
        parents: geo.parents.clone(),
        template_vertices: geo.builder.vertices.iter().map(|p| [p.x, p.y, p.z]).collect(),
        faces: geo.builder.faces.clone(),
        rest_joint_regressor: regressor,
        skinning_weights: hard_skin_rows(geo.joints.len(), &geo.builder.skin_joint),
        shape_basis: hand_shape_basis(&geo, seed),
        named_joints: hand_named_joints(),
        boundary_ring: Some(geo.boundary_ring.clone()),
        hand_regions: None,
    }
}

struct BodyJoint {
    name: &'static str,
    pos: Vector3<f64>,
    parent: Option<usize>,
}

fn body_joints() -> Vec<BodyJoint> {
    let j = |name, x: f64, y: f64, z: f64, parent| BodyJoint {
        name,
        pos: Vector3::new(x, y, z),
        parent,
    };
    vec![
        j("pelvis", 0.0, 0.0, 0.0, None),
        j("spine1", 0.0, 0.15, 0.0, Some(0)),
        j("spine2", 0.0, 0.30, 0.0, Some(1)),
        j("spine3", 0.0, 0.45, 0.0, Some(2)),
        j("neck", 0.0, 0.60, 0.0, Some(3)),
        j("head", 0.0, 0.72, 0.0, Some(4)),
        j("left_clavicle", 0.08, 0.55, 0.0, Some(3)),
        j("left_shoulder", 0.22, 0.55, 0.0, Some(6)),
        j("left_elbow", 0.50, 0.55, 0.0, Some(7)),
        j("left_wrist", 0.78, 0.55, 0.0, Some(8)),
        j("right_clavicle", -0.08, 0.55, 0.0, Some(3)),
        j("right_shoulder", -0.22, 0.55, 0.0, Some(10)),
        j("right_elbow", -0.50, 0.55, 0.0, Some(11)),
        j("right_wrist", -0.78, 0.55, 0.0, Some(12)),
        j("left_hip", 0.11, -0.08, 0.0, Some(0)),
        j("left_knee", 0.11, -0.50, 0.0, Some(14)),
        j("left_ankle", 0.11, -0.92, 0.0, Some(15)),
        j("left_foot", 0.11, -0.99, 0.10, Some(16)),
        j("right_hip", -0.11, -0.08, 0.0, Some(0)),
        j("right_knee", -0.11, -0.50, 0.0, Some(18)),
        j("right_ankle", -0.11, -0.92, 0.0, Some(19)),
        j("right_foot", -0.11, -0.99, 0.10, Some(20)),
    ]
}

struct Tube {
    from: usize,
    to_pos: Vector3<f64>,
    /// Joint whose regressor ring is the tube's first ring, if any.
    owner_of_first_ring: Option<usize>,
    /// Joint whose regressor ring is the tube's last ring, if any (leaves).
    owner_of_last_ring: Option<usize>,
    rings: usize,
    r_start: (f64, f64),
    r_end: (f64, f64),
    cap_end: bool,
}

fn build_body_core(joints: &[BodyJoint]) -> (Builder, Vec<Vec<usize>>, Vec<usize>, Vec<usize>) {
    let mut b = Builder::new();
    let idx: BTreeMap<&str, usize> = joints
        .iter()
        .enumerate()
        .map(|(i, j)| (j.name, i))
        .collect();
    let pos = |name: &str| joints[idx[name]].pos;
    let head_top = pos("head") + Vector3::new(0.0, 0.08, 0.0);
    let l_toe = pos("left_foot") + Vector3::new(0.0, -0.01, 0.07);
    let r_toe = pos("right_foot") + Vector3::new(0.0, -0.01, 0.07);
    // Forearm tubes stop short of the wrist so the seam to the hand block is
    // a proper strip of near-uniform bridge edges.
    let l_forearm_end = pos("left_wrist") - Vector3::new(0.035, 0.0, 0.0);
    let r_forearm_end = pos("right_wrist") + Vector3::new(0.035, 0.0, 0.0);

    let tube = |from: &str,
                to_joint: Option<&str>,
                to_pos: Vector3<f64>,
                first: Option<&str>,
                last: Option<&str>,
                rings: usize,
                r_start: (f64, f64),
                r_end: (f64, f64),
                cap_end: bool| Tube {
        from: idx[from],
        to_pos: to_joint.map(|n| pos(n)).unwrap_or(to_pos),
        owner_of_first_ring: first.map(|n| idx[n]),
        owner_of_last_ring: last.map(|n| idx[n]),
        rings,
        r_start,
        r_end,
        cap_end,
    };
    let zero = Vector3::zeros();
    let tubes = vec![
        tube("pelvis", Some("spine1"), zero, Some("pelvis"), None, 4, (0.14, 0.10), (0.13, 0.095), false),
        tube("spine1", Some("spine2"), zero, Some("spine1"), None, 3, (0.13, 0.095), (0.125, 0.09), false),
        tube("spine2", Some("spine3"), zero, Some("spine2"), None, 3, (0.125, 0.09), (0.13, 0.09), false),
        tube("spine3", Some("neck"), zero, Some("spine3"), None, 3, (0.13, 0.09), (0.055, 0.055), false),
        tube("neck", Some("head"), zero, Some("neck"), None, 3, (0.05, 0.05), (0.06, 0.06), false),
        tube("head", None, head_top, Some("head"), None, 4, (0.075, 0.075), (0.045, 0.045), true),
        tube("spine3", Some("left_clavicle"), zero, None, Some("left_clavicle"), 3, (0.045, 0.045), (0.04, 0.04), false),
        tube("left_clavicle", Some("left_shoulder"), zero, None, Some("left_shoulder"), 3, (0.04, 0.04), (0.048, 0.048), false),
        tube("left_shoulder", Some("left_elbow"), zero, None, Some("left_elbow"), 6, (0.048, 0.048), (0.042, 0.042), false),
        tube("left_elbow", None, l_forearm_end, None, Some("left_wrist"), 6, (0.040, 0.040), (0.045, 0.045), false),
        tube("spine3", Some("right_clavicle"), zero, None, Some("right_clavicle"), 3, (0.045, 0.045), (0.04, 0.04), false),
        tube("right_clavicle", Some("right_shoulder"), zero, None, Some("right_shoulder"), 3, (0.04, 0.04), (0.048, 0.048), false),
        tube("right_shoulder", Some("right_elbow"), zero, None, Some("right_elbow"), 6, (0.048, 0.048), (0.042, 0.042), false),
        tube("right_elbow", None, r_forearm_end, None, Some("right_wrist"), 6, (0.040, 0.040), (0.045, 0.045), false),
        tube("pelvis", Some("left_hip"), zero, None, Some("left_hip"), 2, (0.075, 0.075), (0.075, 0.075), false),
        tube("left_hip", Some("left_knee"), zero, None, Some("left_knee"), 7, (0.075, 0.075), (0.055, 0.055), false),
        tube("left_knee", Some("left_ankle"), zero, None, Some("left_ankle"), 7, (0.055, 0.055), (0.042, 0.042), false),
        tube("left_ankle", Some("left_foot"), zero, None, Some("left_foot"), 3, (0.042, 0.042), (0.035, 0.035), false),
        tube("left_foot", None, l_toe, None, None, 2, (0.033, 0.033), (0.028, 0.028), true),
        tube("pelvis", Some("right_hip"), zero, None, Some("right_hip"), 2, (0.075, 0.075), (0.075, 0.075), false),
        tube("right_hip", Some("right_knee"), zero, None, Some("right_knee"), 7, (0.075, 0.075), (0.055, 0.055), false),
        tube("right_knee", Some("right_ankle"), zero, None, Some("right_ankle"), 7, (0.055, 0.055), (0.042, 0.042), false),
        tube("right_ankle", Some("right_foot"), zero, None, Some("right_foot"), 3, (0.042, 0.042), (0.035, 0.035), false),
        tube("right_foot", None, r_toe, None, None, 2, (0.033, 0.033), (0.028, 0.028), true),
    ];

    let mut joint_rings: Vec<Vec<usize>> = vec![Vec::new(); joints.len()];
    let mut left_wrist_ring = Vec::new();
    let mut right_wrist_ring = Vec::new();
    for t in &tubes {
        let start = joints[t.from].pos;
        let axis = t.to_pos - start;
        let mut prev: Option<Vec<usize>> = None;
        let mut last_ring = Vec::new();
        for k in 0..t.rings {
            let s = k as f64 / (t.rings - 1).max(1) as f64;
            let center = start + axis * s;
            let ru = t.r_start.0 + (t.r_end.0 - t.r_start.0) * s;
            let rv = t.r_start.1 + (t.r_end.1 - t.r_start.1) * s;
            let ring = b.add_ring(center, axis, ru, rv, RING_N, t.from);
            if k == 0 {
                if let Some(owner) = t.owner_of_first_ring {
                    if joint_rings[owner].is_empty() {
                        joint_rings[owner] = ring.clone();
                    }
                }
            }
            if let Some(p) = prev {
                b.connect_rings(&p, &ring);
            }
            last_ring = ring.clone();
            prev = Some(ring);
        }
        if let Some(owner) = t.owner_of_last_ring {
            if joint_rings[owner].is_empty() {
                joint_rings[owner] = last_ring.clone();
            }
            if joints[owner].name == "left_wrist" {
                left_wrist_ring = last_ring.clone();
            }
            if joints[owner].name == "right_wrist" {
                right_wrist_ring = last_ring.clone();
            }
        }
        if t.cap_end {
            b.add_cap(t.to_pos + axis.normalize() * 0.01, &last_ring, t.from);
        }
    }
    (b, joint_rings, left_wrist_ring, right_wrist_ring)
}

fn body_shape_basis(
    vertices: &[Vector3<f64>],
    core_count: usize,
    seed: u64,
) -> Vec<Vec<[f64; 3]>> {
    let is_hand = |i: usize| i >= core_count;
    let mut basis: Vec<Vec<[f64; 3]>> = Vec::new();
    // Global scale about the pelvis.
    basis.push(vertices.iter().map(|p| [p.x * 0.05, p.y * 0.05, p.z * 0.05]).collect());
    // Torso length: shifts everything above the pelvis, saturating at
    // shoulder height so arms and hands translate rigidly.
    basis.push(
        vertices
            .iter()
            .map(|p| [0.0, p.y.clamp(0.0, 0.55) * 0.08, 0.0])
            .collect(),
    );
    // Arm length.
    basis.push(
        vertices
            .iter()
            .map(|p| {
                let reach = (p.x.abs() - 0.10).max(0.0);
                [p.x.signum() * reach * 0.10, 0.0, 0.0]
            })
            .collect(),
    );
    // Leg length.
    basis.push(
        vertices
            .iter()
            .map(|p| [0.0, (p.y + 0.08).min(0.0) * 0.10, 0.0])
            .collect(),
    );
    // Torso width (core only, fading above the shoulders and outside x span).
    basis.push(
        vertices
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if is_hand(i) || p.x.abs() > 0.20 {
                    [0.0; 3]
                } else {
                    [p.x * 0.10, 0.0, p.z * 0.10]
                }
            })
            .collect(),
    );
    // Head size.
    let neck = Vector3::new(0.0, 0.60, 0.0);
    basis.push(
        vertices
            .iter()
            .map(|p| {
                if p.y > 0.62 && p.x.abs() < 0.12 {
                    let d = (p - neck) * 0.15;
                    [d.x, d.y, d.z]
                } else {
                    [0.0; 3]
                }
            })
            .collect(),
    );
    // Shoulder width.
    basis.push(
        vertices
            .iter()
            .map(|p| {
                if p.x.abs() > 0.05 && p.y > 0.3 {
                    [p.x.signum() * 0.04, 0.0, 0.0]
                } else {
                    [0.0; 3]
                }
            })
            .collect(),
    );
    // Seeded smooth residual modes, damped on the hand blocks so the body
    // basis stays weak at expressing hand shape.
    for k in 0..3u64 {
        basis.push(smooth_field(
            vertices,
            seed.wrapping_add(7 + k),
            0.008,
            |i| if is_hand(i) { 0.1 } else { 1.0 },
        ));
    }
    basis
}

fn build_body_spec(seed: u64) -> ArticulatedModelSpec {
    let joints = body_joints();
    let (mut b, mut joint_rings, left_wrist_ring, right_wrist_ring) = build_body_core(&joints);
    let core_count = b.vertices.len();
    let hand_geo = build_hand_geometry();
    let hand_v = hand_geo.builder.vertices.len();
    let idx: BTreeMap<&str, usize> = joints
        .iter()
        .enumerate()
        .map(|(i, j)| (j.name, i))
        .collect();

    // Hand placements: the left hand is the canonical template translated to
    // the left wrist; the right hand is rotated π about +y so fingers point
    // outward along −x.
    let placements = [
        (HandSide::Left, RigidTransform::new(RotationMatrix::identity(), joints[idx["left_wrist"]].pos), idx["left_wrist"]),
        (
            HandSide::Right,
            RigidTransform::new(RotationMatrix::rot_y(std::f64::consts::PI), joints[idx["right_wrist"]].pos),
            idx["right_wrist"],
        ),
    ];

    let mut hand_regions = BTreeMap::new();
    for (side, placement, wrist_joint) in placements {
        let offset = b.vertices.len();
        for (v, _part) in hand_geo.builder.vertices.iter().zip(&hand_geo.parts) {
            b.push_vertex(placement.apply_point(v), wrist_joint);
        }
        for f in &hand_geo.builder.faces {
            b.faces.push([f[0] + offset, f[1] + offset, f[2] + offset]);
        }
        // Seam faces between the forearm end ring and the hand wrist ring.
        let hand_ring: Vec<usize> = hand_geo.boundary_ring.iter().map(|&i| i + offset).collect();
        let forearm_ring = if side == HandSide::Left {
            &left_wrist_ring
        } else {
            &right_wrist_ring
        };
        b.connect_rings(forearm_ring, &hand_ring);

        let vertex_indices: Vec<usize> = (0..hand_v).map(|k| k + offset).collect();
        let marker_weights = MarkerName::ALL
            .iter()
            .map(|m| {
                let joint = hand_named_joints()[m.joint_name()];
                uniform_row(hand_v, &hand_geo.joint_rings[joint])
            })
            .collect();
        hand_regions.insert(
            side,
            HandRegion {
                vertex_indices,
                boundary_ring: hand_ring,
                correspondence: (0..hand_v).collect(),
                marker_weights,
            },
        );
    }

    // Stash the left/right wrist regressor rings before moving the builder.
    for (name, ring) in [("left_wrist", &left_wrist_ring), ("right_wrist", &right_wrist_ring)] {
        let j = idx[name];
        if joint_rings[j].is_empty() {
            joint_rings[j] = ring.clone();
        }
    }

    let v = b.vertices.len();
    let regressor = joint_rings.iter().map(|ring| uniform_row(v, ring)).collect();
    let shape_basis = body_shape_basis(&b.vertices, core_count, seed);
    let named_joints: BTreeMap<String, usize> = joints
        .iter()
        .enumerate()
        .map(|(i, j)| (j.name.to_string(), i))
        .collect();

    ArticulatedModelSpec {
        schema: SCHEMA_VERSION.to_string(),
        kind: ModelKind::Body,
        joint_count: joints.len(),
        parents: joints.iter().map(|j| j.parent).collect(),
        template_vertices: b.vertices.iter().map(|p| [p.x, p.y, p.z]).collect(),
        faces: b.faces,
        rest_joint_regressor: regressor,
        skinning_weights: hard_skin_rows(joints.len(), &b.skin_joint),
        shape_basis,
        named_joints,
        boundary_ring: None,
        hand_regions: Some(hand_regions),
    }
}

/// Builds a toy model spec. Deterministic for a fixed `(kind, seed)`; the
/// seed drives only the trailing smooth shape-basis modes, so the hand
/// template embedded in any body spec matches the standalone hand template.
pub fn generate_toy_spec(kind: ModelKind, seed: u64) -> ArticulatedModelSpec {
    match kind {
        ModelKind::Hand => build_hand_spec(seed),
        ModelKind::Body => build_body_spec(seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_toy_spec(ModelKind::Body, 7);
        let b = generate_toy_spec(ModelKind::Body, 7);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn body_spec_validates() {
        let spec = generate_toy_spec(ModelKind::Body, 3);
        spec.validate().unwrap();
        assert_eq!(spec.joint_count, 22);
        assert!(spec.named_joints.contains_key("pelvis"));
        assert!(spec.named_joints.contains_key("left_wrist"));
        assert!(spec.named_joints.contains_key("right_wrist"));
    }

    #[test]
    fn hand_spec_validates_with_finger_chains_of_depth_four() {
        let spec = generate_toy_spec(ModelKind::Hand, 3);
        spec.validate().unwrap();
        assert_eq!(spec.joint_count, 16);
        assert_eq!(spec.shape_dim(), 10);
        for f in 0..5 {
            let mcp = 1 + 3 * f;
            assert_eq!(spec.parents[mcp], Some(0));
            assert_eq!(spec.parents[mcp + 1], Some(mcp));
            assert_eq!(spec.parents[mcp + 2], Some(mcp + 1));
        }
    }

    #[test]
    fn hand_wrist_rests_at_origin() {
        let spec = generate_toy_spec(ModelKind::Hand, 1);
        let shaped = crate::model::shape_mesh(&spec, &vec![0.0; 10]).unwrap();
        assert!(shaped.rest_joints[0].norm() < 1e-12);
    }

    #[test]
    fn body_pelvis_rests_at_origin() {
        let spec = generate_toy_spec(ModelKind::Body, 1);
        let shaped = crate::model::shape_mesh(&spec, &vec![0.0; 10]).unwrap();
        assert!(shaped.rest_joints[0].norm() < 1e-12);
    }

    #[test]
    fn body_hand_regions_are_placed_hand_templates() {
        let body = generate_toy_spec(ModelKind::Body, 5);
        let hand = generate_toy_spec(ModelKind::Hand, 5);
        let template = body.template();
        for side in [HandSide::Left, HandSide::Right] {
            let region = body.hand_region(side).unwrap();
            assert_eq!(region.vertex_indices.len(), hand.vertex_count());
            // Pairwise distances survive the rigid placement.
            let ht = hand.template();
            for k in [0usize, 17, 101, 200] {
                for l in [3usize, 50, 150] {
                    let d_body = (template[region.vertex_indices[k]]
                        - template[region.vertex_indices[l]])
                    .norm();
                    let d_hand = (ht[region.correspondence[k]] - ht[region.correspondence[l]]).norm();
                    assert!((d_body - d_hand).abs() < 1e-12, "{side:?} {k} {l}");
                }
            }
        }
    }

    #[test]
    fn spec_round_trip_is_bit_identical() {
        let dir = std::env::temp_dir().join("posefuse_spec_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        for kind in [ModelKind::Body, ModelKind::Hand] {
            let spec = generate_toy_spec(kind, 11);
            let path = dir.join(format!("{kind:?}.json"));
            crate::model::save_model_spec(&spec, &path).unwrap();
            let loaded = crate::model::load_model_spec(&path).unwrap();
            assert_eq!(spec, loaded);
            // Bit-level check on the float payloads.
            for (a, b) in spec
                .template_vertices
                .iter()
                .flatten()
                .zip(loaded.template_vertices.iter().flatten())
            {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_skinning_row_is_rejected_with_field_name() {
        let mut spec = generate_toy_spec(ModelKind::Body, 2);
        spec.skinning_weights[10][0] += 0.1; // row no longer sums to 1
        let err = spec.validate().unwrap_err();
        assert_eq!(err.violated_field(), Some("skinning_weights"));
    }

    #[test]
    fn missing_pelvis_is_rejected_with_field_name() {
        let mut spec = generate_toy_spec(ModelKind::Body, 2);
        spec.named_joints.remove("pelvis");
        let err = spec.validate().unwrap_err();
        assert_eq!(err.violated_field(), Some("named_joints"));
    }

    #[test]
    fn marker_positions_match_hand_joints_at_rest() {
        // The body-side markers regressed from the hand region must coincide
        // with the placed hand model's joints.
        let body = generate_toy_spec(ModelKind::Body, 5);
        let hand = generate_toy_spec(ModelKind::Hand, 5);
        let template = body.template();
        let hand_shaped = crate::model::shape_mesh(&hand, &vec![0.0; 10]).unwrap();
        let region = body.hand_region(HandSide::Left).unwrap();
        let wrist_pos = Vector3::new(0.78, 0.55, 0.0);
        for (m, marker) in MarkerName::ALL.iter().enumerate() {
            let joint = hand.joint_index(marker.joint_name()).unwrap();
            let expected = hand_shaped.rest_joints[joint] + wrist_pos;
            let mut got = Vector3::zeros();
            for (w, &vi) in region.marker_weights[m].iter().zip(&region.vertex_indices) {
                got += template[vi] * *w;
            }
            assert!((got - expected).norm() < 1e-12, "marker {m}");
        }
    }
}
