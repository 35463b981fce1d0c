//! Articulated model specs and their on-disk JSON form.
//!
//! The file schema is versioned (`posefuse-spec-v1`) and carries the kinematic
//! tree, template geometry, joint regressor, skinning weights, shape basis,
//! named joints, and (for the body) the per-side hand regions used by the
//! transfer stage. Every invariant is validated on load and the failing field
//! is named in the error.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use super::ModelError;

pub const SCHEMA_VERSION: &str = "posefuse-spec-v1";

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Body,
    Hand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum HandSide {
    Left,
    Right,
}

impl HandSide {
    pub fn opposite(&self) -> HandSide {
        match self {
            HandSide::Left => HandSide::Right,
            HandSide::Right => HandSide::Left,
        }
    }

    pub fn wrist_joint_name(&self) -> &'static str {
        match self {
            HandSide::Left => "left_wrist",
            HandSide::Right => "right_wrist",
        }
    }
}

/// The five alignment markers, in the fixed order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerName {
    Wrist,
    IndexMcp,
    MiddleMcp,
    RingMcp,
    PinkyMcp,
}

impl MarkerName {
    pub const ALL: [MarkerName; 5] = [
        MarkerName::Wrist,
        MarkerName::IndexMcp,
        MarkerName::MiddleMcp,
        MarkerName::RingMcp,
        MarkerName::PinkyMcp,
    ];

    pub fn joint_name(&self) -> &'static str {
        match self {
            MarkerName::Wrist => "wrist",
            MarkerName::IndexMcp => "index_mcp",
            MarkerName::MiddleMcp => "middle_mcp",
            MarkerName::RingMcp => "ring_mcp",
            MarkerName::PinkyMcp => "pinky_mcp",
        }
    }
}

/// Per-side hand region of the body model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandRegion {
    /// Body vertex indices forming the region, in correspondence order.
    pub vertex_indices: Vec<usize>,
    /// Body vertex indices of the wrist seam ring (subset of the region).
    pub boundary_ring: Vec<usize>,
    /// `correspondence[k]` is the hand-model vertex matched to
    /// `vertex_indices[k]`; must be a bijection onto the hand model vertices.
    pub correspondence: Vec<usize>,
    /// Five rows (wrist, index/middle/ring/pinky MCP) of nonnegative weights
    /// over the region vertices; each row sums to 1. Marker positions are the
    /// weighted means of the posed region vertices.
    pub marker_weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedModelSpec {
    pub schema: String,
    pub kind: ModelKind,
    pub joint_count: usize,
    /// `parents[0]` is `None` (root); every other entry points at the parent.
    pub parents: Vec<Option<usize>>,
    pub template_vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    /// J rows × V columns, rows sum to 1.
    pub rest_joint_regressor: Vec<Vec<f64>>,
    /// V rows × J columns, rows sum to 1.
    pub skinning_weights: Vec<Vec<f64>>,
    /// B displacement fields of V×3 each, meters per unit coefficient.
    pub shape_basis: Vec<Vec<[f64; 3]>>,
    pub named_joints: BTreeMap<String, usize>,
    /// Wrist seam ring of a hand model (hand kind only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_ring: Option<Vec<usize>>,
    /// Hand regions of a body model (body kind only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand_regions: Option<BTreeMap<HandSide, HandRegion>>,
}

impl ArticulatedModelSpec {
    pub fn vertex_count(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_basis.len()
    }

    pub fn joint_index(&self, name: &str) -> Result<usize, ModelError> {
        self.named_joints
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownJoint(name.to_string()))
    }

    pub fn template(&self) -> Vec<Vector3<f64>> {
        self.template_vertices
            .iter()
            .map(|v| Vector3::new(v[0], v[1], v[2]))
            .collect()
    }

    pub fn hand_region(&self, side: HandSide) -> Result<&HandRegion, ModelError> {
        self.hand_regions
            .as_ref()
            .and_then(|m| m.get(&side))
            .ok_or(ModelError::UnknownSide)
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.joint_count];
        for (j, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(j);
            }
        }
        let mut order = Vec::with_capacity(self.joint_count);
        let mut stack = vec![0usize];
        while let Some(j) = stack.pop() {
            order.push(j);
            for &c in children[j].iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ModelError::ParseError(format!(
                "schema `{}` does not match `{SCHEMA_VERSION}`",
                self.schema
            )));
        }
        let j = self.joint_count;
        let v = self.vertex_count();
        if self.parents.len() != j {
            return Err(ModelError::invariant("parents", "length must equal joint_count"));
        }
        if self.parents[0].is_some() {
            return Err(ModelError::invariant("parents", "joint 0 must be the root"));
        }
        // Tree check: every joint must reach the root without cycles.
        for start in 1..j {
            let mut cur = start;
            let mut steps = 0;
            loop {
                match self.parents[cur] {
                    None => break,
                    Some(p) if p < j => {
                        cur = p;
                        steps += 1;
                        if steps > j {
                            return Err(ModelError::invariant("parents", "cycle detected"));
                        }
                    }
                    Some(p) => {
                        return Err(ModelError::invariant(
                            "parents",
                            format!("parent index {p} out of range"),
                        ))
                    }
                }
            }
        }

        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&k| k >= v) {
                return Err(ModelError::invariant(
                    "faces",
                    format!("face {i} references a vertex out of range"),
                ));
            }
        }

        if self.rest_joint_regressor.len() != j {
            return Err(ModelError::invariant("rest_joint_regressor", "row count must be J"));
        }
        for (i, row) in self.rest_joint_regressor.iter().enumerate() {
            if row.len() != v {
                return Err(ModelError::invariant(
                    "rest_joint_regressor",
                    format!("row {i} length must be V"),
                ));
            }
            validate_weight_row("rest_joint_regressor", i, row)?;
        }

        if self.skinning_weights.len() != v {
            return Err(ModelError::invariant("skinning_weights", "row count must be V"));
        }
        for (i, row) in self.skinning_weights.iter().enumerate() {
            if row.len() != j {
                return Err(ModelError::invariant(
                    "skinning_weights",
                    format!("row {i} length must be J"),
                ));
            }
            validate_weight_row("skinning_weights", i, row)?;
        }

        for (b, field) in self.shape_basis.iter().enumerate() {
            if field.len() != v {
                return Err(ModelError::invariant(
                    "shape_basis",
                    format!("basis {b} length must be V"),
                ));
            }
        }

        let required: &[&str] = match self.kind {
            ModelKind::Body => &["pelvis", "left_wrist", "right_wrist"],
            ModelKind::Hand => &["wrist", "index_mcp", "middle_mcp", "ring_mcp", "pinky_mcp"],
        };
        for name in required {
            match self.named_joints.get(*name) {
                Some(&idx) if idx < j => {}
                Some(_) => {
                    return Err(ModelError::invariant(
                        "named_joints",
                        format!("`{name}` index out of range"),
                    ))
                }
                None => {
                    return Err(ModelError::invariant(
                        "named_joints",
                        format!("missing required joint `{name}`"),
                    ))
                }
            }
        }
        for (name, &idx) in &self.named_joints {
            if idx >= j {
                return Err(ModelError::invariant(
                    "named_joints",
                    format!("`{name}` index out of range"),
                ));
            }
        }

        if let Some(regions) = &self.hand_regions {
            if self.kind != ModelKind::Body {
                return Err(ModelError::invariant(
                    "hand_regions",
                    "only body models carry hand regions",
                ));
            }
            for (side, region) in regions {
                validate_hand_region(side, region, v)?;
            }
        }
        if self.kind == ModelKind::Body && self.hand_regions.is_none() {
            return Err(ModelError::invariant("hand_regions", "body model must define them"));
        }
        if let Some(ring) = &self.boundary_ring {
            if ring.iter().any(|&i| i >= v) {
                return Err(ModelError::invariant("boundary_ring", "index out of range"));
            }
        }
        Ok(())
    }
}

fn validate_weight_row(field: &'static str, row: usize, weights: &[f64]) -> Result<(), ModelError> {
    let mut sum = 0.0;
    for &w in weights {
        if !(w >= 0.0) {
            return Err(ModelError::invariant(
                field,
                format!("row {row} has a negative or non-finite weight"),
            ));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(ModelError::invariant(
            field,
            format!("row {row} sums to {sum}, expected 1"),
        ));
    }
    Ok(())
}

fn validate_hand_region(side: &HandSide, region: &HandRegion, v: usize) -> Result<(), ModelError> {
    let n = region.vertex_indices.len();
    if region.vertex_indices.iter().any(|&i| i >= v) {
        return Err(ModelError::invariant(
            "hand_regions",
            format!("{side:?} region vertex index out of range"),
        ));
    }
    let mut seen = vec![false; v];
    for &i in &region.vertex_indices {
        if seen[i] {
            return Err(ModelError::invariant(
                "hand_regions",
                format!("{side:?} region has duplicate vertices"),
            ));
        }
        seen[i] = true;
    }
    // Correspondence must be a bijection onto the hand model's vertex set,
    // which pins the hand vertex count to the region size.
    if region.correspondence.len() != n {
        return Err(ModelError::invariant(
            "hand_regions",
            format!("{side:?} correspondence length must match region size"),
        ));
    }
    let mut hit = vec![false; n];
    for &c in &region.correspondence {
        if c >= n || hit[c] {
            return Err(ModelError::invariant(
                "hand_regions",
                format!("{side:?} correspondence is not a bijection"),
            ));
        }
        hit[c] = true;
    }
    for &b in &region.boundary_ring {
        if !region.vertex_indices.contains(&b) {
            return Err(ModelError::invariant(
                "hand_regions",
                format!("{side:?} boundary ring vertex {b} outside region"),
            ));
        }
    }
    {
        let mut sorted = region.boundary_ring.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != region.boundary_ring.len() {
            return Err(ModelError::invariant(
                "hand_regions",
                format!("{side:?} boundary ring has duplicates"),
            ));
        }
    }
    if region.marker_weights.len() != MarkerName::ALL.len() {
        return Err(ModelError::invariant(
            "hand_regions",
            format!("{side:?} must define exactly 5 markers"),
        ));
    }
    for (m, row) in region.marker_weights.iter().enumerate() {
        if row.len() != n {
            return Err(ModelError::invariant(
                "hand_regions",
                format!("{side:?} marker {m} weight length must match region size"),
            ));
        }
        validate_weight_row("hand_regions", m, row)?;
    }
    Ok(())
}

pub fn load_model_spec(path: &Path) -> Result<ArticulatedModelSpec, ModelError> {
    let bytes = std::fs::read(path)?;
    let spec: ArticulatedModelSpec =
        serde_json::from_slice(&bytes).map_err(|e| ModelError::ParseError(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn save_model_spec(spec: &ArticulatedModelSpec, path: &Path) -> Result<(), ModelError> {
    let json = serde_json::to_vec(spec).map_err(|e| ModelError::ParseError(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}
