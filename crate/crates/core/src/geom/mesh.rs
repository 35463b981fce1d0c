//! Triangle meshes and uniform Laplacian smoothing.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::GeomError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Ordered ring of vertex indices along an open boundary of interest
    /// (the wrist seam for hand meshes).
    pub boundary_ring: Option<Vec<usize>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Self {
        Mesh {
            vertices,
            faces,
            boundary_ring: None,
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        for face in &self.faces {
            for &v in face {
                if v >= self.vertices.len() {
                    return Err(GeomError::FaceIndexOutOfBounds(v));
                }
            }
        }
        if let Some(ring) = &self.boundary_ring {
            let set: BTreeSet<_> = ring.iter().collect();
            if set.len() != ring.len() {
                return Err(GeomError::DimMismatch("boundary ring has duplicates"));
            }
            for &v in ring {
                if v >= self.vertices.len() {
                    return Err(GeomError::FaceIndexOutOfBounds(v));
                }
            }
        }
        Ok(())
    }
}

/// Undirected one-ring adjacency from the face list.
pub fn vertex_adjacency(vertex_count: usize, faces: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); vertex_count];
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            sets[a].insert(b);
            sets[b].insert(a);
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Uniform Laplacian smoothing restricted to `vertex_set`.
///
/// Each iteration simultaneously moves every selected vertex toward the mean
/// of its one-ring: `v ← v + λ·(mean(N(v)) − v)`. Vertices outside the set
/// are never touched (their bytes are copied through unchanged), but they do
/// participate as neighbors.
pub fn laplacian_smooth(
    mesh: &Mesh,
    vertex_set: &[usize],
    lambda: f64,
    iters: usize,
) -> Result<Mesh, GeomError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(GeomError::DimMismatch("lambda must be in (0, 1]"));
    }
    for &v in vertex_set {
        if v >= mesh.vertices.len() {
            return Err(GeomError::FaceIndexOutOfBounds(v));
        }
    }
    let mut out = mesh.clone();
    if iters == 0 || vertex_set.is_empty() {
        return Ok(out);
    }
    let adjacency = vertex_adjacency(mesh.vertices.len(), &mesh.faces);
    for &v in vertex_set {
        if adjacency[v].is_empty() {
            return Err(GeomError::IsolatedVertex(v));
        }
    }
    let mut updates: Vec<(usize, Vector3<f64>)> = Vec::with_capacity(vertex_set.len());
    for _ in 0..iters {
        updates.clear();
        for &v in vertex_set {
            let neighbors = &adjacency[v];
            let mean = neighbors
                .iter()
                .map(|&n| out.vertices[n])
                .sum::<Vector3<f64>>()
                / neighbors.len() as f64;
            let p = out.vertices[v];
            updates.push((v, p + (mean - p) * lambda));
        }
        for &(v, p) in &updates {
            out.vertices[v] = p;
        }
    }
    Ok(out)
}
