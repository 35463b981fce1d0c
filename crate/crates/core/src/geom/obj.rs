//! Wavefront OBJ export/import (vertices and triangular faces only).

use nalgebra::Vector3;
use std::io::{BufRead, Write};
use std::path::Path;

use super::Mesh;

/// Writes `v` and `f` records with six decimal places. Output is bit-stable
/// for a given mesh.
pub fn write_obj<W: Write>(mesh: &Mesh, mut out: W) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(out, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

pub fn export_obj(mesh: &Mesh, path: &Path) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_obj(mesh, std::io::BufWriter::new(file))
}

/// Parses `v`/`f` lines; everything else is ignored. Faces must be triangles
/// with 1-based absolute indices.
pub fn parse_obj<R: BufRead>(input: R) -> std::io::Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for line in input.lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts.take(3).filter_map(|p| p.parse().ok()).collect();
                if coords.len() != 3 {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        "malformed vertex line",
                    ));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .take(3)
                    .filter_map(|p| p.split('/').next()?.parse::<usize>().ok())
                    .collect();
                if idx.len() != 3 || idx.iter().any(|&i| i == 0) {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        "malformed face line",
                    ));
                }
                faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    Ok(Mesh::new(vertices, faces))
}

pub fn load_obj(path: &Path) -> std::io::Result<Mesh> {
    let file = std::fs::File::open(path)?;
    parse_obj(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_six_decimals() {
        let mesh = Mesh::new(
            vec![
                Vector3::new(0.1234567, -2.0, 3.5),
                Vector3::new(1.0, 1.0, 1.0),
                Vector3::new(-0.000001, 0.25, 9.0),
            ],
            vec![[0, 1, 2]],
        );
        let mut buf = Vec::new();
        write_obj(&mesh, &mut buf).unwrap();
        let parsed = parse_obj(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(parsed.faces, mesh.faces);
        for (a, b) in parsed.vertices.iter().zip(&mesh.vertices) {
            assert!((a - b).amax() < 5e-7);
        }
    }

    #[test]
    fn export_is_bit_stable() {
        let mesh = Mesh::new(
            vec![Vector3::new(0.5, 0.5, 0.5), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        );
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_obj(&mesh, &mut a).unwrap();
        write_obj(&mesh, &mut b).unwrap();
        assert_eq!(a, b);
    }
}
