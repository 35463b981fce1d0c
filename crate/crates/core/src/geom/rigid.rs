//! Rigid transforms and closed-form point-set registration.
//!
//! `kabsch_rigid` solves the least-squares rigid alignment of corresponding
//! point sets via SVD of the cross-covariance, with the reflection corrected
//! through the sign of the smallest singular value. `kabsch_differential`
//! propagates perturbations of the destination points through the SVD, which
//! is what makes the hand-to-body alignment differentiable.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::RotationMatrix;
use super::GeomError;

/// Rotation followed by translation: `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.0 * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt.0 * self.translation),
        }
    }
}

/// Applies a rigid transform to a point list.
pub fn apply_rigid(t: &RigidTransform, pts: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    pts.iter().map(|p| t.apply_point(p)).collect()
}

/// Sum of squared distances after transforming `src` by `t`.
pub fn registration_residual(
    t: &RigidTransform,
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(p, q)| (t.apply_point(p) - q).norm_squared())
        .sum()
}

fn centroid(pts: &[Vector3<f64>]) -> Vector3<f64> {
    pts.iter().sum::<Vector3<f64>>() / pts.len() as f64
}

struct KabschDecomposition {
    u: Matrix3<f64>,
    v: Matrix3<f64>,
    singular: Vector3<f64>,
    det_sign: f64,
    src_centroid: Vector3<f64>,
    dst_centroid: Vector3<f64>,
}

fn kabsch_decompose(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<KabschDecomposition, GeomError> {
    if src.len() != dst.len() {
        return Err(GeomError::DimMismatch("point counts differ"));
    }
    if src.len() < 3 {
        return Err(GeomError::DegenerateConfiguration("fewer than 3 points"));
    }
    let src_centroid = centroid(src);
    let dst_centroid = centroid(dst);

    // Cross-covariance H = Σ (src_i - s̄)(dst_i - d̄)ᵀ.
    let mut h = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        h += (p - src_centroid) * (q - dst_centroid).transpose();
    }

    let svd = nalgebra::SVD::new(h, true, true);
    let u = svd.u.ok_or(GeomError::DegenerateConfiguration("svd"))?;
    let v_t = svd.v_t.ok_or(GeomError::DegenerateConfiguration("svd"))?;
    let v = v_t.transpose();
    let singular = svd.singular_values;

    // Rank of the centered source must be at least 2 for the rotation to be
    // determined; collinear sources leave a free rotation about the line.
    let mut src_cov = Matrix3::zeros();
    for p in src {
        let c = p - src_centroid;
        src_cov += c * c.transpose();
    }
    let src_svals = nalgebra::SVD::new(src_cov, false, false).singular_values;
    if src_svals[1] <= 1e-12 * src_svals[0].max(1.0) {
        return Err(GeomError::DegenerateConfiguration(
            "source points are collinear",
        ));
    }

    let det_sign = if (v * u.transpose()).determinant() < 0.0 {
        -1.0
    } else {
        1.0
    };
    Ok(KabschDecomposition {
        u,
        v,
        singular,
        det_sign,
        src_centroid,
        dst_centroid,
    })
}

impl KabschDecomposition {
    fn rotation(&self) -> Matrix3<f64> {
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, self.det_sign));
        self.v * d * self.u.transpose()
    }
}

/// Least-squares rigid alignment: minimizes `Σ‖R·src_i + t − dst_i‖²` over
/// proper rotations and translations.
pub fn kabsch_rigid(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<RigidTransform, GeomError> {
    let dec = kabsch_decompose(src, dst)?;
    let r = dec.rotation();
    let t = dec.dst_centroid - r * dec.src_centroid;
    Ok(RigidTransform {
        rotation: RotationMatrix::from_matrix_unchecked(r),
        translation: t,
    })
}

/// Least-squares similarity alignment: minimizes
/// `Σ‖s·R·src_i + t − dst_i‖²` over `s > 0`, rotations, and translations.
pub fn procrustes_similarity(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<(f64, RigidTransform), GeomError> {
    let dec = kabsch_decompose(src, dst)?;
    let r = dec.rotation();
    let src_var: f64 = src
        .iter()
        .map(|p| (p - dec.src_centroid).norm_squared())
        .sum();
    if src_var <= 1e-24 {
        return Err(GeomError::DegenerateConfiguration(
            "source points are coincident",
        ));
    }
    // Optimal scale = tr(D·S) / Σ‖src_centered‖².
    let trace_ds =
        dec.singular[0] + dec.singular[1] + dec.det_sign * dec.singular[2];
    let scale = trace_ds / src_var;
    if scale <= 0.0 {
        return Err(GeomError::DegenerateConfiguration("non-positive scale"));
    }
    let t = dec.dst_centroid - r * dec.src_centroid * scale;
    Ok((
        scale,
        RigidTransform {
            rotation: RotationMatrix::from_matrix_unchecked(r),
            translation: t,
        },
    ))
}

/// Directional derivative of the Kabsch solution with respect to the
/// destination points.
///
/// Given the perturbation `d_dst` of each destination point, returns the
/// induced `(dR, dt)`. Fails with `DegenerateConfiguration` when the singular
/// values of the cross-covariance are closer than `sv_gap_tol`, where the SVD
/// factors are not differentiable.
pub fn kabsch_differential(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    d_dst: &[Vector3<f64>],
    sv_gap_tol: f64,
) -> Result<(Matrix3<f64>, Vector3<f64>), GeomError> {
    if d_dst.len() != dst.len() {
        return Err(GeomError::DimMismatch("perturbation count"));
    }
    let dec = kabsch_decompose(src, dst)?;
    let s = dec.singular;
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (s[i] - s[j]).abs() < sv_gap_tol {
                return Err(GeomError::DegenerateConfiguration(
                    "singular value gap below tolerance",
                ));
            }
        }
    }

    let n = src.len() as f64;
    let d_dst_centroid = d_dst.iter().sum::<Vector3<f64>>() / n;

    // dH = Σ (src_i - s̄)(d_dst_i - d_d̄)ᵀ.
    let mut dh = Matrix3::zeros();
    for (p, dq) in src.iter().zip(d_dst) {
        dh += (p - dec.src_centroid) * (dq - d_dst_centroid).transpose();
    }

    // P = Uᵀ dH V = A S + dS − S B with A = UᵀdU, B = VᵀdV both skew.
    let p = dec.u.transpose() * dh * dec.v;
    let mut a = Matrix3::zeros();
    let mut b = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let denom = s[j] * s[j] - s[i] * s[i];
            a[(i, j)] = (s[j] * p[(i, j)] + s[i] * p[(j, i)]) / denom;
            b[(i, j)] = (s[i] * p[(i, j)] + s[j] * p[(j, i)]) / denom;
        }
    }

    // R = V D Uᵀ ⇒ dR = V (B D − D A) Uᵀ, with D constant locally.
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, dec.det_sign));
    let dr = dec.v * (b * d - d * a) * dec.u.transpose();

    // t = d̄ − R s̄ ⇒ dt = d_d̄ − dR s̄.
    let dt = d_dst_centroid - dr * dec.src_centroid;
    Ok((dr, dt))
}
