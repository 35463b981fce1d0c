//! Evaluation metrics: MPVPE (translation-aligned at a named joint), MRRPE
//! (relative wrist placement), PA-MPVPE (similarity-Procrustes aligned), and
//! the wrist geodesic error.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::procrustes_similarity;

use super::TrainError;

const M_TO_MM: f64 = 1000.0;

/// Mean per-vertex position error in millimeters after translating both
/// meshes so the alignment joints coincide.
pub fn mpvpe(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    align_pred: &Vector3<f64>,
    align_gt: &Vector3<f64>,
) -> Result<f64, TrainError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(TrainError::DimMismatch("vertex counts differ"));
    }
    let mut acc = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        acc += ((p - align_pred) - (g - align_gt)).norm();
    }
    Ok(acc / pred.len() as f64 * M_TO_MM)
}

/// Norm of the difference between predicted and ground-truth left-minus-right
/// wrist vectors, in millimeters.
pub fn mrrpe(
    pred_lwrist: &Vector3<f64>,
    pred_rwrist: &Vector3<f64>,
    gt_lwrist: &Vector3<f64>,
    gt_rwrist: &Vector3<f64>,
) -> f64 {
    ((pred_lwrist - pred_rwrist) - (gt_lwrist - gt_rwrist)).norm() * M_TO_MM
}

/// MPVPE after similarity-Procrustes alignment of the prediction onto the
/// ground truth (removes global rotation, scale, and translation error).
pub fn pa_mpvpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64, TrainError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(TrainError::DimMismatch("vertex counts differ"));
    }
    let (scale, t) = procrustes_similarity(pred, gt)?;
    let mut acc = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        acc += (t.rotation.0 * p * scale + t.translation - g).norm();
    }
    Ok(acc / pred.len() as f64 * M_TO_MM)
}

/// Per-sample metric values; `None` marks metrics undefined for the sample
/// (e.g. hand errors when no hand is detected).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleMetrics {
    pub index: usize,
    pub kind: String,
    pub mpvpe_full: f64,
    pub mpvpe_hands: Option<f64>,
    pub mrrpe: Option<f64>,
    pub pa_mpvpe: f64,
    pub wrist_geodesic: Option<f64>,
}

/// Aggregated evaluation report. Aggregation is the mean over the samples
/// where a metric is defined.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub mpvpe_full: f64,
    pub mpvpe_hands: f64,
    pub mrrpe: f64,
    pub pa_mpvpe: f64,
    pub wrist_geodesic: f64,
    pub sample_count: usize,
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricsReport {
    pub fn aggregate(per_sample: Vec<SampleMetrics>) -> MetricsReport {
        let mean_of = |values: Vec<f64>| {
            if values.is_empty() {
                0.0
            } else {
                values.iter().sum::<f64>() / values.len() as f64
            }
        };
        MetricsReport {
            mpvpe_full: mean_of(per_sample.iter().map(|s| s.mpvpe_full).collect()),
            mpvpe_hands: mean_of(per_sample.iter().filter_map(|s| s.mpvpe_hands).collect()),
            mrrpe: mean_of(per_sample.iter().filter_map(|s| s.mrrpe).collect()),
            pa_mpvpe: mean_of(per_sample.iter().map(|s| s.pa_mpvpe).collect()),
            wrist_geodesic: mean_of(per_sample.iter().filter_map(|s| s.wrist_geodesic).collect()),
            sample_count: per_sample.len(),
            per_sample,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mpvpe_full.is_finite()
            && self.mpvpe_hands.is_finite()
            && self.mrrpe.is_finite()
            && self.pa_mpvpe.is_finite()
            && self.wrist_geodesic.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RotationMatrix;
    use crate::rng;

    fn cloud(seed: u64, n: usize) -> Vec<Vector3<f64>> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| Vector3::new(rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r)))
            .collect()
    }

    #[test]
    fn mpvpe_zero_on_identical_and_translated_meshes() {
        let gt = cloud(1, 40);
        let zero = Vector3::zeros();
        assert_eq!(mpvpe(&gt, &gt, &zero, &zero).unwrap(), 0.0);
        let shift = Vector3::new(0.3, -0.7, 1.1);
        let pred: Vec<_> = gt.iter().map(|p| p + shift).collect();
        let err = mpvpe(&pred, &gt, &shift, &zero).unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn mpvpe_closed_form_single_vertex_offset() {
        let gt = cloud(2, 25);
        let mut pred = gt.clone();
        pred[7] += Vector3::new(0.0, 0.004, 0.0); // 4 mm
        let zero = Vector3::zeros();
        let err = mpvpe(&pred, &gt, &zero, &zero).unwrap();
        assert!((err - 4.0 / 25.0).abs() < 1e-9);
    }

    #[test]
    fn mrrpe_cases() {
        let l = Vector3::new(0.2, 0.5, 2.0);
        let r = Vector3::new(-0.2, 0.5, 2.0);
        assert_eq!(mrrpe(&l, &r, &l, &r), 0.0);
        let shift = Vector3::new(1.0, 2.0, 3.0);
        assert!(mrrpe(&(l + shift), &(r + shift), &l, &r) < 1e-9);
        let off = Vector3::new(0.003, 0.004, 0.0); // 5 mm offset on the left wrist
        assert!((mrrpe(&(l + off), &r, &l, &r) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn pa_mpvpe_removes_similarity_motion() {
        let gt = cloud(3, 30);
        let rot = RotationMatrix::rot_y(0.8);
        let pred: Vec<_> = gt
            .iter()
            .map(|p| rot.0 * p * 1.7 + Vector3::new(5.0, -2.0, 0.5))
            .collect();
        // pred = s·R·gt + t, so aligning pred back onto gt is exact.
        assert!(pa_mpvpe(&pred, &gt).unwrap() < 1e-9);
        assert!(pa_mpvpe(&gt, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn pa_mpvpe_never_exceeds_mpvpe() {
        let mut r = rng::seeded(4);
        for trial in 0..200 {
            let gt = cloud(100 + trial, 20);
            let pred: Vec<_> = gt
                .iter()
                .map(|p| {
                    p + Vector3::new(
                        rng::normal(&mut r) * 0.05,
                        rng::normal(&mut r) * 0.05,
                        rng::normal(&mut r) * 0.05,
                    )
                })
                .collect();
            let zero = Vector3::zeros();
            let plain = mpvpe(&pred, &gt, &zero, &zero).unwrap();
            let pa = pa_mpvpe(&pred, &gt).unwrap();
            assert!(pa <= plain + 1e-9, "trial {trial}: {pa} > {plain}");
        }
    }
}
