//! Central-difference gradient checking.
//!
//! Used throughout the test suites to verify the hand-written backward
//! passes, and exposed as a library function so the training code can probe
//! its own gradients.

use super::GeomError;

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over coordinates of `|analytic − numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub numeric: Vec<f64>,
}

/// Compares `analytic_grad` against central differences of `f` at `x` with
/// step 1e-5 in double precision.
pub fn check_gradient<F>(
    f: F,
    x: &[f64],
    analytic_grad: &[f64],
) -> Result<GradCheckReport, GeomError>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic_grad.len() != x.len() {
        return Err(GeomError::DimMismatch("gradient length"));
    }
    let mut point = x.to_vec();
    let mut numeric = vec![0.0; x.len()];
    let mut max_rel_error: f64 = 0.0;
    let mut worst_index = 0;
    for i in 0..x.len() {
        point[i] = x[i] + FD_STEP;
        let plus = f(&point);
        point[i] = x[i] - FD_STEP;
        let minus = f(&point);
        point[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GeomError::NonFiniteEvaluation);
        }
        let n = (plus - minus) / (2.0 * FD_STEP);
        numeric[i] = n;
        let rel = (analytic_grad[i] - n).abs() / n.abs().max(1.0);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        let x = vec![0.3, -1.2, 2.5, 0.0];
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let report = check_gradient(|p| p.iter().map(|v| v * v).sum(), &x, &grad).unwrap();
        assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
    }

    #[test]
    fn sine_sum_gradient_checks_out() {
        let x: Vec<f64> = vec![0.1, 0.7, -0.4, 1.9, -2.2];
        let grad: Vec<f64> = x.iter().map(|v| v.cos()).collect();
        let report =
            check_gradient(|p| p.iter().map(|v| v.sin()).sum(), &x, &grad).unwrap();
        assert!(report.max_rel_error < 1e-7, "{}", report.max_rel_error);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = vec![1.0, 2.0];
        let wrong = vec![2.0, 3.0]; // true grad of Σx² is (2, 4)
        let report = check_gradient(|p| p.iter().map(|v| v * v).sum(), &x, &wrong).unwrap();
        assert!(report.max_rel_error > 0.1);
        assert_eq!(report.worst_index, 1);
    }

    #[test]
    fn non_finite_evaluation_reported() {
        let x = vec![0.0];
        let grad = vec![0.0];
        let err = check_gradient(|p| (1.0 / p[0]).ln(), &x, &grad).unwrap_err();
        assert_eq!(err, GeomError::NonFiniteEvaluation);
    }

    #[test]
    fn kabsch_residual_gradient_via_differential() {
        // The registration residual as a function of the destination points,
        // differentiated through the solver. This is the oracle pairing named
        // by the gradient-checker contract.
        use crate::geom::{kabsch_differential, kabsch_rigid, registration_residual};
        use crate::rng;
        use nalgebra::Vector3;

        let mut r = rng::seeded(17);
        let src: Vec<Vector3<f64>> = (0..5)
            .map(|_| Vector3::new(rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r)))
            .collect();
        let dst: Vec<Vector3<f64>> = src
            .iter()
            .map(|p| {
                crate::geom::RotationMatrix::rot_z(0.6).0 * p
                    + Vector3::new(0.2, -0.4, 0.1)
                    + Vector3::new(rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r))
                        * 0.1
            })
            .collect();

        let flat: Vec<f64> = dst.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let residual_of = |flat_dst: &[f64]| {
            let d: Vec<Vector3<f64>> = flat_dst
                .chunks(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect();
            let t = kabsch_rigid(&src, &d).unwrap();
            registration_residual(&t, &src, &d)
        };

        // Analytic gradient: residual = Σ‖R p + t − q‖²; total derivative in
        // direction e_k combines the explicit −2·r_i term with the solver
        // sensitivity through (dR, dt).
        let t = kabsch_rigid(&src, &dst).unwrap();
        let mut analytic = vec![0.0; flat.len()];
        for k in 0..flat.len() {
            let mut dir = vec![Vector3::zeros(); dst.len()];
            dir[k / 3][k % 3] = 1.0;
            let (dr, dt) = kabsch_differential(&src, &dst, &dir, 1e-8).unwrap();
            let mut total = 0.0;
            for (i, (p, q)) in src.iter().zip(&dst).enumerate() {
                let resid = t.apply_point(p) - q;
                let dresid = dr * p + dt - dir[i];
                total += 2.0 * resid.dot(&dresid);
            }
            analytic[k] = total;
        }
        let report = check_gradient(residual_of, &flat, &analytic).unwrap();
        assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }
}
