//! Central finite-difference gradient checking.

use rand::seq::SliceRandom;
use rand::Rng;

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates actually compared.
    pub probes: usize,
    /// Coordinates skipped because a perturbation switched a ReLU sign or a
    /// pooling winner.
    pub resampled: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `eval` around `point`.
///
/// `eval` returns the scalar objective and a signature of the
/// piecewise-linear branch it went through. A probe whose `±h` evaluations
/// land on a different branch than the unperturbed point sits on a kink; it
/// is dropped and another coordinate drawn in its place. Up to `n_probes`
/// coordinates are compared (all of them when the point is smaller).
pub fn gradient_check<F, R>(
    mut eval: F,
    point: &[f64],
    analytic: &[f64],
    h: f64,
    n_probes: usize,
    rng: &mut R,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, u64),
    R: Rng + ?Sized,
{
    assert_eq!(point.len(), analytic.len(), "gradient length mismatch");
    let (_, base_sig) = eval(point);
    let mut order: Vec<usize> = (0..point.len()).collect();
    order.shuffle(rng);
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: 0,
        resampled: 0,
    };
    for i in order {
        if report.probes >= n_probes {
            break;
        }
        x[i] = point[i] + h;
        let (fp, sp) = eval(&x);
        x[i] = point[i] - h;
        let (fm, sm) = eval(&x);
        x[i] = point[i];
        if sp != base_sig || sm != base_sig {
            report.resampled += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        report.max_rel_error = report.max_rel_error.max(relative_error(analytic[i], numeric));
        report.probes += 1;
    }
    report
}
