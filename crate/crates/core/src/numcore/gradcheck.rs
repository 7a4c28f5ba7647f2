//! Central-difference gradient checking.

use crate::error::{HclError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate that produced `max_rel_error`.
    pub worst_index: usize,
    pub coordinates: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares an analytic gradient against central differences at `theta`.
///
/// `loss_fn` returns the loss and its analytic gradient. Only the loss is
/// used at the perturbed points.
pub fn grad_check<F>(loss_fn: F, theta: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0) {
        return Err(HclError::Validation(format!("eps must be > 0, got {eps}")));
    }
    let (loss, analytic) = loss_fn(theta)?;
    if !loss.is_finite() {
        return Err(HclError::Numeric("loss at the unperturbed point".into()));
    }
    if analytic.len() != theta.len() {
        return Err(HclError::Dimension(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let mut point = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        coordinates: theta.len(),
    };
    for i in 0..theta.len() {
        point[i] = theta[i] + eps;
        let (plus, _) = loss_fn(&point)?;
        point[i] = theta[i] - eps;
        let (minus, _) = loss_fn(&point)?;
        point[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(HclError::Numeric(format!(
                "loss at perturbed coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}
