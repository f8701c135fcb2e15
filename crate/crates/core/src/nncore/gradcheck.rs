use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than relative
/// terms; central differences at `epsilon = 1e-5` carry roundoff around 1e-11.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Compares an analytic gradient against central finite differences of
/// `loss` around `params` and returns the largest relative error
/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.is_empty() {
        return Err(Error::Degenerate("no parameters to check".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::Dimension(format!("{} analytic gradients for {} parameters", analytic.len(), params.len())));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        work[i] = params[i] + epsilon;
        let plus = loss(&work)?;
        work[i] = params[i] - epsilon;
        let minus = loss(&work)?;
        work[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("loss not finite while perturbing parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
