use super::Tensor;
use crate::error::{GaudaError, Result};

/// Compares an analytic gradient against central differences.
///
/// `f` returns the scalar value and its analytic gradient at the given point.
/// The result is `max_i |a_i - n_i| / (|a_i| + |n_i| + 1e-12)`.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(GaudaError::invalid(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    let (value, analytic) = f(x)?;
    if !value.is_finite() {
        return Err(GaudaError::NonFinite("grad_check objective".into()));
    }
    if analytic.shape() != x.shape() {
        return Err(GaudaError::ShapeMismatch {
            op: "grad_check",
            lhs: x.shape().to_vec(),
            rhs: analytic.shape().to_vec(),
        });
    }
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.update(|d| d[i] = orig + h)?;
        let (plus, _) = f(&probe)?;
        probe.update(|d| d[i] = orig - h)?;
        let (minus, _) = f(&probe)?;
        probe.update(|d| d[i] = orig)?;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GaudaError::NonFinite("grad_check objective".into()));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
