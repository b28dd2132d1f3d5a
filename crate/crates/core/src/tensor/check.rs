//! Central finite-difference gradient checking.
//!
//! Only the forward value of the loss is used here, so this is independent of
//! the reverse sweep it is meant to verify.

use super::Tensor;
use crate::error::Result;

/// Floor on the denominator of [`relative_error`]: gradients smaller than this
/// are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central differences of `loss` with respect to every entry of `x`.
pub fn numerical_grad<F>(x: &Tensor, h: f64, mut loss: F) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = loss(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = loss(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Largest relative error between two gradient buffers.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}
