//! Shared oracles for unit tests: central finite differences against any
//! scalar loss of the parameters. Kept independent of the backward pass it
//! is used to check.

use crate::numerics::MlpParams;

pub fn flat_grads(grads: &MlpParams) -> Vec<f64> {
    (0..grads.flat_len()).map(|i| grads.flat_get(i)).collect()
}

/// Central difference gradient of `loss` at `params`, one parameter at a time.
pub fn central_diff_grads(
    params: &MlpParams,
    loss: impl Fn(&MlpParams) -> f64,
    h: f64,
) -> Vec<f64> {
    let n = params.flat_len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let base = params.flat_get(i);
        let mut plus = params.clone();
        plus.flat_set(i, base + h);
        let mut minus = params.clone();
        minus.flat_set(i, base - h);
        out.push((loss(&plus) - loss(&minus)) / (2.0 * h));
    }
    out
}

/// Max over entries of |a - n| / max(|a|, |n|, 1e-6).
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
