//! Central finite differences for checking analytic gradients.

/// Step used by [`numeric_grad`].
pub const FD_STEP: f64 = 1e-5;

/// `∂f/∂x_i ≈ (f(x + h e_i) - f(x - h e_i)) / 2h` for every `i`.
pub fn numeric_grad<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest element-wise `|a - b| / max(|a|, |b|, 1e-6)`.
///
/// The floor keeps entries whose true gradient is zero from dividing finite
/// difference round-off by zero.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
