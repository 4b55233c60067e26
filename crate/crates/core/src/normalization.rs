//! Normalizer machinery that keeps training away from the trivial zero
//! solution.
//!
//! The eigenfunction is only determined up to scale, and an unnormalized
//! fixed-point loss is minimized by the zero function. Training therefore
//! tracks a scalar normalizer `Z`: each step estimates the batch root mean
//! square of the eigenfunction head (signed by the batch mean, so a
//! predominantly negative ansatz gets a negative normalizer and `psi/Z`
//! stays predominantly positive), then folds it into a running average. A
//! hinge penalty on `Z` falling below a floor `z0` pushes the network's raw
//! scale up instead of letting it collapse.

/// Signed batch normalizer: `sgn(sum psi) * sqrt(mean psi^2)`.
///
/// Returns exactly 0.0 for an all-zero batch (the sign convention gives
/// `sgn(0) = 0`); callers treat that as a degenerate batch.
pub fn batch_normalizer(psi: &[f64]) -> f64 {
    assert!(!psi.is_empty(), "batch_normalizer: empty batch");
    let total = crate::linalg::sum(psi);
    let sumsq = {
        // Fixed order, same kernel as everything else.
        let sq: Vec<f64> = psi.iter().map(|&x| x * x).collect();
        crate::linalg::sum(&sq)
    };
    let rms = (sumsq / psi.len() as f64).sqrt();
    if total > 0.0 {
        rms
    } else if total < 0.0 {
        -rms
    } else {
        0.0
    }
}

/// Running-average update `z <- gamma * z + (1 - gamma) * zhat`.
pub fn ema(z_prev: f64, gamma: f64, zhat: f64) -> f64 {
    assert!((0.0..=1.0).contains(&gamma), "gamma must be in [0, 1]");
    gamma * z_prev + (1.0 - gamma) * zhat
}

/// Hinge penalty `(z0 - z)^+`: positive only when the normalizer has shrunk
/// below the floor.
pub fn hinge(z0: f64, z: f64) -> f64 {
    (z0 - z).max(0.0)
}
