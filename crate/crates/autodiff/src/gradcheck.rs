//! Finite-difference gradient oracles.
//!
//! These helpers evaluate a scalar function twice per coordinate and never
//! look at the tape's backward rules, so they stay an independent check of
//! whatever the reverse sweep produces.

use crate::Real;

/// Default probe step. At 64-bit precision this balances truncation
/// against round-off for functions with O(1) curvature.
pub const DEFAULT_STEP: Real = 1e-4;

/// Central finite differences of `f` around `x`: g[i] ~ df/dx[i].
pub fn central_difference<F>(mut f: F, x: &[Real], step: Real) -> Vec<Real>
where
    F: FnMut(&[Real]) -> Real,
{
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// `|a - b|` normalized by the larger magnitude, with `floor` acting as an
/// absolute tolerance for near-zero pairs.
pub fn relative_error(a: Real, b: Real, floor: Real) -> Real {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error across two gradient vectors.
///
/// Panics if the lengths differ; that is a harness bug, not a numeric
/// disagreement.
pub fn max_relative_error(analytic: &[Real], numeric: &[Real], floor: Real) -> Real {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient vectors must have equal length"
    );
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, Real::max)
}
