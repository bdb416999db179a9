//! Principal branch of the Lambert W function.
//!
//! The offloading time allocation has a closed form in `W₀`, evaluated here
//! with Halley's iteration. Arguments down to `-1/e - 1e-15` are accepted and
//! clamped to the branch point, which absorbs rounding in callers that build
//! the argument as `-y/(σ² e) - 1/e`.

use std::f64::consts::E;

use crate::error::{Error, Result};

const BRANCH_POINT: f64 = -1.0 / E;
const BRANCH_SLACK: f64 = 1e-15;
const MAX_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambertResult {
    pub value: f64,
    pub iterations: usize,
    /// `|w·e^w − x|` at the returned value.
    pub residual: f64,
}

/// Evaluates `W₀(x)` for `x ≥ -1/e`.
pub fn lambert_w0(x: f64) -> Result<LambertResult> {
    if x.is_nan() || x < BRANCH_POINT - BRANCH_SLACK {
        return Err(Error::LambertDomain(x));
    }
    if x <= BRANCH_POINT {
        return Ok(LambertResult { value: -1.0, iterations: 0, residual: (-1.0f64 * (-1.0f64).exp() - x).abs() });
    }
    if x == 0.0 {
        return Ok(LambertResult { value: 0.0, iterations: 0, residual: 0.0 });
    }
    if x.is_infinite() {
        return Ok(LambertResult { value: f64::INFINITY, iterations: 0, residual: 0.0 });
    }

    let mut w = initial_guess(x);
    let tol = 1e-12 * x.abs().max(1.0);
    let mut iterations = 0;
    for _ in 0..MAX_ITERS {
        iterations += 1;
        let ew = w.exp();
        let f = w * ew - x;
        if f.abs() <= 0.25 * tol && iterations > 1 {
            break;
        }
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        let next = w - step;
        // Halley can overshoot below the branch on the first step from a poor guess.
        w = if next < -1.0 { 0.5 * (w - 1.0) } else { next };
        if step.abs() <= 1e-16 * (1.0 + w.abs()) {
            break;
        }
    }
    let residual = (w * w.exp() - x).abs();
    Ok(LambertResult { value: w, iterations, residual })
}

fn initial_guess(x: f64) -> f64 {
    if x < 0.0 {
        // Series about the branch point in p = sqrt(2(e·x + 1)); accurate for the
        // whole negative range to a few percent.
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        (1.0 + x).ln()
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect_omega() -> f64 {
        // w·e^w = 1 on [0, 1]
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() > 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_maps_to_zero() {
        assert_eq!(lambert_w0(0.0).unwrap().value, 0.0);
    }

    #[test]
    fn branch_point_maps_to_minus_one() {
        let r = lambert_w0(-1.0 / E).unwrap();
        assert_eq!(r.value, -1.0);
        let r = lambert_w0(-1.0 / E - 5e-16).unwrap();
        assert_eq!(r.value, -1.0);
    }

    #[test]
    fn omega_constant() {
        let omega = bisect_omega();
        let r = lambert_w0(1.0).unwrap();
        assert!((r.value - omega).abs() < 1e-14, "{} vs {}", r.value, omega);
        assert!((r.value - 0.567_143_290_4).abs() < 1e-10);
    }

    #[test]
    fn rejects_below_branch() {
        assert!(matches!(lambert_w0(-0.5), Err(Error::LambertDomain(_))));
        assert!(lambert_w0(f64::NAN).is_err());
    }

    #[test]
    fn near_branch_point_residual() {
        for k in 1..15 {
            let x = -1.0 / E + 10f64.powi(-k);
            let r = lambert_w0(x).unwrap();
            assert!(r.residual <= 1e-12, "x={x} residual={}", r.residual);
            assert!(r.value >= -1.0);
        }
    }
}
