//! Digamma and trigamma functions.
//!
//! Computed by the upward recurrence into the asymptotic regime followed by
//! the Bernoulli-number series, giving relative error below 1e-12 on the
//! positive half-line. These are the only special functions the Fisher
//! matrices and score vectors need beyond `ln Gamma`, which is taken from
//! `statrs`.

use crate::error::{Result, VbilError};

/// Threshold above which the asymptotic series converges to full precision.
const ASYMPTOTIC_CUTOFF: f64 = 10.0;

/// First derivative of `ln Gamma`.
pub fn digamma(x: f64) -> f64 {
    assert!(x > 0.0 && x.is_finite(), "digamma requires x > 0, got {x}");
    let mut acc = 0.0;
    let mut x = x;
    while x < ASYMPTOTIC_CUTOFF {
        acc -= 1.0 / x;
        x += 1.0;
    }
    // psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^{2n})
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    acc + x.ln() - 0.5 * inv - series
}

/// Second derivative of `ln Gamma`.
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0 && x.is_finite(), "trigamma requires x > 0, got {x}");
    let mut acc = 0.0;
    let mut x = x;
    while x < ASYMPTOTIC_CUTOFF {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    // psi_1(x) ~ 1/x + 1/(2x^2) + sum B_2n / x^{2n+1}
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * inv2
        * (1.0 / 6.0
            - inv2
                * (1.0 / 30.0
                    - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0)))));
    acc + inv + 0.5 * inv2 + series
}

/// `ln B(a, b)`; thin wrapper kept here so call sites read uniformly.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    statrs::function::beta::ln_beta(a, b)
}

/// `ln Gamma(x)`.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Validates that a parameter is strictly positive and finite.
pub fn require_positive(value: f64, name: &str) -> Result<()> {
    if !value.is_finite() {
        return Err(VbilError::InvalidState(format!("{name} = {value} is not finite")));
    }
    if value <= 0.0 {
        return Err(VbilError::Domain(format!("{name} must be positive, got {value}")));
    }
    Ok(())
}
