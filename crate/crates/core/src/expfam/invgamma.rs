//! Inverse-Gamma variational factor with natural parameters `(a, b)`:
//! density `b^a / Gamma(a) * x^{-1-a} exp(-b/x)` on `(0, inf)`.
//!
//! Sufficient statistic `T(x) = (-ln x, -1/x)`, log normalizer
//! `ln Gamma(a) - a ln b`, hence
//!
//! ```text
//! I_F = [ psi1(a)  -1/b   ]
//!       [ -1/b      a/b^2 ]
//! ```

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use crate::error::{Result, VbilError};
use crate::special::{digamma, ln_gamma, require_positive, trigamma};

/// Validity floor for both natural parameters.
const SHAPE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct InverseGammaFactor {
    a: f64,
    b: f64,
}

impl InverseGammaFactor {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        require_positive(a, "inverse-gamma a")?;
        require_positive(b, "inverse-gamma b")?;
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn lambda(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.a, self.b])
    }

    pub fn with_lambda(&self, lambda: &[f64]) -> Result<Self> {
        if lambda.len() != 2 {
            return Err(VbilError::Contract(format!(
                "inverse-gamma factor expects 2 natural parameters, got {}",
                lambda.len()
            )));
        }
        if !lambda.iter().all(|v| v.is_finite()) {
            return Err(VbilError::InvalidState(format!(
                "non-finite inverse-gamma natural parameters {lambda:?}"
            )));
        }
        Self::new(lambda[0], lambda[1])
    }

    pub fn with_lambda_projected(&self, lambda: &[f64]) -> Result<Self> {
        if lambda.len() != 2 {
            return Err(VbilError::Contract(format!(
                "inverse-gamma factor expects 2 natural parameters, got {}",
                lambda.len()
            )));
        }
        if !lambda.iter().all(|v| v.is_finite()) {
            return Err(VbilError::InvalidState(format!(
                "non-finite inverse-gamma natural parameters {lambda:?}"
            )));
        }
        Ok(Self {
            a: lambda[0].max(SHAPE_FLOOR),
            b: lambda[1].max(SHAPE_FLOOR),
        })
    }

    fn check_support(&self, x: f64) -> Result<()> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(VbilError::Domain(format!(
                "inverse-gamma factor evaluated outside (0,inf): {x}"
            )));
        }
        Ok(())
    }

    pub fn log_density(&self, x: f64) -> Result<f64> {
        self.check_support(x)?;
        Ok(self.a * self.b.ln() - ln_gamma(self.a) - (1.0 + self.a) * x.ln() - self.b / x)
    }

    pub fn score(&self, x: f64) -> Result<DVector<f64>> {
        self.check_support(x)?;
        Ok(DVector::from_column_slice(&[
            -x.ln() + self.b.ln() - digamma(self.a),
            -1.0 / x + self.a / self.b,
        ]))
    }

    pub fn fisher_info(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                trigamma(self.a),
                -1.0 / self.b,
                -1.0 / self.b,
                self.a / (self.b * self.b),
            ],
        )
    }

    /// Inverse-CDF sample: if `G ~ Gamma(a, rate = b)` then `1/G` is
    /// inverse-Gamma, and mapping `u -> 1 / F_G^{-1}(1-u)` is increasing in
    /// `u`, which keeps quasi-Monte Carlo inputs monotone.
    pub fn sample(&self, u: f64) -> f64 {
        let g = GammaDist::new(self.a, self.b).expect("shapes validated at construction");
        1.0 / g.inverse_cdf(1.0 - u).max(f64::MIN_POSITIVE.sqrt())
    }

    /// Mean `b/(a-1)` when it exists.
    pub fn mean(&self) -> f64 {
        if self.a > 1.0 {
            self.b / (self.a - 1.0)
        } else {
            f64::NAN
        }
    }

    pub fn variance(&self) -> f64 {
        if self.a > 2.0 {
            let m = self.mean();
            m * m / (self.a - 2.0)
        } else {
            f64::NAN
        }
    }

    /// Heavier-tailed version with the same mean: shrinks the shape toward 2
    /// so the standard deviation grows by roughly `c`.
    pub fn flatten_spread(&self, c: f64) -> Self {
        if self.a <= 1.0 {
            return self.clone();
        }
        let a_new = (2.0 + (self.a - 2.0) / (c * c)).max(1.01);
        let b_new = self.b / (self.a - 1.0) * (a_new - 1.0);
        Self { a: a_new, b: b_new }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn score_example_from_appendix_formula() {
        // IG(2, 3) at x = 1.5: [ -ln 1.5 + ln 3 - psi(2), -1/1.5 + 2/3 ]
        //                    = [ ln 2 - psi(2), 0 ]
        let f = InverseGammaFactor::new(2.0, 3.0).unwrap();
        let s = f.score(1.5).unwrap();
        assert_relative_eq!(s[0], 2f64.ln() - digamma(2.0), epsilon = 1e-14);
        assert_relative_eq!(s[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn score_is_gradient_of_log_density() {
        let f = InverseGammaFactor::new(2.5, 0.025).unwrap();
        let x = 0.013;
        let h = 1e-7;
        let s = f.score(x).unwrap();
        for i in 0..2 {
            let mut lp = [2.5, 0.025];
            let mut lm = lp;
            lp[i] += h;
            lm[i] -= h;
            let fd = (f.with_lambda(&lp).unwrap().log_density(x).unwrap()
                - f.with_lambda(&lm).unwrap().log_density(x).unwrap())
                / (2.0 * h);
            assert_relative_eq!(s[i], fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn moments() {
        let f = InverseGammaFactor::new(2.5, 0.025).unwrap();
        assert_relative_eq!(f.mean(), 0.025 / 1.5, epsilon = 1e-15);
        let g = InverseGammaFactor::new(11.0, 1.0).unwrap();
        assert_relative_eq!(g.mean(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn flatten_keeps_mean_and_widens() {
        let f = InverseGammaFactor::new(11.0, 1.0).unwrap();
        let g = f.flatten_spread(1.5);
        assert_relative_eq!(g.mean(), f.mean(), epsilon = 1e-12);
        assert!(g.variance() > f.variance());
    }

    #[test]
    fn rejects_out_of_support() {
        let f = InverseGammaFactor::new(2.0, 2.0).unwrap();
        assert!(matches!(f.log_density(0.0), Err(VbilError::Domain(_))));
        assert!(matches!(f.log_density(-1.0), Err(VbilError::Domain(_))));
    }
}
