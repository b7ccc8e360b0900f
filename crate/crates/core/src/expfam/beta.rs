//! Beta variational factor with natural parameter `lambda = (alpha, beta)`.
//!
//! The sufficient statistic is `T(theta) = (ln theta, ln(1-theta))` and the
//! log normalizer is `ln B(alpha, beta)`, so the Fisher information is the
//! Hessian of `ln B`:
//!
//! ```text
//! I_F = [ psi1(a) - psi1(a+b)   -psi1(a+b)          ]
//!       [ -psi1(a+b)            psi1(b) - psi1(a+b) ]
//! ```

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};

use crate::error::{Result, VbilError};
use crate::special::{digamma, ln_beta, require_positive, trigamma};

/// Stability floor applied when a stochastic update pushes a shape parameter
/// toward zero. Shapes below this leave the Fisher matrix too ill-conditioned
/// for the natural transform to recover.
pub(crate) const SHAPE_FLOOR: f64 = 0.05;
/// Floor for factors that must keep a mode (both shapes above one).
pub(crate) const CONSTRAINED_FLOOR: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BetaFactor {
    alpha: f64,
    beta: f64,
    /// When set, validity projection keeps both shapes above one so the
    /// density has a mode (used for persistence-type parameters).
    above_one: bool,
}

impl BetaFactor {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        require_positive(alpha, "beta factor alpha")?;
        require_positive(beta, "beta factor beta")?;
        Ok(Self { alpha, beta, above_one: false })
    }

    /// A factor constrained to `alpha > 1` and `beta > 1`.
    pub fn new_above_one(alpha: f64, beta: f64) -> Result<Self> {
        if alpha <= 1.0 || beta <= 1.0 {
            return Err(VbilError::Domain(format!(
                "constrained beta factor needs shapes above one, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta, above_one: true })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn constrained_above_one(&self) -> bool {
        self.above_one
    }

    pub fn lambda(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.alpha, self.beta])
    }

    pub fn with_lambda(&self, lambda: &[f64]) -> Result<Self> {
        if lambda.len() != 2 {
            return Err(VbilError::Contract(format!(
                "beta factor expects 2 natural parameters, got {}",
                lambda.len()
            )));
        }
        if !lambda.iter().all(|v| v.is_finite()) {
            return Err(VbilError::InvalidState(format!(
                "non-finite beta natural parameters {lambda:?}"
            )));
        }
        if self.above_one {
            Self::new_above_one(lambda[0], lambda[1])
        } else {
            Self::new(lambda[0], lambda[1])
        }
    }

    /// Same as [`with_lambda`](Self::with_lambda) but clamps shapes to the
    /// validity floor instead of failing.
    pub fn with_lambda_projected(&self, lambda: &[f64]) -> Result<Self> {
        if lambda.len() != 2 {
            return Err(VbilError::Contract(format!(
                "beta factor expects 2 natural parameters, got {}",
                lambda.len()
            )));
        }
        if !lambda.iter().all(|v| v.is_finite()) {
            return Err(VbilError::InvalidState(format!(
                "non-finite beta natural parameters {lambda:?}"
            )));
        }
        let floor = if self.above_one { CONSTRAINED_FLOOR } else { SHAPE_FLOOR };
        Ok(Self {
            alpha: lambda[0].max(floor),
            beta: lambda[1].max(floor),
            above_one: self.above_one,
        })
    }

    fn check_support(&self, x: f64) -> Result<()> {
        if !(x > 0.0 && x < 1.0) {
            return Err(VbilError::Domain(format!(
                "beta factor evaluated outside (0,1): {x}"
            )));
        }
        Ok(())
    }

    pub fn log_density(&self, x: f64) -> Result<f64> {
        self.check_support(x)?;
        Ok((self.alpha - 1.0) * x.ln() + (self.beta - 1.0) * (1.0 - x).ln()
            - ln_beta(self.alpha, self.beta))
    }

    /// `d log q / d lambda = T(x) - E[T]`.
    pub fn score(&self, x: f64) -> Result<DVector<f64>> {
        self.check_support(x)?;
        let psi_sum = digamma(self.alpha + self.beta);
        Ok(DVector::from_column_slice(&[
            x.ln() - (digamma(self.alpha) - psi_sum),
            (1.0 - x).ln() - (digamma(self.beta) - psi_sum),
        ]))
    }

    /// Covariance of the sufficient statistics.
    pub fn fisher_info(&self) -> DMatrix<f64> {
        let t_sum = trigamma(self.alpha + self.beta);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                trigamma(self.alpha) - t_sum,
                -t_sum,
                -t_sum,
                trigamma(self.beta) - t_sum,
            ],
        )
    }

    /// Inverse-CDF sample; one uniform, monotone in it. The quantile is
    /// clamped into the open interval: extreme shapes can round the CDF
    /// inverse onto an endpoint.
    pub fn sample(&self, u: f64) -> f64 {
        BetaDist::new(self.alpha, self.beta)
            .expect("shapes validated at construction")
            .inverse_cdf(u)
            .clamp(1e-15, 1.0 - 1e-15)
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    /// Widens the distribution by `c` in standard-deviation terms while
    /// keeping the mean (used to tail-flatten importance proposals).
    pub fn flatten_spread(&self, c: f64) -> Self {
        let m = self.mean();
        let conc = ((self.alpha + self.beta + 1.0) / (c * c) - 1.0).max(SHAPE_FLOOR);
        Self {
            alpha: (m * conc).max(SHAPE_FLOOR),
            beta: ((1.0 - m) * conc).max(SHAPE_FLOOR),
            above_one: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_log_density_is_zero() {
        let f = BetaFactor::new(1.0, 1.0).unwrap();
        assert!(f.log_density(0.5).unwrap().abs() < 1e-12);
        assert!(f.log_density(0.99).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_support() {
        let f = BetaFactor::new(2.0, 3.0).unwrap();
        assert!(matches!(f.log_density(0.0), Err(VbilError::Domain(_))));
        assert!(matches!(f.log_density(1.0), Err(VbilError::Domain(_))));
        assert!(matches!(f.score(-0.1), Err(VbilError::Domain(_))));
    }

    #[test]
    fn rejects_nonfinite_lambda() {
        let f = BetaFactor::new(2.0, 3.0).unwrap();
        assert!(matches!(
            f.with_lambda(&[f64::NAN, 1.0]),
            Err(VbilError::InvalidState(_))
        ));
    }

    #[test]
    fn fisher_at_one_one() {
        // psi1(1) = pi^2/6, psi1(2) = pi^2/6 - 1, so the diagonal is exactly 1
        // and the off-diagonal is -psi1(2).
        let f = BetaFactor::new(1.0, 1.0).unwrap();
        let i_f = f.fisher_info();
        assert_relative_eq!(i_f[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(i_f[(1, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(i_f[(0, 1)], -0.644_934_066_848_226_4, epsilon = 1e-12);
        assert_relative_eq!(i_f[(1, 0)], i_f[(0, 1)], epsilon = 0.0);
    }

    #[test]
    fn score_is_gradient_of_log_density() {
        let f = BetaFactor::new(3.2, 1.7).unwrap();
        let x = 0.42;
        let h = 1e-6;
        let s = f.score(x).unwrap();
        for i in 0..2 {
            let mut lp = [3.2, 1.7];
            let mut lm = [3.2, 1.7];
            lp[i] += h;
            lm[i] -= h;
            let fd = (f.with_lambda(&lp).unwrap().log_density(x).unwrap()
                - f.with_lambda(&lm).unwrap().log_density(x).unwrap())
                / (2.0 * h);
            assert_relative_eq!(s[i], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn projection_applies_floors() {
        let f = BetaFactor::new(2.0, 2.0).unwrap();
        let p = f.with_lambda_projected(&[-5.0, 4.0]).unwrap();
        assert_eq!(p.alpha(), SHAPE_FLOOR);
        assert_eq!(p.beta(), 4.0);

        let c = BetaFactor::new_above_one(95.0, 5.0).unwrap();
        let pc = c.with_lambda_projected(&[0.5, 3.0]).unwrap();
        assert_eq!(pc.alpha(), CONSTRAINED_FLOOR);
        assert!(pc.constrained_above_one());
    }

    #[test]
    fn flatten_widens_but_keeps_mean() {
        let f = BetaFactor::new(30.0, 10.0).unwrap();
        let g = f.flatten_spread(1.5);
        assert_relative_eq!(g.mean(), f.mean(), epsilon = 1e-12);
        assert!(g.variance() > 2.0 * f.variance());
    }
}
