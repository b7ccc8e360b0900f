//! Bernoulli likelihood with a conjugate Beta variational family.
//!
//! With a uniform prior and `k` successes in `n` trials the posterior is
//! `Beta(k+1, n-k+1)`, so the fitted family can be compared against the
//! exact answer. The model also exposes the analytic KL objective and its
//! gradient, derived from first principles:
//!
//! ```text
//! KL(a, b) = (a-1-k) (psi(a) - psi(a+b)) + (b-1-(n-k)) (psi(b) - psi(a+b))
//!            - ln B(a, b)     (up to the constant log p(y))
//! grad KL  = I_F(a, b) (lambda - lambda_post)
//! ```
//!
//! where `I_F` is the Beta Fisher information (the covariance of the
//! sufficient statistics) and `lambda_post = (k+1, n-k+1)`. The gradient
//! vanishes exactly at the conjugate posterior.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;

use crate::error::{Result, VbilError};
use crate::expfam::{ProductFamily, VariationalFactor};
use crate::likelihood::LogLikEstimate;
use crate::models::{CoordTransform, ReportSpec, VbilModel};
use crate::special::{digamma, ln_beta, trigamma};

#[derive(Debug, Clone)]
pub struct BernoulliBetaModel {
    n: u64,
    k: u64,
    init_lambda: [f64; 2],
}

impl BernoulliBetaModel {
    pub fn new(n: u64, k: u64) -> Result<Self> {
        if k > n {
            return Err(VbilError::Config(format!("k = {k} exceeds n = {n}")));
        }
        Ok(Self { n, k, init_lambda: [5.0, 5.0] })
    }

    pub fn with_init(mut self, alpha0: f64, beta0: f64) -> Self {
        self.init_lambda = [alpha0, beta0];
        self
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// Shape parameters of the exact posterior `Beta(k+1, n-k+1)`.
    pub fn posterior_shapes(&self) -> (f64, f64) {
        (self.k as f64 + 1.0, (self.n - self.k) as f64 + 1.0)
    }

    /// Exact log marginal likelihood `ln B(k+1, n-k+1)` (uniform prior).
    pub fn exact_log_marginal(&self) -> f64 {
        let (a, b) = self.posterior_shapes();
        ln_beta(a, b)
    }

    /// The KL objective as a function of the variational shapes, up to the
    /// additive constant `log p(y)`.
    pub fn analytic_kl(&self, alpha: f64, beta: f64) -> f64 {
        let k = self.k as f64;
        let nk = (self.n - self.k) as f64;
        let psi_sum = digamma(alpha + beta);
        (alpha - 1.0 - k) * (digamma(alpha) - psi_sum)
            + (beta - 1.0 - nk) * (digamma(beta) - psi_sum)
            - ln_beta(alpha, beta)
    }

    /// First-principles analytic KL gradient `I_F(lambda)(lambda -
    /// lambda_post)`.
    pub fn analytic_kl_gradient(&self, alpha: f64, beta: f64) -> DVector<f64> {
        let (a_post, b_post) = self.posterior_shapes();
        let t_sum = trigamma(alpha + beta);
        let i_f = DMatrix::from_row_slice(
            2,
            2,
            &[
                trigamma(alpha) - t_sum,
                -t_sum,
                -t_sum,
                trigamma(beta) - t_sum,
            ],
        );
        let diff = DVector::from_column_slice(&[alpha - a_post, beta - b_post]);
        i_f * diff
    }

    /// KL divergence from `Beta(a, b)` to the exact posterior, by Simpson
    /// quadrature on (0,1). This is the acceptance-criterion metric.
    pub fn kl_to_posterior_quadrature(&self, alpha: f64, beta: f64) -> f64 {
        let (ap, bp) = self.posterior_shapes();
        let lnb_q = ln_beta(alpha, beta);
        let lnb_p = ln_beta(ap, bp);
        let integrand = |x: f64| {
            let lq = (alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - lnb_q;
            let lp = (ap - 1.0) * x.ln() + (bp - 1.0) * (1.0 - x).ln() - lnb_p;
            lq.exp() * (lq - lp)
        };
        // Simpson's rule on a fine open grid; the integrand vanishes at the
        // endpoints whenever alpha, beta > 1 and is integrable otherwise.
        let n = 200_001usize;
        let h = 1.0 / (n as f64 + 1.0);
        let mut acc = 0.0;
        for i in 1..=n {
            let x = i as f64 * h;
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * integrand(x);
        }
        acc * h / 3.0
    }
}

impl VbilModel for BernoulliBetaModel {
    fn name(&self) -> &str {
        "bernoulli_beta"
    }

    fn dim_theta(&self) -> usize {
        1
    }

    fn initial_family(&self) -> Result<ProductFamily> {
        ProductFamily::new(vec![VariationalFactor::beta(
            self.init_lambda[0],
            self.init_lambda[1],
        )?])
    }

    fn log_prior_blocks(&self, theta: &DVector<f64>) -> Result<Vec<f64>> {
        let t = theta[0];
        if !(t > 0.0 && t < 1.0) {
            return Err(VbilError::Domain(format!("theta = {t} outside (0,1)")));
        }
        Ok(vec![0.0]) // uniform prior
    }

    fn estimate_log_lik(
        &self,
        theta: &DVector<f64>,
        _rng: &mut ChaCha12Rng,
    ) -> Result<LogLikEstimate> {
        Ok(LogLikEstimate::exact(self.exact_log_lik(theta).unwrap()))
    }

    fn scale_n(&self) -> f64 {
        (self.n.max(1)) as f64
    }

    fn exact_log_lik(&self, theta: &DVector<f64>) -> Option<f64> {
        let t = theta[0];
        Some(self.k as f64 * t.ln() + (self.n - self.k) as f64 * (1.0 - t).ln())
    }

    fn report(&self) -> ReportSpec {
        ReportSpec::identity(&["theta"])
    }

    fn pmmh_transforms(&self) -> Vec<CoordTransform> {
        vec![CoordTransform::Logit]
    }
}
