//! Logistic random-intercept panel model.
//!
//! `logit p_ij = x_ij' beta + alpha_i`, `alpha_i ~ N(0, tau^2)`, with a
//! normal prior on `beta` and a Gamma prior on `tau^2`. The likelihood is a
//! product over panels of one-dimensional integrals over the random
//! intercept, estimated by importance sampling with the intercept prior as
//! the proposal. The variational family is `N(mu, Sigma)` on `beta` times an
//! inverse-Gamma on `tau^2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VbilError};
use crate::expfam::{ProductFamily, VariationalFactor};
use crate::likelihood::{
    adapt_particles, panel_is_estimate, GlmmData, GlmmPanel, LogLikEstimate, PanelModel,
};
use crate::models::{CoordTransform, ReportSpec, VbilModel};
use crate::special::ln_gamma;

/// How many importance draws each panel gets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlmmParticlePolicy {
    Fixed(usize),
    /// Pilot run of `pilot_n` draws per panel, then per-panel counts
    /// targeting a total log-estimate variance of `sigma2`.
    TargetSigma2 { sigma2: f64, pilot_n: usize },
}

#[derive(Debug, Clone)]
pub struct GlmmModel {
    data: GlmmData,
    policy: GlmmParticlePolicy,
    /// Prior `beta ~ N(0, prior_beta_var * I)`.
    prior_beta_var: f64,
    /// Prior `tau^2 ~ Gamma(shape, rate)` (shape-rate parameterization).
    prior_tau2_shape: f64,
    prior_tau2_rate: f64,
    init_beta_mean: DVector<f64>,
    init_beta_var: f64,
    init_tau2: [f64; 2],
}

impl GlmmModel {
    pub fn new(data: GlmmData, policy: GlmmParticlePolicy) -> Self {
        let p = data.n_covariates();
        Self {
            data,
            policy,
            prior_beta_var: 50.0,
            prior_tau2_shape: 1.0,
            prior_tau2_rate: 0.1,
            init_beta_mean: DVector::zeros(p),
            init_beta_var: 0.5,
            init_tau2: [3.0, 2.0],
        }
    }

    pub fn with_init(mut self, beta_mean: DVector<f64>, beta_var: f64, tau2: [f64; 2]) -> Self {
        self.init_beta_mean = beta_mean;
        self.init_beta_var = beta_var;
        self.init_tau2 = tau2;
        self
    }

    pub fn data(&self) -> &GlmmData {
        &self.data
    }

    pub fn n_covariates(&self) -> usize {
        self.data.n_covariates()
    }

    /// Linear predictor of one observation.
    fn predictor(&self, panel: usize, row: usize, beta: &[f64], alpha: f64) -> f64 {
        let x = &self.data.panels[panel].x;
        let mut s = alpha;
        for j in 0..x.ncols() {
            s += x[(row, j)] * beta[j];
        }
        s
    }
}

/// `ln(1 + e^s)` without overflow.
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

impl PanelModel for GlmmModel {
    fn n_panels(&self) -> usize {
        self.data.n_panels()
    }

    fn log_cond_density(&self, panel: usize, alpha: f64, theta: &DVector<f64>) -> f64 {
        let p = self.n_covariates();
        let beta = &theta.as_slice()[..p];
        let panel_data = &self.data.panels[panel];
        let mut ll = 0.0;
        for (row, &y) in panel_data.y.iter().enumerate() {
            let s = self.predictor(panel, row, beta, alpha);
            ll += y * s - softplus(s);
        }
        ll
    }

    fn random_effect_variance(&self, theta: &DVector<f64>) -> f64 {
        theta[self.n_covariates()]
    }
}

impl VbilModel for GlmmModel {
    fn name(&self) -> &str {
        "glmm_logistic"
    }

    fn dim_theta(&self) -> usize {
        self.n_covariates() + 1
    }

    fn initial_family(&self) -> Result<ProductFamily> {
        let p = self.n_covariates();
        ProductFamily::new(vec![
            VariationalFactor::mvn(
                self.init_beta_mean.clone(),
                DMatrix::identity(p, p) * self.init_beta_var,
            )?,
            VariationalFactor::inverse_gamma(self.init_tau2[0], self.init_tau2[1])?,
        ])
    }

    fn log_prior_blocks(&self, theta: &DVector<f64>) -> Result<Vec<f64>> {
        let p = self.n_covariates();
        let tau2 = theta[p];
        if !(tau2 > 0.0) {
            return Err(VbilError::Domain(format!("tau^2 = {tau2} must be positive")));
        }
        let mut quad = 0.0;
        for i in 0..p {
            quad += theta[i] * theta[i];
        }
        let lp_beta = -0.5 * (p as f64) * (2.0 * std::f64::consts::PI * self.prior_beta_var).ln()
            - 0.5 * quad / self.prior_beta_var;
        let (sh, rate) = (self.prior_tau2_shape, self.prior_tau2_rate);
        let lp_tau2 =
            sh * rate.ln() - ln_gamma(sh) + (sh - 1.0) * tau2.ln() - rate * tau2;
        Ok(vec![lp_beta, lp_tau2])
    }

    fn estimate_log_lik(
        &self,
        theta: &DVector<f64>,
        rng: &mut ChaCha12Rng,
    ) -> Result<LogLikEstimate> {
        let counts = match self.policy {
            GlmmParticlePolicy::Fixed(n) => vec![n.max(2); self.n_panels()],
            GlmmParticlePolicy::TargetSigma2 { sigma2, pilot_n } => {
                adapt_particles(self, theta, sigma2, pilot_n, rng)?
            }
        };
        panel_is_estimate(self, theta, &counts, rng)
    }

    fn scale_n(&self) -> f64 {
        self.data.n_obs() as f64
    }

    fn report(&self) -> ReportSpec {
        let p = self.n_covariates();
        let mut names: Vec<String> = (1..=p).map(|i| format!("beta{i}")).collect();
        names.push("tau2".to_string());
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        ReportSpec::identity(&refs)
    }

    fn pmmh_transforms(&self) -> Vec<CoordTransform> {
        let mut t = vec![CoordTransform::Identity; self.n_covariates()];
        t.push(CoordTransform::Log);
        t
    }
}

/// Simulates the large-data shape: `logit p_ij = beta_1 + beta_2 x_ij +
/// alpha_i` with `x_ij ~ U(0,1)`.
pub fn glmm_simulate_large<R: Rng>(
    beta: &[f64; 2],
    tau2: f64,
    n_panels: usize,
    n_per_panel: usize,
    rng: &mut R,
) -> Result<GlmmData> {
    if tau2 < 0.0 {
        return Err(VbilError::Domain(format!("tau^2 = {tau2} must be nonnegative")));
    }
    let tau = tau2.sqrt();
    let mut panels = Vec::with_capacity(n_panels);
    for _ in 0..n_panels {
        let alpha: f64 = tau * rng.sample::<f64, _>(StandardNormal);
        let mut x = DMatrix::zeros(n_per_panel, 2);
        let mut y = Vec::with_capacity(n_per_panel);
        for row in 0..n_per_panel {
            let xv: f64 = rng.random();
            x[(row, 0)] = 1.0;
            x[(row, 1)] = xv;
            let s = beta[0] + beta[1] * xv + alpha;
            let p = 1.0 / (1.0 + (-s).exp());
            y.push(f64::from(rng.random::<f64>() < p));
        }
        panels.push(GlmmPanel { y, x });
    }
    GlmmData::new(panels)
}

/// Simulates a Six-City-shaped panel: four visits per child with a centered
/// age covariate (-2, -1, 0, 1) and a panel-level binary smoking indicator.
pub fn glmm_simulate_sixcity<R: Rng>(
    beta: &[f64; 3],
    tau2: f64,
    n_panels: usize,
    rng: &mut R,
) -> Result<GlmmData> {
    if tau2 < 0.0 {
        return Err(VbilError::Domain(format!("tau^2 = {tau2} must be nonnegative")));
    }
    let tau = tau2.sqrt();
    let mut panels = Vec::with_capacity(n_panels);
    for _ in 0..n_panels {
        let alpha: f64 = tau * rng.sample::<f64, _>(StandardNormal);
        let smoke = f64::from(rng.random::<f64>() < 0.4);
        let mut x = DMatrix::zeros(4, 3);
        let mut y = Vec::with_capacity(4);
        for (row, age) in (-2..=1).enumerate() {
            let age = age as f64;
            x[(row, 0)] = 1.0;
            x[(row, 1)] = age;
            x[(row, 2)] = smoke;
            let s = beta[0] + beta[1] * age + beta[2] * smoke + alpha;
            let p = 1.0 / (1.0 + (-s).exp());
            y.push(f64::from(rng.random::<f64>() < p));
        }
        panels.push(GlmmPanel { y, x });
    }
    GlmmData::new(panels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_stream;
    use approx::assert_relative_eq;

    #[test]
    fn linear_predictor_is_zero_at_the_balancing_point() {
        // beta = (-1.5, 2.5), x = 0.6, alpha = 0: logit = -1.5 + 1.5 = 0.
        let mut rng = seed_stream(1, 0, 0);
        let data = glmm_simulate_large(&[-1.5, 2.5], 1.5, 3, 5, &mut rng).unwrap();
        let model = GlmmModel::new(data, GlmmParticlePolicy::Fixed(2));
        let theta = DVector::from_column_slice(&[-1.5, 2.5, 1.5]);
        let beta = &theta.as_slice()[..2];
        // construct the predictor by hand through the public conditional
        let s = beta[0] + beta[1] * 0.6;
        assert_relative_eq!(s, 0.0, epsilon = 1e-12);
        assert_eq!(model.dim_theta(), 3);
    }

    #[test]
    fn simulation_without_random_effects_reduces_to_plain_logistic() {
        let mut rng = seed_stream(2, 0, 0);
        let n = 4000;
        let data = glmm_simulate_large(&[0.0, 0.0], 0.0, n, 1, &mut rng).unwrap();
        // with beta = 0 and tau2 = 0 every response is Bernoulli(1/2)
        let rate: f64 = data.panels.iter().map(|p| p.y[0]).sum::<f64>() / n as f64;
        let se = 0.5 / (n as f64).sqrt();
        assert!((rate - 0.5).abs() < 4.0 * se, "rate {rate}");
    }

    #[test]
    fn simulation_is_seed_reproducible() {
        let a = glmm_simulate_large(&[-1.5, 2.5], 1.5, 10, 5, &mut seed_stream(3, 0, 0)).unwrap();
        let b = glmm_simulate_large(&[-1.5, 2.5], 1.5, 10, 5, &mut seed_stream(3, 0, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sixcity_shape() {
        let mut rng = seed_stream(4, 0, 0);
        let data = glmm_simulate_sixcity(&[-1.8, -0.1, 0.3], 2.0, 537, &mut rng).unwrap();
        assert_eq!(data.n_panels(), 537);
        assert_eq!(data.n_obs(), 537 * 4);
        assert_eq!(data.n_covariates(), 3);
    }

    #[test]
    fn prior_blocks_fail_outside_support() {
        let mut rng = seed_stream(5, 0, 0);
        let data = glmm_simulate_large(&[0.0, 1.0], 1.0, 3, 4, &mut rng).unwrap();
        let model = GlmmModel::new(data, GlmmParticlePolicy::Fixed(5));
        let bad = DVector::from_column_slice(&[0.0, 0.0, -1.0]);
        assert!(model.log_prior_blocks(&bad).is_err());
    }
}
