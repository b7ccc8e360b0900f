//! Stochastic volatility state-space model.
//!
//! ```text
//! y_t = exp(x_t / 2) w_t,                w_t ~ N(0, 1)
//! x_t = mu + phi (x_{t-1} - mu) + sigma v_t,   x_1 ~ N(mu, sigma^2/(1-phi^2))
//! ```
//!
//! The persistence is estimated through `tau = (1 + phi)/2` in (0,1) and
//! reported as `phi = 2 tau - 1`. Model parameters are `theta = (mu, tau,
//! sigma^2)` with priors `mu ~ N(0, 10)`, `tau ~ Beta(20, 1.5)` and
//! `sigma^2 ~ IG(2.5, 0.025)`. The likelihood is estimated by the bootstrap
//! particle filter with a fixed particle count.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VbilError};
use crate::expfam::{ProductFamily, VariationalFactor};
use crate::likelihood::{bootstrap_particle_filter, LogLikEstimate, StateSpaceModel};
use crate::models::{CoordTransform, ReportCoord, ReportSpec, ReportTransform, VbilModel};
use crate::special::{ln_beta, ln_gamma};

#[derive(Debug, Clone)]
pub struct SvModel {
    y: Vec<f64>,
    n_particles: usize,
    /// Initial family: (mu mean, mu var), (alpha_tau, beta_tau),
    /// (a_sigma2, b_sigma2). Defaults put the initial means of
    /// (mu, phi, sigma^2) at (0, 0.9, 0.1).
    init_mu: [f64; 2],
    init_tau: [f64; 2],
    init_sigma2: [f64; 2],
}

impl SvModel {
    pub fn new(y: Vec<f64>, n_particles: usize) -> Result<Self> {
        if y.len() < 2 {
            return Err(VbilError::Contract(format!(
                "state-space data needs T >= 2, got {}",
                y.len()
            )));
        }
        Ok(Self {
            y,
            n_particles,
            init_mu: [0.0, 0.3],
            init_tau: [95.0, 5.0],
            init_sigma2: [11.0, 1.0],
        })
    }

    pub fn with_init(mut self, mu: [f64; 2], tau: [f64; 2], sigma2: [f64; 2]) -> Self {
        self.init_mu = mu;
        self.init_tau = tau;
        self.init_sigma2 = sigma2;
        self
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    fn unpack(theta: &DVector<f64>) -> (f64, f64, f64) {
        let mu = theta[0];
        let phi = 2.0 * theta[1] - 1.0;
        let sigma2 = theta[2];
        (mu, phi, sigma2)
    }
}

impl StateSpaceModel for SvModel {
    fn sample_initial<R: Rng>(&self, theta: &DVector<f64>, rng: &mut R) -> f64 {
        let (mu, phi, sigma2) = Self::unpack(theta);
        let sd = (sigma2 / (1.0 - phi * phi)).sqrt();
        mu + sd * rng.sample::<f64, _>(StandardNormal)
    }

    fn sample_transition<R: Rng>(
        &self,
        x_prev: f64,
        _t: usize,
        theta: &DVector<f64>,
        rng: &mut R,
    ) -> f64 {
        let (mu, phi, sigma2) = Self::unpack(theta);
        mu + phi * (x_prev - mu) + sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    fn log_obs_density(&self, _t: usize, y_t: f64, x_t: f64, _theta: &DVector<f64>) -> f64 {
        -0.5 * ((2.0 * std::f64::consts::PI).ln() + x_t + y_t * y_t * (-x_t).exp())
    }
}

impl VbilModel for SvModel {
    fn name(&self) -> &str {
        "sv"
    }

    fn dim_theta(&self) -> usize {
        3
    }

    fn initial_family(&self) -> Result<ProductFamily> {
        ProductFamily::new(vec![
            VariationalFactor::mvn_scalar(self.init_mu[0], self.init_mu[1])?,
            VariationalFactor::beta_above_one(self.init_tau[0], self.init_tau[1])?,
            VariationalFactor::inverse_gamma(self.init_sigma2[0], self.init_sigma2[1])?,
        ])
    }

    fn log_prior_blocks(&self, theta: &DVector<f64>) -> Result<Vec<f64>> {
        let (mu, tau, sigma2) = (theta[0], theta[1], theta[2]);
        if !(tau > 0.0 && tau < 1.0) {
            return Err(VbilError::Domain(format!("tau = {tau} outside (0,1)")));
        }
        if !(sigma2 > 0.0) {
            return Err(VbilError::Domain(format!("sigma^2 = {sigma2} must be positive")));
        }
        // mu ~ N(0, 10)
        let lp_mu = -0.5 * ((2.0 * std::f64::consts::PI * 10.0).ln() + mu * mu / 10.0);
        // tau ~ Beta(20, 1.5)
        let lp_tau = 19.0 * tau.ln() + 0.5 * (1.0 - tau).ln() - ln_beta(20.0, 1.5);
        // sigma^2 ~ IG(2.5, 0.025)
        let (a, b): (f64, f64) = (2.5, 0.025);
        let lp_s2 = a * b.ln() - ln_gamma(a) - (a + 1.0) * sigma2.ln() - b / sigma2;
        Ok(vec![lp_mu, lp_tau, lp_s2])
    }

    fn estimate_log_lik(
        &self,
        theta: &DVector<f64>,
        rng: &mut ChaCha12Rng,
    ) -> Result<LogLikEstimate> {
        bootstrap_particle_filter(self, &self.y, theta, self.n_particles, rng)
    }

    fn scale_n(&self) -> f64 {
        self.y.len() as f64
    }

    fn report(&self) -> ReportSpec {
        ReportSpec {
            coords: vec![
                ReportCoord {
                    name: "mu".to_string(),
                    source_coord: 0,
                    transform: ReportTransform::Identity,
                },
                ReportCoord {
                    name: "phi".to_string(),
                    source_coord: 1,
                    transform: ReportTransform::Affine { scale: 2.0, shift: -1.0 },
                },
                ReportCoord {
                    name: "sigma2".to_string(),
                    source_coord: 2,
                    transform: ReportTransform::Identity,
                },
            ],
        }
    }

    fn pmmh_transforms(&self) -> Vec<CoordTransform> {
        vec![CoordTransform::Identity, CoordTransform::Logit, CoordTransform::Log]
    }
}

/// Simulates `T` observations of the SV process.
pub fn sv_simulate<R: Rng>(
    mu: f64,
    phi: f64,
    sigma2: f64,
    t_len: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if phi.abs() >= 1.0 {
        return Err(VbilError::Domain(format!("|phi| = {} must be below 1", phi.abs())));
    }
    if sigma2 <= 0.0 {
        return Err(VbilError::Domain(format!("sigma^2 = {sigma2} must be positive")));
    }
    let mut x = mu + (sigma2 / (1.0 - phi * phi)).sqrt() * rng.sample::<f64, _>(StandardNormal);
    let mut y = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if t > 0 {
            x = mu + phi * (x - mu) + sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        y.push((x / 2.0).exp() * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(y)
}

/// Demeaned percentage log returns of a price path:
/// `y_t = 100 (ln(r_{t+1}/r_t) - mean of the log returns)`. The output has
/// exactly zero mean and length `prices.len() - 1`.
pub fn demeaned_log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 3 {
        return Err(VbilError::Contract("need at least 3 prices".to_string()));
    }
    if prices.iter().any(|&p| !(p > 0.0)) {
        return Err(VbilError::Domain("prices must be positive".to_string()));
    }
    let raw: Vec<f64> = prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.iter().map(|r| 100.0 * (r - mean)).collect())
}
