//! Bootstrap particle filter likelihood estimator for scalar-state
//! state-space models.
//!
//! Prior-transition proposals, multinomial resampling at every step, and the
//! standard product-of-weight-averages likelihood estimate, which is unbiased
//! for `p(y|theta)`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Result, VbilError};
use crate::likelihood::{log_sum_exp, LogLikEstimate, ParticlesUsed, LOG_LIK_FLOOR};

/// A state-space model with scalar states: initial draw, Markov transition
/// and observation density.
pub trait StateSpaceModel: Sync {
    fn sample_initial<R: Rng>(&self, theta: &DVector<f64>, rng: &mut R) -> f64;
    fn sample_transition<R: Rng>(
        &self,
        x_prev: f64,
        t: usize,
        theta: &DVector<f64>,
        rng: &mut R,
    ) -> f64;
    fn log_obs_density(&self, t: usize, y_t: f64, x_t: f64, theta: &DVector<f64>) -> f64;
}

/// Multinomial resampling: draws `n` ancestor indices proportional to the
/// normalized weights using sorted uniforms (single pass, still multinomial
/// in distribution).
fn multinomial_ancestors<R: Rng>(
    log_weights: &[f64],
    out: &mut Vec<usize>,
    rng: &mut R,
) -> bool {
    let n = log_weights.len();
    let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return false;
    }
    let mut cum = Vec::with_capacity(n);
    let mut total = 0.0;
    for &lw in log_weights {
        total += (lw - m).exp();
        cum.push(total);
    }
    if total <= 0.0 {
        return false;
    }
    // Sorted uniforms via normalized exponential spacings.
    let mut spacings_sum = 0.0;
    let spacings: Vec<f64> = (0..=n)
        .map(|_| {
            let e: f64 = rng.sample(Exp1);
            spacings_sum += e;
            spacings_sum
        })
        .collect();
    out.clear();
    let mut j = 0usize;
    for i in 0..n {
        let u = spacings[i] / spacings_sum * total;
        while j < n - 1 && cum[j] < u {
            j += 1;
        }
        out.push(j);
    }
    true
}

/// Runs the bootstrap filter on `y`, returning the unbiased likelihood
/// estimate `log p_hat_N(y|theta) = sum_t log[(1/N) sum_k g_t(y_t|x_t^k)]`.
pub fn bootstrap_particle_filter<M: StateSpaceModel, R: Rng>(
    model: &M,
    y: &[f64],
    theta: &DVector<f64>,
    n_particles: usize,
    rng: &mut R,
) -> Result<LogLikEstimate> {
    if n_particles < 2 {
        return Err(VbilError::Contract(format!(
            "particle filter needs at least 2 particles, got {n_particles}"
        )));
    }
    if y.is_empty() {
        return Err(VbilError::Contract("empty observation series".to_string()));
    }
    let n = n_particles;
    let mut particles: Vec<f64> = (0..n).map(|_| model.sample_initial(theta, rng)).collect();
    let mut next = vec![0.0f64; n];
    let mut log_w = vec![0.0f64; n];
    let mut ancestors: Vec<usize> = Vec::with_capacity(n);
    let mut log_lik = 0.0;

    for (t, &y_t) in y.iter().enumerate() {
        if t > 0 {
            if !multinomial_ancestors(&log_w, &mut ancestors, rng) {
                return Ok(floored(n, y.len()));
            }
            for (k, &a) in ancestors.iter().enumerate() {
                next[k] = model.sample_transition(particles[a], t, theta, rng);
            }
            std::mem::swap(&mut particles, &mut next);
        }
        for (k, p) in particles.iter().enumerate() {
            log_w[k] = model.log_obs_density(t, y_t, *p, theta);
        }
        let lse = log_sum_exp(&log_w);
        if !lse.is_finite() {
            return Ok(floored(n, y.len()));
        }
        log_lik += lse - (n as f64).ln();
    }

    Ok(LogLikEstimate {
        log_value: log_lik,
        particles_used: ParticlesUsed::Total(n),
        var_log_estimate: None,
        floored: false,
    })
}

fn floored(n: usize, _t: usize) -> LogLikEstimate {
    LogLikEstimate {
        log_value: LOG_LIK_FLOOR,
        particles_used: ParticlesUsed::Total(n),
        var_log_estimate: None,
        floored: true,
    }
}

/// Stationary AR(1)-plus-noise reference model,
/// `x_t = phi x_{t-1} + sigma v_t`, `y_t = x_t + w_t`, `w_t ~ N(0, r)`.
/// Its exact likelihood is available from the Kalman filter, which makes it
/// the standard validation target for the particle filter.
#[derive(Debug, Clone)]
pub struct LinearGaussianSsm {
    pub phi: f64,
    pub sigma2: f64,
    pub obs_var: f64,
}

impl LinearGaussianSsm {
    pub fn stationary_var(&self) -> f64 {
        self.sigma2 / (1.0 - self.phi * self.phi)
    }
}

impl StateSpaceModel for LinearGaussianSsm {
    fn sample_initial<R: Rng>(&self, _theta: &DVector<f64>, rng: &mut R) -> f64 {
        self.stationary_var().sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
    }
    fn sample_transition<R: Rng>(
        &self,
        x_prev: f64,
        _t: usize,
        _theta: &DVector<f64>,
        rng: &mut R,
    ) -> f64 {
        self.phi * x_prev + self.sigma2.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
    }
    fn log_obs_density(&self, _t: usize, y_t: f64, x_t: f64, _theta: &DVector<f64>) -> f64 {
        let d = y_t - x_t;
        -0.5 * ((2.0 * std::f64::consts::PI * self.obs_var).ln() + d * d / self.obs_var)
    }
}
