//! Importance-sampling likelihood for random-intercept panel models.
//!
//! The likelihood factorizes over panels, `p(y|theta) = prod_i p(y_i|theta)`
//! with `p(y_i|theta) = int p(y_i|alpha, theta) p(alpha|theta) d alpha`. Each
//! integral is estimated by importance sampling with the prior of the random
//! effect as the proposal, so the weights reduce to the conditional density
//! `w = p(y_i | alpha^{(j)}, theta)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VbilError};
use crate::likelihood::{log_sum_exp, LogLikEstimate, ParticlesUsed, LOG_LIK_FLOOR};

/// A model that exposes per-panel conditional densities given a scalar
/// random intercept with variance `random_effect_variance(theta)`.
pub trait PanelModel: Sync {
    fn n_panels(&self) -> usize;
    /// `log p(y_i | alpha, theta)` for panel `i`.
    fn log_cond_density(&self, panel: usize, alpha: f64, theta: &DVector<f64>) -> f64;
    /// Variance of the random intercept `alpha_i ~ N(0, tau^2)` under `theta`.
    fn random_effect_variance(&self, theta: &DVector<f64>) -> f64;
}

/// One panel of a random-intercept data set: responses plus covariate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmmPanel {
    pub y: Vec<f64>,
    /// `n_i x p` covariate matrix (including the intercept column).
    pub x: DMatrix<f64>,
}

/// Binary-response panel data for the logistic random-intercept model.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmmData {
    pub panels: Vec<GlmmPanel>,
}

impl GlmmData {
    pub fn new(panels: Vec<GlmmPanel>) -> Result<Self> {
        if panels.is_empty() {
            return Err(VbilError::Contract("panel data set is empty".to_string()));
        }
        for (i, p) in panels.iter().enumerate() {
            if p.y.is_empty() {
                return Err(VbilError::Contract(format!("panel {i} is empty")));
            }
            if p.x.nrows() != p.y.len() {
                return Err(VbilError::Contract(format!(
                    "panel {i}: covariate rows {} do not match responses {}",
                    p.x.nrows(),
                    p.y.len()
                )));
            }
            if p.y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(VbilError::Parse(format!("panel {i}: responses must be 0/1")));
            }
        }
        Ok(Self { panels })
    }

    pub fn n_panels(&self) -> usize {
        self.panels.len()
    }

    pub fn n_obs(&self) -> usize {
        self.panels.iter().map(|p| p.y.len()).sum()
    }

    pub fn n_covariates(&self) -> usize {
        self.panels[0].x.ncols()
    }
}

/// Per-panel importance-sampling log weights at `theta`.
pub fn panel_log_weights<M: PanelModel, R: Rng>(
    model: &M,
    theta: &DVector<f64>,
    counts: &[usize],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let n = model.n_panels();
    if counts.len() != n {
        return Err(VbilError::Contract(format!(
            "expected {n} particle counts, got {}",
            counts.len()
        )));
    }
    let tau2 = model.random_effect_variance(theta);
    if !(tau2 > 0.0) {
        return Err(VbilError::Domain(format!(
            "random-effect variance must be positive, got {tau2}"
        )));
    }
    let tau = tau2.sqrt();
    let mut out = Vec::with_capacity(n);
    for (i, &n_i) in counts.iter().enumerate() {
        let mut lw = Vec::with_capacity(n_i);
        for _ in 0..n_i {
            let alpha: f64 = tau * rng.sample::<f64, _>(StandardNormal);
            lw.push(model.log_cond_density(i, alpha, theta));
        }
        out.push(lw);
    }
    Ok(out)
}

/// Variance diagnostics of the panel-product estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelVariance {
    /// `sum_i gamma_hat_i / N_i`, the estimated variance of the total log
    /// estimate (variances add across panels).
    pub var_total: f64,
    pub gamma_hat: Vec<f64>,
    /// Set when some panel had numerically degenerate (all-equal or all-zero)
    /// weights.
    pub degenerate: bool,
}

/// `gamma_hat = N sum w^2 / (sum w)^2 - 1`, computed stably from log weights.
fn gamma_hat_from_log_weights(lw: &[f64]) -> Option<f64> {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &w in lw {
        let a = (w - m).exp();
        sum += a;
        sum_sq += a * a;
    }
    if sum == 0.0 {
        return None;
    }
    Some(((lw.len() as f64) * sum_sq / (sum * sum) - 1.0).max(0.0))
}

/// Estimated variance of `log p_hat(y|theta)` and the per-panel relative
/// variances `gamma_hat_i`. Panels with degenerate weights contribute zero
/// variance and set the `degenerate` flag.
pub fn panel_var_estimate(log_weights: &[Vec<f64>]) -> Result<PanelVariance> {
    let mut var_total = 0.0;
    let mut gamma_hat = Vec::with_capacity(log_weights.len());
    let mut degenerate = false;
    for (i, lw) in log_weights.iter().enumerate() {
        if lw.len() < 2 {
            return Err(VbilError::Contract(format!(
                "panel {i}: variance estimate needs at least 2 weights"
            )));
        }
        match gamma_hat_from_log_weights(lw) {
            Some(g) => {
                if g == 0.0 {
                    degenerate = true;
                }
                var_total += g / lw.len() as f64;
                gamma_hat.push(g);
            }
            None => {
                degenerate = true;
                gamma_hat.push(0.0);
            }
        }
    }
    Ok(PanelVariance { var_total, gamma_hat, degenerate })
}

/// Assembles the product estimate from per-panel log weights.
pub fn estimate_from_log_weights(log_weights: &[Vec<f64>]) -> LogLikEstimate {
    let mut log_value = 0.0;
    let mut floored = false;
    for lw in log_weights {
        let lse = log_sum_exp(lw);
        if lse.is_finite() {
            log_value += lse - (lw.len() as f64).ln();
        } else {
            floored = true;
        }
    }
    let counts: Vec<usize> = log_weights.iter().map(Vec::len).collect();
    if floored {
        return LogLikEstimate {
            log_value: LOG_LIK_FLOOR,
            particles_used: ParticlesUsed::PerPanel(counts),
            var_log_estimate: None,
            floored: true,
        };
    }
    let var = panel_var_estimate(log_weights).ok().map(|v| v.var_total);
    LogLikEstimate {
        log_value,
        particles_used: ParticlesUsed::PerPanel(counts),
        var_log_estimate: var,
        floored: false,
    }
}

/// Unbiased importance-sampling estimate of the panel-product likelihood.
pub fn panel_is_estimate<M: PanelModel, R: Rng>(
    model: &M,
    theta: &DVector<f64>,
    counts: &[usize],
    rng: &mut R,
) -> Result<LogLikEstimate> {
    let lw = panel_log_weights(model, theta, counts, rng)?;
    Ok(estimate_from_log_weights(&lw))
}

/// Chooses per-panel particle counts targeting a total log-estimate variance
/// of `sigma2_target`: a pilot run of `pilot_n` draws per panel estimates
/// `gamma_hat_i`, then `N_i = max(2, ceil(gamma_hat_i * n / sigma2))`.
pub fn adapt_particles<M: PanelModel, R: Rng>(
    model: &M,
    theta: &DVector<f64>,
    sigma2_target: f64,
    pilot_n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if sigma2_target <= 0.0 {
        return Err(VbilError::Config(format!(
            "variance target must be positive, got {sigma2_target}"
        )));
    }
    if pilot_n < 10 {
        return Err(VbilError::Config(format!(
            "pilot run needs at least 10 draws per panel, got {pilot_n}"
        )));
    }
    let n = model.n_panels() as f64;
    let pilot = panel_log_weights(model, theta, &vec![pilot_n; model.n_panels()], rng)?;
    let var = panel_var_estimate(&pilot)?;
    Ok(var
        .gamma_hat
        .iter()
        .map(|&g| ((g * n / sigma2_target).ceil() as usize).max(2))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_stream;
    use approx::assert_relative_eq;

    /// Panel model with a constant conditional density (zero-variance
    /// weights).
    struct ConstantPanel {
        log_c: f64,
    }

    impl PanelModel for ConstantPanel {
        fn n_panels(&self) -> usize {
            1
        }
        fn log_cond_density(&self, _panel: usize, _alpha: f64, _theta: &DVector<f64>) -> f64 {
            self.log_c
        }
        fn random_effect_variance(&self, _theta: &DVector<f64>) -> f64 {
            1.0
        }
    }

    #[test]
    fn constant_integrand_is_exact_for_any_count() {
        let model = ConstantPanel { log_c: -3.21 };
        let theta = DVector::zeros(1);
        for n in [1usize, 2, 7, 100] {
            let mut rng = seed_stream(1, 0, n as u64);
            let est = panel_is_estimate(&model, &theta, &[n], &mut rng).unwrap();
            assert_relative_eq!(est.log_value, -3.21, epsilon = 1e-12);
            assert!(!est.floored);
        }
    }

    #[test]
    fn gamma_hat_closed_cases() {
        // equal weights -> 0
        let eq = vec![vec![1.7f64.ln(); 8]];
        let v = panel_var_estimate(&eq).unwrap();
        assert_relative_eq!(v.gamma_hat[0], 0.0, epsilon = 1e-12);
        assert!(v.degenerate);

        // weights (1, 0, ..., 0) with N entries -> gamma_hat = N - 1
        let n0 = 12;
        let mut lw = vec![f64::NEG_INFINITY; n0];
        lw[0] = 0.0;
        let v = panel_var_estimate(&[lw].to_vec()).unwrap();
        assert_relative_eq!(v.gamma_hat[0], (n0 - 1) as f64, epsilon = 1e-9);
    }

    #[test]
    fn gamma_is_nonnegative_for_random_weights() {
        let mut rng = seed_stream(3, 1, 0);
        for _ in 0..200 {
            let lw: Vec<f64> = (0..16).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let v = panel_var_estimate(&[lw].to_vec()).unwrap();
            assert!(v.gamma_hat[0] >= 0.0);
        }
    }

    #[test]
    fn all_zero_weights_floor_the_estimate() {
        struct ZeroPanel;
        impl PanelModel for ZeroPanel {
            fn n_panels(&self) -> usize {
                1
            }
            fn log_cond_density(&self, _p: usize, _a: f64, _t: &DVector<f64>) -> f64 {
                f64::NEG_INFINITY
            }
            fn random_effect_variance(&self, _t: &DVector<f64>) -> f64 {
                1.0
            }
        }
        let mut rng = seed_stream(4, 0, 0);
        let est = panel_is_estimate(&ZeroPanel, &DVector::zeros(1), &[5], &mut rng).unwrap();
        assert_eq!(est.log_value, LOG_LIK_FLOOR);
        assert!(est.floored);
    }

    #[test]
    fn adaptation_floors_and_scales() {
        // zero-variance panels: all counts at the floor of 2
        let model = ConstantPanel { log_c: 0.0 };
        let mut rng = seed_stream(5, 0, 0);
        let counts = adapt_particles(&model, &DVector::zeros(1), 1.0, 10, &mut rng).unwrap();
        assert_eq!(counts, vec![2]);
    }
}
