//! The stochastic KL-minimization loop.
//!
//! Each iteration draws `S` parameter vectors from the current variational
//! family (through a randomized quasi-Monte Carlo point set or plain
//! uniforms), evaluates one unbiased likelihood estimate per draw in
//! parallel, assembles the (control-variated, optionally factorized) score
//! gradient, applies the natural-gradient transform, and steps
//! `lambda <- lambda - a_t * grad`. The same draws feed the lower-bound
//! estimate whose windowed average drives the stopping rule.
//!
//! Per-sample randomness comes from streams derived from `(seed, iteration,
//! sample index)`, and all reductions run over the ordered sample list, so a
//! fit is reproducible bit-for-bit regardless of the worker-pool size.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VbilError};
use crate::expfam::ProductFamily;
use crate::gradient::{
    cv_gradient, factorized_gradient, naive_gradient, natural_transform, update_cv_constants,
    CvState, GradientEstimate, GradientSample,
};
use crate::models::VbilModel;
use crate::rng::{derive_seed, seed_stream};
use crate::rqmc::{generate, next_pow2, PointGenerator};

/// Gradient-norm bound: steps larger than `100 * dim(lambda)` in Euclidean
/// norm are rescaled (early iterations with floored likelihoods can explode).
const CLIP_NORM_PER_DIM: f64 = 100.0;

/// Consecutive natural-gradient conditioning failures tolerated before the
/// run aborts.
const MAX_NATURAL_FAILURES: usize = 5;

/// Pseudo-iteration label reserved for the control-variate pilot batch so
/// its random streams never collide with a real iteration's.
const PILOT_ITERATION: usize = usize::MAX >> 1;

/// Step-size schedule `a_t = scale * (1 + t)^{-kappa}`; the default
/// `scale = 1, kappa = 1` is the harmonic sequence `1/(1+t)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct StepSchedule {
    pub scale: f64,
    pub kappa: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { scale: 1.0, kappa: 1.0 }
    }
}

impl StepSchedule {
    pub fn new(scale: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.5 && kappa <= 1.0) {
            return Err(VbilError::Config(format!(
                "step exponent must lie in (0.5, 1], got {kappa}"
            )));
        }
        if !(scale > 0.0) {
            return Err(VbilError::Config(format!("step scale must be positive, got {scale}")));
        }
        Ok(Self { scale, kappa })
    }
}

/// `a_t` for iteration `t >= 0`.
pub fn step_size(t: usize, schedule: &StepSchedule) -> f64 {
    schedule.scale * (1.0 + t as f64).powf(-schedule.kappa)
}

/// Optimizer settings. `samples_per_iter` is `S`; the window length and
/// threshold control the stopping rule on the scaled lower bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VbilConfig {
    pub samples_per_iter: usize,
    pub step: StepSchedule,
    pub use_natural_gradient: bool,
    pub use_control_variates: bool,
    pub use_rqmc: bool,
    /// Rao-Blackwellized per-factor gradients (identical to the full
    /// gradient when the family has one factor).
    pub use_factorized: bool,
    pub stop_window: usize,
    pub stop_epsilon: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Overrides the model's dataset-size scaling of the lower bound.
    pub scale_n_override: Option<f64>,
}

impl Default for VbilConfig {
    fn default() -> Self {
        Self {
            samples_per_iter: 500,
            step: StepSchedule::default(),
            use_natural_gradient: true,
            use_control_variates: true,
            use_rqmc: true,
            use_factorized: true,
            stop_window: 5,
            stop_epsilon: 1e-5,
            max_iterations: 200,
            seed: 0,
            scale_n_override: None,
        }
    }
}

impl VbilConfig {
    fn validate(&self) -> Result<()> {
        if self.samples_per_iter < 2 {
            return Err(VbilError::Config("S must be at least 2".to_string()));
        }
        if self.stop_window < 1 {
            return Err(VbilError::Config("stop window must be at least 1".to_string()));
        }
        if !(self.stop_epsilon > 0.0) {
            return Err(VbilError::Config("stop epsilon must be positive".to_string()));
        }
        StepSchedule::new(self.step.scale, self.step.kappa).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    WindowConverged,
    MaxIterations,
}

/// One row of the fit trace. `lambda` is the parameter at which the lower
/// bound was estimated (before that iteration's update).
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub lambda: DVector<f64>,
    pub lb_hat: f64,
    pub lb_scaled: f64,
    pub lb_window_avg: Option<f64>,
    /// Set when the natural transform failed and the iteration fell back to
    /// the traditional gradient.
    pub natural_fallback: bool,
}

/// The full optimization record.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub final_family: ProductFamily,
    /// Window-averaged unscaled lower bound at the stop, the marginal
    /// likelihood estimate (NaN when no iterations ran).
    pub final_log_marginal_likelihood: f64,
}

impl FitTrace {
    pub fn final_lambda(&self) -> DVector<f64> {
        self.final_family.lambda()
    }
}

/// Unbiased lower-bound estimate from one iteration's samples:
/// the average of `log p(theta) - log q(theta) + log p_hat(y|theta)`.
/// The whole expectation is estimated from the draws (not partially in
/// closed form), which empirically has smaller variance.
pub fn estimate_lower_bound(samples: &[GradientSample]) -> f64 {
    samples
        .iter()
        .map(|s| s.log_prior_total() - s.log_q_total + s.log_lik)
        .sum::<f64>()
        / samples.len() as f64
}

/// The stopping decision on the window-averaged scaled lower bound: with at
/// least `window + 1` recorded iterations, stop when the change of the
/// window mean is below `epsilon`.
pub fn check_stopping(lb_scaled: &[f64], window: usize, epsilon: f64) -> bool {
    if lb_scaled.len() < window + 1 {
        return false;
    }
    let mean_of = |end: usize| {
        lb_scaled[end - window..end].iter().sum::<f64>() / window as f64
    };
    let current = mean_of(lb_scaled.len());
    let previous = mean_of(lb_scaled.len() - 1);
    (current - previous).abs() < epsilon
}

/// Draws the `S` gradient samples of iteration `t` (in parallel when a
/// rayon pool is active).
fn draw_samples<M: VbilModel>(
    model: &M,
    family: &ProductFamily,
    config: &VbilConfig,
    t: usize,
) -> Result<Vec<GradientSample>> {
    let s = config.samples_per_iter;
    let m = family.uniform_dim();
    let gen = if config.use_rqmc {
        PointGenerator::SobolDigitalShift
    } else {
        PointGenerator::PlainMonteCarlo
    };
    // Power-of-two Sobol block, truncated to S.
    let n_points = if config.use_rqmc { next_pow2(s) } else { s };
    let points = generate(n_points, m, gen, derive_seed(config.seed, t as u64, 0xB10C))?;

    (0..s)
        .into_par_iter()
        .map(|i| {
            let theta = family.sample_theta(points.row(i))?;
            let mut rng = seed_stream(config.seed, t as u64 + 1, 0x1000 + i as u64);
            let est = model.estimate_log_lik(&theta, &mut rng)?;
            Ok(GradientSample {
                log_q_total: family.log_density(theta.as_slice())?,
                log_q_blocks: family.log_density_blocks(theta.as_slice())?,
                score: family.score(theta.as_slice())?,
                log_prior_blocks: model.log_prior_blocks(&theta)?,
                log_lik: est.log_value,
                theta,
            })
        })
        .collect()
}

fn clip(grad: &mut GradientEstimate, dim: usize) {
    let bound = CLIP_NORM_PER_DIM * dim as f64;
    let norm = grad.grad.norm();
    if norm > bound {
        grad.grad *= bound / norm;
    }
}

/// Runs the fitting loop from the model's initial family.
pub fn run_vbil<M: VbilModel>(model: &M, config: &VbilConfig) -> Result<FitTrace> {
    let family = model.initial_family()?;
    run_vbil_from(model, family, config)
}

/// Runs the fitting loop from an explicit starting family.
pub fn run_vbil_from<M: VbilModel>(
    model: &M,
    initial_family: ProductFamily,
    config: &VbilConfig,
) -> Result<FitTrace> {
    config.validate()?;
    let scale_n = config.scale_n_override.unwrap_or_else(|| model.scale_n()).max(1.0);
    let mut family = initial_family;
    let mut cv = CvState::zeros(family.dim_lambda());
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut lb_scaled_seq: Vec<f64> = Vec::new();
    let mut consecutive_failures = 0usize;
    let mut stop_reason = StopReason::MaxIterations;

    // Seed the control-variate constants from a pilot batch at lambda_0: the
    // pilot draws are independent of every gradient batch, so unbiasedness
    // is preserved, and the first step is not left uncontrolled (the naive
    // estimator can be orders of magnitude noisier at a bad start).
    if config.use_control_variates && config.max_iterations > 0 {
        let pilot = draw_samples(model, &family, config, PILOT_ITERATION)?;
        cv = update_cv_constants(&family, &pilot, &cv, config.use_factorized)?;
    }

    for t in 0..config.max_iterations {
        let samples = draw_samples(model, &family, config, t)?;

        let use_cv = config.use_control_variates && cv.initialized;
        let zeros = CvState::zeros(family.dim_lambda());
        let active_cv = if use_cv { &cv } else { &zeros };
        let base = if config.use_factorized {
            factorized_gradient(&family, &samples, active_cv)?
        } else if use_cv {
            cv_gradient(&family, &samples, active_cv)?
        } else {
            naive_gradient(&family, &samples)?
        };

        let (mut grad, fallback) = if config.use_natural_gradient {
            match natural_transform(&family, &base) {
                Ok(g) => {
                    consecutive_failures = 0;
                    (g, false)
                }
                Err(VbilError::Conditioning { .. }) => {
                    consecutive_failures += 1;
                    if consecutive_failures >= MAX_NATURAL_FAILURES {
                        return Err(VbilError::Numerical(format!(
                            "natural gradient failed {MAX_NATURAL_FAILURES} iterations in a row \
                             (last at iteration {t})"
                        )));
                    }
                    (base.clone(), true)
                }
                Err(e) => return Err(e),
            }
        } else {
            (base.clone(), false)
        };
        clip(&mut grad, family.dim_lambda());

        let lb_hat = estimate_lower_bound(&samples);
        let lb_scaled = lb_hat / scale_n;
        lb_scaled_seq.push(lb_scaled);
        let window_avg = if lb_scaled_seq.len() >= config.stop_window {
            Some(
                lb_scaled_seq[lb_scaled_seq.len() - config.stop_window..]
                    .iter()
                    .sum::<f64>()
                    / config.stop_window as f64,
            )
        } else {
            None
        };
        records.push(IterationRecord {
            iter: t,
            lambda: family.lambda(),
            lb_hat,
            lb_scaled,
            lb_window_avg: window_avg,
            natural_fallback: fallback,
        });

        // Constants for the next iteration come from this iteration's
        // samples (sequential scheme preserving unbiasedness).
        if config.use_control_variates {
            cv = update_cv_constants(&family, &samples, &cv, config.use_factorized)?;
        }

        let a_t = step_size(t, &config.step);
        let new_lambda = family.lambda() - grad.grad * a_t;
        family = family.with_lambda_projected(&new_lambda)?;

        if check_stopping(&lb_scaled_seq, config.stop_window, config.stop_epsilon) {
            stop_reason = StopReason::WindowConverged;
            break;
        }
    }

    let final_log_ml = if records.len() >= config.stop_window {
        records[records.len() - config.stop_window..]
            .iter()
            .map(|r| r.lb_hat)
            .sum::<f64>()
            / config.stop_window as f64
    } else if let Some(last) = records.last() {
        last.lb_hat
    } else {
        f64::NAN
    };

    Ok(FitTrace {
        iterations: records,
        stop_reason,
        final_family: family,
        final_log_marginal_likelihood: final_log_ml,
    })
}

/// Per-coordinate least-squares summary of the variance-versus-noise study.
#[derive(Debug, Clone, Serialize)]
pub struct CoordinateSlope {
    pub coordinate: usize,
    /// Sample variance of the final natural parameter at each grid value.
    pub variances: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// One KL-decomposition check: the Monte Carlo estimate of
/// `E_q[log q - log p(theta) - log p_hat] - sigma^2/2` at a fixed family,
/// which is invariant in `sigma^2` when the decomposition holds.
#[derive(Debug, Clone, Serialize)]
pub struct KlCheck {
    pub sigma2: f64,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Report {
    pub sigma2_grid: Vec<f64>,
    pub replications: usize,
    pub budget: usize,
    pub coordinates: Vec<CoordinateSlope>,
    pub kl_checks: Vec<KlCheck>,
}

/// Runs the optimizer to a fixed budget at every noise level in
/// `sigma2_grid`, many times, and reports how the variance of the final
/// parameter scales with the noise, plus the KL-decomposition invariance
/// check at `kl_lambda`.
#[allow(clippy::too_many_arguments)]
pub fn theorem1_variance_study<M: VbilModel>(
    model: &M,
    config: &VbilConfig,
    sigma2_grid: &[f64],
    replications: usize,
    budget: usize,
    kl_lambda: &DVector<f64>,
    kl_sigma2: &[f64],
    kl_samples: usize,
) -> Result<Theorem1Report> {
    let family0 = model.initial_family()?;
    let probe = family0.sample_theta(&vec![0.5; family0.uniform_dim()])?;
    if model.exact_log_lik(&probe).is_none() {
        return Err(VbilError::Contract(
            "the variance study needs a model with an exact likelihood".to_string(),
        ));
    }
    let dim = family0.dim_lambda();

    // disable stopping: the window can never produce two averages
    let mut run_cfg = config.clone();
    run_cfg.max_iterations = budget;
    run_cfg.stop_window = budget + 1;

    let mut variances: Vec<Vec<f64>> = vec![Vec::new(); dim]; // [coord][grid]
    for (gi, &s2) in sigma2_grid.iter().enumerate() {
        let finals: Vec<DVector<f64>> = (0..replications)
            .map(|rep| {
                let noisy = crate::models::SyntheticNoiseModel::new(model, s2);
                let mut cfg = run_cfg.clone();
                cfg.seed = crate::rng::derive_seed(config.seed, gi as u64, rep as u64);
                run_vbil(&noisy, &cfg).map(|tr| tr.final_lambda())
            })
            .collect::<Result<Vec<_>>>()?;
        for coord in 0..dim {
            let xs: Vec<f64> = finals.iter().map(|l| l[coord]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (xs.len() - 1) as f64;
            variances[coord].push(var);
        }
    }

    let coordinates = (0..dim)
        .map(|coord| {
            let (slope, intercept, r2) = least_squares(sigma2_grid, &variances[coord]);
            CoordinateSlope {
                coordinate: coord,
                variances: variances[coord].clone(),
                slope,
                intercept,
                r_squared: r2,
            }
        })
        .collect();

    // KL decomposition: with theta ~ q_lambda fixed and z the synthetic
    // noise, E[log q - log p(theta) - log p_hat] - sigma^2/2 is constant.
    let family = family0.with_lambda_projected(kl_lambda)?;
    let mut kl_checks = Vec::with_capacity(kl_sigma2.len());
    for (i, &s2) in kl_sigma2.iter().enumerate() {
        let mut rng = seed_stream(config.seed, 0xC1, i as u64);
        let mut vals = Vec::with_capacity(kl_samples);
        for j in 0..kl_samples {
            let mut urow = vec![0.0; family.uniform_dim()];
            for u in urow.iter_mut() {
                *u = rng.random::<f64>().clamp(f64::EPSILON / 2.0, 1.0 - f64::EPSILON / 2.0);
            }
            let theta = family.sample_theta(&urow)?;
            let mut est_rng = seed_stream(config.seed, 0x5eed + i as u64, j as u64);
            let noisy = crate::models::SyntheticNoiseModel::new(model, s2);
            let est = noisy.estimate_log_lik(&theta, &mut est_rng)?;
            let lp = model.log_prior(&theta)?;
            vals.push(family.log_density(theta.as_slice())? - lp - est.log_value);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (vals.len() - 1) as f64)
            .sqrt();
        kl_checks.push(KlCheck {
            sigma2: s2,
            value: mean - s2 / 2.0,
            std_error: sd / (vals.len() as f64).sqrt(),
        });
    }

    Ok(Theorem1Report {
        sigma2_grid: sigma2_grid.to_vec(),
        replications,
        budget,
        coordinates,
        kl_checks,
    })
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_sizes() {
        let s = StepSchedule::default();
        assert_eq!(step_size(0, &s), 1.0);
        approx::assert_relative_eq!(step_size(9, &s), 0.1, epsilon = 1e-12);
        assert!(StepSchedule::new(1.0, 0.4).is_err());
        assert!(StepSchedule::new(1.0, 1.2).is_err());
    }

    #[test]
    fn harmonic_partial_sums() {
        // sum a_t grows like ln T, sum a_t^2 stays bounded
        let s = StepSchedule::default();
        let t_max = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for t in 0..t_max {
            let a = step_size(t, &s);
            sum += a;
            sum_sq += a * a;
        }
        // H_{1e6} ~ ln(1e6) + gamma ~ 14.39
        assert!(sum > 14.0 && sum < 14.8, "sum {sum}");
        assert!(sum_sq < std::f64::consts::PI * std::f64::consts::PI / 6.0 + 1e-9);
        assert!(sum_sq > 1.6);
    }

    #[test]
    fn stopping_on_constant_sequence_triggers_at_window_plus_one() {
        let m = 5;
        let eps = 1e-5;
        let mut seq = Vec::new();
        for t in 1..=20 {
            seq.push(2.0);
            if check_stopping(&seq, m, eps) {
                assert_eq!(t, m + 1);
                return;
            }
        }
        panic!("never stopped");
    }

    #[test]
    fn stopping_never_fires_on_steady_growth() {
        let m = 5;
        let eps = 1e-5;
        let mut seq = Vec::new();
        for t in 0..200 {
            seq.push(2.0 * eps * t as f64);
            assert!(!check_stopping(&seq, m, eps), "stopped at {t}");
        }
    }

    #[test]
    fn noisy_plateau_stops_quickly_with_high_probability() {
        // lb ramps until t = 50, then plateaus with noise of sd 10 eps;
        // the window rule should stop within [51, 120] almost always.
        let m = 5;
        let eps = 1e-5;
        let mut successes = 0;
        let n_seeds = 40;
        for seed in 0..n_seeds {
            let mut rng = crate::rng::seed_stream(seed, 0, 0);
            let mut seq = Vec::new();
            let mut stopped_at = None;
            for t in 1..=200 {
                let v = if t <= 50 {
                    t as f64 * 0.01
                } else {
                    0.5 + 10.0 * eps * (rng.random::<f64>() - 0.5) * 2.0
                };
                seq.push(v);
                if check_stopping(&seq, m, eps) {
                    stopped_at = Some(t);
                    break;
                }
            }
            if let Some(t) = stopped_at {
                if (51..=120).contains(&t) {
                    successes += 1;
                }
            }
        }
        assert!(
            successes as f64 >= 0.95 * n_seeds as f64,
            "{successes}/{n_seeds} runs stopped in the expected window"
        );
    }
}
