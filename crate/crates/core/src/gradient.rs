//! Noisy KL-gradient estimators.
//!
//! The gradient of the KL divergence between `q_lambda(theta) g_N(z|theta)`
//! and the augmented posterior is
//!
//! ```text
//! E[ grad_lambda log q_lambda(theta) * (log q_lambda(theta) - h_hat(theta, z)) ],
//! h_hat(theta, z) = log( p(theta) p_hat_N(y | theta, z) ),
//! ```
//!
//! estimated by averaging over `S` draws. Because the score has zero mean, a
//! per-coordinate constant `c_i` can be subtracted from the bracket without
//! changing the expectation; choosing `c_i` as the regression coefficient of
//! the integrand on the score minimizes the variance. The same identity
//! makes the blockwise (Rao-Blackwellized) version work: coordinate `i` of
//! factor `k` only needs the terms of `h_hat` that involve block `k`.
//!
//! All estimators reduce over the ordered sample list, so results do not
//! depend on how many worker threads produced the samples.

use nalgebra::DVector;

use crate::error::{Result, VbilError};
use crate::expfam::ProductFamily;

/// Everything the gradient assembly needs from one draw
/// `theta_s ~ q_lambda`, `z_s ~ g_N`.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub theta: DVector<f64>,
    /// Joint log density `log q_lambda(theta_s)`.
    pub log_q_total: f64,
    /// Per-factor log densities on the matching blocks.
    pub log_q_blocks: Vec<f64>,
    /// Full score `grad_lambda log q_lambda(theta_s)`.
    pub score: DVector<f64>,
    /// Per-factor prior log densities (the priors factorize over blocks).
    pub log_prior_blocks: Vec<f64>,
    /// `log p_hat_N(y | theta_s, z_s)`.
    pub log_lik: f64,
}

impl GradientSample {
    pub fn log_prior_total(&self) -> f64 {
        self.log_prior_blocks.iter().sum()
    }

    /// `h_hat(theta_s, z_s)`.
    pub fn h_hat(&self) -> f64 {
        self.log_prior_total() + self.log_lik
    }
}

/// A noisy KL gradient with its diagnostics.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub grad: DVector<f64>,
    /// The control-variate constants that were subtracted (zeros for the
    /// naive estimator).
    pub cv_constants_used: DVector<f64>,
    /// `h_hat` per sample, kept for lower-bound estimation and diagnostics.
    pub per_sample_h: Vec<f64>,
    pub samples: usize,
}

/// Control-variate constants carried between iterations. The constants used
/// at iteration `t` are estimated from iteration `t-1`'s samples, which keeps
/// the gradient unbiased without extra draws.
#[derive(Debug, Clone)]
pub struct CvState {
    pub c: DVector<f64>,
    pub initialized: bool,
}

impl CvState {
    pub fn zeros(dim: usize) -> Self {
        Self { c: DVector::zeros(dim), initialized: false }
    }
}

fn check_samples(family: &ProductFamily, samples: &[GradientSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(VbilError::Contract("gradient estimation needs S >= 1".to_string()));
    }
    for s in samples {
        if s.score.len() != family.dim_lambda()
            || s.log_q_blocks.len() != family.n_factors()
            || s.log_prior_blocks.len() != family.n_factors()
        {
            return Err(VbilError::Contract(
                "sample record does not match the family layout".to_string(),
            ));
        }
    }
    Ok(())
}

/// The integrand multiplying the score for coordinate `i` (factor `k`):
/// full `log q - h_hat` or its block version.
#[inline]
fn bracket(sample: &GradientSample, k: usize, factorized: bool) -> f64 {
    if factorized {
        sample.log_q_blocks[k] - (sample.log_prior_blocks[k] + sample.log_lik)
    } else {
        sample.log_q_total - sample.h_hat()
    }
}

fn assemble(
    family: &ProductFamily,
    samples: &[GradientSample],
    c: &DVector<f64>,
    factorized: bool,
) -> GradientEstimate {
    let dim = family.dim_lambda();
    let s_count = samples.len() as f64;
    let mut grad = DVector::zeros(dim);
    for k in 0..family.n_factors() {
        let range = family.lambda_range(k);
        for sample in samples {
            let b = bracket(sample, k, factorized);
            for i in range.clone() {
                grad[i] += sample.score[i] * (b - c[i]);
            }
        }
    }
    grad /= s_count;
    GradientEstimate {
        grad,
        cv_constants_used: c.clone(),
        per_sample_h: samples.iter().map(GradientSample::h_hat).collect(),
        samples: samples.len(),
    }
}

/// Plain score-function estimator (no control variates).
pub fn naive_gradient(
    family: &ProductFamily,
    samples: &[GradientSample],
) -> Result<GradientEstimate> {
    check_samples(family, samples)?;
    Ok(assemble(family, samples, &DVector::zeros(family.dim_lambda()), false))
}

/// Control-variated estimator; with `cv` all zeros this is exactly
/// [`naive_gradient`]. The constants must have been estimated from samples
/// independent of `samples` for unbiasedness.
pub fn cv_gradient(
    family: &ProductFamily,
    samples: &[GradientSample],
    cv: &CvState,
) -> Result<GradientEstimate> {
    check_samples(family, samples)?;
    if cv.c.len() != family.dim_lambda() {
        return Err(VbilError::Contract(
            "control-variate constants do not match the parameter count".to_string(),
        ));
    }
    Ok(assemble(family, samples, &cv.c, false))
}

/// Factorized (Rao-Blackwellized) estimator: every factor's block uses its
/// own log density and only the `h_hat` terms touching that block.
pub fn factorized_gradient(
    family: &ProductFamily,
    samples: &[GradientSample],
    cv: &CvState,
) -> Result<GradientEstimate> {
    check_samples(family, samples)?;
    if cv.c.len() != family.dim_lambda() {
        return Err(VbilError::Contract(
            "control-variate constants do not match the parameter count".to_string(),
        ));
    }
    Ok(assemble(family, samples, &cv.c, true))
}

/// The gradient block of a single factor `k` (a view into what
/// [`factorized_gradient`] computes for that factor).
pub fn factor_gradient(
    family: &ProductFamily,
    samples: &[GradientSample],
    k: usize,
    cv: &CvState,
) -> Result<DVector<f64>> {
    if k >= family.n_factors() {
        return Err(VbilError::Contract(format!("factor index {k} out of range")));
    }
    let full = factorized_gradient(family, samples, cv)?;
    let range = family.lambda_range(k);
    Ok(DVector::from_column_slice(&full.grad.as_slice()[range]))
}

/// Updates the control-variate constants from the current iteration's
/// samples: `c_i = cov(score_i * bracket_i, score_i) / var(score_i)`.
/// Coordinates whose score variance vanishes keep their previous constant.
pub fn update_cv_constants(
    family: &ProductFamily,
    samples: &[GradientSample],
    previous: &CvState,
    factorized: bool,
) -> Result<CvState> {
    check_samples(family, samples)?;
    if samples.len() < 2 {
        return Err(VbilError::Contract(
            "control-variate update needs S >= 2".to_string(),
        ));
    }
    let n = samples.len() as f64;
    let mut c = previous.c.clone();
    for k in 0..family.n_factors() {
        for i in family.lambda_range(k) {
            let mut mean_f = 0.0;
            let mut mean_g = 0.0;
            for s in samples {
                mean_f += s.score[i] * bracket(s, k, factorized);
                mean_g += s.score[i];
            }
            mean_f /= n;
            mean_g /= n;
            let mut cov = 0.0;
            let mut var = 0.0;
            for s in samples {
                let f = s.score[i] * bracket(s, k, factorized) - mean_f;
                let g = s.score[i] - mean_g;
                cov += f * g;
                var += g * g;
            }
            if var > 0.0 {
                c[i] = cov / var;
            }
        }
    }
    Ok(CvState { c, initialized: true })
}

/// Natural-gradient transform: blockwise `I_{F,k}(lambda_k)^{-1} grad_k`.
/// Fails with a conditioning error when a factor's Fisher matrix is
/// ill-conditioned at the current parameters.
pub fn natural_transform(
    family: &ProductFamily,
    grad: &GradientEstimate,
) -> Result<GradientEstimate> {
    let transformed = family.natural_solve(&grad.grad)?;
    Ok(GradientEstimate {
        grad: transformed,
        cv_constants_used: grad.cv_constants_used.clone(),
        per_sample_h: grad.per_sample_h.clone(),
        samples: grad.samples,
    })
}
