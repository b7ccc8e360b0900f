//! Synthetic noisy likelihood for calibration studies: adds
//! `z ~ N(-sigma^2/2, sigma^2)` to an exact log likelihood, so
//! `E[exp(z)] = 1` holds exactly and the log-estimate variance is `sigma^2`
//! by construction.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VbilError};
use crate::likelihood::{LogLikEstimate, ParticlesUsed};

pub fn synthetic_gaussian_noise_estimate<R: Rng>(
    exact_loglik: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<LogLikEstimate> {
    if sigma2 < 0.0 {
        return Err(VbilError::Config(format!(
            "noise variance must be nonnegative, got {sigma2}"
        )));
    }
    let z = if sigma2 == 0.0 {
        0.0
    } else {
        -0.5 * sigma2 + sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal)
    };
    Ok(LogLikEstimate {
        log_value: exact_loglik + z,
        particles_used: ParticlesUsed::Total(1),
        var_log_estimate: Some(sigma2),
        floored: false,
    })
}
