//! Importance-sampling estimate of an unnormalized marginal posterior,
//! used to refine one block of a factorized fit.
//!
//! For a target block value `theta_j`, the estimator draws the nuisance
//! block from a proposal `q(theta_nuis)` (typically a tail-flattened pilot
//! fit) and averages `exp(log_joint(theta) - log q(theta_nuis))`. When the
//! joint is `p(theta) p(y|theta)` and the prior factorizes over blocks, the
//! expectation is `p(theta_j) * int p(theta_nuis | theta_j) p(y|theta)
//! d theta_nuis`, i.e. the prior times the integrated likelihood of the
//! target block; the normalizing constant is irrelevant to the optimizer.

use rand::Rng;

use crate::error::{Result, VbilError};
use crate::expfam::VariationalFactor;
use crate::likelihood::{log_sum_exp, LogLikEstimate, ParticlesUsed, LOG_LIK_FLOOR};

/// One importance-sampling evaluation with `n` nuisance draws.
///
/// `log_joint_given_nuisance` receives a nuisance vector (concatenated
/// proposal blocks in order) and must return the log of the full joint with
/// the target block already fixed. An empty proposal makes the evaluation
/// exact: the joint itself is returned.
pub fn marginal_refine_estimate<R: Rng, F>(
    log_joint_given_nuisance: F,
    proposal: &[VariationalFactor],
    n: usize,
    rng: &mut R,
) -> Result<LogLikEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    if proposal.is_empty() {
        return Ok(LogLikEstimate {
            log_value: log_joint_given_nuisance(&[]),
            particles_used: ParticlesUsed::Total(0),
            var_log_estimate: Some(0.0),
            floored: false,
        });
    }
    if n == 0 {
        return Err(VbilError::Contract("importance estimate needs N >= 1".to_string()));
    }
    let dim: usize = proposal.iter().map(|f| f.dim_theta()).sum();
    let mut log_ratios = Vec::with_capacity(n);
    let mut nuis = vec![0.0f64; dim];
    for _ in 0..n {
        let mut log_q = 0.0;
        let mut at = 0usize;
        for f in proposal {
            let m = f.uniform_dim();
            let us: Vec<f64> = (0..m)
                .map(|_| rng.random::<f64>().clamp(f64::EPSILON / 2.0, 1.0 - f64::EPSILON / 2.0))
                .collect();
            let block = f.sample(&us)?;
            let lq = f.log_density(&block).map_err(|_| {
                VbilError::Contract(
                    "proposal density vanished at its own draw".to_string(),
                )
            })?;
            if !lq.is_finite() {
                return Err(VbilError::Contract(
                    "proposal density vanished at its own draw".to_string(),
                ));
            }
            log_q += lq;
            nuis[at..at + block.len()].copy_from_slice(&block);
            at += block.len();
        }
        log_ratios.push(log_joint_given_nuisance(&nuis) - log_q);
    }
    let lse = log_sum_exp(&log_ratios);
    if lse.is_finite() {
        Ok(LogLikEstimate {
            log_value: lse - (n as f64).ln(),
            particles_used: ParticlesUsed::Total(n),
            var_log_estimate: None,
            floored: false,
        })
    } else {
        Ok(LogLikEstimate {
            log_value: LOG_LIK_FLOOR,
            particles_used: ParticlesUsed::Total(n),
            var_log_estimate: None,
            floored: true,
        })
    }
}
