//! Pseudo-marginal Metropolis-Hastings with Haario-style adaptive
//! random-walk proposals.
//!
//! The chain runs on an unconstrained reparameterization of `theta` (each
//! coordinate mapped by the model's [`CoordTransform`]); the target is the
//! prior times the current unbiased likelihood estimate times the transform
//! Jacobian. The stored log likelihood is carried between moves and never
//! recomputed at the current point, which is what makes the marginal of the
//! chain exact.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VbilError};
use crate::models::VbilModel;
use crate::rng::seed_stream;

/// Sampler settings. Adaptation rescales the proposal to
/// `(2.38^2 / d) (Cov_hist + 1e-6 I)` once `adapt_start` iterations have
/// accumulated.
#[derive(Debug, Clone)]
pub struct PmmhConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Standard deviation of the pre-adaptation spherical proposal.
    pub initial_step: f64,
    pub adapt: bool,
    pub adapt_start: usize,
}

impl Default for PmmhConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 5_000,
            seed: 0,
            initial_step: 0.1,
            adapt: true,
            adapt_start: 200,
        }
    }
}

/// A finished chain: post-burn-in draws on the model's `theta` scale.
#[derive(Debug, Clone)]
pub struct PmmhChain {
    /// `iterations x dim` draws (burn-in removed).
    pub draws: Vec<DVector<f64>>,
    /// `log p_hat` carried by the chain at each kept iteration.
    pub stored_log_lik: Vec<f64>,
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
    /// Proposal covariance at the end of the run (unconstrained scale).
    pub proposal_cov: DMatrix<f64>,
}

impl PmmhChain {
    pub fn dim(&self) -> usize {
        self.draws.first().map_or(0, DVector::len)
    }
}

/// Running mean/covariance accumulator for the adaptation.
struct RunningCov {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl RunningCov {
    fn new(d: usize) -> Self {
        Self { n: 0.0, mean: DVector::zeros(d), m2: DMatrix::zeros(d, d) }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.n += 1.0;
        let delta = x - &self.mean;
        self.mean += &delta / self.n;
        let delta2 = x - &self.mean;
        self.m2 += delta * delta2.transpose();
    }

    fn cov(&self) -> DMatrix<f64> {
        if self.n > 1.0 {
            &self.m2 / (self.n - 1.0)
        } else {
            DMatrix::zeros(self.mean.len(), self.mean.len())
        }
    }
}

/// Runs one pseudo-marginal chain started at `theta_init`, using the model's
/// estimator with whatever particle configuration the model carries
/// (a fixed-N setting for pseudo-marginal runs).
pub fn run_pmmh<M: VbilModel>(
    model: &M,
    theta_init: &DVector<f64>,
    config: &PmmhConfig,
) -> Result<PmmhChain> {
    let transforms = model.pmmh_transforms();
    let d = model.dim_theta();
    if transforms.len() != d || theta_init.len() != d {
        return Err(VbilError::Contract(
            "transform or initial-state length does not match the model dimension".to_string(),
        ));
    }
    if config.iterations <= config.burn_in {
        return Err(VbilError::Config("iterations must exceed burn-in".to_string()));
    }

    let to_eta = |theta: &DVector<f64>| {
        DVector::from_iterator(d, (0..d).map(|i| transforms[i].to_unconstrained(theta[i])))
    };
    let from_eta = |eta: &DVector<f64>| {
        DVector::from_iterator(d, (0..d).map(|i| transforms[i].from_unconstrained(eta[i])))
    };
    let log_jacobian = |eta: &DVector<f64>| -> f64 {
        (0..d).map(|i| transforms[i].log_jacobian(eta[i])).sum()
    };

    let mut rng = seed_stream(config.seed, 0x9c9c, 0);
    let mut est_rng = seed_stream(config.seed, 0x9c9d, 0);

    let mut eta = to_eta(theta_init);
    let mut theta = from_eta(&eta);
    let mut log_post = model.log_prior(&theta)? + log_jacobian(&eta);
    let mut log_lik = model.estimate_log_lik(&theta, &mut est_rng)?.log_value;

    let mut history = RunningCov::new(d);
    history.push(&eta);
    let scale = 2.38 * 2.38 / d as f64;
    let mut proposal_chol: DMatrix<f64> = DMatrix::identity(d, d) * config.initial_step;
    let mut proposal_cov = &proposal_chol * proposal_chol.transpose();

    let kept = config.iterations - config.burn_in;
    let mut draws = Vec::with_capacity(kept);
    let mut stored = Vec::with_capacity(kept);
    let mut accepted_flags = Vec::with_capacity(kept);
    let mut accepted_total = 0usize;
    let mut rejects_in_a_row = 0usize;

    for it in 0..config.iterations {
        if config.adapt && it >= config.adapt_start {
            let cov = history.cov() * scale + DMatrix::identity(d, d) * 1e-6;
            if let Some(ch) = nalgebra::Cholesky::new(cov.clone()) {
                proposal_chol = ch.l();
                proposal_cov = cov;
            }
        }
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let eta_prop = &eta + &proposal_chol * z;
        let theta_prop = from_eta(&eta_prop);

        let mut accept = false;
        if let Ok(lp) = model.log_prior(&theta_prop) {
            let log_post_prop = lp + log_jacobian(&eta_prop);
            if log_post_prop.is_finite() {
                let log_lik_prop = model.estimate_log_lik(&theta_prop, &mut est_rng)?.log_value;
                let log_ratio = log_post_prop + log_lik_prop - log_post - log_lik;
                if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
                    eta = eta_prop;
                    theta = theta_prop;
                    log_post = log_post_prop;
                    log_lik = log_lik_prop;
                    accept = true;
                }
            }
        }
        if accept {
            accepted_total += 1;
            rejects_in_a_row = 0;
        } else {
            rejects_in_a_row += 1;
            if rejects_in_a_row >= 1000 {
                return Err(VbilError::Numerical(format!(
                    "chain rejected 1000 consecutive proposals (iteration {it})"
                )));
            }
        }
        history.push(&eta);
        if it >= config.burn_in {
            draws.push(theta.clone());
            stored.push(log_lik);
            accepted_flags.push(accept);
        }
    }

    Ok(PmmhChain {
        draws,
        stored_log_lik: stored,
        accepted: accepted_flags,
        acceptance_rate: accepted_total as f64 / config.iterations as f64,
        proposal_cov,
    })
}

/// Per-parameter summary of a chain on the reported scale.
#[derive(Debug, Clone)]
pub struct ChainSummary {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// 512-point kernel-density grids per parameter: `(grid, density)`.
    pub densities: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Gaussian-kernel density of `xs` on a `points`-point grid with Silverman's
/// bandwidth. A constant chain yields a single spike at the value.
pub fn kernel_density(xs: &[f64], points: usize) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1).max(1) as f64)
        .sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = crate::likelihood::quantile_type7(&sorted, 0.75)
        - crate::likelihood::quantile_type7(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bw = 0.9 * spread * (n as f64).powf(-0.2);

    if bw <= 0.0 {
        // degenerate chain: a spike of unit mass at the single value
        let grid: Vec<f64> = (0..points)
            .map(|i| mean - 1.0 + 2.0 * i as f64 / (points - 1) as f64)
            .collect();
        let step = grid[1] - grid[0];
        let mut density = vec![0.0; points];
        density[points / 2] = 1.0 / step;
        return (grid, density);
    }

    let lo = sorted[0] - 3.0 * bw;
    let hi = sorted[n - 1] + 3.0 * bw;
    let step = (hi - lo) / (points - 1) as f64;
    let norm = 1.0 / (n as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..points).map(|i| lo + i as f64 * step).collect();
    let density: Vec<f64> = grid
        .iter()
        .map(|&g| {
            norm * xs
                .iter()
                .map(|&x| {
                    let z = (g - x) / bw;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    (grid, density)
}

/// Means, standard deviations and 512-point density grids of the chain on
/// the reported parameterization.
pub fn chain_summary<M: VbilModel>(model: &M, chain: &PmmhChain) -> Result<ChainSummary> {
    if chain.draws.len() < 100 {
        return Err(VbilError::Contract(
            "summaries need at least 100 post-burn-in draws".to_string(),
        ));
    }
    let report = model.report();
    let mut names = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut densities = Vec::new();
    for coord in &report.coords {
        let xs: Vec<f64> = chain
            .draws
            .iter()
            .map(|d| coord.transform.value(d[coord.source_coord]))
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        names.push(coord.name.clone());
        means.push(mean);
        sds.push(sd);
        densities.push(kernel_density(&xs, 512));
    }
    Ok(ChainSummary { names, means, sds, densities })
}

/// Effective-sample-size-aware standard error of the chain mean via batch
/// means (32 batches).
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let b = 32usize.min(xs.len() / 4).max(2);
    let len = xs.len() / b;
    let means: Vec<f64> = (0..b)
        .map(|i| xs[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (b as f64 - 1.0);
    (var / b as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kde_integrates_to_one_and_hits_the_normal_peak() {
        let mut rng = seed_stream(1, 0, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (grid, density) = kernel_density(&xs, 512);
        let mut mass = 0.0;
        for i in 1..grid.len() {
            mass += 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
        }
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
        // density at 0
        let at0 = grid
            .iter()
            .zip(&density)
            .min_by(|a, b| a.0.abs().partial_cmp(&b.0.abs()).unwrap())
            .map(|(_, d)| *d)
            .unwrap();
        assert_relative_eq!(at0, 0.398_942, max_relative = 0.02);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((sd - 1.0).abs() < 4.0 * (0.5 / n).sqrt());
    }

    #[test]
    fn constant_chain_is_a_documented_spike() {
        let xs = vec![2.5; 500];
        let (grid, density) = kernel_density(&xs, 512);
        let mass: f64 = (1..grid.len())
            .map(|i| 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]))
            .sum();
        assert!((mass - 1.0).abs() < 1e-9);
        assert_eq!(density.iter().filter(|&&d| d > 0.0).count(), 1);
    }
}
