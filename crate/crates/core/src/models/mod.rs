//! Concrete model definitions: priors, variational family layouts,
//! simulators and estimator wiring for each application family.

mod abc_stable;
mod bernoulli_beta;
mod glmm;
mod mixture;
mod sv;

pub use abc_stable::{tilde_forward, tilde_inverse, AbcStableModel};
pub use bernoulli_beta::BernoulliBetaModel;
pub use glmm::{glmm_simulate_large, glmm_simulate_sixcity, GlmmModel, GlmmParticlePolicy};
pub use mixture::{mixture_log_lik, mixture_simulate, MixtureModel, MixtureOmegaRefineModel};
pub use sv::{demeaned_log_returns, sv_simulate, SvModel};

use nalgebra::DVector;
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::expfam::ProductFamily;
use crate::likelihood::LogLikEstimate;

/// Everything the optimizer and the MCMC baseline need from a model.
///
/// The prior must factorize over the variational family's blocks (all the
/// models here do), so the blockwise gradient can drop prior terms that do
/// not involve a factor's coordinates.
pub trait VbilModel: Sync {
    fn name(&self) -> &str;

    fn dim_theta(&self) -> usize;

    /// The variational family at its configured starting point.
    fn initial_family(&self) -> Result<ProductFamily>;

    /// Per-factor prior log densities, aligned with the family's blocks.
    fn log_prior_blocks(&self, theta: &DVector<f64>) -> Result<Vec<f64>>;

    fn log_prior(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(self.log_prior_blocks(theta)?.iter().sum())
    }

    /// One unbiased estimate of `log p(y|theta)`.
    fn estimate_log_lik(&self, theta: &DVector<f64>, rng: &mut ChaCha12Rng)
        -> Result<LogLikEstimate>;

    /// Dataset size used to scale lower bounds.
    fn scale_n(&self) -> f64;

    /// Exact log likelihood when the model has one (oracles, noise studies).
    fn exact_log_lik(&self, _theta: &DVector<f64>) -> Option<f64> {
        None
    }

    /// Names and transforms of the reported parameterization.
    fn report(&self) -> ReportSpec;

    /// Per-coordinate maps to an unconstrained space for random-walk MCMC.
    fn pmmh_transforms(&self) -> Vec<CoordTransform>;
}

/// Reported parameter: a monotone map of one `theta` coordinate.
#[derive(Debug, Clone)]
pub struct ReportCoord {
    pub name: String,
    pub source_coord: usize,
    pub transform: ReportTransform,
}

/// The reported parameterization of a model.
#[derive(Debug, Clone)]
pub struct ReportSpec {
    pub coords: Vec<ReportCoord>,
}

impl ReportSpec {
    pub fn identity(names: &[&str]) -> Self {
        Self {
            coords: names
                .iter()
                .enumerate()
                .map(|(i, n)| ReportCoord {
                    name: (*n).to_string(),
                    source_coord: i,
                    transform: ReportTransform::Identity,
                })
                .collect(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.coords.iter().map(|c| c.name.clone()).collect()
    }

    /// Maps a model-space `theta` vector to the reported parameterization.
    pub fn apply(&self, theta: &DVector<f64>) -> Vec<f64> {
        self.coords
            .iter()
            .map(|c| c.transform.value(theta[c.source_coord]))
            .collect()
    }
}

/// Monotone scalar maps used for reporting fitted marginals on the scale the
/// tables use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReportTransform {
    Identity,
    /// `r = scale * x + shift`.
    Affine { scale: f64, shift: f64 },
    /// `r = exp(x)`.
    Exp,
    /// `r = 1.1 + 0.9 * sigmoid(x)`, the stability-index map.
    InvTildeAlpha,
    /// `r = 2 * sigmoid(x) - 1`, the skewness map.
    InvTildeBeta,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ReportTransform {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Affine { scale, shift } => scale * x + shift,
            Self::Exp => x.exp(),
            Self::InvTildeAlpha => 1.1 + 0.9 * sigmoid(x),
            Self::InvTildeBeta => 2.0 * sigmoid(x) - 1.0,
        }
    }

    pub fn inverse(&self, r: f64) -> f64 {
        match self {
            Self::Identity => r,
            Self::Affine { scale, shift } => (r - shift) / scale,
            Self::Exp => r.ln(),
            Self::InvTildeAlpha => ((r - 1.1) / (2.0 - r)).ln(),
            Self::InvTildeBeta => ((1.0 + r) / (1.0 - r)).ln(),
        }
    }

    /// `dr/dx`, used when pushing marginal densities through the map.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Affine { scale, .. } => *scale,
            Self::Exp => x.exp(),
            Self::InvTildeAlpha => {
                let s = sigmoid(x);
                0.9 * s * (1.0 - s)
            }
            Self::InvTildeBeta => {
                let s = sigmoid(x);
                2.0 * s * (1.0 - s)
            }
        }
    }
}

/// Per-coordinate unconstrained reparameterization for the random-walk
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordTransform {
    Identity,
    /// `theta = exp(eta)` for positive parameters.
    Log,
    /// `theta = sigmoid(eta)` for (0,1) parameters.
    Logit,
}

impl CoordTransform {
    pub fn to_unconstrained(&self, theta: f64) -> f64 {
        match self {
            Self::Identity => theta,
            Self::Log => theta.ln(),
            Self::Logit => (theta / (1.0 - theta)).ln(),
        }
    }

    pub fn from_unconstrained(&self, eta: f64) -> f64 {
        match self {
            Self::Identity => eta,
            Self::Log => eta.exp(),
            Self::Logit => sigmoid(eta),
        }
    }

    /// `log |d theta / d eta|`.
    pub fn log_jacobian(&self, eta: f64) -> f64 {
        match self {
            Self::Identity => 0.0,
            Self::Log => eta,
            Self::Logit => {
                let s = sigmoid(eta);
                s.ln() + (1.0 - s).ln()
            }
        }
    }
}

/// Wraps an exact-likelihood model with synthetic Gaussian estimation noise
/// of variance `sigma2` (the calibration device of the variance studies).
pub struct SyntheticNoiseModel<'a, M: VbilModel> {
    pub inner: &'a M,
    pub sigma2: f64,
}

impl<'a, M: VbilModel> SyntheticNoiseModel<'a, M> {
    pub fn new(inner: &'a M, sigma2: f64) -> Self {
        Self { inner, sigma2 }
    }
}

impl<M: VbilModel> VbilModel for SyntheticNoiseModel<'_, M> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn dim_theta(&self) -> usize {
        self.inner.dim_theta()
    }
    fn initial_family(&self) -> Result<ProductFamily> {
        self.inner.initial_family()
    }
    fn log_prior_blocks(&self, theta: &DVector<f64>) -> Result<Vec<f64>> {
        self.inner.log_prior_blocks(theta)
    }
    fn estimate_log_lik(
        &self,
        theta: &DVector<f64>,
        rng: &mut ChaCha12Rng,
    ) -> Result<LogLikEstimate> {
        let exact = self.inner.exact_log_lik(theta).ok_or_else(|| {
            crate::error::VbilError::Contract(
                "synthetic noise requires a model with an exact likelihood".to_string(),
            )
        })?;
        crate::likelihood::synthetic_gaussian_noise_estimate(exact, self.sigma2, rng)
    }
    fn scale_n(&self) -> f64 {
        self.inner.scale_n()
    }
    fn exact_log_lik(&self, theta: &DVector<f64>) -> Option<f64> {
        self.inner.exact_log_lik(theta)
    }
    fn report(&self) -> ReportSpec {
        self.inner.report()
    }
    fn pmmh_transforms(&self) -> Vec<CoordTransform> {
        self.inner.pmmh_transforms()
    }
}
