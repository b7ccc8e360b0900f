//! Variational Bayes for intractable likelihoods.
//!
//! This crate fits a posterior approximation `q_lambda(theta)` by stochastic
//! minimization of the KL divergence on an augmented space in which the exact
//! likelihood is replaced by any unbiased estimator of it. The noisy KL
//! gradient only requires evaluations of `log p_hat(y|theta)`, so the same
//! optimizer drives importance-sampling panel likelihoods, bootstrap particle
//! filters and ABC kernel estimators.
//!
//! Module map:
//!
//! - [`expfam`]: exponential-family variational factors (Beta, multivariate
//!   normal, inverse-Gamma) with natural parameters, scores and Fisher
//!   information matrices.
//! - [`rqmc`]: randomized quasi-Monte Carlo point sets (Sobol with a digital
//!   shift) used to draw `theta ~ q_lambda`.
//! - [`likelihood`]: the unbiased estimator toolbox and its variance
//!   diagnostics.
//! - [`gradient`]: score-function KL gradient estimators with control
//!   variates, factorized (Rao-Blackwellized) blocks and the natural-gradient
//!   transform.
//! - [`optimizer`]: the Robbins-Monro fitting loop, lower-bound estimation and
//!   the windowed stopping rule.
//! - [`models`]: concrete model definitions (Bernoulli-Beta, logistic
//!   random-intercept panels, stochastic volatility, alpha-stable ABC, normal
//!   mixture marginal refinement).
//! - [`pmmh`]: an adaptive random-walk pseudo-marginal Metropolis-Hastings
//!   baseline used as the accuracy oracle.
//! - [`io`]: CSV/JSON readers and writers for data sets, traces, fits and
//!   comparison tables.

pub mod error;
pub mod expfam;
pub mod gradient;
pub mod io;
pub mod likelihood;
pub mod linalg;
pub mod models;
pub mod optimizer;
pub mod pmmh;
pub mod rng;
pub mod rqmc;
pub mod special;

pub use error::{Result, VbilError};
pub use expfam::{ProductFamily, VariationalFactor};
pub use gradient::{CvState, GradientEstimate, GradientSample};
pub use likelihood::LogLikEstimate;
pub use optimizer::{FitTrace, StepSchedule, StopReason, VbilConfig};
pub use rqmc::{PointGenerator, RqmcPointSet};
