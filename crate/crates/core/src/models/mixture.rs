//! Two-component normal mixture and the marginal-refinement workflow for
//! its weight parameter.
//!
//! `p(x) = omega N(x|mu1, sigma1^2) + (1-omega) N(x|mu2, sigma2^2)` with
//! diffuse priors: `omega ~ U(0,1)`, `mu_j ~ N(0, 100)` and reciprocal
//! priors on the variances truncated to `[1e-6, 1e6]` for propriety.
//!
//! The pilot fit is a factorized run with blocks
//! `omega | (mu1, mu2) | sigma1^2 | sigma2^2` and the exact likelihood. The
//! refinement then targets `p(omega | y)` directly: a Beta family on `omega`
//! whose "likelihood" is an importance-sampling estimate of the joint with
//! the nuisance block integrated out, using the (tail-flattened) pilot
//! factors as the proposal.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VbilError};
use crate::expfam::{ProductFamily, VariationalFactor};
use crate::likelihood::{marginal_refine_estimate, LogLikEstimate};
use crate::models::{CoordTransform, ReportSpec, VbilModel};

const VAR_TRUNC_LO: f64 = 1e-6;
const VAR_TRUNC_HI: f64 = 1e6;

/// `log p(y | omega, mu1, mu2, s1, s2)` for the two-component mixture.
pub fn mixture_log_lik(y: &[f64], theta: &DVector<f64>) -> f64 {
    let (w, mu1, mu2, s1, s2) = (theta[0], theta[1], theta[2], theta[3], theta[4]);
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let (lw1, lw2) = (w.ln(), (1.0 - w).ln());
    let (l1, l2) = (s1.ln(), s2.ln());
    let mut ll = 0.0;
    for &x in y {
        let d1 = x - mu1;
        let d2 = x - mu2;
        let la = lw1 - half_log_2pi - 0.5 * l1 - 0.5 * d1 * d1 / s1;
        let lb = lw2 - half_log_2pi - 0.5 * l2 - 0.5 * d2 * d2 / s2;
        let m = la.max(lb);
        ll += m + ((la - m).exp() + (lb - m).exp()).ln();
    }
    ll
}

/// Log density of the truncated reciprocal prior on a variance.
fn log_reciprocal_prior(s: f64) -> f64 {
    if !(VAR_TRUNC_LO..=VAR_TRUNC_HI).contains(&s) {
        // outside the truncation: treat as the likelihood floor rather than
        // -inf so a stray draw cannot poison a gradient average
        return crate::likelihood::LOG_LIK_FLOOR;
    }
    -s.ln() - (VAR_TRUNC_HI.ln() - VAR_TRUNC_LO.ln()).ln()
}

/// Exact-likelihood mixture model over `theta = (omega, mu1, mu2, sigma1^2,
/// sigma2^2)` with the factorization `omega | (mu1, mu2) | sigma1^2 |
/// sigma2^2`.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    y: Vec<f64>,
    /// Reject states with `mu1 >= mu2` (used by the MCMC oracle to pin the
    /// component labels; the variational fits do not need it).
    ordered_means: bool,
    init_omega: [f64; 2],
    init_mu: [f64; 2],
    init_mu_var: f64,
    init_s1: [f64; 2],
    init_s2: [f64; 2],
}

impl MixtureModel {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.len() < 5 {
            return Err(VbilError::Contract("mixture data too small".to_string()));
        }
        Ok(Self {
            y,
            ordered_means: false,
            init_omega: [2.0, 2.0],
            init_mu: [-2.0, 2.0],
            init_mu_var: 1.0,
            init_s1: [4.0, 6.0],
            init_s2: [4.0, 9.0],
        })
    }

    pub fn with_ordered_means(mut self) -> Self {
        self.ordered_means = true;
        self
    }

    pub fn with_init(
        mut self,
        omega: [f64; 2],
        mu: [f64; 2],
        mu_var: f64,
        s1: [f64; 2],
        s2: [f64; 2],
    ) -> Self {
        self.init_omega = omega;
        self.init_mu = mu;
        self.init_mu_var = mu_var;
        self.init_s1 = s1;
        self.init_s2 = s2;
        self
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

impl VbilModel for MixtureModel {
    fn name(&self) -> &str {
        "normal_mixture"
    }

    fn dim_theta(&self) -> usize {
        5
    }

    fn initial_family(&self) -> Result<ProductFamily> {
        ProductFamily::new(vec![
            VariationalFactor::beta(self.init_omega[0], self.init_omega[1])?,
            VariationalFactor::mvn(
                DVector::from_column_slice(&self.init_mu),
                DMatrix::identity(2, 2) * self.init_mu_var,
            )?,
            VariationalFactor::inverse_gamma(self.init_s1[0], self.init_s1[1])?,
            VariationalFactor::inverse_gamma(self.init_s2[0], self.init_s2[1])?,
        ])
    }

    fn log_prior_blocks(&self, theta: &DVector<f64>) -> Result<Vec<f64>> {
        let w = theta[0];
        if !(w > 0.0 && w < 1.0) {
            return Err(VbilError::Domain(format!("omega = {w} outside (0,1)")));
        }
        let (mu1, mu2) = (theta[1], theta[2]);
        let mut lp_mu = -((2.0 * std::f64::consts::PI * 100.0).ln())
            - 0.5 * (mu1 * mu1 + mu2 * mu2) / 100.0;
        if self.ordered_means && mu1 >= mu2 {
            lp_mu = f64::NEG_INFINITY;
        }
        Ok(vec![
            0.0, // uniform weight prior
            lp_mu,
            log_reciprocal_prior(theta[3]),
            log_reciprocal_prior(theta[4]),
        ])
    }

    fn estimate_log_lik(
        &self,
        theta: &DVector<f64>,
        _rng: &mut ChaCha12Rng,
    ) -> Result<LogLikEstimate> {
        Ok(LogLikEstimate::exact(mixture_log_lik(&self.y, theta)))
    }

    fn scale_n(&self) -> f64 {
        self.y.len() as f64
    }

    fn exact_log_lik(&self, theta: &DVector<f64>) -> Option<f64> {
        Some(mixture_log_lik(&self.y, theta))
    }

    fn report(&self) -> ReportSpec {
        ReportSpec::identity(&["omega", "mu1", "mu2", "sigma1_sq", "sigma2_sq"])
    }

    fn pmmh_transforms(&self) -> Vec<CoordTransform> {
        vec![
            CoordTransform::Logit,
            CoordTransform::Identity,
            CoordTransform::Identity,
            CoordTransform::Log,
            CoordTransform::Log,
        ]
    }
}

/// Refinement target: `p(omega | y)` with the nuisance `(mu1, mu2, sigma1^2,
/// sigma2^2)` integrated out by importance sampling against the pilot's
/// nuisance factors.
pub struct MixtureOmegaRefineModel {
    y: Vec<f64>,
    proposal: Vec<VariationalFactor>,
    n_draws: usize,
    init_omega: [f64; 2],
}

impl MixtureOmegaRefineModel {
    /// `pilot_nuisance` holds the pilot's factors over `(mu1, mu2)`,
    /// `sigma1^2`, `sigma2^2` in that order; they are tail-flattened by
    /// `flatten` before use. Fails when the pilot is degenerate (a proposal
    /// standard deviation collapsed below 1e-6).
    pub fn new(
        y: Vec<f64>,
        pilot_nuisance: &[VariationalFactor],
        flatten: f64,
        n_draws: usize,
        init_omega: [f64; 2],
    ) -> Result<Self> {
        if pilot_nuisance.len() != 3 {
            return Err(VbilError::Contract(
                "refinement expects 3 nuisance factors (means block + 2 variances)".to_string(),
            ));
        }
        for f in pilot_nuisance {
            for i in 0..f.dim_theta() {
                let (_, sd) = f.marginal_mean_sd(i);
                if !(sd.is_nan() || sd > 1e-6) {
                    return Err(VbilError::Numerical(format!(
                        "pilot fit degenerate: proposal sd {sd} below 1e-6"
                    )));
                }
            }
        }
        let proposal = pilot_nuisance.iter().map(|f| f.flatten_spread(flatten)).collect();
        Ok(Self { y, proposal, n_draws, init_omega })
    }

    pub fn proposal(&self) -> &[VariationalFactor] {
        &self.proposal
    }
}

impl VbilModel for MixtureOmegaRefineModel {
    fn name(&self) -> &str {
        "normal_mixture_omega_refine"
    }

    fn dim_theta(&self) -> usize {
        1
    }

    fn initial_family(&self) -> Result<ProductFamily> {
        ProductFamily::new(vec![VariationalFactor::beta(
            self.init_omega[0],
            self.init_omega[1],
        )?])
    }

    fn log_prior_blocks(&self, theta: &DVector<f64>) -> Result<Vec<f64>> {
        let w = theta[0];
        if !(w > 0.0 && w < 1.0) {
            return Err(VbilError::Domain(format!("omega = {w} outside (0,1)")));
        }
        // The uniform prior on omega is part of the integrated-joint
        // estimator below; the block contributes nothing here.
        Ok(vec![0.0])
    }

    fn estimate_log_lik(
        &self,
        theta: &DVector<f64>,
        rng: &mut ChaCha12Rng,
    ) -> Result<LogLikEstimate> {
        let omega = theta[0];
        let y = &self.y;
        let log_joint = move |nuis: &[f64]| {
            // nuisance layout: (mu1, mu2, s1, s2)
            let full = DVector::from_column_slice(&[omega, nuis[0], nuis[1], nuis[2], nuis[3]]);
            let lp_mu = -((2.0 * std::f64::consts::PI * 100.0).ln())
                - 0.5 * (nuis[0] * nuis[0] + nuis[1] * nuis[1]) / 100.0;
            let lp = lp_mu + log_reciprocal_prior(nuis[2]) + log_reciprocal_prior(nuis[3]);
            lp + mixture_log_lik(y, &full)
        };
        marginal_refine_estimate(log_joint, &self.proposal, self.n_draws, rng)
    }

    fn scale_n(&self) -> f64 {
        self.y.len() as f64
    }

    fn report(&self) -> ReportSpec {
        ReportSpec::identity(&["omega"])
    }

    fn pmmh_transforms(&self) -> Vec<CoordTransform> {
        vec![CoordTransform::Logit]
    }
}

/// Draws `n` observations from the mixture.
pub fn mixture_simulate<R: Rng>(
    omega: f64,
    mu1: f64,
    mu2: f64,
    sigma1_sq: f64,
    sigma2_sq: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(VbilError::Domain(format!("omega = {omega} outside (0,1)")));
    }
    if sigma1_sq <= 0.0 || sigma2_sq <= 0.0 {
        return Err(VbilError::Domain("component variances must be positive".to_string()));
    }
    let (s1, s2) = (sigma1_sq.sqrt(), sigma2_sq.sqrt());
    Ok((0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            if rng.random::<f64>() < omega {
                mu1 + s1 * z
            } else {
                mu2 + s2 * z
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_stream;
    use approx::assert_relative_eq;

    #[test]
    fn mixture_log_lik_matches_direct_computation() {
        let y = vec![0.5, -1.0];
        let theta = DVector::from_column_slice(&[0.3, -3.0, 3.0, 2.0, 3.0]);
        let direct: f64 = y
            .iter()
            .map(|&x: &f64| {
                let n1 = (-0.5 * (x + 3.0) * (x + 3.0) / 2.0).exp()
                    / (2.0 * std::f64::consts::PI * 2.0).sqrt();
                let n2 = (-0.5 * (x - 3.0) * (x - 3.0) / 3.0).exp()
                    / (2.0 * std::f64::consts::PI * 3.0).sqrt();
                (0.3 * n1 + 0.7 * n2).ln()
            })
            .sum();
        assert_relative_eq!(mixture_log_lik(&y, &theta), direct, epsilon = 1e-12);
    }

    #[test]
    fn simulator_component_shares() {
        let mut rng = seed_stream(1, 0, 0);
        let n = 100_000;
        let y = mixture_simulate(0.3, -3.0, 3.0, 2.0, 3.0, n, &mut rng).unwrap();
        let below: f64 = y.iter().filter(|&&x| x < 0.0).count() as f64 / n as f64;
        // nearly all component-1 draws are negative and component-2 positive
        let se = (0.3 * 0.7 / n as f64).sqrt();
        assert!((below - 0.3).abs() < 0.02 + 4.0 * se, "share {below}");
    }

    #[test]
    fn degenerate_pilot_is_rejected() {
        let nuisance = vec![
            VariationalFactor::mvn(
                DVector::from_column_slice(&[-3.0, 3.0]),
                DMatrix::identity(2, 2) * 1e-16,
            )
            .unwrap(),
            VariationalFactor::inverse_gamma(10.0, 20.0).unwrap(),
            VariationalFactor::inverse_gamma(10.0, 20.0).unwrap(),
        ];
        let err = MixtureOmegaRefineModel::new(vec![0.0; 10], &nuisance, 1.5, 10, [1.0, 1.0]);
        assert!(matches!(err, Err(VbilError::Numerical(_))));
    }

    #[test]
    fn refine_estimator_is_finite_on_sane_inputs() {
        let mut rng = seed_stream(2, 0, 0);
        let y = mixture_simulate(0.3, -3.0, 3.0, 2.0, 3.0, 50, &mut rng).unwrap();
        let nuisance = vec![
            VariationalFactor::mvn(
                DVector::from_column_slice(&[-3.0, 3.0]),
                DMatrix::identity(2, 2) * 0.3,
            )
            .unwrap(),
            VariationalFactor::inverse_gamma(6.0, 10.0).unwrap(),
            VariationalFactor::inverse_gamma(6.0, 15.0).unwrap(),
        ];
        let model =
            MixtureOmegaRefineModel::new(y, &nuisance, 1.5, 20, [1.0, 1.0]).unwrap();
        let mut est_rng = seed_stream(3, 0, 0);
        let est = model
            .estimate_log_lik(&DVector::from_column_slice(&[0.3]), &mut est_rng)
            .unwrap();
        assert!(est.log_value.is_finite());
    }
}
