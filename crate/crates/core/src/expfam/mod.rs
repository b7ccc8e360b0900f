//! Exponential-family variational distributions.
//!
//! A [`VariationalFactor`] is one exponential-family block (Beta,
//! multivariate normal or inverse-Gamma) exposing its natural parameters,
//! log density, score vector, Fisher information and an inverse-CDF sampler
//! driven by externally supplied uniforms. A [`ProductFamily`] is an ordered
//! product of factors whose supports partition the parameter vector into
//! contiguous blocks; its joint log density is the sum of the factor log
//! densities.
//!
//! Factors are immutable once built. Updating the natural parameters
//! produces a fresh factor, which recomputes cached decompositions such as
//! the Cholesky factor of a normal block.

mod beta;
mod invgamma;
mod mvn;

pub use beta::BetaFactor;
pub use invgamma::InverseGammaFactor;
pub use mvn::{fisher_inverse_mvn, mean_to_natural, natural_to_mean, MvnFactor};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VbilError};
use crate::linalg::symmetric_condition_number;

/// Fisher matrices with a worse condition number than this trigger a
/// conditioning error in [`VariationalFactor::natural_solve`].
pub const FISHER_CONDITION_LIMIT: f64 = 1e12;

/// One exponential-family variational factor.
#[derive(Debug, Clone, PartialEq)]
pub enum VariationalFactor {
    Beta(BetaFactor),
    InverseGamma(InverseGammaFactor),
    Mvn(MvnFactor),
}

/// Serializable description of a factor, used in fit reports and configs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorSpec {
    Beta { alpha: f64, beta: f64, #[serde(default)] above_one: bool },
    InverseGamma { a: f64, b: f64 },
    Mvn { mu: Vec<f64>, cov: Vec<Vec<f64>> },
}

impl VariationalFactor {
    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        Ok(Self::Beta(BetaFactor::new(alpha, beta)?))
    }

    pub fn beta_above_one(alpha: f64, beta: f64) -> Result<Self> {
        Ok(Self::Beta(BetaFactor::new_above_one(alpha, beta)?))
    }

    pub fn inverse_gamma(a: f64, b: f64) -> Result<Self> {
        Ok(Self::InverseGamma(InverseGammaFactor::new(a, b)?))
    }

    pub fn mvn(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        Ok(Self::Mvn(MvnFactor::new(mu, sigma)?))
    }

    pub fn mvn_scalar(mu: f64, var: f64) -> Result<Self> {
        Self::mvn(
            DVector::from_column_slice(&[mu]),
            DMatrix::from_row_slice(1, 1, &[var]),
        )
    }

    pub fn from_spec(spec: &FactorSpec) -> Result<Self> {
        match spec {
            FactorSpec::Beta { alpha, beta, above_one } => {
                if *above_one {
                    Self::beta_above_one(*alpha, *beta)
                } else {
                    Self::beta(*alpha, *beta)
                }
            }
            FactorSpec::InverseGamma { a, b } => Self::inverse_gamma(*a, *b),
            FactorSpec::Mvn { mu, cov } => {
                let d = mu.len();
                let mut sigma = DMatrix::zeros(d, d);
                for (i, row) in cov.iter().enumerate() {
                    if row.len() != d {
                        return Err(VbilError::Config(
                            "mvn covariance rows must match the mean length".to_string(),
                        ));
                    }
                    for (j, v) in row.iter().enumerate() {
                        sigma[(i, j)] = *v;
                    }
                }
                Self::mvn(DVector::from_column_slice(mu), sigma)
            }
        }
    }

    pub fn spec(&self) -> FactorSpec {
        match self {
            Self::Beta(f) => FactorSpec::Beta {
                alpha: f.alpha(),
                beta: f.beta(),
                above_one: f.constrained_above_one(),
            },
            Self::InverseGamma(f) => FactorSpec::InverseGamma { a: f.a(), b: f.b() },
            Self::Mvn(f) => FactorSpec::Mvn {
                mu: f.mu().as_slice().to_vec(),
                cov: (0..f.dim())
                    .map(|i| (0..f.dim()).map(|j| f.sigma()[(i, j)]).collect())
                    .collect(),
            },
        }
    }

    /// Number of coordinates of `theta` this factor governs.
    pub fn dim_theta(&self) -> usize {
        match self {
            Self::Beta(_) | Self::InverseGamma(_) => 1,
            Self::Mvn(f) => f.dim(),
        }
    }

    /// Length of the factor's natural-parameter vector.
    pub fn dim_lambda(&self) -> usize {
        match self {
            Self::Beta(_) | Self::InverseGamma(_) => 2,
            Self::Mvn(f) => f.dim_lambda(),
        }
    }

    /// Uniform variates consumed per draw (inverse-CDF transforms).
    pub fn uniform_dim(&self) -> usize {
        match self {
            Self::Beta(_) | Self::InverseGamma(_) => 1,
            Self::Mvn(f) => f.dim(),
        }
    }

    pub fn lambda(&self) -> DVector<f64> {
        match self {
            Self::Beta(f) => f.lambda(),
            Self::InverseGamma(f) => f.lambda(),
            Self::Mvn(f) => f.lambda(),
        }
    }

    pub fn with_lambda(&self, lambda: &[f64]) -> Result<Self> {
        Ok(match self {
            Self::Beta(f) => Self::Beta(f.with_lambda(lambda)?),
            Self::InverseGamma(f) => Self::InverseGamma(f.with_lambda(lambda)?),
            Self::Mvn(f) => Self::Mvn(f.with_lambda(lambda)?),
        })
    }

    /// Natural-parameter update with validity projection (shape floors,
    /// positive-definiteness restoration).
    pub fn with_lambda_projected(&self, lambda: &[f64]) -> Result<Self> {
        Ok(match self {
            Self::Beta(f) => Self::Beta(f.with_lambda_projected(lambda)?),
            Self::InverseGamma(f) => Self::InverseGamma(f.with_lambda_projected(lambda)?),
            Self::Mvn(f) => Self::Mvn(f.with_lambda_projected(lambda)?),
        })
    }

    pub fn log_density(&self, theta_block: &[f64]) -> Result<f64> {
        match self {
            Self::Beta(f) => {
                expect_scalar(theta_block)?;
                f.log_density(theta_block[0])
            }
            Self::InverseGamma(f) => {
                expect_scalar(theta_block)?;
                f.log_density(theta_block[0])
            }
            Self::Mvn(f) => f.log_density(theta_block),
        }
    }

    /// Gradient of the log density with respect to the natural parameters.
    pub fn score(&self, theta_block: &[f64]) -> Result<DVector<f64>> {
        match self {
            Self::Beta(f) => {
                expect_scalar(theta_block)?;
                f.score(theta_block[0])
            }
            Self::InverseGamma(f) => {
                expect_scalar(theta_block)?;
                f.score(theta_block[0])
            }
            Self::Mvn(f) => f.score(theta_block),
        }
    }

    pub fn fisher_info(&self) -> DMatrix<f64> {
        match self {
            Self::Beta(f) => f.fisher_info(),
            Self::InverseGamma(f) => f.fisher_info(),
            Self::Mvn(f) => f.fisher_info(),
        }
    }

    pub fn fisher_info_inverse(&self) -> Result<DMatrix<f64>> {
        match self {
            Self::Mvn(f) => f.fisher_info_inverse(),
            _ => {
                let i_f = self.fisher_info();
                let det = i_f[(0, 0)] * i_f[(1, 1)] - i_f[(0, 1)] * i_f[(1, 0)];
                if det <= 0.0 || !det.is_finite() {
                    return Err(VbilError::Conditioning {
                        what: "2x2 Fisher matrix is not positive definite".to_string(),
                        lambda: self.lambda().as_slice().to_vec(),
                    });
                }
                Ok(DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        i_f[(1, 1)] / det,
                        -i_f[(0, 1)] / det,
                        -i_f[(1, 0)] / det,
                        i_f[(0, 0)] / det,
                    ],
                ))
            }
        }
    }

    /// Solves `I_F(lambda) x = g`, failing on ill-conditioned Fisher
    /// matrices (condition number above [`FISHER_CONDITION_LIMIT`]).
    pub fn natural_solve(&self, grad_block: &DVector<f64>) -> Result<DVector<f64>> {
        if grad_block.len() != self.dim_lambda() {
            return Err(VbilError::Contract(format!(
                "gradient block length {} does not match factor parameter count {}",
                grad_block.len(),
                self.dim_lambda()
            )));
        }
        let i_f = self.fisher_info();
        let cond = symmetric_condition_number(&i_f);
        if !cond.is_finite() || cond > FISHER_CONDITION_LIMIT {
            return Err(VbilError::Conditioning {
                what: format!("Fisher matrix condition number {cond:.3e} exceeds limit"),
                lambda: self.lambda().as_slice().to_vec(),
            });
        }
        let inv = self.fisher_info_inverse()?;
        let out = inv * grad_block;
        if !out.iter().all(|v| v.is_finite()) {
            return Err(VbilError::Conditioning {
                what: "natural gradient is not finite".to_string(),
                lambda: self.lambda().as_slice().to_vec(),
            });
        }
        Ok(out)
    }

    /// Deterministic draw from the factor given `uniform_dim` U(0,1) inputs.
    pub fn sample(&self, uniforms: &[f64]) -> Result<Vec<f64>> {
        for &u in uniforms {
            if !(u > 0.0 && u < 1.0) {
                return Err(VbilError::Contract(format!(
                    "uniform inputs must lie strictly inside (0,1), got {u}"
                )));
            }
        }
        match self {
            Self::Beta(f) => {
                expect_uniforms(uniforms, 1)?;
                Ok(vec![f.sample(uniforms[0])])
            }
            Self::InverseGamma(f) => {
                expect_uniforms(uniforms, 1)?;
                Ok(vec![f.sample(uniforms[0])])
            }
            Self::Mvn(f) => f.sample(uniforms),
        }
    }

    /// Mean and standard deviation of coordinate `i` of the factor's block.
    /// Undefined moments (low inverse-Gamma shapes) come back as NaN.
    pub fn marginal_mean_sd(&self, i: usize) -> (f64, f64) {
        match self {
            Self::Beta(f) => (f.mean(), f.variance().sqrt()),
            Self::InverseGamma(f) => (f.mean(), f.variance().sqrt()),
            Self::Mvn(f) => f.marginal_mean_sd(i),
        }
    }

    /// Log density of the marginal of coordinate `i` (exact for all kinds:
    /// normal marginals of a normal block, the factor itself for 1-D kinds).
    pub fn marginal_log_density(&self, i: usize, x: f64) -> Result<f64> {
        match self {
            Self::Beta(f) => f.log_density(x),
            Self::InverseGamma(f) => f.log_density(x),
            Self::Mvn(f) => {
                let (m, sd) = f.marginal_mean_sd(i);
                let z = (x - m) / sd;
                Ok(-0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * z * z)
            }
        }
    }

    /// Widens the factor around its mean by `c` (for tail-flattened
    /// importance proposals).
    pub fn flatten_spread(&self, c: f64) -> Self {
        match self {
            Self::Beta(f) => Self::Beta(f.flatten_spread(c)),
            Self::InverseGamma(f) => Self::InverseGamma(f.flatten_spread(c)),
            Self::Mvn(f) => Self::Mvn(f.flatten_spread(c)),
        }
    }
}

fn expect_scalar(block: &[f64]) -> Result<()> {
    if block.len() != 1 {
        return Err(VbilError::Contract(format!(
            "scalar factor evaluated on a block of length {}",
            block.len()
        )));
    }
    Ok(())
}

fn expect_uniforms(uniforms: &[f64], n: usize) -> Result<()> {
    if uniforms.len() != n {
        return Err(VbilError::Contract(format!(
            "factor consumes {n} uniforms, got {}",
            uniforms.len()
        )));
    }
    Ok(())
}

/// An ordered product of variational factors realizing
/// `q_lambda(theta) = q_{lambda(1)}(theta(1)) ... q_{lambda(K)}(theta(K))`.
///
/// Factor `k` governs the contiguous coordinate block starting at
/// `theta_offset(k)`; blocks are disjoint and exhaustive by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductFamily {
    factors: Vec<VariationalFactor>,
    theta_offsets: Vec<usize>,
    lambda_offsets: Vec<usize>,
    uniform_offsets: Vec<usize>,
    dim_theta: usize,
    dim_lambda: usize,
    uniform_dim: usize,
}

impl ProductFamily {
    pub fn new(factors: Vec<VariationalFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(VbilError::Contract("a family needs at least one factor".to_string()));
        }
        let mut theta_offsets = Vec::with_capacity(factors.len());
        let mut lambda_offsets = Vec::with_capacity(factors.len());
        let mut uniform_offsets = Vec::with_capacity(factors.len());
        let (mut t, mut l, mut u) = (0usize, 0usize, 0usize);
        for f in &factors {
            theta_offsets.push(t);
            lambda_offsets.push(l);
            uniform_offsets.push(u);
            t += f.dim_theta();
            l += f.dim_lambda();
            u += f.uniform_dim();
        }
        Ok(Self {
            factors,
            theta_offsets,
            lambda_offsets,
            uniform_offsets,
            dim_theta: t,
            dim_lambda: l,
            uniform_dim: u,
        })
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, k: usize) -> &VariationalFactor {
        &self.factors[k]
    }

    pub fn factors(&self) -> &[VariationalFactor] {
        &self.factors
    }

    pub fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    pub fn dim_lambda(&self) -> usize {
        self.dim_lambda
    }

    /// Total uniforms consumed per joint draw.
    pub fn uniform_dim(&self) -> usize {
        self.uniform_dim
    }

    pub fn theta_range(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.theta_offsets[k];
        start..start + self.factors[k].dim_theta()
    }

    pub fn lambda_range(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.lambda_offsets[k];
        start..start + self.factors[k].dim_lambda()
    }

    pub fn theta_block<'a>(&self, k: usize, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.theta_range(k)]
    }

    /// Concatenated natural parameters of all factors.
    pub fn lambda(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim_lambda);
        for (k, f) in self.factors.iter().enumerate() {
            out.rows_mut(self.lambda_offsets[k], f.dim_lambda())
                .copy_from(&f.lambda());
        }
        out
    }

    /// Rebuilds the family from a full natural-parameter vector, applying
    /// each factor's validity projection.
    pub fn with_lambda_projected(&self, lambda: &DVector<f64>) -> Result<Self> {
        if lambda.len() != self.dim_lambda {
            return Err(VbilError::Contract(format!(
                "family expects {} natural parameters, got {}",
                self.dim_lambda,
                lambda.len()
            )));
        }
        let mut factors = Vec::with_capacity(self.factors.len());
        for (k, f) in self.factors.iter().enumerate() {
            factors.push(f.with_lambda_projected(&lambda.as_slice()[self.lambda_range(k)])?);
        }
        Self::new(factors)
    }

    /// Draws a joint `theta` from a row of `uniform_dim` U(0,1) inputs.
    pub fn sample_theta(&self, uniforms: &[f64]) -> Result<DVector<f64>> {
        if uniforms.len() != self.uniform_dim {
            return Err(VbilError::Contract(format!(
                "family consumes {} uniforms, got {}",
                self.uniform_dim,
                uniforms.len()
            )));
        }
        let mut theta = DVector::zeros(self.dim_theta);
        for (k, f) in self.factors.iter().enumerate() {
            let u0 = self.uniform_offsets[k];
            let block = f.sample(&uniforms[u0..u0 + f.uniform_dim()])?;
            for (i, v) in block.iter().enumerate() {
                theta[self.theta_offsets[k] + i] = *v;
            }
        }
        Ok(theta)
    }

    /// Joint log density: the sum of the factor log densities.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.log_density_blocks(theta)?.iter().sum())
    }

    /// Per-factor log densities evaluated on the matching blocks.
    pub fn log_density_blocks(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.dim_theta {
            return Err(VbilError::Contract(format!(
                "family expects theta of length {}, got {}",
                self.dim_theta,
                theta.len()
            )));
        }
        self.factors
            .iter()
            .enumerate()
            .map(|(k, f)| f.log_density(self.theta_block(k, theta)))
            .collect()
    }

    /// Full score vector: per-factor scores concatenated in block order.
    pub fn score(&self, theta: &[f64]) -> Result<DVector<f64>> {
        if theta.len() != self.dim_theta {
            return Err(VbilError::Contract(format!(
                "family expects theta of length {}, got {}",
                self.dim_theta,
                theta.len()
            )));
        }
        let mut out = DVector::zeros(self.dim_lambda);
        for (k, f) in self.factors.iter().enumerate() {
            let s = f.score(self.theta_block(k, theta))?;
            out.rows_mut(self.lambda_offsets[k], f.dim_lambda()).copy_from(&s);
        }
        Ok(out)
    }

    /// Blockwise `I_{F,k}^{-1} g_k` (the natural-gradient transform).
    pub fn natural_solve(&self, grad: &DVector<f64>) -> Result<DVector<f64>> {
        if grad.len() != self.dim_lambda {
            return Err(VbilError::Contract(format!(
                "family expects a gradient of length {}, got {}",
                self.dim_lambda,
                grad.len()
            )));
        }
        let mut out = DVector::zeros(self.dim_lambda);
        for (k, f) in self.factors.iter().enumerate() {
            let range = self.lambda_range(k);
            let block = DVector::from_column_slice(&grad.as_slice()[range.clone()]);
            let solved = f.natural_solve(&block)?;
            out.rows_mut(range.start, f.dim_lambda()).copy_from(&solved);
        }
        Ok(out)
    }

    /// (mean, sd) of every `theta` coordinate under the family.
    pub fn marginal_mean_sd(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.dim_theta);
        for f in &self.factors {
            for i in 0..f.dim_theta() {
                out.push(f.marginal_mean_sd(i));
            }
        }
        out
    }

    /// The factor governing coordinate `coord` and the within-block index.
    pub fn factor_of_coord(&self, coord: usize) -> (usize, usize) {
        for (k, f) in self.factors.iter().enumerate() {
            let start = self.theta_offsets[k];
            if coord < start + f.dim_theta() {
                return (k, coord - start);
            }
        }
        panic!("coordinate {coord} out of range");
    }

    pub fn specs(&self) -> Vec<FactorSpec> {
        self.factors.iter().map(|f| f.spec()).collect()
    }

    pub fn from_specs(specs: &[FactorSpec]) -> Result<Self> {
        Self::new(
            specs
                .iter()
                .map(VariationalFactor::from_spec)
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_family() -> ProductFamily {
        ProductFamily::new(vec![
            VariationalFactor::mvn_scalar(0.0, 0.3).unwrap(),
            VariationalFactor::beta_above_one(95.0, 5.0).unwrap(),
            VariationalFactor::inverse_gamma(11.0, 1.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn blocks_partition_theta() {
        let fam = toy_family();
        assert_eq!(fam.dim_theta(), 3);
        assert_eq!(fam.dim_lambda(), 6);
        assert_eq!(fam.uniform_dim(), 3);
        assert_eq!(fam.theta_range(0), 0..1);
        assert_eq!(fam.theta_range(1), 1..2);
        assert_eq!(fam.theta_range(2), 2..3);
    }

    #[test]
    fn joint_log_density_is_sum_of_blocks() {
        let fam = toy_family();
        let theta = [0.2, 0.93, 0.11];
        let blocks = fam.log_density_blocks(&theta).unwrap();
        assert_relative_eq!(
            fam.log_density(&theta).unwrap(),
            blocks.iter().sum::<f64>(),
            epsilon = 1e-15
        );
        assert_eq!(blocks.len(), 3);
    }

    #[test]
    fn lambda_roundtrip_through_projection() {
        let fam = toy_family();
        let lambda = fam.lambda();
        let rebuilt = fam.with_lambda_projected(&lambda).unwrap();
        assert_relative_eq!(rebuilt.lambda(), lambda, epsilon = 1e-9);
    }

    #[test]
    fn sample_consumes_uniforms_in_block_order() {
        let fam = toy_family();
        let theta = fam.sample_theta(&[0.5, 0.4, 0.6]).unwrap();
        // mvn block at u=0.5 is exactly the mean
        assert_relative_eq!(theta[0], 0.0, epsilon = 1e-12);
        assert!(theta[1] > 0.0 && theta[1] < 1.0);
        assert!(theta[2] > 0.0);
        assert!(matches!(
            fam.sample_theta(&[0.5, 0.5]),
            Err(VbilError::Contract(_))
        ));
    }

    #[test]
    fn specs_roundtrip() {
        let fam = toy_family();
        let fam2 = ProductFamily::from_specs(&fam.specs()).unwrap();
        assert_relative_eq!(fam.lambda(), fam2.lambda(), epsilon = 1e-12);
    }
}
