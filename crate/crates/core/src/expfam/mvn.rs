//! Multivariate-normal variational factor in its natural parameterization
//!
//! ```text
//! lambda = [ Sigma^{-1} mu ; -1/2 D_d' vec(Sigma^{-1}) ],
//! T(x)   = [ x ; vech(x x') ].
//! ```
//!
//! The factor caches the mean parameterization and the lower Cholesky factor
//! of `Sigma`; both are recomputed whenever a new factor is built from
//! updated natural parameters.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, VbilError};
use crate::linalg::{
    cholesky_lower, duplication_matrix, duplication_pinv, project_pd, vech, vech_index,
};

/// Eigenvalue floor (relative to the largest eigenvalue) used when projecting
/// a stochastically updated covariance back to positive definiteness.
const PD_FLOOR_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MvnFactor {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det_sigma: f64,
}

impl MvnFactor {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(VbilError::Contract(format!(
                "covariance shape {}x{} does not match mean length {d}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if !mu.iter().all(|v| v.is_finite()) || !sigma.iter().all(|v| v.is_finite()) {
            return Err(VbilError::InvalidState(
                "non-finite multivariate-normal parameters".to_string(),
            ));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let chol_l = cholesky_lower(&sigma, mu.as_slice())?;
        let precision = nalgebra::Cholesky::new(sigma.clone())
            .expect("checked above")
            .inverse();
        let log_det_sigma = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { mu, sigma, chol_l, precision, log_det_sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn dim_lambda(&self) -> usize {
        let d = self.dim();
        d + d * (d + 1) / 2
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn lambda(&self) -> DVector<f64> {
        mean_to_natural(&self.mu, &self.sigma)
    }

    pub fn with_lambda(&self, lambda: &[f64]) -> Result<Self> {
        let (mu, sigma) = natural_to_mean(lambda, self.dim())?;
        Self::new(mu, sigma)
    }

    /// Rebuilds from natural parameters, projecting the implied covariance
    /// back to positive definiteness if a stochastic update broke it.
    pub fn with_lambda_projected(&self, lambda: &[f64]) -> Result<Self> {
        match self.with_lambda(lambda) {
            Ok(f) => Ok(f),
            Err(VbilError::Conditioning { .. }) => {
                let d = self.dim();
                let precision_raw = precision_from_natural(lambda, d)?;
                // Floor the precision eigenvalues; equivalently caps Sigma.
                let precision = project_pd(&precision_raw, PD_FLOOR_RATIO);
                let sigma = nalgebra::Cholesky::new(precision.clone())
                    .ok_or_else(|| VbilError::Conditioning {
                        what: "projected precision still not positive definite".to_string(),
                        lambda: lambda.to_vec(),
                    })?
                    .inverse();
                let lam1 = DVector::from_column_slice(&lambda[..d]);
                let mu = &sigma * lam1;
                Self::new(mu, sigma)
            }
            Err(e) => Err(e),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(VbilError::Contract(format!(
                "point length {} does not match factor dimension {}",
                x.len(),
                self.dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(VbilError::Domain("non-finite evaluation point".to_string()));
        }
        Ok(())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let d = self.dim();
        let diff = DVector::from_column_slice(x) - &self.mu;
        let quad = (&self.precision * &diff).dot(&diff);
        Ok(-0.5 * (d as f64) * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * self.log_det_sigma
            - 0.5 * quad)
    }

    /// `[x - mu ; vech(x x' - Sigma - mu mu')]`.
    pub fn score(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let d = self.dim();
        let xv = DVector::from_column_slice(x);
        let mut out = DVector::zeros(self.dim_lambda());
        for i in 0..d {
            out[i] = xv[i] - self.mu[i];
        }
        let outer = &xv * xv.transpose() - &self.sigma - &self.mu * self.mu.transpose();
        let v = vech(&outer);
        for (i, val) in v.iter().enumerate() {
            out[d + i] = *val;
        }
        Ok(out)
    }

    /// Analytic covariance of the sufficient statistics, assembled from the
    /// Gaussian moment identities.
    pub fn fisher_info(&self) -> DMatrix<f64> {
        let d = self.dim();
        let nh = d * (d + 1) / 2;
        let mut out = DMatrix::zeros(d + nh, d + nh);
        let s = &self.sigma;
        let m = &self.mu;
        out.view_mut((0, 0), (d, d)).copy_from(s);
        // cov(x_r, x_i x_j) = mu_i S_rj + mu_j S_ri
        for j in 0..d {
            for i in j..d {
                let col = d + vech_index(i, j, d);
                for r in 0..d {
                    let v = m[i] * s[(r, j)] + m[j] * s[(r, i)];
                    out[(r, col)] = v;
                    out[(col, r)] = v;
                }
            }
        }
        // cov(x_i x_j, x_k x_l) by Isserlis with means
        for j in 0..d {
            for i in j..d {
                let row = d + vech_index(i, j, d);
                for l in 0..d {
                    for k in l..d {
                        let col = d + vech_index(k, l, d);
                        if col < row {
                            continue;
                        }
                        let v = s[(i, k)] * s[(j, l)]
                            + s[(i, l)] * s[(j, k)]
                            + m[i] * m[k] * s[(j, l)]
                            + m[i] * m[l] * s[(j, k)]
                            + m[j] * m[k] * s[(i, l)]
                            + m[j] * m[l] * s[(i, k)];
                        out[(row, col)] = v;
                        out[(col, row)] = v;
                    }
                }
            }
        }
        out
    }

    /// Closed-form inverse Fisher matrix,
    /// `[[Sigma^{-1} + M'S^{-1}M, -M'S^{-1}], [-S^{-1}M, S^{-1}]]` with
    /// `M = 2 D_d^+ (mu (x) I_d)` and `S = 2 D_d^+ (Sigma (x) Sigma) D_d^+'`.
    pub fn fisher_info_inverse(&self) -> Result<DMatrix<f64>> {
        fisher_inverse_mvn(&self.mu, &self.sigma)
    }

    /// Consumes `d` uniforms: per-coordinate inverse normal CDF, then the
    /// lower Cholesky factor of `Sigma`.
    pub fn sample(&self, uniforms: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if uniforms.len() != d {
            return Err(VbilError::Contract(format!(
                "mvn factor consumes {d} uniforms, got {}",
                uniforms.len()
            )));
        }
        let std_normal = Normal::standard();
        let z = DVector::from_iterator(d, uniforms.iter().map(|&u| std_normal.inverse_cdf(u)));
        let x = &self.mu + &self.chol_l * z;
        Ok(x.as_slice().to_vec())
    }

    pub fn marginal_mean_sd(&self, i: usize) -> (f64, f64) {
        (self.mu[i], self.sigma[(i, i)].sqrt())
    }

    pub fn flatten_spread(&self, c: f64) -> Self {
        Self::new(self.mu.clone(), &self.sigma * (c * c)).expect("scaling preserves PD")
    }
}

/// `lambda = [Sigma^{-1} mu ; -1/2 D_d' vec(Sigma^{-1})]`.
pub fn mean_to_natural(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> DVector<f64> {
    let d = mu.len();
    let precision = sigma
        .clone()
        .cholesky()
        .expect("mean_to_natural requires positive-definite sigma")
        .inverse();
    let lam1 = &precision * mu;
    let dmat = duplication_matrix(d);
    let vec_prec = DVector::from_column_slice(precision.as_slice());
    let lam2 = dmat.transpose() * vec_prec * (-0.5);
    let mut out = DVector::zeros(d + d * (d + 1) / 2);
    out.rows_mut(0, d).copy_from(&lam1);
    out.rows_mut(d, lam2.len()).copy_from(&lam2);
    out
}

/// Recovers `Sigma^{-1} = -2 vec^{-1}(D_d^+' lambda_2)` without inverting.
fn precision_from_natural(lambda: &[f64], d: usize) -> Result<DMatrix<f64>> {
    let nh = d * (d + 1) / 2;
    if lambda.len() != d + nh {
        return Err(VbilError::Contract(format!(
            "mvn factor of dimension {d} expects {} natural parameters, got {}",
            d + nh,
            lambda.len()
        )));
    }
    if !lambda.iter().all(|v| v.is_finite()) {
        return Err(VbilError::InvalidState(format!(
            "non-finite mvn natural parameters {lambda:?}"
        )));
    }
    let lam2 = DVector::from_column_slice(&lambda[d..]);
    let pinv_t = duplication_pinv(d).transpose();
    let vec_m = &pinv_t * lam2;
    let m = DMatrix::from_column_slice(d, d, vec_m.as_slice());
    Ok(m * -2.0)
}

/// Inverse of [`mean_to_natural`]; fails with a conditioning error when the
/// implied covariance is not positive definite.
pub fn natural_to_mean(lambda: &[f64], d: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let precision = precision_from_natural(lambda, d)?;
    let chol = nalgebra::Cholesky::new(precision.clone()).ok_or_else(|| VbilError::Conditioning {
        what: "recovered precision matrix is not positive definite".to_string(),
        lambda: lambda.to_vec(),
    })?;
    let sigma = chol.inverse();
    let lam1 = DVector::from_column_slice(&lambda[..d]);
    let mu = &sigma * lam1;
    Ok((mu, sigma))
}

/// The closed-form inverse Fisher matrix of the natural parameterization.
pub fn fisher_inverse_mvn(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = mu.len();
    let nh = d * (d + 1) / 2;
    let chol = nalgebra::Cholesky::new(sigma.clone()).ok_or_else(|| VbilError::Conditioning {
        what: "sigma is not positive definite".to_string(),
        lambda: mu.as_slice().to_vec(),
    })?;
    let sigma_inv = chol.inverse();
    let pinv = duplication_pinv(d);
    let eye = DMatrix::<f64>::identity(d, d);
    let m = 2.0 * &pinv * mu.kronecker(&eye);
    let s = 2.0 * &pinv * sigma.kronecker(sigma) * pinv.transpose();
    let s_chol = nalgebra::Cholesky::new(s).ok_or_else(|| VbilError::Conditioning {
        what: "vech covariance block is singular".to_string(),
        lambda: mu.as_slice().to_vec(),
    })?;
    let s_inv = s_chol.inverse();
    let msm = m.transpose() * &s_inv * &m;
    let mut out = DMatrix::zeros(d + nh, d + nh);
    out.view_mut((0, 0), (d, d)).copy_from(&(sigma_inv + msm));
    let top_right = -(m.transpose() * &s_inv);
    out.view_mut((0, d), (d, nh)).copy_from(&top_right);
    out.view_mut((d, 0), (nh, d)).copy_from(&top_right.transpose());
    out.view_mut((d, d), (nh, nh)).copy_from(&s_inv);
    Ok(out)
}
