//! Probit latents, the categorical noise covariances and the real noise variance.

use nalgebra::DMatrix;
use rand::Rng;

use crate::distributions as dist;
use crate::error::{Error, Result};
use crate::latent::NoiseCov;
use crate::linalg;

/// Truncation interval of component `p` of a latent vector that must decode to `x`.
fn bounds(x: u32, p: usize, beta: &[f64]) -> (f64, f64) {
    if x == 0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    let target = x as usize - 1;
    if p == target {
        let mut lo: f64 = 0.0;
        for (m, &b) in beta.iter().enumerate() {
            if m != p {
                lo = lo.max(b);
            }
        }
        (lo, f64::INFINITY)
    } else {
        (f64::NEG_INFINITY, beta[target])
    }
}

/// One Gibbs pass over the components of β_ij given its mean, the
/// precision of Σ_j and the observed category (None for a missing cell, in
/// which case the draw is unrestricted).
pub fn update_cell<R: Rng + ?Sized>(
    beta: &mut [f64],
    mean: &[f64],
    precision: &[f64],
    chol_lower: &DMatrix<f64>,
    x: Option<u32>,
    rng: &mut R,
) -> Result<()> {
    let dim = beta.len();
    let Some(x) = x else {
        let z: Vec<f64> = (0..dim).map(|_| dist::sample_std_normal(rng)).collect();
        for a in 0..dim {
            let mut s = mean[a];
            for c in 0..=a {
                s += chol_lower[(a, c)] * z[c];
            }
            beta[a] = s;
        }
        return Ok(());
    };
    for p in 0..dim {
        let lpp = precision[p * dim + p];
        let mut shift = 0.0;
        for m in 0..dim {
            if m != p {
                shift += precision[p * dim + m] * (beta[m] - mean[m]);
            }
        }
        let cm = mean[p] - shift / lpp;
        let (lo, hi) = bounds(x, p, beta);
        beta[p] = dist::sample_truncated_normal(cm, 1.0 / lpp, lo, hi, rng)?;
    }
    Ok(())
}

/// `log ∏_l d_l^{(dim − 1)/2}`, the Jacobian of `(R, D) ↦ Σ = D^{½} R D^{½}`.
pub fn log_jacobian(variances: &[f64]) -> f64 {
    let dim = variances.len() as f64;
    0.5 * (dim - 1.0) * variances.iter().map(|d| d.ln()).sum::<f64>()
}

/// Gaussian log likelihood (without the 2π constant) of residual vectors
/// under the restricted form of `cov`.
fn residual_loglik(noise: &NoiseCov, residuals: &[Vec<f64>]) -> f64 {
    let dim = noise.dim();
    let mut s = 0.0;
    for e in residuals {
        s += noise.log_det() + linalg::quad_form(noise.precision(), dim, e);
    }
    -0.5 * s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MhOutcome {
    Accepted,
    Rejected,
    /// The proposal could not be factorized and was rejected outright.
    Invalid,
}

/// Prior parameters and proposal spread of the Σ_j update.
#[derive(Debug, Clone, Copy)]
pub struct NoiseCovPrior {
    pub df: f64,
    pub scale: f64,
    pub proposal_df: f64,
}

/// One parameter-extended Metropolis–Hastings step for Σ_j.
///
/// The chain lives on the unrestricted matrix whose restriction is Σ_j. A
/// candidate `Σ* ~ W(ν, Σ/ν)` is accepted with probability
/// `min(1, p(Σ*) J(D*) q(Σ | Σ*) J(D) / (p(Σ) J(D) q(Σ* | Σ) J(D*)))` where
/// `p` combines the Wishart prior with the likelihood of the residuals under
/// the restricted covariance and `J` is the decomposition Jacobian.
pub fn update_noise_cov<R: Rng + ?Sized>(
    current: &NoiseCov,
    residuals: &[Vec<f64>],
    prior: &NoiseCovPrior,
    rng: &mut R,
) -> Result<(NoiseCov, MhOutcome)> {
    let dim = current.dim();
    if dim == 1 {
        return Ok((current.clone(), MhOutcome::Accepted));
    }
    let ext = current.extended();
    let nu = prior.proposal_df;
    let omega = DMatrix::identity(dim, dim) * prior.scale;
    let mut cand = dist::sample_wishart(nu, &(&ext / nu), rng)?;
    linalg::symmetrize(&mut cand);
    let u: f64 = rng.random();
    let proposal = match NoiseCov::from_extended(&cand) {
        Ok(p) => p,
        Err(_) => return Ok((current.clone(), MhOutcome::Invalid)),
    };
    let forward = dist::log_wishart_pdf(&cand, nu, &(&ext / nu));
    let backward = dist::log_wishart_pdf(&ext, nu, &(&cand / nu));
    let (Ok(forward), Ok(backward)) = (forward, backward) else {
        return Ok((current.clone(), MhOutcome::Invalid));
    };
    let d_cur: Vec<f64> = (0..dim).map(|a| ext[(a, a)]).collect();
    let d_new: Vec<f64> = (0..dim).map(|a| cand[(a, a)]).collect();
    let target_cur = dist::log_wishart_pdf(&ext, prior.df, &omega)? + residual_loglik(current, residuals);
    let target_new = dist::log_wishart_pdf(&cand, prior.df, &omega)? + residual_loglik(&proposal, residuals);
    let log_alpha = (target_new + log_jacobian(&d_new) + backward + log_jacobian(&d_cur))
        - (target_cur + log_jacobian(&d_cur) + forward + log_jacobian(&d_new));
    if !log_alpha.is_finite() && log_alpha != f64::NEG_INFINITY {
        return Err(Error::Numerical {
            block: "noise-covariance".into(),
            iteration: 0,
            message: "acceptance ratio is not a number".into(),
        });
    }
    if u.ln() < log_alpha {
        Ok((proposal, MhOutcome::Accepted))
    } else {
        Ok((current.clone(), MhOutcome::Rejected))
    }
}

/// `σ_y² ~ IG(a + n/2, b + SS/2)` from the residuals of the observed real cells.
pub fn sample_noise_variance<R: Rng + ?Sized>(
    n_obs: usize,
    sum_sq: f64,
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> Result<f64> {
    dist::sample_inverse_gamma(shape + 0.5 * n_obs as f64, rate + 0.5 * sum_sq, rng)
}
