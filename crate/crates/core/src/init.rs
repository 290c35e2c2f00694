//! Starting states, forward draws from the prior, and data generation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::{ModelConfig, PriorMode};
use crate::corrprior::{FeaturePrior, IndependentBernoulli, SparseFactorCovariance};
use crate::data::{ChoiceLayout, RelationalDataset};
use crate::distributions as dist;
use crate::error::{Error, Result};
use crate::latent::{self, BitMatrix, LowRankRegression, ModelState, NoiseCov};

/// Dimensions of a dataset without its values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub n_rows: usize,
    pub category_counts: Vec<usize>,
    pub n_real: usize,
}

impl Shape {
    pub fn of(ds: &RelationalDataset) -> Self {
        Shape {
            n_rows: ds.n_rows(),
            category_counts: ds.category_counts().to_vec(),
            n_real: ds.n_real(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 {
            return Err(Error::Validation("at least one row is required".into()));
        }
        if self.category_counts.iter().any(|&q| q < 2) {
            return Err(Error::Validation("every attribute needs at least 2 categories".into()));
        }
        if self.category_counts.is_empty() && self.n_real == 0 {
            return Err(Error::Validation("at least one column is required".into()));
        }
        Ok(())
    }
}

/// Check that the noise-covariance settings are usable for every attribute.
pub fn check_config_for_shape(config: &ModelConfig, shape: &Shape) -> Result<()> {
    config.validate()?;
    let max_dim = shape.category_counts.iter().map(|q| q - 1).max().unwrap_or(1);
    if max_dim > 1 {
        if config.wishart_df <= (max_dim - 1) as f64 {
            return Err(Error::Config(format!(
                "wishart_df {} must exceed {} for attributes with {} categories",
                config.wishart_df,
                max_dim - 1,
                max_dim + 1
            )));
        }
        if config.proposal_df() < max_dim as f64 {
            return Err(Error::Config(format!(
                "proposal_df {} must be at least {max_dim}",
                config.proposal_df()
            )));
        }
    }
    Ok(())
}

fn std_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| dist::sample_std_normal(rng)).collect()
}

fn random_bits<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> BitMatrix {
    BitMatrix::from_fn(rows, cols, |_, _| rng.random::<bool>())
}

fn initial_regression<R: Rng + ?Sized>(
    n_terms: usize,
    left: usize,
    right: usize,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<LowRankRegression> {
    let s2 = config.sigma_lambda2;
    let mut lambda = Vec::with_capacity(n_terms);
    let mut u = Vec::with_capacity(n_terms);
    let mut v = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        lambda.push(dist::sample_truncated_normal(0.0, s2, 0.0, f64::INFINITY, rng)?);
        u.push(std_normal_vec(left, rng));
        v.push(std_normal_vec(right, rng));
    }
    Ok(LowRankRegression {
        lambda,
        active: vec![true; n_terms],
        u,
        v,
        pi: 0.5,
        sigma_lambda2: s2,
    })
}

fn initial_prior<R: Rng + ?Sized>(
    bits: &BitMatrix,
    n_factors: usize,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<FeaturePrior> {
    Ok(match config.prior_mode {
        PriorMode::Correlated => FeaturePrior::Correlated(SparseFactorCovariance::initialize(
            bits,
            n_factors,
            config.slab_c,
            config.slab_d,
            config.inclusion,
            rng,
        )?),
        PriorMode::IndependentBernoulli => {
            FeaturePrior::Independent(IndependentBernoulli::new(bits.cols(), config.ibp_alpha))
        }
    })
}

/// One draw of β_ij inside the region that decodes to `x`, component by
/// component with unit variances; used only to start the chain.
fn consistent_beta<R: Rng + ?Sized>(mean: &[f64], x: u32, rng: &mut R) -> Result<Vec<f64>> {
    let mut b = vec![0.0; mean.len()];
    if x == 0 {
        for (a, m) in mean.iter().enumerate() {
            b[a] = dist::sample_truncated_normal(*m, 1.0, f64::NEG_INFINITY, 0.0, rng)?;
        }
    } else {
        let p = x as usize - 1;
        b[p] = dist::sample_truncated_normal(mean[p], 1.0, 0.0, f64::INFINITY, rng)?;
        for a in 0..mean.len() {
            if a != p {
                b[a] = dist::sample_truncated_normal(mean[a], 1.0, f64::NEG_INFINITY, b[p], rng)?;
            }
        }
    }
    Ok(b)
}

impl ModelState {
    /// Overdispersed starting state for fitting `ds`.
    pub fn initialize<R: Rng + ?Sized>(ds: &RelationalDataset, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let shape = Shape::of(ds);
        shape.validate()?;
        check_config_for_shape(config, &shape)?;
        let fc = config.feature_counts();
        let layout = ds.choice_layout();
        let r = random_bits(ds.n_rows(), fc.rows, rng);
        let d = random_bits(layout.width(), fc.choices, rng);
        let c = random_bits(ds.n_real(), fc.reals, rng);
        let mx = initial_regression(config.n_terms_x(), fc.rows, fc.choices, config, rng)?;
        let my = initial_regression(config.n_terms_y(), fc.rows, fc.reals, config, rng)?;
        let prior_r = initial_prior(&r, config.factors.rows, config, rng)?;
        let prior_d = initial_prior(&d, config.factors.choices, config, rng)?;
        let prior_c = initial_prior(&c, config.factors.reals, config, rng)?;
        let noise = (0..layout.n_attributes()).map(|j| NoiseCov::identity(layout.dim(j))).collect();

        let mu = latent::mean_matrix(&r, &mx, &d);
        let w = layout.width();
        let mut beta = vec![0.0; ds.n_rows() * w];
        for i in 0..ds.n_rows() {
            for j in 0..layout.n_attributes() {
                let range = layout.range(j);
                let mean: Vec<f64> = range.clone().map(|f| mu[i * w + f]).collect();
                let cell = match ds.cat(i, j) {
                    Some(x) => consistent_beta(&mean, x, rng)?,
                    None => mean.iter().map(|m| m + dist::sample_std_normal(rng)).collect(),
                };
                beta[i * w + range.start..i * w + range.end].copy_from_slice(&cell);
            }
        }

        let state = ModelState {
            config: config.clone(),
            layout,
            n_rows: ds.n_rows(),
            n_real: ds.n_real(),
            r,
            d,
            c,
            mx,
            my,
            noise,
            beta,
            sigma_y2: 1.0,
            prior_r,
            prior_d,
            prior_c,
        };
        state.validate(ds)?;
        Ok(state)
    }

    /// Forward draw of every latent variable from the prior. The probit
    /// latents are left at zero; [`simulate_data`] fills them.
    pub fn sample_prior<R: Rng + ?Sized>(shape: &Shape, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        check_config_for_shape(config, shape)?;
        let fc = config.feature_counts();
        let layout = ChoiceLayout::new(&shape.category_counts);
        let family = |n: usize, k: usize, nf: usize, rng: &mut R| -> Result<(FeaturePrior, BitMatrix)> {
            Ok(match config.prior_mode {
                PriorMode::Correlated => {
                    let (s, b) = SparseFactorCovariance::sample_prior(
                        n,
                        nf,
                        k,
                        config.slab_c,
                        config.slab_d,
                        config.inclusion,
                        rng,
                    )?;
                    (FeaturePrior::Correlated(s), b)
                }
                PriorMode::IndependentBernoulli => {
                    let (s, b) = IndependentBernoulli::sample_prior(n, k, config.ibp_alpha, rng)?;
                    (FeaturePrior::Independent(s), b)
                }
            })
        };
        let (prior_r, r) = family(shape.n_rows, fc.rows, config.factors.rows, rng)?;
        let (prior_d, d) = family(layout.width(), fc.choices, config.factors.choices, rng)?;
        let (prior_c, c) = family(shape.n_real, fc.reals, config.factors.reals, rng)?;
        let mx = sample_regression_prior(config.n_terms_x(), fc.rows, fc.choices, config, rng)?;
        let my = sample_regression_prior(config.n_terms_y(), fc.rows, fc.reals, config, rng)?;
        let mut noise = Vec::with_capacity(layout.n_attributes());
        for j in 0..layout.n_attributes() {
            noise.push(sample_noise_prior(layout.dim(j), config, rng)?);
        }
        let sigma_y2 = dist::sample_inverse_gamma(config.sigma_y2_shape, config.sigma_y2_rate, rng)?;
        Ok(ModelState {
            config: config.clone(),
            n_rows: shape.n_rows,
            n_real: shape.n_real,
            beta: vec![0.0; shape.n_rows * layout.width()],
            layout,
            r,
            d,
            c,
            mx,
            my,
            noise,
            sigma_y2,
            prior_r,
            prior_d,
            prior_c,
        })
    }
}

pub fn sample_regression_prior<R: Rng + ?Sized>(
    n_terms: usize,
    left: usize,
    right: usize,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<LowRankRegression> {
    let sigma_lambda2 = dist::sample_inverse_gamma(
        config.sigma_lambda2_shape,
        latent::sigma_lambda2_rate(config),
        rng,
    )?;
    let pi = dist::sample_beta(1.0 / n_terms as f64, 1.0, rng)?;
    let mut lr = LowRankRegression {
        lambda: Vec::with_capacity(n_terms),
        active: Vec::with_capacity(n_terms),
        u: Vec::with_capacity(n_terms),
        v: Vec::with_capacity(n_terms),
        pi,
        sigma_lambda2,
    };
    for _ in 0..n_terms {
        lr.active.push(dist::sample_bernoulli(pi, rng)?);
        lr.lambda.push(dist::sample_truncated_normal(0.0, sigma_lambda2, 0.0, f64::INFINITY, rng)?);
        lr.u.push(std_normal_vec(left, rng));
        lr.v.push(std_normal_vec(right, rng));
    }
    Ok(lr)
}

pub fn sample_noise_prior<R: Rng + ?Sized>(dim: usize, config: &ModelConfig, rng: &mut R) -> Result<NoiseCov> {
    if dim == 1 {
        return Ok(NoiseCov::identity(1));
    }
    let omega = DMatrix::identity(dim, dim) * config.wishart_scale;
    let ext = dist::sample_wishart(config.wishart_df, &omega, rng)?;
    NoiseCov::from_extended(&ext)
}

/// Draw β and the data given the rest of the state; the drawn β is stored in
/// the state. The returned dataset has no missing cells.
pub fn simulate_data<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) -> Result<RelationalDataset> {
    redraw_beta(state, rng)?;
    let n = state.n_rows;
    let m1 = state.n_cat();
    let mut cat = Vec::with_capacity(n * m1);
    for i in 0..n {
        for j in 0..m1 {
            cat.push(Some(latent::probit_decode(state.beta_cell(i, j))?));
        }
    }
    let mu_y = latent::mean_matrix(&state.r, &state.my, &state.c);
    let m2 = state.n_real;
    let mut real = Vec::with_capacity(n * m2);
    for i in 0..n {
        for j in 0..m2 {
            real.push(Some(dist::sample_normal(mu_y[i * m2 + j], state.sigma_y2, rng)?));
        }
    }
    RelationalDataset::new(n, state.layout.category_counts().to_vec(), cat, m2, real)
}

/// Draw fresh probit latents for every cell from `N(μ, Σ_j)`, ignoring the data.
pub fn redraw_beta<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) -> Result<()> {
    let layout = state.layout.clone();
    let w = layout.width();
    let mu = latent::mean_matrix(&state.r, &state.mx, &state.d);
    for i in 0..state.n_rows {
        for j in 0..layout.n_attributes() {
            let range = layout.range(j);
            let mean = DVector::from_iterator(range.len(), range.clone().map(|f| mu[i * w + f]));
            let b = dist::sample_mvn(&mean, &state.noise[j].restricted(), rng)?;
            state.beta[i * w + range.start..i * w + range.end].copy_from_slice(b.as_slice());
        }
    }
    Ok(())
}
