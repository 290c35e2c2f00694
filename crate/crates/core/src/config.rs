//! Model hyperparameters and sampling schedule.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Prior over the binary feature matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// Sparse factor probit prior with correlated entities.
    #[default]
    Correlated,
    /// Independent `Ber(π_k)` bits with `π_k ~ Beta(α/K, 1)`.
    IndependentBernoulli,
}

/// Granularity of the spike-and-slab inclusion probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InclusionMode {
    /// One probability per loading column.
    #[default]
    PerFactor,
    /// One probability per entity row.
    PerEntity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub rows: usize,
    pub choices: usize,
    pub reals: usize,
}

impl FamilyCounts {
    pub const fn uniform(n: usize) -> Self {
        FamilyCounts {
            rows: n,
            choices: n,
            reals: n,
        }
    }
}

fn default_features() -> usize {
    20
}
fn default_factors() -> FamilyCounts {
    FamilyCounts::uniform(6)
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn eight() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature truncation K shared by all families unless overridden.
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_choices: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_reals: Option<usize>,
    /// Rank-one terms in M^X and M^Y (default K).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms_x: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms_y: Option<usize>,
    /// Loading columns K_f of each covariance factor model.
    #[serde(default = "default_factors")]
    pub factors: FamilyCounts,
    #[serde(default = "one")]
    pub slab_c: f64,
    #[serde(default = "one")]
    pub slab_d: f64,
    #[serde(default)]
    pub inclusion: InclusionMode,
    /// Prior mean of σ_λ².
    #[serde(default = "one")]
    pub sigma_lambda2: f64,
    #[serde(default = "two")]
    pub sigma_lambda2_shape: f64,
    /// Wishart degrees of freedom m₀ of the Σ_j prior.
    #[serde(default = "eight")]
    pub wishart_df: f64,
    /// Ω = scale · I.
    #[serde(default = "one")]
    pub wishart_scale: f64,
    /// Degrees of freedom of the Σ_j Wishart proposal (default m₀).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_df: Option<f64>,
    #[serde(default = "one")]
    pub sigma_y2_shape: f64,
    #[serde(default = "one")]
    pub sigma_y2_rate: f64,
    #[serde(default)]
    pub prior_mode: PriorMode,
    #[serde(default = "one")]
    pub ibp_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl ModelConfig {
    pub fn feature_counts(&self) -> FamilyCounts {
        FamilyCounts {
            rows: self.features_rows.unwrap_or(self.features),
            choices: self.features_choices.unwrap_or(self.features),
            reals: self.features_reals.unwrap_or(self.features),
        }
    }

    pub fn n_terms_x(&self) -> usize {
        self.terms_x.unwrap_or(self.features)
    }

    pub fn n_terms_y(&self) -> usize {
        self.terms_y.unwrap_or(self.features)
    }

    pub fn proposal_df(&self) -> f64 {
        self.proposal_df.unwrap_or(self.wishart_df)
    }

    pub fn validate(&self) -> Result<()> {
        let fc = self.feature_counts();
        if fc.rows == 0 || fc.choices == 0 || fc.reals == 0 {
            return Err(Error::Config("feature counts must be positive".into()));
        }
        if self.n_terms_x() == 0 || self.n_terms_y() == 0 {
            return Err(Error::Config("term counts must be positive".into()));
        }
        if self.factors.rows == 0 || self.factors.choices == 0 || self.factors.reals == 0 {
            return Err(Error::Config("factor counts must be positive".into()));
        }
        let positive = [
            ("slab_c", self.slab_c),
            ("slab_d", self.slab_d),
            ("sigma_lambda2", self.sigma_lambda2),
            ("wishart_df", self.wishart_df),
            ("wishart_scale", self.wishart_scale),
            ("proposal_df", self.proposal_df()),
            ("sigma_y2_shape", self.sigma_y2_shape),
            ("sigma_y2_rate", self.sigma_y2_rate),
            ("ibp_alpha", self.ibp_alpha),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma_lambda2_shape.is_finite() && self.sigma_lambda2_shape > 1.0) {
            return Err(Error::Config(
                "sigma_lambda2_shape must exceed 1 so the prior mean exists".into(),
            ));
        }
        Ok(())
    }
}

fn default_iterations() -> usize {
    20_000
}
fn default_burn_in() -> usize {
    5_000
}
fn default_thin() -> usize {
    3
}
fn default_checkpoint() -> usize {
    1_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    /// Write a checkpoint every this many iterations (0 disables).
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl Schedule {
    pub fn new(iterations: usize, burn_in: usize, thin: usize) -> Self {
        Schedule {
            iterations,
            burn_in,
            thin,
            checkpoint_every: default_checkpoint(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether 1-based iteration `it` is retained.
    pub fn keeps(&self, it: usize) -> bool {
        it > self.burn_in && (it - self.burn_in).is_multiple_of(self.thin)
    }

    pub fn retained_count(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string(value)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}
