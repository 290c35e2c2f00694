//! Synthetic datasets with optionally planted ranks and factor counts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corrprior::FeaturePrior;
use crate::data::RelationalDataset;
use crate::distributions as dist;
use crate::error::{Error, Result};
use crate::init::{simulate_data, Shape};
use crate::latent::{effective_rank, BitMatrix, Family, LowRankRegression, ModelState};

/// Overrides applied to a prior draw before the data are generated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Planted {
    /// Active terms of M^X; the first `rank_x` terms are switched on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_x: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_y: Option<usize>,
    /// Loading columns with nonzero free entries in every correlated family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<usize>,
    /// Added to every planted term weight.
    #[serde(default)]
    pub min_lambda: f64,
    /// Standard deviation of the planted free loadings (default: slab draw).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loading_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_y2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFactors {
    pub family: Family,
    pub active_factors: Option<usize>,
}

/// Generator state and its headline quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub effective_rank_x: usize,
    pub effective_rank_y: usize,
    pub factors: Vec<FamilyFactors>,
    pub sigma_y2: f64,
    pub state: ModelState,
}

impl Truth {
    pub fn of(state: ModelState) -> Self {
        Truth {
            effective_rank_x: effective_rank(&state.mx),
            effective_rank_y: effective_rank(&state.my),
            factors: Family::ALL
                .iter()
                .map(|&family| FamilyFactors {
                    family,
                    active_factors: state.prior(family).as_correlated().map(|s| s.active_factor_count()),
                })
                .collect(),
            sigma_y2: state.sigma_y2,
            state,
        }
    }
}

/// Gram–Schmidt on `vs`, each result rescaled to norm `√dim`.
fn orthogonalize(vs: &mut [Vec<f64>]) {
    for a in 0..vs.len() {
        let dim = vs[a].len();
        for b in 0..a {
            let (done, rest) = vs.split_at_mut(a);
            let proj = crate::linalg::dot(&rest[0], &done[b]) / dim as f64;
            for (x, y) in rest[0].iter_mut().zip(&done[b]) {
                *x -= proj * y;
            }
        }
        let norm = crate::linalg::dot(&vs[a], &vs[a]).sqrt();
        let scale = (dim as f64).sqrt() / norm;
        vs[a].iter_mut().for_each(|x| *x *= scale);
    }
}

fn plant_rank<R: Rng + ?Sized>(lr: &mut LowRankRegression, rank: usize, min_lambda: f64, name: &str, rng: &mut R) -> Result<()> {
    let n = lr.n_terms();
    if rank > n {
        return Err(Error::Config(format!("planted rank {rank} of M^{name} exceeds its {n} terms")));
    }
    if rank > lr.left_dim().min(lr.right_dim()) {
        return Err(Error::Config(format!(
            "planted rank {rank} of M^{name} exceeds its {}×{} shape",
            lr.left_dim(),
            lr.right_dim()
        )));
    }
    // Mutually orthogonal active terms keep every planted direction visible.
    orthogonalize(&mut lr.u[..rank]);
    orthogonalize(&mut lr.v[..rank]);
    for l in 0..n {
        lr.active[l] = l < rank;
        if l < rank {
            lr.lambda[l] = min_lambda + dist::sample_truncated_normal(0.0, lr.sigma_lambda2, 0.0, f64::INFINITY, rng)?;
        }
    }
    lr.pi = rank as f64 / n as f64;
    Ok(())
}

fn plant_factors<R: Rng + ?Sized>(
    prior: &mut FeaturePrior,
    bits: &mut BitMatrix,
    factors: usize,
    scale: Option<f64>,
    rng: &mut R,
) -> Result<()> {
    let FeaturePrior::Correlated(s) = prior else {
        return Ok(());
    };
    let (n, nf, k) = (s.n_entities(), s.n_factors(), s.n_features());
    if factors > nf {
        return Err(Error::Config(format!("{factors} planted factors exceed the {nf} loading columns")));
    }
    if n < 2 {
        // No free loadings exist.
        return Ok(());
    }
    let mut b = s.loadings().to_vec();
    for i in 0..n {
        for h in 0..nf.min(i) {
            b[i * nf + h] = if h < factors {
                let sd = scale.unwrap_or_else(|| s.slab_var(i).sqrt());
                // Nonzero with probability one.
                sd * dist::sample_std_normal(rng)
            } else {
                0.0
            };
        }
    }
    s.set_loadings(&b)?;
    for i in 0..n {
        for kk in 0..k {
            let eta = s.mean(i, kk) + dist::sample_std_normal(rng);
            s.set_eta(i, kk, eta);
            bits.set(i, kk, eta > 0.0);
        }
    }
    Ok(())
}

/// Draw a state from the prior, apply `planted`, then draw a complete dataset.
pub fn simulate<R: Rng + ?Sized>(
    shape: &Shape,
    config: &ModelConfig,
    planted: &Planted,
    rng: &mut R,
) -> Result<(RelationalDataset, Truth)> {
    let mut state = ModelState::sample_prior(shape, config, rng)?;
    if let Some(r) = planted.rank_x {
        plant_rank(&mut state.mx, r, planted.min_lambda, "X", rng)?;
    }
    if let Some(r) = planted.rank_y {
        plant_rank(&mut state.my, r, planted.min_lambda, "Y", rng)?;
    }
    if let Some(f) = planted.factors {
        plant_factors(&mut state.prior_r, &mut state.r, f, planted.loading_scale, rng)?;
        plant_factors(&mut state.prior_d, &mut state.d, f, planted.loading_scale, rng)?;
        plant_factors(&mut state.prior_c, &mut state.c, f, planted.loading_scale, rng)?;
    }
    if let Some(v) = planted.sigma_y2 {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!("planted σ_y² must be positive, got {v}")));
        }
        state.sigma_y2 = v;
    }
    let ds = simulate_data(&mut state, rng)?;
    Ok((ds, Truth::of(state)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> Shape {
        Shape {
            n_rows: 10,
            category_counts: vec![2, 3],
            n_real: 3,
        }
    }

    fn config() -> ModelConfig {
        serde_json::from_str(r#"{"features": 4, "factors": {"rows": 3, "choices": 3, "reals": 2}}"#).unwrap()
    }

    #[test]
    fn planted_values_are_recorded() {
        let planted = Planted {
            rank_x: Some(2),
            rank_y: Some(3),
            factors: Some(2),
            min_lambda: 1.0,
            loading_scale: Some(2.0),
            sigma_y2: Some(0.25),
        };
        let (ds, truth) = simulate(&shape(), &config(), &planted, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(ds.n_rows(), 10);
        assert_eq!(ds.category_counts(), &[2, 3]);
        assert_eq!(truth.effective_rank_x, 2);
        assert_eq!(truth.effective_rank_y, 3);
        assert_eq!(truth.sigma_y2, 0.25);
        for f in &truth.factors {
            assert_eq!(f.active_factors, Some(2));
        }
        assert!(truth.state.mx.active_terms().all(|l| truth.state.mx.lambda[l] >= 1.0));
        truth.state.validate(&ds).unwrap();
    }

    #[test]
    fn oversized_plants_are_rejected() {
        let mut p = Planted {
            rank_x: Some(5),
            ..Default::default()
        };
        let mut g = ChaCha8Rng::seed_from_u64(1);
        assert!(simulate(&shape(), &config(), &p, &mut g).is_err());
        p.rank_x = None;
        p.factors = Some(4);
        assert!(simulate(&shape(), &config(), &p, &mut g).is_err());
    }

    #[test]
    fn same_seed_same_data() {
        let p = Planted {
            rank_x: Some(1),
            ..Default::default()
        };
        let a = simulate(&shape(), &config(), &p, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = simulate(&shape(), &config(), &p, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }
}
