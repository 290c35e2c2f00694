//! Joint-distribution check of the sampler.
//!
//! The marginal-conditional simulator draws (state, data) independently from
//! the prior and likelihood. The successive-conditional simulator alternates a
//! full sweep with a fresh draw of the data given the state. Both target the
//! same joint, so every test statistic must have the same mean under each.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corrprior::FeaturePrior;
use crate::data::RelationalDataset;
use crate::diagnostics::{batch_means_se, effective_sample_size, mean_and_var};
use crate::error::Result;
use crate::gibbs::{sweep, SweepSchedule};
use crate::init::{simulate_data, Shape};
use crate::latent::{BitMatrix, LowRankRegression, ModelState};
use crate::rng::RngStream;
use crate::workers::Workers;

#[derive(Debug, Clone)]
pub struct GewekeOptions {
    pub shape: Shape,
    pub model: ModelConfig,
    pub marginal_draws: usize,
    pub successive_sweeps: usize,
    /// Record the successive chain every this many sweeps.
    pub thin: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeStatistic {
    pub name: String,
    pub marginal_mean: f64,
    pub successive_mean: f64,
    pub z: f64,
    /// Effective size of the successive-conditional series.
    pub successive_ess: f64,
}

fn bit_mean(b: &BitMatrix) -> f64 {
    let n = b.rows() * b.cols();
    if n == 0 {
        return 0.0;
    }
    (0..b.rows()).map(|i| b.row(i).iter().filter(|x| **x).count()).sum::<usize>() as f64 / n as f64
}

fn regression_stats(lr: &LowRankRegression, side: &str, out: &mut Vec<(String, f64)>) {
    let active: Vec<usize> = lr.active_terms().collect();
    let weight: f64 = active.iter().map(|&l| lr.lambda[l]).sum();
    out.push((format!("rank_{side}"), active.len() as f64));
    out.push((format!("pi_{side}"), lr.pi));
    out.push((format!("log_sigma_lambda2_{side}"), lr.sigma_lambda2.ln()));
    out.push((format!("log1p_active_weight_{side}"), weight.ln_1p()));
    out.push((format!("lambda0_{side}"), lr.lambda[0].min(3.0)));
    out.push((format!("u00_sq_{side}"), lr.u[0][0].powi(2).min(4.0)));
    out.push((format!("u01_v00_{side}"), (lr.u[0][1] * lr.v[0][0]).clamp(-3.0, 3.0)));
}

fn prior_stats(p: &FeaturePrior, bits: &BitMatrix, fam: &str, out: &mut Vec<(String, f64)>) {
    out.push((format!("bits_{fam}"), bit_mean(bits)));
    let FeaturePrior::Correlated(s) = p else {
        return;
    };
    let n = s.n_entities() as f64;
    let b = s.loadings();
    out.push((
        format!("abs_loading_{fam}"),
        b.iter().map(|x| x.abs().min(3.0)).sum::<f64>() / b.len().max(1) as f64,
    ));
    out.push((
        format!("loading_nonzero_{fam}"),
        b.iter().filter(|x| **x != 0.0).count() as f64 / b.len().max(1) as f64,
    ));
    out.push((
        format!("log_slab_var_{fam}"),
        (0..s.n_entities()).map(|i| s.slab_var(i).ln()).sum::<f64>() / n,
    ));
    out.push((
        format!("inclusion_{fam}"),
        s.inclusion().iter().sum::<f64>() / s.inclusion().len().max(1) as f64,
    ));
    out.push((format!("factor00_{fam}"), s.factor(0)[0].clamp(-3.0, 3.0)));
    out.push((format!("eta00_{fam}"), s.eta(0, 0).clamp(-4.0, 4.0)));
}

/// Scalar summaries of a joint (state, data) draw.
pub fn statistics(state: &ModelState, ds: &RelationalDataset) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    out.push(("log_sigma_y2".into(), state.sigma_y2.ln()));
    regression_stats(&state.mx, "x", &mut out);
    regression_stats(&state.my, "y", &mut out);
    prior_stats(&state.prior_r, &state.r, "rows", &mut out);
    prior_stats(&state.prior_d, &state.d, "choices", &mut out);
    prior_stats(&state.prior_c, &state.c, "reals", &mut out);
    for (j, s) in state.noise.iter().enumerate() {
        if s.dim() > 1 {
            let r = s.restricted();
            out.push((format!("sigma{j}_corr"), r[(0, 1)] / r[(1, 1)].sqrt()));
            out.push((format!("sigma{j}_log_var2"), r[(1, 1)].ln()));
        }
    }
    out.push(("beta00".into(), state.beta[0].clamp(-5.0, 5.0)));
    for j in 0..ds.n_cat() {
        let q = ds.category_counts()[j];
        for p in 0..q - 1 {
            let hits = (0..ds.n_rows()).filter(|&i| ds.cat(i, j) == Some(p as u32)).count();
            out.push((format!("x{j}_is_{p}"), hits as f64 / ds.n_rows() as f64));
        }
    }
    if ds.n_real() > 0 {
        let vals: Vec<f64> = (0..ds.n_rows())
            .flat_map(|i| (0..ds.n_real()).map(move |j| (i, j)))
            .filter_map(|(i, j)| ds.real(i, j))
            .collect();
        let n = vals.len() as f64;
        out.push(("y_mean".into(), (vals.iter().sum::<f64>() / n).clamp(-5.0, 5.0)));
        out.push(("y_sq".into(), (vals.iter().map(|v| v * v).sum::<f64>() / n).ln_1p()));
        out.push(("y00_positive".into(), (vals[0] > 0.0) as u8 as f64));
    }
    out
}

const KEY_MARGINAL: u64 = 0;
const KEY_START: u64 = 1;
const KEY_SWEEPS: u64 = 2;
const KEY_DATA: u64 = 3;

/// Run both simulators and compare every statistic with a z-score whose
/// standard error uses batch means for the successive chain.
pub fn geweke_test(opts: &GewekeOptions, workers: &Workers) -> Result<Vec<GewekeStatistic>> {
    let root = RngStream::new(opts.seed);
    let values = |state: &ModelState, ds: &RelationalDataset| -> Vec<f64> {
        statistics(state, ds).into_iter().map(|(_, v)| v).collect()
    };
    let marginal: Vec<Vec<f64>> = workers.try_map(opts.marginal_draws, |t| {
        let mut rng = root.substream(&[KEY_MARGINAL, t as u64]);
        let mut state = ModelState::sample_prior(&opts.shape, &opts.model, &mut rng)?;
        let ds = simulate_data(&mut state, &mut rng)?;
        Ok(values(&state, &ds))
    })?;

    let mut rng = root.substream(&[KEY_START]);
    let mut state = ModelState::sample_prior(&opts.shape, &opts.model, &mut rng)?;
    let mut ds = simulate_data(&mut state, &mut rng)?;
    let names: Vec<String> = statistics(&state, &ds).into_iter().map(|(n, _)| n).collect();
    let sweeps = root.child(&[KEY_SWEEPS]);
    let schedule = SweepSchedule::default();
    let thin = opts.thin.max(1);
    let mut successive = Vec::with_capacity(opts.successive_sweeps / thin);
    for it in 1..=opts.successive_sweeps {
        sweep(&mut state, &ds, &sweeps, it as u64, &schedule, workers)?;
        let mut g = root.substream(&[KEY_DATA, it as u64]);
        ds = simulate_data(&mut state, &mut g)?;
        if it % thin == 0 {
            successive.push(values(&state, &ds));
        }
    }

    Ok(names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let a: Vec<f64> = marginal.iter().map(|s| s[k]).collect();
            let b: Vec<f64> = successive.iter().map(|s| s[k]).collect();
            let (ma, va) = mean_and_var(&a);
            let (mb, _) = mean_and_var(&b);
            let se_b = batch_means_se(&b);
            let se = (va / a.len() as f64 + se_b * se_b).sqrt();
            let z = if se > 0.0 { (ma - mb) / se } else { 0.0 };
            GewekeStatistic {
                name: name.clone(),
                marginal_mean: ma,
                successive_mean: mb,
                z,
                successive_ess: effective_sample_size(&b),
            }
        })
        .collect())
}

/// The small model used by the sampler acceptance check.
pub fn tiny_options(seed: u64, marginal_draws: usize, successive_sweeps: usize, thin: usize) -> GewekeOptions {
    let model: ModelConfig = serde_json::from_str(
        r#"{
            "features": 3,
            "factors": {"rows": 2, "choices": 2, "reals": 2},
            "slab_c": 6.0,
            "sigma_lambda2_shape": 4.0,
            "sigma_y2_shape": 3.0,
            "sigma_y2_rate": 2.0
        }"#,
    )
    .expect("static config");
    GewekeOptions {
        shape: Shape {
            n_rows: 6,
            category_counts: vec![2, 3],
            n_real: 2,
        },
        model,
        marginal_draws,
        successive_sweeps,
        thin,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn short_run_reports_every_statistic() {
        let opts = tiny_options(5, 200, 200, 2);
        let stats = geweke_test(&opts, &Workers::sequential()).unwrap();
        assert!(stats.len() >= 20, "{} statistics", stats.len());
        let names: HashSet<&str> = stats.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names.len(), stats.len());
        for s in &stats {
            assert!(s.marginal_mean.is_finite() && s.successive_mean.is_finite(), "{}", s.name);
            assert!(s.z.is_finite(), "{}", s.name);
        }
    }

    #[test]
    fn same_seed_same_statistics() {
        let opts = tiny_options(9, 30, 30, 1);
        let a = geweke_test(&opts, &Workers::sequential()).unwrap();
        let b = geweke_test(&opts, &Workers::new(2).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
