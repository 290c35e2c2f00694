//! The MCMC engine: one sweep updates every block of the model once.

pub mod features;
pub mod probit;
pub mod regression;
pub mod response;
mod run;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::RelationalDataset;
use crate::error::{Error, Result};
use crate::latent::{self, BitMatrix, ModelState, Side};
use crate::linalg;
use crate::rng::RngStream;
use crate::workers::Workers;

use features::RowDesign;
use probit::{MhOutcome, NoiseCovPrior};
use regression::TermUpdater;
use response::Response;

pub use run::{resume, run, Checkpoint, RunOptions, RunSummary, CHECKPOINT_FILE, PROGRESS_FILE, TIMINGS_FILE, TRACE_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Block {
    ProbitLatents,
    RowFeatures,
    ChoiceFeatures,
    RealFeatures,
    TermVectors,
    TermWeights,
    RankIndicators,
    RegressionHyper,
    NoiseCovariance,
    NoiseVariance,
    CovarianceFactors,
}

impl Block {
    pub const DEFAULT_ORDER: [Block; 11] = [
        Block::ProbitLatents,
        Block::RowFeatures,
        Block::ChoiceFeatures,
        Block::RealFeatures,
        Block::TermVectors,
        Block::TermWeights,
        Block::RankIndicators,
        Block::RegressionHyper,
        Block::NoiseCovariance,
        Block::NoiseVariance,
        Block::CovarianceFactors,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Block::ProbitLatents => "probit-latents",
            Block::RowFeatures => "row-features",
            Block::ChoiceFeatures => "choice-features",
            Block::RealFeatures => "real-features",
            Block::TermVectors => "term-vectors",
            Block::TermWeights => "term-weights",
            Block::RankIndicators => "rank-indicators",
            Block::RegressionHyper => "regression-hyper",
            Block::NoiseCovariance => "noise-covariance",
            Block::NoiseVariance => "noise-variance",
            Block::CovarianceFactors => "covariance-factors",
        }
    }

    fn key(&self) -> u64 {
        *self as u64 + 1
    }
}

/// Ordered blocks of one sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSchedule {
    pub blocks: Vec<Block>,
}

impl Default for SweepSchedule {
    fn default() -> Self {
        SweepSchedule {
            blocks: Block::DEFAULT_ORDER.to_vec(),
        }
    }
}

impl SweepSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("a sweep needs at least one block".into()));
        }
        for (n, b) in self.blocks.iter().enumerate() {
            if self.blocks[..n].contains(b) {
                return Err(Error::Config(format!("block `{}` listed twice", b.name())));
            }
        }
        Ok(())
    }
}

/// What happened during one sweep.
#[derive(Debug, Clone, Default)]
pub struct SweepDiagnostics {
    /// Σ_j outcome per attribute (None when q_j = 2).
    pub mh: Vec<Option<MhOutcome>>,
    /// Wall time per block in schedule order.
    pub block_seconds: Vec<(Block, f64)>,
}

/// Running Σ_j acceptance counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MhDiagnostics {
    pub proposals: Vec<u64>,
    pub accepted: Vec<u64>,
    pub invalid: Vec<u64>,
}

impl MhDiagnostics {
    pub fn new(n_attributes: usize) -> Self {
        MhDiagnostics {
            proposals: vec![0; n_attributes],
            accepted: vec![0; n_attributes],
            invalid: vec![0; n_attributes],
        }
    }

    pub fn record(&mut self, sweep: &SweepDiagnostics) {
        for (j, o) in sweep.mh.iter().enumerate() {
            if let Some(o) = o {
                self.proposals[j] += 1;
                match o {
                    MhOutcome::Accepted => self.accepted[j] += 1,
                    MhOutcome::Invalid => self.invalid[j] += 1,
                    MhOutcome::Rejected => {}
                }
            }
        }
    }

    /// Acceptance rate per attribute; None for attributes never proposed.
    pub fn rates(&self) -> Vec<Option<f64>> {
        self.proposals
            .iter()
            .zip(&self.accepted)
            .map(|(&p, &a)| if p == 0 { None } else { Some(a as f64 / p as f64) })
            .collect()
    }
}

const KEY_SIDE_X: u64 = 1;
const KEY_SIDE_Y: u64 = 2;

fn side_key(side: Side) -> u64 {
    match side {
        Side::X => KEY_SIDE_X,
        Side::Y => KEY_SIDE_Y,
    }
}

/// Run one sweep of `schedule` on `state`. Sweep `index` selects the random
/// substreams, so a given `(stream, index, state)` always yields the same result.
pub fn sweep(
    state: &mut ModelState,
    ds: &RelationalDataset,
    stream: &RngStream,
    index: u64,
    schedule: &SweepSchedule,
    workers: &Workers,
) -> Result<SweepDiagnostics> {
    let root = stream.child(&[index]);
    let mut diag = SweepDiagnostics {
        mh: vec![None; state.n_cat()],
        block_seconds: Vec::with_capacity(schedule.blocks.len()),
    };
    for &block in &schedule.blocks {
        let t0 = Instant::now();
        let s = root.child(&[block.key()]);
        let res = match block {
            Block::ProbitLatents => update_probit_latents(state, ds, &s, workers),
            Block::RowFeatures => update_row_features(state, ds, &s, workers),
            Block::ChoiceFeatures => update_column_features(state, ds, Side::X, &s, workers),
            Block::RealFeatures => update_column_features(state, ds, Side::Y, &s, workers),
            Block::TermVectors => update_terms(state, ds, &s, TermBlock::Vectors),
            Block::TermWeights => update_terms(state, ds, &s, TermBlock::Weights),
            Block::RankIndicators => update_terms(state, ds, &s, TermBlock::Indicators),
            Block::RegressionHyper => update_regression_hyper(state, &s),
            Block::NoiseCovariance => update_noise_covariances(state, ds, &s, workers, &mut diag),
            Block::NoiseVariance => update_noise_variance(state, ds, &s),
            Block::CovarianceFactors => update_feature_priors(state, &s, workers),
        };
        res.map_err(|e| match e {
            Error::Numerical { message, .. } => Error::Numerical {
                block: block.name().into(),
                iteration: index as usize,
                message,
            },
            other => Error::Numerical {
                block: block.name().into(),
                iteration: index as usize,
                message: other.to_string(),
            },
        })?;
        diag.block_seconds.push((block, t0.elapsed().as_secs_f64()));
    }
    Ok(diag)
}

fn update_probit_latents(state: &mut ModelState, ds: &RelationalDataset, s: &RngStream, workers: &Workers) -> Result<()> {
    let layout = state.layout.clone();
    let w = layout.width();
    if w == 0 {
        return Ok(());
    }
    let mu = latent::mean_matrix(&state.r, &state.mx, &state.d);
    let chols = state
        .noise
        .iter()
        .map(|n| linalg::cholesky(&n.restricted(), "noise covariance").map(|c| c.l()))
        .collect::<Result<Vec<_>>>()?;
    let st = &*state;
    let rows = workers.try_map(st.n_rows, |i| {
        let mut rng = s.substream(&[i as u64]);
        let mut row = st.beta[i * w..(i + 1) * w].to_vec();
        for j in 0..layout.n_attributes() {
            let range = layout.range(j);
            probit::update_cell(
                &mut row[range.clone()],
                &mu[i * w + range.start..i * w + range.end],
                st.noise[j].precision(),
                &chols[j],
                ds.cat(i, j),
                &mut rng,
            )?;
        }
        Ok(row)
    })?;
    for (i, row) in rows.into_iter().enumerate() {
        state.beta[i * w..(i + 1) * w].copy_from_slice(&row);
    }
    Ok(())
}

fn update_row_features(state: &mut ModelState, ds: &RelationalDataset, s: &RngStream, workers: &Workers) -> Result<()> {
    let mx = latent::assemble_regression_matrix(&state.mx);
    let my = latent::assemble_regression_matrix(&state.my);
    let wx = latent::column_projection(&mx, &state.d);
    let wy = latent::column_projection(&my, &state.c);
    let (new_rows, latents) = {
        let st = &*state;
        let rx = Response::categorical_parts(&st.layout, &st.beta, &st.noise, ds);
        let ry = Response::real(ds, st.sigma_y2);
        let designs = [RowDesign { response: &rx, w: &wx }, RowDesign { response: &ry, w: &wy }];
        let out = workers.try_map(st.n_rows, |i| {
            let mut rng = s.substream(&[i as u64]);
            features::update_row(i, st.r.row(i), &designs, &st.prior_r, &mut rng)
        })?;
        out.into_iter().unzip::<_, _, Vec<_>, Vec<_>>()
    };
    for (i, (bits, lat)) in new_rows.iter().zip(latents).enumerate() {
        state.r.set_row(i, bits);
        for (k, v) in lat.into_iter().enumerate() {
            state.prior_r.set_latent(i, k, v);
        }
    }
    Ok(())
}

fn update_column_features(
    state: &mut ModelState,
    ds: &RelationalDataset,
    side: Side,
    s: &RngStream,
    workers: &Workers,
) -> Result<()> {
    let m = latent::assemble_regression_matrix(state.regression(side));
    let a = latent::row_projection(&state.r, &m);
    let results = {
        let st = &*state;
        let resp = match side {
            Side::X => Response::categorical_parts(&st.layout, &st.beta, &st.noise, ds),
            Side::Y => Response::real(ds, st.sigma_y2),
        };
        let (cols, prior) = match side {
            Side::X => (&st.d, &st.prior_d),
            Side::Y => (&st.c, &st.prior_c),
        };
        workers.try_map(resp.n_attributes(), |j| {
            let mut rng = s.substream(&[j as u64]);
            let range = resp.layout.range(j);
            let current: Vec<Vec<bool>> = range.clone().map(|f| cols.row(f).to_vec()).collect();
            features::update_attribute(j, &current, &resp, &a, prior, &mut rng)
                .map(|(b, l)| (range.start, b, l))
        })?
    };
    let (cols, prior) = match side {
        Side::X => (&mut state.d, &mut state.prior_d),
        Side::Y => (&mut state.c, &mut state.prior_c),
    };
    for (start, bits, lats) in results {
        for (p, (row, lat)) in bits.iter().zip(lats).enumerate() {
            cols.set_row(start + p, row);
            for (k, v) in lat.into_iter().enumerate() {
                prior.set_latent(start + p, k, v);
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum TermBlock {
    Vectors,
    Weights,
    Indicators,
}

fn update_terms(state: &mut ModelState, ds: &RelationalDataset, s: &RngStream, which: TermBlock) -> Result<()> {
    for side in [Side::X, Side::Y] {
        let ModelState {
            layout,
            r,
            d,
            c,
            mx,
            my,
            noise,
            beta,
            sigma_y2,
            ..
        } = state;
        let (resp, cols, lr): (Response<'_>, &BitMatrix, _) = match side {
            Side::X => (Response::categorical_parts(layout, beta, noise, ds), &*d, mx),
            Side::Y => (Response::real(ds, *sigma_y2), &*c, my),
        };
        let mut up = TermUpdater::new(&resp, r, cols, lr);
        for l in 0..lr.n_terms() {
            let mut rng = s.substream(&[side_key(side), l as u64]);
            match which {
                TermBlock::Vectors => {
                    up.update_u(lr, l, &mut rng)?;
                    up.update_v(lr, l, &mut rng)?;
                }
                TermBlock::Weights => up.update_lambda(lr, l, &mut rng)?,
                TermBlock::Indicators => up.update_indicator(lr, l, &mut rng)?,
            }
        }
    }
    Ok(())
}

fn update_regression_hyper(state: &mut ModelState, s: &RngStream) -> Result<()> {
    let shape = state.config.sigma_lambda2_shape;
    let rate = latent::sigma_lambda2_rate(&state.config);
    for (side, lr) in [(Side::X, &mut state.mx), (Side::Y, &mut state.my)] {
        let mut rng = s.substream(&[side_key(side)]);
        lr.pi = regression::sample_rank_inclusion(lr, &mut rng)?;
        lr.sigma_lambda2 = regression::sample_weight_scale(lr, shape, rate, &mut rng)?;
    }
    Ok(())
}

/// Residual vectors `β_ij − μ_ij` of attribute `j` over observed rows.
pub fn attribute_residuals(state: &ModelState, ds: &RelationalDataset, mu: &[f64], j: usize) -> Vec<Vec<f64>> {
    let w = state.layout.width();
    let range = state.layout.range(j);
    (0..state.n_rows)
        .filter(|&i| ds.cat_observed(i, j))
        .map(|i| range.clone().map(|f| state.beta[i * w + f] - mu[i * w + f]).collect())
        .collect()
}

fn update_noise_covariances(
    state: &mut ModelState,
    ds: &RelationalDataset,
    s: &RngStream,
    workers: &Workers,
    diag: &mut SweepDiagnostics,
) -> Result<()> {
    if state.noise.iter().all(|n| n.dim() == 1) {
        return Ok(());
    }
    let mu = latent::mean_matrix(&state.r, &state.mx, &state.d);
    let prior = NoiseCovPrior {
        df: state.config.wishart_df,
        scale: state.config.wishart_scale,
        proposal_df: state.config.proposal_df(),
    };
    let st = &*state;
    let out = workers.try_map(st.n_cat(), |j| {
        if st.noise[j].dim() == 1 {
            return Ok(None);
        }
        let mut rng = s.substream(&[j as u64]);
        let res = attribute_residuals(st, ds, &mu, j);
        probit::update_noise_cov(&st.noise[j], &res, &prior, &mut rng).map(Some)
    })?;
    for (j, o) in out.into_iter().enumerate() {
        if let Some((cov, outcome)) = o {
            state.noise[j] = cov;
            diag.mh[j] = Some(outcome);
        }
    }
    Ok(())
}

fn update_noise_variance(state: &mut ModelState, ds: &RelationalDataset, s: &RngStream) -> Result<()> {
    let mu = latent::mean_matrix(&state.r, &state.my, &state.c);
    let m2 = state.n_real;
    let (mut n, mut ss) = (0usize, 0.0);
    for i in 0..state.n_rows {
        for j in 0..m2 {
            if let Some(y) = ds.real(i, j) {
                let e = y - mu[i * m2 + j];
                n += 1;
                ss += e * e;
            }
        }
    }
    let mut rng = s.substream(&[0]);
    state.sigma_y2 = probit::sample_noise_variance(
        n,
        ss,
        state.config.sigma_y2_shape,
        state.config.sigma_y2_rate,
        &mut rng,
    )?;
    Ok(())
}

fn update_feature_priors(state: &mut ModelState, s: &RngStream, workers: &Workers) -> Result<()> {
    state.prior_r.update(&state.r, &s.child(&[0]), workers)?;
    state.prior_d.update(&state.d, &s.child(&[1]), workers)?;
    state.prior_c.update(&state.c, &s.child(&[2]), workers)?;
    Ok(())
}
