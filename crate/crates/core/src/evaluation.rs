//! Held-out prediction and the missing-fraction experiment.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, ModelConfig, PriorMode, Schedule};
use crate::data::{hold_out, ChoiceLayout, HeldOutEntry, MatrixKind, RelationalDataset};
use crate::distributions as dist;
use crate::error::{Error, Result};
use crate::gibbs::{self, RunOptions};
use crate::latent::category_probabilities_at;
use crate::rng::RngStream;
use crate::trace::PosteriorTrace;
use crate::workers::Workers;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Prediction {
    Category { value: u32, probabilities: Vec<f64> },
    Real { value: f64 },
}

/// Index of the largest entry, the first one on ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

/// Posterior predictions for `cells` (matrix, row, column).
///
/// Real cells get the posterior mean of `r_iᵀ M^Y c_j`. Categorical cells get
/// the category with the largest posterior-averaged probability; binary
/// attributes use `Φ(μ)` exactly, others `n_mc` Monte Carlo draws per sample.
pub fn predict_entries(
    trace: &PosteriorTrace,
    cells: &[(MatrixKind, usize, usize)],
    n_mc: usize,
    stream: &RngStream,
    workers: &Workers,
) -> Result<Vec<Prediction>> {
    if trace.is_empty() {
        return Err(Error::Domain("cannot predict from an empty trace".into()));
    }
    let h = &trace.header;
    let layout = ChoiceLayout::new(&h.category_counts);
    for &(m, i, j) in cells {
        let ok = i < h.n_rows
            && match m {
                MatrixKind::Categorical => j < layout.n_attributes(),
                MatrixKind::Real => j < h.n_real,
            };
        if !ok {
            return Err(Error::Domain(format!("cell ({}, {i}, {j}) is out of range", m.as_str())));
        }
    }
    // Row projections R M per sample: N × K_cols each.
    let proj: Vec<(DMatrix<f64>, DMatrix<f64>)> = workers.map(trace.len(), |s| {
        let smp = &trace.samples[s];
        let r = smp.r.to_matrix();
        (&r * smp.mx.matrix(), &r * smp.my.matrix())
    });
    workers.try_map(cells.len(), |c| {
        let (m, i, j) = cells[c];
        match m {
            MatrixKind::Real => {
                let mut acc = 0.0;
                for (s, smp) in trace.samples.iter().enumerate() {
                    acc += dot_bits(&proj[s].1, i, smp.c.row(j));
                }
                Ok(Prediction::Real {
                    value: acc / trace.len() as f64,
                })
            }
            MatrixKind::Categorical => {
                let q = layout.category_count(j);
                let range = layout.range(j);
                let mut acc = vec![0.0; q];
                let mut rng = stream.substream(&[c as u64]);
                for (s, smp) in trace.samples.iter().enumerate() {
                    let mean: Vec<f64> = range.clone().map(|f| dot_bits(&proj[s].0, i, smp.d.row(f))).collect();
                    if q == 2 {
                        let p1 = dist::std_normal_cdf(mean[0]);
                        acc[0] += 1.0 - p1;
                        acc[1] += p1;
                    } else {
                        let p = category_probabilities_at(&mean, &smp.noise_cov(j), n_mc, &mut rng)?;
                        for (a, v) in acc.iter_mut().zip(p) {
                            *a += v;
                        }
                    }
                }
                let probabilities: Vec<f64> = acc.into_iter().map(|a| a / trace.len() as f64).collect();
                Ok(Prediction::Category {
                    value: argmax(&probabilities) as u32,
                    probabilities,
                })
            }
        }
    })
}

fn dot_bits(a: &DMatrix<f64>, i: usize, bits: &[bool]) -> f64 {
    bits.iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(k, _)| a[(i, k)])
        .sum()
}

fn check_lengths(preds: &[Prediction], truth: &[HeldOutEntry]) -> Result<()> {
    if preds.len() != truth.len() {
        return Err(Error::Domain(format!(
            "{} predictions for {} held-out cells",
            preds.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Share of categorical cells predicted exactly; None without categorical cells.
pub fn fraction_correct(preds: &[Prediction], truth: &[HeldOutEntry]) -> Result<Option<f64>> {
    check_lengths(preds, truth)?;
    let (mut n, mut hit) = (0usize, 0usize);
    for (p, t) in preds.iter().zip(truth) {
        if let (Prediction::Category { value, .. }, MatrixKind::Categorical) = (p, t.matrix) {
            n += 1;
            if *value as f64 == t.value {
                hit += 1;
            }
        }
    }
    Ok((n > 0).then(|| hit as f64 / n as f64))
}

/// Root mean squared error over real cells; None without real cells.
pub fn rmse(preds: &[Prediction], truth: &[HeldOutEntry]) -> Result<Option<f64>> {
    check_lengths(preds, truth)?;
    let (mut n, mut ss) = (0usize, 0.0);
    for (p, t) in preds.iter().zip(truth) {
        if let (Prediction::Real { value }, MatrixKind::Real) = (p, t.matrix) {
            n += 1;
            ss += (value - t.value).powi(2);
        }
    }
    Ok((n > 0).then(|| (ss / n as f64).sqrt()))
}

/// Accuracy of predicting each held-out categorical cell by its attribute's
/// most frequent training category (lowest code on ties).
pub fn majority_baseline(train: &RelationalDataset, truth: &[HeldOutEntry]) -> Option<f64> {
    let modes: Vec<u32> = (0..train.n_cat())
        .map(|j| {
            let mut counts = vec![0usize; train.category_counts()[j]];
            for i in 0..train.n_rows() {
                if let Some(x) = train.cat(i, j) {
                    counts[x as usize] += 1;
                }
            }
            let c: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            argmax(&c) as u32
        })
        .collect();
    let cat: Vec<&HeldOutEntry> = truth.iter().filter(|t| t.matrix == MatrixKind::Categorical).collect();
    if cat.is_empty() {
        return None;
    }
    let hit = cat.iter().filter(|t| modes[t.col] as f64 == t.value).count();
    Some(hit as f64 / cat.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default = "default_variants")]
    pub variants: Vec<PriorMode>,
    /// Monte Carlo draws per sample for categorical probabilities.
    #[serde(default = "default_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: Schedule,
}

fn one() -> usize {
    1
}
fn default_mc() -> usize {
    200
}
fn default_variants() -> Vec<PriorMode> {
    vec![PriorMode::Correlated, PriorMode::IndependentBernoulli]
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Config("at least one hold-out fraction is required".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return Err(Error::Config(format!("hold-out fraction {f} is outside (0, 1)")));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one prior variant is required".into()));
        }
        if self.n_mc == 0 {
            return Err(Error::Config("n_mc must be positive".into()));
        }
        self.model.validate()?;
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fraction: f64,
    pub repeat: usize,
    pub variant: PriorMode,
    pub split_seed: u64,
    pub fit_seed: u64,
    pub accuracy: Option<f64>,
    /// On the standardized scale of the training columns.
    pub rmse: Option<f64>,
    pub majority_baseline: Option<f64>,
    pub n_categorical: usize,
    pub n_real: usize,
    pub error: Option<String>,
    /// Wall-clock time; kept out of the JSON so reports are reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub fraction: f64,
    pub variant: PriorMode,
    pub runs: usize,
    pub failed: usize,
    pub accuracy_mean: Option<f64>,
    pub accuracy_sd: Option<f64>,
    pub rmse_mean: Option<f64>,
    pub rmse_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<CellSummary>,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl EvalReport {
    /// Same report with every wall-clock field zeroed.
    pub fn without_timings(&self) -> EvalReport {
        let mut r = self.clone();
        r.runtime_seconds = 0.0;
        for run in &mut r.runs {
            run.seconds = 0.0;
        }
        r
    }

    /// Accuracies of one variant in (fraction, repeat) order.
    pub fn accuracies(&self, variant: PriorMode) -> Vec<Option<f64>> {
        self.runs.iter().filter(|r| r.variant == variant).map(|r| r.accuracy).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn write_runs_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "fraction",
            "repeat",
            "variant",
            "split_seed",
            "fit_seed",
            "accuracy",
            "rmse",
            "majority_baseline",
            "n_categorical",
            "n_real",
            "error",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.runs {
            w.write_record([
                format!("{:?}", r.fraction),
                r.repeat.to_string(),
                variant_name(r.variant).into(),
                r.split_seed.to_string(),
                r.fit_seed.to_string(),
                opt(r.accuracy),
                opt(r.rmse),
                opt(r.majority_baseline),
                r.n_categorical.to_string(),
                r.n_real.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Wall-clock seconds per run plus a final `total` row.
    pub fn write_timings_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["fraction", "repeat", "variant", "seconds"])?;
        for r in &self.runs {
            w.write_record([
                format!("{:?}", r.fraction),
                r.repeat.to_string(),
                variant_name(r.variant).into(),
                format!("{:.3}", r.seconds),
            ])?;
        }
        w.write_record(["", "", "total", &format!("{:.3}", self.runtime_seconds)])?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "fraction",
            "variant",
            "runs",
            "failed",
            "accuracy_mean",
            "accuracy_sd",
            "rmse_mean",
            "rmse_sd",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for c in &self.summary {
            w.write_record([
                format!("{:?}", c.fraction),
                variant_name(c.variant).into(),
                c.runs.to_string(),
                c.failed.to_string(),
                opt(c.accuracy_mean),
                opt(c.accuracy_sd),
                opt(c.rmse_mean),
                opt(c.rmse_sd),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn variant_name(v: PriorMode) -> &'static str {
    match v {
        PriorMode::Correlated => "correlated",
        PriorMode::IndependentBernoulli => "independent-bernoulli",
    }
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        Some(0.0)
    };
    (Some(m), sd)
}

const KEY_SPLIT: u64 = 1;
const KEY_FIT: u64 = 2;
const KEY_PREDICT: u64 = 3;

/// Fit on a training split and score the held-out cells.
pub struct FitOutcome {
    pub trace: PosteriorTrace,
    pub predictions: Vec<Prediction>,
    pub accuracy: Option<f64>,
    pub rmse: Option<f64>,
}

/// Train on `train`, predict `heldout` and score. Real columns are
/// standardized with training statistics before fitting.
pub fn fit_and_score(
    train: &RelationalDataset,
    heldout: &[HeldOutEntry],
    model: &ModelConfig,
    schedule: &Schedule,
    n_mc: usize,
    seed: u64,
    workers: &Workers,
) -> Result<FitOutcome> {
    let (train_std, st) = crate::data::standardize_real(train)?;
    let truth: Vec<HeldOutEntry> = heldout
        .iter()
        .map(|e| match e.matrix {
            MatrixKind::Real => HeldOutEntry {
                value: st.forward(e.col, e.value),
                ..e.clone()
            },
            MatrixKind::Categorical => e.clone(),
        })
        .collect();
    let out = gibbs::run(&train_std, model, &RunOptions::in_memory(schedule.clone(), seed), workers)?;
    let cells: Vec<_> = truth.iter().map(|e| (e.matrix, e.row, e.col)).collect();
    let stream = RngStream::new(seed).child(&[KEY_PREDICT]);
    let predictions = predict_entries(&out.trace, &cells, n_mc, &stream, workers)?;
    Ok(FitOutcome {
        accuracy: fraction_correct(&predictions, &truth)?,
        rmse: rmse(&predictions, &truth)?,
        trace: out.trace,
        predictions,
    })
}

/// For every (fraction, repeat) draw one hold-out split, fit every variant on
/// it and score. Splits and fit seeds are shared across variants, so variant
/// results are paired.
pub fn missing_fraction_sweep(ds: &RelationalDataset, cfg: &SweepConfig, seed: u64, workers: &Workers) -> Result<EvalReport> {
    cfg.validate()?;
    let t0 = Instant::now();
    let root = RngStream::new(seed);
    let mut jobs = Vec::new();
    for (fi, &fraction) in cfg.fractions.iter().enumerate() {
        for repeat in 0..cfg.repeats {
            for &variant in &cfg.variants {
                jobs.push((fi, fraction, repeat, variant));
            }
        }
    }
    use rand::Rng;
    let runs = workers.map(jobs.len(), |k| {
        let (fi, fraction, repeat, variant) = jobs[k];
        let split_seed: u64 = root.substream(&[KEY_SPLIT, fi as u64, repeat as u64]).random();
        let fit_seed: u64 = root.substream(&[KEY_FIT, fi as u64, repeat as u64]).random();
        let t = Instant::now();
        let mut model = cfg.model.clone();
        model.prior_mode = variant;
        let mut rec = RunRecord {
            fraction,
            repeat,
            variant,
            split_seed,
            fit_seed,
            accuracy: None,
            rmse: None,
            majority_baseline: None,
            n_categorical: 0,
            n_real: 0,
            error: None,
            seconds: 0.0,
        };
        let result = hold_out(ds, fraction, split_seed).and_then(|h| {
            rec.majority_baseline = majority_baseline(&h.train, &h.heldout);
            rec.n_categorical = h.heldout.iter().filter(|e| e.matrix == MatrixKind::Categorical).count();
            rec.n_real = h.heldout.len() - rec.n_categorical;
            fit_and_score(&h.train, &h.heldout, &model, &cfg.schedule, cfg.n_mc, fit_seed, &Workers::sequential())
        });
        match result {
            Ok(o) => {
                rec.accuracy = o.accuracy;
                rec.rmse = o.rmse;
            }
            Err(e) => {
                log::warn!("fraction {fraction}, repeat {repeat}, {}: {e}", variant_name(variant));
                rec.error = Some(e.to_string());
            }
        }
        rec.seconds = t.elapsed().as_secs_f64();
        rec
    });
    let mut summary = Vec::new();
    for &fraction in &cfg.fractions {
        for &variant in &cfg.variants {
            let sel: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.fraction == fraction && r.variant == variant)
                .collect();
            let acc: Vec<f64> = sel.iter().filter_map(|r| r.accuracy).collect();
            let err: Vec<f64> = sel.iter().filter_map(|r| r.rmse).collect();
            let (accuracy_mean, accuracy_sd) = mean_sd(&acc);
            let (rmse_mean, rmse_sd) = mean_sd(&err);
            summary.push(CellSummary {
                fraction,
                variant,
                runs: sel.len(),
                failed: sel.iter().filter(|r| r.error.is_some()).count(),
                accuracy_mean,
                accuracy_sd,
                rmse_mean,
                rmse_sd,
            });
        }
    }
    Ok(EvalReport {
        config_hash: config_hash(cfg)?,
        seed,
        runs,
        summary,
        runtime_seconds: t0.elapsed().as_secs_f64(),
    })
}
