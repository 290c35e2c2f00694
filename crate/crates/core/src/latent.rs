//! Model state and the deterministic maps among its parts.
//!
//! Three binary feature families exist: rows `r_i` (N × K_r), categorical
//! choices `d_j^(p)` flattened attribute-major (P × K_d with
//! `P = Σ_j (q_j − 1)`), and real columns `c_j` (M₂ × K_c). Categorical cells
//! follow a multinomial probit on `β_ij ~ N(D_jᵀ Mᵀ r_i, Σ_j)`, real cells
//! follow `y_ij ~ N(r_iᵀ M^Y c_j, σ_y²)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, PriorMode};
use crate::corrprior::FeaturePrior;
use crate::data::{ChoiceLayout, RelationalDataset};
use crate::distributions as dist;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Rows,
    #[serde(rename = "cat-cols")]
    Choices,
    #[serde(rename = "real-cols")]
    Reals,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Rows, Family::Choices, Family::Reals];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Rows => "rows",
            Family::Choices => "cat-cols",
            Family::Reals => "real-cols",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Family::Rows => 0,
            Family::Choices => 1,
            Family::Reals => 2,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" => Ok(Family::Rows),
            "cat-cols" | "choices" => Ok(Family::Choices),
            "real-cols" | "reals" => Ok(Family::Reals),
            _ => Err(Error::Validation(format!("unknown feature family `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    X,
    Y,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::X => "X",
            Side::Y => "Y",
        }
    }
}

/// Dense 0/1 matrix, one row per entity and one column per latent feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "BitRows", try_from = "BitRows")]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct BitRows {
    rows: usize,
    cols: usize,
    data: Vec<String>,
}

impl From<BitMatrix> for BitRows {
    fn from(m: BitMatrix) -> Self {
        BitRows {
            rows: m.rows,
            cols: m.cols,
            data: (0..m.rows)
                .map(|i| m.row(i).iter().map(|&b| if b { '1' } else { '0' }).collect())
                .collect(),
        }
    }
}

impl TryFrom<BitRows> for BitMatrix {
    type Error = String;
    fn try_from(b: BitRows) -> std::result::Result<Self, String> {
        if b.data.len() != b.rows {
            return Err("bit matrix row count mismatch".into());
        }
        let mut bits = Vec::with_capacity(b.rows * b.cols);
        for row in &b.data {
            if row.len() != b.cols {
                return Err("bit matrix column count mismatch".into());
            }
            for ch in row.chars() {
                match ch {
                    '0' => bits.push(false),
                    '1' => bits.push(true),
                    _ => return Err(format!("invalid bit character `{ch}`")),
                }
            }
        }
        Ok(BitMatrix {
            rows: b.rows,
            cols: b.cols,
            bits,
        })
    }
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BitMatrix {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for k in 0..cols {
                bits.push(f(i, k));
            }
        }
        BitMatrix { rows, cols, bits }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> bool {
        self.bits[i * self.cols + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, v: bool) {
        self.bits[i * self.cols + k] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    pub fn set_row(&mut self, i: usize, row: &[bool]) {
        self.bits[i * self.cols..(i + 1) * self.cols].copy_from_slice(row);
    }

    pub fn column_sum(&self, k: usize) -> usize {
        (0..self.rows).filter(|&i| self.get(i, k)).count()
    }

    /// Number of columns with at least `min_count` ones (and at least one).
    pub fn used_columns(&self, min_count: usize) -> usize {
        (0..self.cols)
            .filter(|&k| {
                let s = self.column_sum(k);
                s > 0 && s >= min_count
            })
            .count()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, k| if self.get(i, k) { 1.0 } else { 0.0 })
    }
}

/// `M = Σ_l λ_l b_l u_l v_lᵀ` stored term by term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankRegression {
    pub lambda: Vec<f64>,
    pub active: Vec<bool>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Inclusion probability π of the rank indicators.
    pub pi: f64,
    pub sigma_lambda2: f64,
}

impl LowRankRegression {
    pub fn n_terms(&self) -> usize {
        self.lambda.len()
    }

    pub fn left_dim(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }

    pub fn right_dim(&self) -> usize {
        self.v.first().map_or(0, Vec::len)
    }

    pub fn active_terms(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_terms()).filter(|&l| self.active[l])
    }

    pub fn validate(&self, side: Side) -> Result<()> {
        let n = self.n_terms();
        let bad = |m: &str| Err(Error::InvalidState(format!("M^{}: {m}", side.as_str())));
        if self.active.len() != n || self.u.len() != n || self.v.len() != n {
            return bad("term arrays have different lengths");
        }
        let (kl, kr) = (self.left_dim(), self.right_dim());
        if self.u.iter().any(|u| u.len() != kl) || self.v.iter().any(|v| v.len() != kr) {
            return bad("ragged term vectors");
        }
        if self.lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return bad("weights must be positive");
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return bad("inclusion probability outside [0, 1]");
        }
        if !(self.sigma_lambda2.is_finite() && self.sigma_lambda2 > 0.0) {
            return bad("weight scale must be positive");
        }
        Ok(())
    }
}

pub fn assemble_regression_matrix(lr: &LowRankRegression) -> DMatrix<f64> {
    let (kl, kr) = (lr.left_dim(), lr.right_dim());
    let mut m = DMatrix::zeros(kl, kr);
    for l in lr.active_terms() {
        let lam = lr.lambda[l];
        for a in 0..kl {
            let ua = lam * lr.u[l][a];
            if ua == 0.0 {
                continue;
            }
            for b in 0..kr {
                m[(a, b)] += ua * lr.v[l][b];
            }
        }
    }
    m
}

pub fn effective_rank(lr: &LowRankRegression) -> usize {
    lr.active.iter().filter(|b| **b).count()
}

/// Noise covariance of one categorical attribute.
///
/// `extended` is an unrestricted SPD matrix whose first variance is a free
/// working parameter; `restricted` rescales its first row and column so the
/// top-left entry is exactly 1. Only `restricted` enters the likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCov {
    dim: usize,
    extended: Vec<f64>,
    restricted: Vec<f64>,
    precision: Vec<f64>,
    log_det: f64,
}

impl NoiseCov {
    pub fn identity(dim: usize) -> Self {
        let m = DMatrix::<f64>::identity(dim, dim);
        NoiseCov::from_extended(&m).expect("identity is SPD")
    }

    /// Build from an unrestricted SPD matrix.
    pub fn from_extended(ext: &DMatrix<f64>) -> Result<Self> {
        let dim = ext.nrows();
        let mut r = ext.clone();
        linalg::symmetrize(&mut r);
        let s = r[(0, 0)].sqrt();
        for a in 1..dim {
            r[(0, a)] /= s;
            r[(a, 0)] /= s;
        }
        r[(0, 0)] = 1.0;
        let ch = linalg::cholesky(&r, "noise covariance")?;
        let log_det = linalg::log_det_from_cholesky(&ch);
        let mut prec = ch.inverse();
        linalg::symmetrize(&mut prec);
        Ok(NoiseCov {
            dim,
            extended: linalg::to_row_major(ext),
            restricted: linalg::to_row_major(&r),
            precision: linalg::to_row_major(&prec),
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extended(&self) -> DMatrix<f64> {
        linalg::from_row_major(self.dim, self.dim, &self.extended)
    }

    pub fn restricted(&self) -> DMatrix<f64> {
        linalg::from_row_major(self.dim, self.dim, &self.restricted)
    }

    pub fn restricted_row_major(&self) -> &[f64] {
        &self.restricted
    }

    /// Row-major inverse of the restricted covariance.
    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn validate(&self, j: usize) -> Result<()> {
        if self.restricted.first() != Some(&1.0) {
            return Err(Error::InvalidState(format!(
                "Σ_{j}: top-left entry is {:?}, expected exactly 1",
                self.restricted.first()
            )));
        }
        if !linalg::is_spd(&self.restricted()) {
            return Err(Error::InvalidState(format!("Σ_{j} is not positive definite")));
        }
        Ok(())
    }

    /// Override the restricted matrix directly (tests and simulation).
    pub fn set_restricted_unchecked(&mut self, values: &[f64]) {
        self.restricted.copy_from_slice(values);
    }
}

/// All latent variables of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub layout: ChoiceLayout,
    pub n_rows: usize,
    pub n_real: usize,
    pub r: BitMatrix,
    pub d: BitMatrix,
    pub c: BitMatrix,
    pub mx: LowRankRegression,
    pub my: LowRankRegression,
    pub noise: Vec<NoiseCov>,
    /// Probit latents, N × P row-major.
    pub beta: Vec<f64>,
    pub sigma_y2: f64,
    pub prior_r: FeaturePrior,
    pub prior_d: FeaturePrior,
    pub prior_c: FeaturePrior,
}

impl ModelState {
    pub fn bits(&self, family: Family) -> &BitMatrix {
        match family {
            Family::Rows => &self.r,
            Family::Choices => &self.d,
            Family::Reals => &self.c,
        }
    }

    pub fn prior(&self, family: Family) -> &FeaturePrior {
        match family {
            Family::Rows => &self.prior_r,
            Family::Choices => &self.prior_d,
            Family::Reals => &self.prior_c,
        }
    }

    pub fn regression(&self, side: Side) -> &LowRankRegression {
        match side {
            Side::X => &self.mx,
            Side::Y => &self.my,
        }
    }

    pub fn n_cat(&self) -> usize {
        self.layout.n_attributes()
    }

    /// β_ij as a slice of length q_j − 1.
    pub fn beta_cell(&self, i: usize, j: usize) -> &[f64] {
        let w = self.layout.width();
        &self.beta[i * w + self.layout.offset(j)..i * w + self.layout.offset(j) + self.layout.dim(j)]
    }

    /// Check that the state matches the dataset shape and every component invariant.
    pub fn validate(&self, ds: &RelationalDataset) -> Result<()> {
        let fc = self.config.feature_counts();
        if ds.n_rows() != self.n_rows || ds.n_real() != self.n_real {
            return Err(Error::InvalidState("state and dataset shapes differ".into()));
        }
        if ds.category_counts() != self.layout.category_counts() {
            return Err(Error::InvalidState("state and dataset category counts differ".into()));
        }
        let shape = |m: &BitMatrix, rows: usize, cols: usize, name: &str| {
            if m.rows() != rows || m.cols() != cols {
                Err(Error::InvalidState(format!(
                    "{name} features are {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )))
            } else {
                Ok(())
            }
        };
        shape(&self.r, self.n_rows, fc.rows, "row")?;
        shape(&self.d, self.layout.width(), fc.choices, "choice")?;
        shape(&self.c, self.n_real, fc.reals, "real-column")?;
        self.mx.validate(Side::X)?;
        self.my.validate(Side::Y)?;
        if self.mx.left_dim() != fc.rows || self.mx.right_dim() != fc.choices {
            return Err(Error::InvalidState("M^X dimensions differ from feature counts".into()));
        }
        if self.my.left_dim() != fc.rows || self.my.right_dim() != fc.reals {
            return Err(Error::InvalidState("M^Y dimensions differ from feature counts".into()));
        }
        if self.noise.len() != self.n_cat() {
            return Err(Error::InvalidState("one noise covariance per attribute is required".into()));
        }
        for (j, s) in self.noise.iter().enumerate() {
            if s.dim() != self.layout.dim(j) {
                return Err(Error::InvalidState(format!("Σ_{j} has the wrong dimension")));
            }
            s.validate(j)?;
        }
        if self.beta.len() != self.n_rows * self.layout.width() {
            return Err(Error::InvalidState("probit latent array has the wrong length".into()));
        }
        if !(self.sigma_y2.is_finite() && self.sigma_y2 > 0.0) {
            return Err(Error::InvalidState("σ_y² must be positive".into()));
        }
        self.prior_r.validate(&self.r, "rows")?;
        self.prior_d.validate(&self.d, "cat-cols")?;
        self.prior_c.validate(&self.c, "real-cols")?;
        Ok(())
    }
}

/// `A = R M` (N × K_right), the row features pushed through a regression matrix.
pub fn row_projection(r: &BitMatrix, m: &DMatrix<f64>) -> Vec<f64> {
    let kr = m.ncols();
    let mut out = vec![0.0; r.rows() * kr];
    for i in 0..r.rows() {
        let dst = &mut out[i * kr..(i + 1) * kr];
        for a in 0..r.cols() {
            if r.get(i, a) {
                for b in 0..kr {
                    dst[b] += m[(a, b)];
                }
            }
        }
    }
    out
}

/// `W = M Colsᵀ` (K_left × n_cols), the regression matrix applied to column features.
pub fn column_projection(m: &DMatrix<f64>, cols: &BitMatrix) -> Vec<f64> {
    let kl = m.nrows();
    let n = cols.rows();
    let mut out = vec![0.0; kl * n];
    for p in 0..n {
        for b in 0..cols.cols() {
            if cols.get(p, b) {
                for a in 0..kl {
                    out[a * n + p] += m[(a, b)];
                }
            }
        }
    }
    out
}

/// Dense mean matrix `R M Colsᵀ` (N × n_cols, row-major).
pub fn mean_matrix(r: &BitMatrix, lr: &LowRankRegression, cols: &BitMatrix) -> Vec<f64> {
    let m = assemble_regression_matrix(lr);
    let a = row_projection(r, &m);
    let kr = m.ncols();
    let n = cols.rows();
    let mut out = vec![0.0; r.rows() * n];
    for i in 0..r.rows() {
        let ai = &a[i * kr..(i + 1) * kr];
        for p in 0..n {
            let mut s = 0.0;
            for b in 0..kr {
                if cols.get(p, b) {
                    s += ai[b];
                }
            }
            out[i * n + p] = s;
        }
    }
    out
}

fn bilinear(r: &[bool], m: &DMatrix<f64>, c: &[bool]) -> f64 {
    let mut s = 0.0;
    for (a, &ra) in r.iter().enumerate() {
        if !ra {
            continue;
        }
        for (b, &cb) in c.iter().enumerate() {
            if cb {
                s += m[(a, b)];
            }
        }
    }
    s
}

/// Mean of β_ij for category `p ∈ 1..q_j`: `r_iᵀ M^X d_j^(p)`.
pub fn predict_beta_mean(state: &ModelState, i: usize, j: usize, p: usize) -> f64 {
    let m = assemble_regression_matrix(&state.mx);
    let flat = state.layout.offset(j) + p - 1;
    bilinear(state.r.row(i), &m, state.d.row(flat))
}

/// Mean of y_ij: `r_iᵀ M^Y c_j`.
pub fn predict_real_mean(state: &ModelState, i: usize, j: usize) -> f64 {
    let m = assemble_regression_matrix(&state.my);
    bilinear(state.r.row(i), &m, state.c.row(j))
}

/// Category selected by a probit latent vector: 0 when every component is
/// negative, else the 1-based index of the largest component (lowest index on ties).
pub fn probit_decode(beta: &[f64]) -> Result<u32> {
    if beta.is_empty() {
        return Err(Error::Domain("probit latent vector is empty".into()));
    }
    let mut best = 0;
    for p in 1..beta.len() {
        if beta[p] > beta[best] {
            best = p;
        }
    }
    if beta[best] < 0.0 {
        Ok(0)
    } else {
        Ok(best as u32 + 1)
    }
}

/// Monte Carlo category frequencies for latent mean `mean` and covariance `cov`.
pub fn category_probabilities_at<R: Rng + ?Sized>(
    mean: &[f64],
    cov: &DMatrix<f64>,
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_mc == 0 {
        return Err(Error::Domain("at least one Monte Carlo draw is required".into()));
    }
    let dim = mean.len();
    let ch = linalg::cholesky(cov, "category covariance")?;
    let l = ch.l();
    let mut counts = vec![0usize; dim + 1];
    let mut z = DVector::zeros(dim);
    let mut b = vec![0.0; dim];
    for _ in 0..n_mc {
        for a in 0..dim {
            z[a] = dist::sample_std_normal(rng);
        }
        for a in 0..dim {
            let mut s = mean[a];
            for c in 0..=a {
                s += l[(a, c)] * z[c];
            }
            b[a] = s;
        }
        counts[probit_decode(&b)? as usize] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / n_mc as f64).collect())
}

/// Monte Carlo estimate of `Pr(x_ij = p)` for every category `p`.
pub fn category_probabilities<R: Rng + ?Sized>(
    state: &ModelState,
    i: usize,
    j: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let q = state.layout.category_count(j);
    let mean: Vec<f64> = (1..q).map(|p| predict_beta_mean(state, i, j, p)).collect();
    category_probabilities_at(&mean, &state.noise[j].restricted(), n_mc, rng)
}

/// Per-term breakdown of the log joint density.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogJoint {
    pub categorical_likelihood: f64,
    pub real_likelihood: f64,
    pub regression_x: f64,
    pub regression_y: f64,
    pub noise_covariance: f64,
    pub noise_variance: f64,
    pub features_rows: f64,
    pub features_choices: f64,
    pub features_reals: f64,
}

impl LogJoint {
    pub fn total(&self) -> f64 {
        self.categorical_likelihood
            + self.real_likelihood
            + self.regression_x
            + self.regression_y
            + self.noise_covariance
            + self.noise_variance
            + self.features_rows
            + self.features_choices
            + self.features_reals
    }
}

/// Prior rate of σ_λ² so that its inverse-gamma prior has the configured mean.
pub fn sigma_lambda2_rate(config: &ModelConfig) -> f64 {
    config.sigma_lambda2 * (config.sigma_lambda2_shape - 1.0)
}

fn log_regression_prior(lr: &LowRankRegression, config: &ModelConfig) -> Result<f64> {
    let n = lr.n_terms() as f64;
    let mut s = dist::log_beta_pdf(lr.pi, 1.0 / n, 1.0)?;
    s += dist::log_inverse_gamma_pdf(
        lr.sigma_lambda2,
        config.sigma_lambda2_shape,
        sigma_lambda2_rate(config),
    )?;
    for l in 0..lr.n_terms() {
        s += dist::log_half_normal_pdf(lr.lambda[l], lr.sigma_lambda2)?;
        s += dist::log_bernoulli_pmf(lr.active[l], lr.pi)?;
        for &x in lr.u[l].iter().chain(lr.v[l].iter()) {
            s += -0.5 * (dist::LN_2PI + x * x);
        }
    }
    Ok(s)
}

/// Log joint density of the state and the observed cells of `ds`.
pub fn log_joint(state: &ModelState, ds: &RelationalDataset) -> Result<LogJoint> {
    state.validate(ds)?;
    let mut out = LogJoint::default();
    let layout = &state.layout;

    let mu_x = mean_matrix(&state.r, &state.mx, &state.d);
    let w = layout.width();
    let mut e = Vec::new();
    for i in 0..state.n_rows {
        for j in 0..state.n_cat() {
            let Some(x) = ds.cat(i, j) else { continue };
            let beta = state.beta_cell(i, j);
            if probit_decode(beta)? != x {
                return Err(Error::InvalidState(format!(
                    "probit latent β[{i},{j}] does not decode to the observed category {x}"
                )));
            }
            let range = layout.range(j);
            e.clear();
            e.extend(range.clone().map(|f| state.beta[i * w + f] - mu_x[i * w + f]));
            let s = &state.noise[j];
            out.categorical_likelihood += -0.5
                * (s.dim() as f64 * dist::LN_2PI
                    + s.log_det()
                    + linalg::quad_form(s.precision(), s.dim(), &e));
        }
    }

    let mu_y = mean_matrix(&state.r, &state.my, &state.c);
    let m2 = state.n_real;
    for i in 0..state.n_rows {
        for j in 0..m2 {
            if let Some(y) = ds.real(i, j) {
                out.real_likelihood += dist::log_normal_pdf(y, mu_y[i * m2 + j], state.sigma_y2)?;
            }
        }
    }

    out.regression_x = log_regression_prior(&state.mx, &state.config)?;
    out.regression_y = log_regression_prior(&state.my, &state.config)?;

    let omega_scale = state.config.wishart_scale;
    for s in &state.noise {
        if s.dim() > 1 {
            let omega = DMatrix::identity(s.dim(), s.dim()) * omega_scale;
            out.noise_covariance += dist::log_wishart_pdf(&s.extended(), state.config.wishart_df, &omega)?;
        }
    }

    out.noise_variance = dist::log_inverse_gamma_pdf(
        state.sigma_y2,
        state.config.sigma_y2_shape,
        state.config.sigma_y2_rate,
    )?;

    out.features_rows = state.prior_r.log_prior(&state.r)?;
    out.features_choices = state.prior_d.log_prior(&state.d)?;
    out.features_reals = state.prior_c.log_prior(&state.c)?;

    for (name, v) in [
        ("categorical likelihood", out.categorical_likelihood),
        ("real likelihood", out.real_likelihood),
        ("M^X prior", out.regression_x),
        ("M^Y prior", out.regression_y),
        ("Σ_j prior", out.noise_covariance),
        ("σ_y² prior", out.noise_variance),
        ("row feature prior", out.features_rows),
        ("choice feature prior", out.features_choices),
        ("real-column feature prior", out.features_reals),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidState(format!("{name} term is not finite")));
        }
    }
    Ok(out)
}

/// Prior family the state was built with.
pub fn prior_mode(state: &ModelState) -> PriorMode {
    match state.prior_r {
        FeaturePrior::Correlated(_) => PriorMode::Correlated,
        FeaturePrior::Independent(_) => PriorMode::IndependentBernoulli,
    }
}
