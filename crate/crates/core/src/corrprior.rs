//! Priors over the binary feature matrices.
//!
//! The correlated prior is a sparse factor probit model. For feature `k`,
//! `η_k ~ N(B f_k, I)` over the D entities of a family and the bit is
//! `r_ik = 1[η_ik > 0]`. `B` is D × K_f, lower triangular with a positive
//! diagonal, and its free entries carry a spike-and-slab prior
//! `π N(0, v_i) + (1 − π) δ₀` with `v_i ~ IG(c/2, cd/2)` and `π ~ Beta(1, 1)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::InclusionMode;
use crate::distributions as dist;
use crate::error::{Error, Result};
use crate::latent::BitMatrix;
use crate::linalg;
use crate::rng::RngStream;
use crate::workers::Workers;

const KEY_ETA: u64 = 1;
const KEY_FACTORS: u64 = 2;
const KEY_LOADINGS: u64 = 3;
const KEY_SLAB: u64 = 4;
const KEY_INCLUSION: u64 = 5;
const KEY_FEATURE_PI: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFactorCovariance {
    n_entities: usize,
    n_factors: usize,
    n_features: usize,
    /// D × K_f, row-major.
    loadings: Vec<f64>,
    /// K × K_f, row `k` is f_k.
    factors: Vec<f64>,
    /// D × K, row-major.
    eta: Vec<f64>,
    slab_var: Vec<f64>,
    inclusion: Vec<f64>,
    mode: InclusionMode,
    c: f64,
    d: f64,
}

impl SparseFactorCovariance {
    /// Starting state: free loadings zero, diagonal loadings half-normal,
    /// unit slab variances, inclusion ½, factors from their prior, and
    /// latents drawn consistently with `bits`.
    pub fn initialize<R: Rng + ?Sized>(
        bits: &BitMatrix,
        n_factors: usize,
        c: f64,
        d: f64,
        mode: InclusionMode,
        rng: &mut R,
    ) -> Result<Self> {
        let (n, k) = (bits.rows(), bits.cols());
        let mut s = SparseFactorCovariance::empty(n, n_factors, k, c, d, mode);
        for i in 0..n.min(n_factors) {
            s.loadings[i * n_factors + i] = dist::sample_truncated_normal(0.0, 1.0, 0.0, f64::INFINITY, rng)?;
        }
        for x in s.factors.iter_mut() {
            *x = dist::sample_std_normal(rng);
        }
        for i in 0..n {
            for kk in 0..k {
                let eta = s.sample_eta(i, kk, bits.get(i, kk), rng)?;
                s.eta[i * k + kk] = eta;
            }
        }
        Ok(s)
    }

    pub fn empty(n: usize, n_factors: usize, k: usize, c: f64, d: f64, mode: InclusionMode) -> Self {
        let n_incl = match mode {
            InclusionMode::PerFactor => n_factors,
            InclusionMode::PerEntity => n,
        };
        SparseFactorCovariance {
            n_entities: n,
            n_factors,
            n_features: k,
            loadings: vec![0.0; n * n_factors],
            factors: vec![0.0; k * n_factors],
            eta: vec![0.0; n * k],
            slab_var: vec![1.0; n],
            inclusion: vec![0.5; n_incl],
            mode,
            c,
            d,
        }
    }

    /// Forward draw of the whole prior, returning the implied bits.
    pub fn sample_prior<R: Rng + ?Sized>(
        n: usize,
        n_factors: usize,
        k: usize,
        c: f64,
        d: f64,
        mode: InclusionMode,
        rng: &mut R,
    ) -> Result<(Self, BitMatrix)> {
        let mut s = SparseFactorCovariance::empty(n, n_factors, k, c, d, mode);
        for p in s.inclusion.iter_mut() {
            *p = dist::sample_beta(1.0, 1.0, rng)?;
        }
        for v in s.slab_var.iter_mut() {
            *v = dist::sample_inverse_gamma(0.5 * c, 0.5 * c * d, rng)?;
        }
        for i in 0..n {
            for h in 0..n_factors.min(i + 1) {
                let v = s.slab_var[i];
                let b = if h == i {
                    dist::sample_truncated_normal(0.0, v, 0.0, f64::INFINITY, rng)?
                } else if dist::sample_bernoulli(s.inclusion_prob(i, h), rng)? {
                    dist::sample_normal(0.0, v, rng)?
                } else {
                    0.0
                };
                s.loadings[i * n_factors + h] = b;
            }
        }
        for x in s.factors.iter_mut() {
            *x = dist::sample_std_normal(rng);
        }
        let mut bits = BitMatrix::zeros(n, k);
        for i in 0..n {
            for kk in 0..k {
                let eta = s.mean(i, kk) + dist::sample_std_normal(rng);
                s.eta[i * k + kk] = eta;
                bits.set(i, kk, eta > 0.0);
            }
        }
        Ok((s, bits))
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_factors(&self) -> usize {
        self.n_factors
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn inclusion_mode(&self) -> InclusionMode {
        self.mode
    }

    #[inline]
    pub fn loading(&self, i: usize, h: usize) -> f64 {
        self.loadings[i * self.n_factors + h]
    }

    pub fn loading_row(&self, i: usize) -> &[f64] {
        &self.loadings[i * self.n_factors..(i + 1) * self.n_factors]
    }

    /// Row-major D × K_f loadings.
    pub fn loadings(&self) -> &[f64] {
        &self.loadings
    }

    pub fn loadings_matrix(&self) -> DMatrix<f64> {
        linalg::from_row_major(self.n_entities, self.n_factors, &self.loadings)
    }

    pub fn factor(&self, k: usize) -> &[f64] {
        &self.factors[k * self.n_factors..(k + 1) * self.n_factors]
    }

    #[inline]
    pub fn eta(&self, i: usize, k: usize) -> f64 {
        self.eta[i * self.n_features + k]
    }

    pub fn slab_var(&self, i: usize) -> f64 {
        self.slab_var[i]
    }

    pub fn inclusion(&self) -> &[f64] {
        &self.inclusion
    }

    #[inline]
    fn inclusion_prob(&self, i: usize, h: usize) -> f64 {
        match self.mode {
            InclusionMode::PerFactor => self.inclusion[h],
            InclusionMode::PerEntity => self.inclusion[i],
        }
    }

    /// `b_iᵀ f_k`, the mean of η_ik.
    #[inline]
    pub fn mean(&self, i: usize, k: usize) -> f64 {
        linalg::dot(self.loading_row(i), self.factor(k))
    }

    pub fn set_loadings(&mut self, loadings: &[f64]) -> Result<()> {
        if loadings.len() != self.loadings.len() {
            return Err(Error::Validation("loading matrix has the wrong size".into()));
        }
        self.loadings.copy_from_slice(loadings);
        Ok(())
    }

    pub fn set_factor(&mut self, k: usize, f: &[f64]) {
        let nf = self.n_factors;
        self.factors[k * nf..(k + 1) * nf].copy_from_slice(f);
    }

    pub fn set_eta(&mut self, i: usize, k: usize, value: f64) {
        self.eta[i * self.n_features + k] = value;
    }

    pub fn set_slab_var(&mut self, i: usize, v: f64) {
        self.slab_var[i] = v;
    }

    pub fn set_inclusion(&mut self, values: &[f64]) {
        self.inclusion.copy_from_slice(values);
    }

    /// `BBᵀ + I`.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        let b = self.loadings_matrix();
        let mut s = &b * b.transpose();
        for i in 0..self.n_entities {
            s[(i, i)] += 1.0;
        }
        linalg::symmetrize(&mut s);
        s
    }

    pub fn implied_correlation(&self) -> DMatrix<f64> {
        covariance_to_correlation(&self.implied_covariance())
    }

    /// `Pr(η_ik > 0) = Φ(b_iᵀ f_k)`.
    pub fn marginal_activation_prob(&self, i: usize, k: usize) -> f64 {
        dist::std_normal_cdf(self.mean(i, k))
    }

    /// Draw η_ik from `N(b_iᵀ f_k, 1)` restricted to the side given by `bit`.
    pub fn sample_eta<R: Rng + ?Sized>(&self, i: usize, k: usize, bit: bool, rng: &mut R) -> Result<f64> {
        let m = self.mean(i, k);
        if bit {
            dist::sample_truncated_normal(m, 1.0, 0.0, f64::INFINITY, rng)
        } else {
            // η = 0 has probability zero; the open bound keeps r = 0 ⇔ η < 0.
            dist::sample_truncated_normal(m, 1.0, f64::NEG_INFINITY, 0.0, rng)
        }
    }

    /// Fresh η_k given column `k` of the feature matrix.
    pub fn gibbs_update_eta<R: Rng + ?Sized>(&self, k: usize, bits: &BitMatrix, rng: &mut R) -> Result<Vec<f64>> {
        (0..self.n_entities).map(|i| self.sample_eta(i, k, bits.get(i, k), rng)).collect()
    }

    /// Cholesky factor of the factor-score posterior precision `I + BᵀB`.
    pub fn factor_precision(&self) -> Result<Cholesky<f64, Dyn>> {
        let b = self.loadings_matrix();
        let mut p = b.transpose() * &b;
        for h in 0..self.n_factors {
            p[(h, h)] += 1.0;
        }
        linalg::cholesky(&p, "factor posterior precision")
    }

    /// Draw f_k from `N((I + BᵀB)⁻¹Bᵀη_k, (I + BᵀB)⁻¹)`.
    pub fn sample_factor<R: Rng + ?Sized>(
        &self,
        k: usize,
        precision: &Cholesky<f64, Dyn>,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let nf = self.n_factors;
        let mut h = DVector::zeros(nf);
        for i in 0..self.n_entities {
            let e = self.eta(i, k);
            for (hh, b) in self.loading_row(i).iter().enumerate() {
                h[hh] += b * e;
            }
        }
        let mean = precision.solve(&h);
        let z = DVector::from_fn(nf, |_, _| dist::sample_std_normal(rng));
        let offset = precision
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::NotPositiveDefinite("factor posterior precision".into()))?;
        Ok((mean + offset).iter().copied().collect())
    }

    /// Spike-versus-slab log odds and slab posterior `(mean, var)` of loading
    /// `(i, h)` given the other loadings in its row.
    pub fn loading_conditional(&self, i: usize, h: usize, row: &[f64]) -> (f64, f64, f64) {
        let nf = self.n_factors;
        let mut s = 0.0;
        let mut m = 0.0;
        for k in 0..self.n_features {
            let f = self.factor(k);
            let mut pred = 0.0;
            for hh in 0..nf {
                if hh != h {
                    pred += row[hh] * f[hh];
                }
            }
            let e = self.eta(i, k) - pred;
            s += f[h] * f[h];
            m += f[h] * e;
        }
        let v = self.slab_var[i];
        let prec = s + 1.0 / v;
        let pi = self.inclusion_prob(i, h);
        let log_odds = pi.ln() - (1.0 - pi).ln() + 0.5 * (1.0 / (v * prec)).ln() + 0.5 * m * m / prec;
        (log_odds, m / prec, 1.0 / prec)
    }

    /// Updated row `i` of B, one loading at a time.
    pub fn sample_loading_row<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Result<Vec<f64>> {
        let mut row = self.loading_row(i).to_vec();
        for h in 0..self.n_factors.min(i + 1) {
            let (log_odds, mean, var) = self.loading_conditional(i, h, &row);
            row[h] = if h == i {
                dist::sample_truncated_normal(mean, var, 0.0, f64::INFINITY, rng)?
            } else if dist::sample_two_point(0.0, log_odds, rng) {
                dist::sample_normal(mean, var, rng)?
            } else {
                0.0
            };
        }
        Ok(row)
    }

    /// Draw v_i from its inverse-gamma conditional over the nonzero loadings of row `i`.
    pub fn sample_slab_var<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Result<f64> {
        let row = self.loading_row(i);
        let (mut n, mut ss) = (0.0, 0.0);
        for &b in &row[..self.n_factors.min(i + 1)] {
            if b != 0.0 {
                n += 1.0;
                ss += b * b;
            }
        }
        dist::sample_inverse_gamma(0.5 * (self.c + n), 0.5 * (self.c * self.d + ss), rng)
    }

    /// Inclusion and exclusion counts of the free loadings governed by inclusion slot `idx`.
    pub fn inclusion_counts(&self, idx: usize) -> (usize, usize) {
        let (mut inc, mut exc) = (0, 0);
        let mut tally = |b: f64| {
            if b != 0.0 {
                inc += 1
            } else {
                exc += 1
            }
        };
        match self.mode {
            InclusionMode::PerFactor => {
                for i in (idx + 1)..self.n_entities {
                    tally(self.loading(i, idx));
                }
            }
            InclusionMode::PerEntity => {
                for h in 0..self.n_factors.min(idx) {
                    tally(self.loading(idx, h));
                }
            }
        }
        (inc, exc)
    }

    pub fn sample_inclusion<R: Rng + ?Sized>(&self, idx: usize, rng: &mut R) -> Result<f64> {
        let (inc, exc) = self.inclusion_counts(idx);
        dist::sample_beta(1.0 + inc as f64, 1.0 + exc as f64, rng)
    }

    /// One pass over η, f, B, v and the inclusion probabilities.
    pub fn update(&mut self, bits: &BitMatrix, stream: &RngStream, workers: &Workers) -> Result<()> {
        let (n, k) = (self.n_entities, self.n_features);
        let cols = workers.try_map(k, |kk| {
            let mut rng = stream.substream(&[KEY_ETA, kk as u64]);
            self.gibbs_update_eta(kk, bits, &mut rng)
        })?;
        for (kk, col) in cols.into_iter().enumerate() {
            for i in 0..n {
                self.eta[i * k + kk] = col[i];
            }
        }

        let prec = self.factor_precision()?;
        let fs = workers.try_map(k, |kk| {
            let mut rng = stream.substream(&[KEY_FACTORS, kk as u64]);
            self.sample_factor(kk, &prec, &mut rng)
        })?;
        for (kk, f) in fs.iter().enumerate() {
            self.set_factor(kk, f);
        }

        let rows = workers.try_map(n, |i| {
            let mut rng = stream.substream(&[KEY_LOADINGS, i as u64]);
            self.sample_loading_row(i, &mut rng)
        })?;
        for (i, row) in rows.iter().enumerate() {
            let nf = self.n_factors;
            self.loadings[i * nf..(i + 1) * nf].copy_from_slice(row);
        }

        for i in 0..n {
            let mut rng = stream.substream(&[KEY_SLAB, i as u64]);
            self.slab_var[i] = self.sample_slab_var(i, &mut rng)?;
        }
        for idx in 0..self.inclusion.len() {
            let mut rng = stream.substream(&[KEY_INCLUSION, idx as u64]);
            self.inclusion[idx] = self.sample_inclusion(idx, &mut rng)?;
        }
        Ok(())
    }

    /// Columns of B with at least one nonzero free (below-diagonal) loading.
    pub fn active_factor_count(&self) -> usize {
        (0..self.n_factors)
            .filter(|&h| ((h + 1)..self.n_entities).any(|i| self.loading(i, h) != 0.0))
            .count()
    }

    pub fn validate(&self, bits: &BitMatrix, family: &str) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidState(format!("{family} factor model: {m}")));
        if bits.rows() != self.n_entities || bits.cols() != self.n_features {
            return bad("shape differs from the feature matrix".into());
        }
        for i in 0..self.n_entities {
            for h in 0..self.n_factors {
                let b = self.loading(i, h);
                if h > i && b != 0.0 {
                    return bad(format!("loading ({i}, {h}) above the diagonal is nonzero"));
                }
                if h == i && !(b > 0.0) {
                    return bad(format!("diagonal loading ({i}, {h}) is not positive"));
                }
                if !b.is_finite() {
                    return bad(format!("loading ({i}, {h}) is not finite"));
                }
            }
            for k in 0..self.n_features {
                if (self.eta(i, k) > 0.0) != bits.get(i, k) {
                    return bad(format!("latent η[{i},{k}] disagrees with its bit"));
                }
            }
            if !(self.slab_var[i] > 0.0 && self.slab_var[i].is_finite()) {
                return bad(format!("slab variance {i} is not positive"));
            }
        }
        if self.inclusion.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("inclusion probability outside [0, 1]".into());
        }
        Ok(())
    }

    /// `log p(η, f, B, v, π)`; the bits are a deterministic function of η.
    pub fn log_prior(&self, bits: &BitMatrix) -> Result<f64> {
        self.validate(bits, "feature")?;
        let (n, k, nf) = (self.n_entities, self.n_features, self.n_factors);
        let mut s = 0.0;
        for i in 0..n {
            for kk in 0..k {
                let e = self.eta(i, kk) - self.mean(i, kk);
                s += -0.5 * (dist::LN_2PI + e * e);
            }
        }
        for x in &self.factors {
            s += -0.5 * (dist::LN_2PI + x * x);
        }
        for i in 0..n {
            let v = self.slab_var[i];
            s += dist::log_inverse_gamma_pdf(v, 0.5 * self.c, 0.5 * self.c * self.d)?;
            for h in 0..nf.min(i + 1) {
                let b = self.loading(i, h);
                if h == i {
                    s += dist::log_half_normal_pdf(b, v)?;
                } else {
                    let p = self.inclusion_prob(i, h);
                    s += if b != 0.0 {
                        p.ln() + dist::log_normal_pdf(b, 0.0, v)?
                    } else {
                        (1.0 - p).ln()
                    };
                }
            }
        }
        Ok(s)
    }
}

/// Rescale a covariance matrix to unit diagonal, clamping rounding excursions to [−1, 1].
pub fn covariance_to_correlation(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
    let mut r = DMatrix::from_fn(n, n, |i, j| (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0));
    for i in 0..n {
        r[(i, i)] = 1.0;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            r[(j, i)] = r[(i, j)];
        }
    }
    r
}

/// Independent bits `r_ik ~ Ber(π_k)` with `π_k ~ Beta(α/K, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentBernoulli {
    pub pi: Vec<f64>,
    pub alpha: f64,
}

impl IndependentBernoulli {
    pub fn new(k: usize, alpha: f64) -> Self {
        IndependentBernoulli {
            pi: vec![0.5; k],
            alpha,
        }
    }

    fn a(&self) -> f64 {
        self.alpha / self.pi.len() as f64
    }

    pub fn sample_prior<R: Rng + ?Sized>(n: usize, k: usize, alpha: f64, rng: &mut R) -> Result<(Self, BitMatrix)> {
        let mut s = IndependentBernoulli::new(k, alpha);
        for kk in 0..k {
            s.pi[kk] = dist::sample_beta(s.a(), 1.0, rng)?;
        }
        let mut bits = BitMatrix::zeros(n, k);
        for i in 0..n {
            for kk in 0..k {
                bits.set(i, kk, dist::sample_bernoulli(s.pi[kk], rng)?);
            }
        }
        Ok((s, bits))
    }

    pub fn sample_pi<R: Rng + ?Sized>(&self, k: usize, bits: &BitMatrix, rng: &mut R) -> Result<f64> {
        let ones = bits.column_sum(k) as f64;
        dist::sample_beta(self.a() + ones, 1.0 + bits.rows() as f64 - ones, rng)
    }

    pub fn log_prior(&self, bits: &BitMatrix) -> Result<f64> {
        let mut s = 0.0;
        for (k, &p) in self.pi.iter().enumerate() {
            s += dist::log_beta_pdf(p, self.a(), 1.0)?;
            for i in 0..bits.rows() {
                s += dist::log_bernoulli_pmf(bits.get(i, k), p)?;
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeaturePrior {
    Correlated(SparseFactorCovariance),
    Independent(IndependentBernoulli),
}

impl FeaturePrior {
    /// Prior probability that bit `(i, k)` is one given everything except η_ik.
    #[inline]
    pub fn activation_prob(&self, i: usize, k: usize) -> f64 {
        match self {
            FeaturePrior::Correlated(s) => s.marginal_activation_prob(i, k),
            FeaturePrior::Independent(b) => b.pi[k],
        }
    }

    /// `log Pr(bit = 0)` and `log Pr(bit = 1)`.
    #[inline]
    pub fn log_activation(&self, i: usize, k: usize) -> (f64, f64) {
        match self {
            FeaturePrior::Correlated(s) => {
                let m = s.mean(i, k);
                (dist::std_normal_log_cdf(-m), dist::std_normal_log_cdf(m))
            }
            FeaturePrior::Independent(b) => {
                let p = b.pi[k];
                ((1.0 - p).ln(), p.ln())
            }
        }
    }

    /// Latent η_ik consistent with a freshly drawn bit (None without latents).
    pub fn refresh_latent<R: Rng + ?Sized>(&self, i: usize, k: usize, bit: bool, rng: &mut R) -> Result<Option<f64>> {
        match self {
            FeaturePrior::Correlated(s) => s.sample_eta(i, k, bit, rng).map(Some),
            FeaturePrior::Independent(_) => Ok(None),
        }
    }

    pub fn set_latent(&mut self, i: usize, k: usize, value: Option<f64>) {
        if let (FeaturePrior::Correlated(s), Some(v)) = (self, value) {
            s.set_eta(i, k, v);
        }
    }

    /// Update the prior's own latent and hyper variables given the bits.
    pub fn update(&mut self, bits: &BitMatrix, stream: &RngStream, workers: &Workers) -> Result<()> {
        match self {
            FeaturePrior::Correlated(s) => s.update(bits, stream, workers),
            FeaturePrior::Independent(b) => {
                for k in 0..b.pi.len() {
                    let mut rng = stream.substream(&[KEY_FEATURE_PI, k as u64]);
                    b.pi[k] = b.sample_pi(k, bits, &mut rng)?;
                }
                Ok(())
            }
        }
    }

    pub fn log_prior(&self, bits: &BitMatrix) -> Result<f64> {
        match self {
            FeaturePrior::Correlated(s) => s.log_prior(bits),
            FeaturePrior::Independent(b) => b.log_prior(bits),
        }
    }

    pub fn validate(&self, bits: &BitMatrix, family: &str) -> Result<()> {
        match self {
            FeaturePrior::Correlated(s) => s.validate(bits, family),
            FeaturePrior::Independent(b) => {
                if b.pi.len() != bits.cols() {
                    return Err(Error::InvalidState(format!(
                        "{family}: one inclusion probability per feature is required"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn as_correlated(&self) -> Option<&SparseFactorCovariance> {
        match self {
            FeaturePrior::Correlated(s) => Some(s),
            FeaturePrior::Independent(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::mean_and_var;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn with_loadings(d: usize, nf: usize, k: usize, loadings: &[f64]) -> SparseFactorCovariance {
        let mut s = SparseFactorCovariance::empty(d, nf, k, 1.0, 1.0, InclusionMode::PerFactor);
        s.set_loadings(loadings).unwrap();
        s
    }

    #[test]
    fn implied_covariance_examples() {
        let s = with_loadings(2, 1, 1, &[0.0, 0.0]);
        assert_eq!(s.implied_covariance(), DMatrix::identity(2, 2));
        assert_eq!(s.implied_correlation(), DMatrix::identity(2, 2));
        let s = with_loadings(2, 1, 1, &[1.0, 1.0]);
        let cov = s.implied_covariance();
        assert_eq!(cov, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        let r = s.implied_correlation();
        assert!((r[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(r[(0, 1)], r[(1, 0)]);
    }

    #[test]
    fn implied_covariance_matches_naive_product() {
        let mut g = rng(3);
        let (d, nf) = (5, 3);
        let b: Vec<f64> = (0..d * nf).map(|_| dist::sample_std_normal(&mut g)).collect();
        let s = with_loadings(d, nf, 1, &b);
        let cov = s.implied_covariance();
        for i in 0..d {
            for j in 0..d {
                let mut naive = if i == j { 1.0 } else { 0.0 };
                for h in 0..nf {
                    naive += b[i * nf + h] * b[j * nf + h];
                }
                assert!((cov[(i, j)] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activation_probability() {
        let mut s = with_loadings(1, 1, 1, &[1.0]);
        s.set_factor(0, &[0.0]);
        assert_eq!(s.marginal_activation_prob(0, 0), 0.5);
        s.set_factor(0, &[1.959964]);
        assert!((s.marginal_activation_prob(0, 0) - 0.975).abs() < 1e-6);
        let mut s = with_loadings(3, 2, 2, &[0.0; 6]);
        s.set_factor(1, &[3.0, -2.0]);
        for i in 0..3 {
            for k in 0..2 {
                assert_eq!(s.marginal_activation_prob(i, k), 0.5);
            }
        }
    }

    #[test]
    fn eta_respects_bits_and_half_normal_mean() {
        let s = with_loadings(1, 1, 1, &[0.0]);
        let mut bits = BitMatrix::zeros(1, 1);
        bits.set(0, 0, true);
        let mut g = rng(5);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| s.gibbs_update_eta(0, &bits, &mut g).unwrap()[0])
            .collect();
        assert!(xs.iter().all(|x| *x > 0.0));
        let (m, v) = mean_and_var(&xs);
        let want = (2.0 / std::f64::consts::PI).sqrt();
        assert!((m - want).abs() < 4.0 * (v / xs.len() as f64).sqrt(), "{m}");
        let a = s.gibbs_update_eta(0, &bits, &mut rng(9)).unwrap();
        let b = s.gibbs_update_eta(0, &bits, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn factor_update_scalar_conjugacy() {
        // D = 1, one factor: f | η ~ N(bη/(1+b²), 1/(1+b²)).
        let mut s = with_loadings(1, 1, 1, &[2.0]);
        s.set_eta(0, 0, 1.5);
        let prec = s.factor_precision().unwrap();
        let mut g = rng(11);
        let xs: Vec<f64> = (0..100_000).map(|_| s.sample_factor(0, &prec, &mut g).unwrap()[0]).collect();
        let (m, v) = mean_and_var(&xs);
        let (want_m, want_v) = (2.0 * 1.5 / 5.0, 1.0 / 5.0);
        assert!((m - want_m).abs() < 4.0 * (want_v / xs.len() as f64).sqrt());
        assert!((v - want_v).abs() < 0.01 * want_v * 4.0);

        let s0 = with_loadings(1, 1, 1, &[0.0]);
        let prec = s0.factor_precision().unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| s0.sample_factor(0, &prec, &mut g).unwrap()[0]).collect();
        let (m, v) = mean_and_var(&xs);
        assert!(m.abs() < 0.02 && (v - 1.0).abs() < 0.02);
    }

    #[test]
    fn factor_posterior_shrinks_with_more_entities() {
        let mut last = f64::INFINITY;
        for d in 1..6 {
            let s = with_loadings(d, 2, 1, &vec![0.7; d * 2].iter().enumerate().map(|(n, x)| x + 0.1 * n as f64).collect::<Vec<_>>());
            let prec = s.factor_precision().unwrap();
            let cov = prec.inverse();
            let tr = cov.trace();
            assert!(tr < last);
            last = tr;
        }
    }

    #[test]
    fn spike_slab_no_evidence_gives_prior_odds() {
        // All factor scores zero: the data carry no information about the loading.
        let mut s = with_loadings(3, 2, 4, &[1.0, 0.0, 0.3, 1.2, 0.0, 0.5]);
        s.set_inclusion(&[0.3, 0.6]);
        for k in 0..4 {
            s.set_factor(k, &[0.0, 0.0]);
        }
        let row = s.loading_row(2).to_vec();
        let (lo, _, _) = s.loading_conditional(2, 0, &row);
        assert!((lo - (0.3f64 / 0.7).ln()).abs() < 1e-12);
    }

    #[test]
    fn spike_slab_matches_two_point_enumeration() {
        // Scalar case: entity 1, factor 0, two features.
        let mut s = with_loadings(2, 1, 2, &[1.0, 0.0]);
        s.set_inclusion(&[0.4]);
        s.set_slab_var(1, 1.7);
        s.set_factor(0, &[0.8]);
        s.set_factor(1, &[-1.3]);
        s.set_eta(1, 0, 0.9);
        s.set_eta(1, 1, -0.4);
        let row = s.loading_row(1).to_vec();
        let (lo, mean, var) = s.loading_conditional(1, 0, &row);
        let p_model = 1.0 / (1.0 + (-lo).exp());

        // Oracle: point-mass weight vs. numerically integrated slab weight.
        let lik = |b: f64| -> f64 {
            let mut l = 0.0;
            for (f, e) in [(0.8, 0.9), (-1.3, -0.4)] {
                let r: f64 = e - b * f;
                l += -0.5 * r * r;
            }
            l.exp()
        };
        let v = 1.7;
        let w0 = 0.6 * lik(0.0);
        let (lo_b, hi_b, n) = (-15.0, 15.0, 200_000);
        let h = (hi_b - lo_b) / n as f64;
        let mut integral = 0.0;
        let mut m1 = 0.0;
        for t in 0..=n {
            let b = lo_b + t as f64 * h;
            let w = if t == 0 || t == n { 0.5 } else { 1.0 };
            let dens = (-0.5 * b * b / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt() * lik(b);
            integral += w * dens * h;
            m1 += w * b * dens * h;
        }
        let w1 = 0.4 * integral;
        let p_oracle = w1 / (w0 + w1);
        assert!((p_model - p_oracle).abs() < 1e-8, "{p_model} vs {p_oracle}");
        assert!((mean - m1 / integral).abs() < 1e-8);
        assert!(var > 0.0);
    }

    #[test]
    fn diagonal_stays_positive_and_structure_holds() {
        let mut g = rng(21);
        let bits = BitMatrix::from_fn(7, 5, |i, k| (i + k) % 3 == 0);
        let mut s = SparseFactorCovariance::initialize(&bits, 3, 1.0, 1.0, InclusionMode::PerFactor, &mut g).unwrap();
        let stream = RngStream::new(4);
        let w = Workers::sequential();
        for sweep in 0..50 {
            s.update(&bits, &stream.child(&[sweep]), &w).unwrap();
            s.validate(&bits, "test").unwrap();
            assert!(s.log_prior(&bits).unwrap().is_finite());
        }
    }

    #[test]
    fn prior_simulation_matches_tetrachoric_correlation() {
        // Fixed loadings, f ~ N(0, I): corr of (η_1, η_2) is the implied
        // correlation and the bit correlation follows the bivariate-normal orthant formula.
        let b = [1.0, 0.0, 0.0, 0.9, 1.1, 0.0, -0.8, 0.5, 0.7, 0.0, 0.0, 0.0];
        let s = with_loadings(4, 3, 1, &b);
        let r = s.implied_correlation();
        let mut g = rng(31);
        let n = 200_000;
        let mut bits = vec![[false; 4]; n];
        for row in bits.iter_mut() {
            let f: Vec<f64> = (0..3).map(|_| dist::sample_std_normal(&mut g)).collect();
            for i in 0..4 {
                let m = linalg::dot(&b[i * 3..i * 3 + 3], &f);
                row[i] = m + dist::sample_std_normal(&mut g) > 0.0;
            }
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2), (2, 3)] {
            let rho = r[(i, j)];
            // Pr(both > 0) for standard bivariate normal with correlation rho.
            let p11 = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
            let emp = bits.iter().filter(|x| x[i] && x[j]).count() as f64 / n as f64;
            let se = (p11 * (1.0 - p11) / n as f64).sqrt();
            assert!((emp - p11).abs() < 4.0 * se, "({i},{j}): {emp} vs {p11}");
        }
    }

    proptest! {
        #[test]
        fn independent_prior_is_exchangeable(seed in 0u64..1000, shift in 1usize..6) {
            let mut g = rng(seed);
            let (p, bits) = IndependentBernoulli::sample_prior(6, 4, 1.0, &mut g).unwrap();
            let perm = BitMatrix::from_fn(6, 4, |i, k| bits.get((i + shift) % 6, k));
            let a = p.log_prior(&bits).unwrap();
            let b = p.log_prior(&perm).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn correlation_is_valid(seed in 0u64..1000) {
            let mut g = rng(seed);
            let (s, _) = SparseFactorCovariance::sample_prior(5, 3, 4, 2.0, 1.0, InclusionMode::PerFactor, &mut g).unwrap();
            let r = s.implied_correlation();
            for i in 0..5 {
                prop_assert_eq!(r[(i, i)], 1.0);
                for j in 0..5 {
                    prop_assert_eq!(r[(i, j)], r[(j, i)]);
                    prop_assert!(r[(i, j)].abs() <= 1.0);
                }
            }
        }
    }
}
