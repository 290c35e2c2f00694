//! Conditional updates of the rank-one terms `λ_l b_l u_l v_lᵀ`.
//!
//! With `a_i = r_iᵀ u_l` and `g_f = v_lᵀ col_f`, term `l` adds `λ_l a_i g_f`
//! to the mean of cell `(i, f)`. Every conditional below is Gaussian in the
//! updated quantity once the other terms are subtracted from the response.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::distributions as dist;
use crate::error::Result;
use crate::gibbs::response::Response;
use crate::latent::{self, BitMatrix, LowRankRegression};
use crate::linalg;

/// Bookkeeping for one side while its terms are updated in place.
pub struct TermUpdater<'a> {
    pub resp: &'a Response<'a>,
    pub r: &'a BitMatrix,
    pub cols: &'a BitMatrix,
    /// Current mean, N × width.
    pub mu: Vec<f64>,
}

/// Sufficient statistics of one term against its partial residual.
#[derive(Debug, Clone, Copy)]
pub struct TermStats {
    /// `Σ a_i g_jᵀ Λ_j e_ij`.
    pub lin: f64,
    /// `Σ a_i² g_jᵀ Λ_j g_j`.
    pub quad: f64,
}

impl<'a> TermUpdater<'a> {
    pub fn new(resp: &'a Response<'a>, r: &'a BitMatrix, cols: &'a BitMatrix, lr: &LowRankRegression) -> Self {
        let mu = latent::mean_matrix(r, lr, cols);
        TermUpdater { resp, r, cols, mu }
    }

    fn n(&self) -> usize {
        self.resp.n_rows
    }

    pub fn row_scores(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                self.r
                    .row(i)
                    .iter()
                    .zip(u)
                    .filter(|(b, _)| **b)
                    .map(|(_, x)| *x)
                    .sum()
            })
            .collect()
    }

    pub fn col_scores(&self, v: &[f64]) -> Vec<f64> {
        (0..self.cols.rows())
            .map(|f| {
                self.cols
                    .row(f)
                    .iter()
                    .zip(v)
                    .filter(|(b, _)| **b)
                    .map(|(_, x)| *x)
                    .sum()
            })
            .collect()
    }

    /// Response minus every term except `l`.
    fn partial_residual(&self, lr: &LowRankRegression, l: usize, a: &[f64], g: &[f64]) -> Vec<f64> {
        let w = self.resp.width();
        let lam = if lr.active[l] { lr.lambda[l] } else { 0.0 };
        let mut e = Vec::with_capacity(self.n() * w);
        for i in 0..self.n() {
            let t = self.resp.target_row(i);
            for f in 0..w {
                e.push(t[f] - self.mu[i * w + f] + lam * a[i] * g[f]);
            }
        }
        e
    }

    fn shift_mean(&mut self, scale: f64, a: &[f64], g: &[f64]) {
        if scale == 0.0 {
            return;
        }
        let w = self.resp.width();
        for i in 0..self.n() {
            let s = scale * a[i];
            for f in 0..w {
                self.mu[i * w + f] += s * g[f];
            }
        }
    }

    /// Replace term `l`'s contribution `(λ, a, g)` by `(λ', a', g')` in the mean.
    fn swap_term(&mut self, old: (f64, &[f64], &[f64]), new: (f64, &[f64], &[f64])) {
        self.shift_mean(-old.0, old.1, old.2);
        self.shift_mean(new.0, new.1, new.2);
    }

    fn contribution(lr: &LowRankRegression, l: usize) -> f64 {
        if lr.active[l] {
            lr.lambda[l]
        } else {
            0.0
        }
    }

    pub fn stats(&self, a: &[f64], g: &[f64], e: &[f64]) -> TermStats {
        let w = self.resp.width();
        let mut lin = 0.0;
        let mut quad = 0.0;
        for i in 0..self.n() {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..self.resp.n_attributes() {
                if !self.resp.observed(i, j) {
                    continue;
                }
                let range = self.resp.layout.range(j);
                let dim = range.len();
                let gj = &g[range.clone()];
                let ej = &e[i * w + range.start..i * w + range.end];
                let p = &self.resp.precision[j];
                lin += a[i] * linalg::bilinear_form(p, dim, gj, ej);
                quad += a[i] * a[i] * linalg::quad_form(p, dim, gj);
            }
        }
        TermStats { lin, quad }
    }

    /// Statistics of term `l` against the response with `l` removed.
    pub fn term_stats(&self, lr: &LowRankRegression, l: usize) -> TermStats {
        let a = self.row_scores(&lr.u[l]);
        let g = self.col_scores(&lr.v[l]);
        let e = self.partial_residual(lr, l, &a, &g);
        self.stats(&a, &g, &e)
    }

    /// Precision and linear term of the Gaussian conditional of u_l.
    pub fn u_conditional(&self, lr: &LowRankRegression, l: usize) -> (DMatrix<f64>, DVector<f64>) {
        let kl = lr.left_dim();
        let lam = lr.lambda[l];
        let a = self.row_scores(&lr.u[l]);
        let g = self.col_scores(&lr.v[l]);
        let e = self.partial_residual(lr, l, &a, &g);
        let w = self.resp.width();
        let mut prec = DMatrix::identity(kl, kl);
        let mut h = DVector::zeros(kl);
        for i in 0..self.n() {
            let mut s = 0.0;
            let mut t = 0.0;
            for j in 0..self.resp.n_attributes() {
                if !self.resp.observed(i, j) {
                    continue;
                }
                let range = self.resp.layout.range(j);
                let dim = range.len();
                let gj = &g[range.clone()];
                let ej = &e[i * w + range.start..i * w + range.end];
                let p = &self.resp.precision[j];
                s += linalg::quad_form(p, dim, gj);
                t += linalg::bilinear_form(p, dim, gj, ej);
            }
            if s == 0.0 && t == 0.0 {
                continue;
            }
            let ones: Vec<usize> = (0..kl).filter(|&x| self.r.get(i, x)).collect();
            for &x in &ones {
                h[x] += lam * t;
                for &y in &ones {
                    prec[(x, y)] += lam * lam * s;
                }
            }
        }
        (prec, h)
    }

    /// Precision and linear term of the Gaussian conditional of v_l.
    pub fn v_conditional(&self, lr: &LowRankRegression, l: usize) -> (DMatrix<f64>, DVector<f64>) {
        let kc = lr.right_dim();
        let lam = lr.lambda[l];
        let a = self.row_scores(&lr.u[l]);
        let g = self.col_scores(&lr.v[l]);
        let e = self.partial_residual(lr, l, &a, &g);
        let w = self.resp.width();
        let mut prec = DMatrix::identity(kc, kc);
        let mut h = DVector::zeros(kc);
        for j in 0..self.resp.n_attributes() {
            let range = self.resp.layout.range(j);
            let dim = range.len();
            let mut saa = 0.0;
            let mut z = vec![0.0; dim];
            for i in 0..self.n() {
                if !self.resp.observed(i, j) || a[i] == 0.0 {
                    continue;
                }
                saa += a[i] * a[i];
                for p in 0..dim {
                    z[p] += a[i] * e[i * w + range.start + p];
                }
            }
            if saa == 0.0 {
                continue;
            }
            let p = &self.resp.precision[j];
            // Λ z and the block C_jᵀ Λ_j C_j, with C_j the 0/1 rows of the attribute's entities.
            let mut lz = vec![0.0; dim];
            for x in 0..dim {
                for y in 0..dim {
                    lz[x] += p[x * dim + y] * z[y];
                }
            }
            for x in 0..dim {
                let fx = range.start + x;
                for b in 0..kc {
                    if !self.cols.get(fx, b) {
                        continue;
                    }
                    h[b] += lam * lz[x];
                    for y in 0..dim {
                        let fy = range.start + y;
                        let pxy = p[x * dim + y];
                        for c in 0..kc {
                            if self.cols.get(fy, c) {
                                prec[(b, c)] += lam * lam * saa * pxy;
                            }
                        }
                    }
                }
            }
        }
        (prec, h)
    }

    pub fn update_u<R: Rng + ?Sized>(&mut self, lr: &mut LowRankRegression, l: usize, rng: &mut R) -> Result<()> {
        let new = if lr.active[l] {
            let (prec, h) = self.u_conditional(lr, l);
            dist::sample_mvn_canonical(&h, &prec, rng)?.iter().copied().collect()
        } else {
            (0..lr.left_dim()).map(|_| dist::sample_std_normal(rng)).collect::<Vec<_>>()
        };
        if lr.active[l] {
            let g = self.col_scores(&lr.v[l]);
            let a_old = self.row_scores(&lr.u[l]);
            let a_new = self.row_scores(&new);
            let lam = lr.lambda[l];
            self.swap_term((lam, &a_old, &g), (lam, &a_new, &g));
        }
        lr.u[l] = new;
        Ok(())
    }

    pub fn update_v<R: Rng + ?Sized>(&mut self, lr: &mut LowRankRegression, l: usize, rng: &mut R) -> Result<()> {
        let new = if lr.active[l] {
            let (prec, h) = self.v_conditional(lr, l);
            dist::sample_mvn_canonical(&h, &prec, rng)?.iter().copied().collect()
        } else {
            (0..lr.right_dim()).map(|_| dist::sample_std_normal(rng)).collect::<Vec<_>>()
        };
        if lr.active[l] {
            let a = self.row_scores(&lr.u[l]);
            let g_old = self.col_scores(&lr.v[l]);
            let g_new = self.col_scores(&new);
            let lam = lr.lambda[l];
            self.swap_term((lam, &a, &g_old), (lam, &a, &g_new));
        }
        lr.v[l] = new;
        Ok(())
    }

    /// `(mean, var)` of the untruncated Gaussian conditional of λ_l.
    pub fn lambda_conditional(&self, lr: &LowRankRegression, l: usize) -> (f64, f64) {
        let st = self.term_stats(lr, l);
        let prec = 1.0 / lr.sigma_lambda2 + st.quad;
        (st.lin / prec, 1.0 / prec)
    }

    pub fn update_lambda<R: Rng + ?Sized>(&mut self, lr: &mut LowRankRegression, l: usize, rng: &mut R) -> Result<()> {
        let new = if lr.active[l] {
            let (m, v) = self.lambda_conditional(lr, l);
            dist::sample_truncated_normal(m, v, 0.0, f64::INFINITY, rng)?
        } else {
            dist::sample_truncated_normal(0.0, lr.sigma_lambda2, 0.0, f64::INFINITY, rng)?
        };
        if lr.active[l] {
            let a = self.row_scores(&lr.u[l]);
            let g = self.col_scores(&lr.v[l]);
            self.shift_mean(new - lr.lambda[l], &a, &g);
        }
        lr.lambda[l] = new;
        Ok(())
    }

    /// Log weights `(b_l = 0, b_l = 1)` including the prior.
    pub fn indicator_log_weights(&self, lr: &LowRankRegression, l: usize) -> (f64, f64) {
        let st = self.term_stats(lr, l);
        let lam = lr.lambda[l];
        let delta = lam * st.lin - 0.5 * lam * lam * st.quad;
        ((1.0 - lr.pi).ln(), lr.pi.ln() + delta)
    }

    pub fn update_indicator<R: Rng + ?Sized>(&mut self, lr: &mut LowRankRegression, l: usize, rng: &mut R) -> Result<()> {
        let (w0, w1) = self.indicator_log_weights(lr, l);
        let new = dist::sample_two_point(w0, w1, rng);
        if new != lr.active[l] {
            let a = self.row_scores(&lr.u[l]);
            let g = self.col_scores(&lr.v[l]);
            let old_c = Self::contribution(lr, l);
            lr.active[l] = new;
            let new_c = Self::contribution(lr, l);
            self.shift_mean(new_c - old_c, &a, &g);
        }
        Ok(())
    }
}

/// `π ~ Beta(1/L + Σb, 1 + L − Σb)`.
pub fn sample_rank_inclusion<R: Rng + ?Sized>(lr: &LowRankRegression, rng: &mut R) -> Result<f64> {
    let n = lr.n_terms() as f64;
    let on = lr.active.iter().filter(|b| **b).count() as f64;
    dist::sample_beta(1.0 / n + on, 1.0 + n - on, rng)
}

/// `σ_λ² ~ IG(a + L/2, b + Σλ²/2)`.
pub fn sample_weight_scale<R: Rng + ?Sized>(lr: &LowRankRegression, shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let ss: f64 = lr.lambda.iter().map(|x| x * x).sum();
    dist::sample_inverse_gamma(shape + 0.5 * lr.n_terms() as f64, rate + 0.5 * ss, rng)
}
