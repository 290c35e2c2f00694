//! Independent oracles for the conditional updates, the Σ_j transform and
//! the clustering. Each check returns a one-line detail on success and an
//! explanation on failure.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relbin::clustering::{agglomerate, dissimilarity, Dendrogram, Linkage};
use relbin::config::InclusionMode;
use relbin::corrprior::{FeaturePrior, IndependentBernoulli, SparseFactorCovariance};
use relbin::data::ChoiceLayout;
use relbin::diagnostics::{ks_two_sample, mean_and_var};
use relbin::distributions::{sample_wishart, two_point_probability};
use relbin::gibbs::features::{row_bit_loglik, update_attribute, update_row, RowDesign};
use relbin::gibbs::probit::{log_jacobian, sample_noise_variance, update_noise_cov, NoiseCovPrior};
use relbin::gibbs::regression::TermUpdater;
use relbin::gibbs::response::Response;
use relbin::latent::{BitMatrix, LowRankRegression, NoiseCov};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

pub type Check = Result<String, String>;

const DET_TOL: f64 = 1e-8;
const MC_SE: f64 = 4.0;
const MC_DRAWS: usize = 40_000;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn close(name: &str, got: f64, want: f64) -> Result<(), String> {
    let tol = DET_TOL * want.abs().max(1.0);
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name}: {got} vs oracle {want}"))
    }
}

fn within_se(name: &str, draws: &[f64], want_mean: f64, want_var: f64) -> Result<(), String> {
    let (m, _) = mean_and_var(draws);
    let se = (want_var / draws.len() as f64).sqrt();
    if (m - want_mean).abs() <= MC_SE * se {
        Ok(())
    } else {
        Err(format!("{name}: MC mean {m} vs oracle {want_mean} (se {se})"))
    }
}

fn frequency_matches(name: &str, hits: usize, n: usize, p: f64) -> Result<(), String> {
    let freq = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
    if (freq - p).abs() <= MC_SE * se {
        Ok(())
    } else {
        Err(format!("{name}: frequency {freq} vs oracle {p} (se {se})"))
    }
}

/// A tiny response block with explicit covariances.
struct World {
    layout: ChoiceLayout,
    n: usize,
    target: Vec<f64>,
    missing: Vec<bool>,
    cov: Vec<DMatrix<f64>>,
    precision: Vec<Vec<f64>>,
}

impl World {
    fn new(layout: ChoiceLayout, n: usize, cov: Vec<DMatrix<f64>>, missing: Vec<bool>, g: &mut ChaCha8Rng) -> World {
        let target = (0..n * layout.width()).map(|_| 2.0 * g.random::<f64>() - 1.0).collect();
        let precision = cov
            .iter()
            .map(|c| {
                let inv = c.clone().try_inverse().expect("invertible");
                (0..c.nrows())
                    .flat_map(|a| (0..c.ncols()).map(move |b| (a, b)))
                    .map(|(a, b)| inv[(a, b)])
                    .collect()
            })
            .collect();
        World {
            layout,
            n,
            target,
            missing,
            cov,
            precision,
        }
    }

    /// q = (2, 3): one scalar and one 2-dimensional block.
    fn categorical(g: &mut ChaCha8Rng) -> World {
        let cov = vec![
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.5]),
        ];
        let mut missing = vec![false; 3 * 2];
        missing[2 * 2] = true;
        World::new(ChoiceLayout::new(&[2, 3]), 3, cov, missing, g)
    }

    fn real(g: &mut ChaCha8Rng) -> World {
        let s2 = 0.7;
        let cov = vec![DMatrix::from_element(1, 1, s2); 2];
        let mut missing = vec![false; 3 * 2];
        missing[2 + 1] = true;
        World::new(ChoiceLayout::scalar(2), 3, cov, missing, g)
    }

    fn response(&self) -> Response<'_> {
        Response {
            layout: self.layout.clone(),
            target: &self.target,
            missing: &self.missing,
            precision: self.precision.clone(),
            n_rows: self.n,
        }
    }

    /// Gaussian log density of the observed cells (constants included).
    fn loglik(&self, mean: &[f64]) -> f64 {
        let w = self.layout.width();
        let na = self.layout.n_attributes();
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..na {
                if self.missing[i * na + j] {
                    continue;
                }
                let range = self.layout.range(j);
                let x = DVector::from_iterator(range.len(), range.clone().map(|f| self.target[i * w + f] - mean[i * w + f]));
                let ch = self.cov[j].clone().cholesky().expect("SPD");
                let z = ch.l().solve_lower_triangular(&x).expect("solve");
                let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                s += -0.5 * (z.norm_squared() + logdet + range.len() as f64 * (2.0 * std::f64::consts::PI).ln());
            }
        }
        s
    }
}

/// `Σ_l b_l λ_l (r_i · u_l)(c_f · v_l)` computed entry by entry.
fn oracle_mean(r: &BitMatrix, lr: &LowRankRegression, cols: &BitMatrix) -> Vec<f64> {
    let mut out = vec![0.0; r.rows() * cols.rows()];
    for i in 0..r.rows() {
        for f in 0..cols.rows() {
            let mut s = 0.0;
            for l in 0..lr.lambda.len() {
                if !lr.active[l] {
                    continue;
                }
                let a: f64 = (0..r.cols()).filter(|&k| r.get(i, k)).map(|k| lr.u[l][k]).sum();
                let b: f64 = (0..cols.cols()).filter(|&k| cols.get(f, k)).map(|k| lr.v[l][k]).sum();
                s += lr.lambda[l] * a * b;
            }
            out[i * cols.rows() + f] = s;
        }
    }
    out
}

fn regression(kl: usize, kr: usize, g: &mut ChaCha8Rng) -> LowRankRegression {
    let mut n = || 2.0 * g.random::<f64>() - 1.0;
    LowRankRegression {
        lambda: vec![0.9, 1.4],
        active: vec![true, true],
        u: (0..2).map(|_| (0..kl).map(|_| n()).collect()).collect(),
        v: (0..2).map(|_| (0..kr).map(|_| n()).collect()).collect(),
        pi: 0.35,
        sigma_lambda2: 1.0,
    }
}

/// Mean and variance of a 1-d density given by its log on a fine grid.
fn quadrature(logp: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64, f64) {
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|t| lo + t as f64 * h).collect();
    let lp: Vec<f64> = xs.iter().map(|&x| logp(x)).collect();
    let top = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (t, (&x, &l)) in xs.iter().zip(&lp).enumerate() {
        let w = if t == 0 || t == n { 0.5 } else { 1.0 } * (l - top).exp() * h;
        z += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean, z.ln() + top)
}

fn std_normal_logpdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// u_l and v_l of a scalar term against quadrature of prior × likelihood.
pub fn term_vectors() -> Check {
    let mut g = rng(101);
    let cat = World::categorical(&mut g);
    let real = World::real(&mut g);
    let mut notes = Vec::new();

    // u on the categorical side: K_r = K_d = 1.
    let r = BitMatrix::from_fn(3, 1, |i, _| i != 1);
    let d = BitMatrix::from_fn(3, 1, |f, _| f != 1);
    let lr = regression(1, 1, &mut g);
    let resp = cat.response();
    let up = TermUpdater::new(&resp, &r, &d, &lr);
    let (prec, h) = up.u_conditional(&lr, 0);
    let (m_code, v_code) = (h[0] / prec[(0, 0)], 1.0 / prec[(0, 0)]);
    let logp = |x: f64| {
        let mut l = lr.clone();
        l.u[0][0] = x;
        std_normal_logpdf(x) + cat.loglik(&oracle_mean(&r, &l, &d))
    };
    let (m, v, _) = quadrature(logp, m_code - 30.0 * v_code.sqrt(), m_code + 30.0 * v_code.sqrt(), 200_000);
    close("u mean", m_code, m)?;
    close("u variance", v_code, v)?;
    let draws: Vec<f64> = (0..MC_DRAWS)
        .map(|_| {
            let mut l = lr.clone();
            TermUpdater::new(&resp, &r, &d, &lr).update_u(&mut l, 0, &mut g).unwrap();
            l.u[0][0]
        })
        .collect();
    within_se("u draws", &draws, m, v)?;
    notes.push(format!("u mean {m:.6} var {v:.6}"));

    // v on the real side.
    let r = BitMatrix::from_fn(3, 1, |i, _| i != 2);
    let c = BitMatrix::from_fn(2, 1, |_, _| true);
    let lr = regression(1, 1, &mut g);
    let resp = real.response();
    let up = TermUpdater::new(&resp, &r, &c, &lr);
    let (prec, h) = up.v_conditional(&lr, 1);
    let (m_code, v_code) = (h[0] / prec[(0, 0)], 1.0 / prec[(0, 0)]);
    let logp = |x: f64| {
        let mut l = lr.clone();
        l.v[1][0] = x;
        std_normal_logpdf(x) + real.loglik(&oracle_mean(&r, &l, &c))
    };
    let (m, v, _) = quadrature(logp, m_code - 30.0 * v_code.sqrt(), m_code + 30.0 * v_code.sqrt(), 200_000);
    close("v mean", m_code, m)?;
    close("v variance", v_code, v)?;
    let draws: Vec<f64> = (0..MC_DRAWS)
        .map(|_| {
            let mut l = lr.clone();
            TermUpdater::new(&resp, &r, &c, &lr).update_v(&mut l, 1, &mut g).unwrap();
            l.v[1][0]
        })
        .collect();
    within_se("v draws", &draws, m, v)?;
    notes.push(format!("v mean {m:.6} var {v:.6}"));
    Ok(notes.join("; "))
}

/// Rank indicator b_l by enumerating both values.
pub fn rank_indicator() -> Check {
    let mut g = rng(202);
    let cat = World::categorical(&mut g);
    let r = BitMatrix::from_fn(3, 2, |i, k| (i + k) % 2 == 0 || i == 2);
    let d = BitMatrix::from_fn(3, 2, |f, k| f == k || f == 2);
    let mut lr = regression(2, 2, &mut g);
    lr.active = vec![true, false];
    let resp = cat.response();
    let mut details = Vec::new();
    for l in 0..2 {
        let (w0, w1) = TermUpdater::new(&resp, &r, &d, &lr).indicator_log_weights(&lr, l);
        let p_code = two_point_probability(w0, w1);
        let lw = |on: bool| {
            let mut x = lr.clone();
            x.active[l] = on;
            let prior = if on { lr.pi } else { 1.0 - lr.pi };
            prior.ln() + cat.loglik(&oracle_mean(&r, &x, &d))
        };
        let (a, b) = (lw(false), lw(true));
        let p = 1.0 / (1.0 + (a - b).exp());
        close(&format!("b_{l} probability"), p_code, p)?;
        let mut hits = 0;
        for _ in 0..MC_DRAWS {
            let mut x = lr.clone();
            TermUpdater::new(&resp, &r, &d, &lr).update_indicator(&mut x, l, &mut g).unwrap();
            hits += x.active[l] as usize;
        }
        frequency_matches(&format!("b_{l} draws"), hits, MC_DRAWS, p)?;
        details.push(format!("Pr(b_{l}=1)={p:.6}"));
    }
    Ok(details.join(" "))
}

/// `W = M Colsᵀ`, K_r × width.
fn design_matrix(lr: &LowRankRegression, cols: &BitMatrix) -> Vec<f64> {
    let kr = lr.left_dim();
    let mut w = vec![0.0; kr * cols.rows()];
    for k in 0..kr {
        let e = BitMatrix::from_fn(1, kr, |_, kk| kk == k);
        let row = oracle_mean(&e, lr, cols);
        w[k * cols.rows()..(k + 1) * cols.rows()].copy_from_slice(&row);
    }
    w
}

fn correlated_prior(n: usize, k: usize, g: &mut ChaCha8Rng) -> SparseFactorCovariance {
    let mut s = SparseFactorCovariance::empty(n, 1, k, 1.0, 1.0, InclusionMode::PerFactor);
    let loadings: Vec<f64> = (0..n).map(|i| if i == 0 { 0.8 } else { 1.5 * g.random::<f64>() - 0.5 }).collect();
    s.set_loadings(&loadings).unwrap();
    for kk in 0..k {
        s.set_factor(kk, &[2.0 * g.random::<f64>() - 1.0]);
    }
    s
}

fn phi(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Row bits r_ik (both sides of the likelihood) and column bits d_fk.
pub fn binary_features() -> Check {
    let mut g = rng(303);
    let cat = World::categorical(&mut g);
    let real = World::real(&mut g);
    let r = BitMatrix::from_fn(3, 2, |i, k| (i * 2 + k) % 3 != 0);
    let d = BitMatrix::from_fn(3, 2, |f, k| (f + k) % 2 == 0);
    let c = BitMatrix::from_fn(2, 2, |f, k| f != k);
    let mx = regression(2, 2, &mut g);
    let my = regression(2, 2, &mut g);
    let (rc, rr) = (cat.response(), real.response());
    let (wx, wy) = (design_matrix(&mx, &d), design_matrix(&my, &c));
    let designs = [RowDesign { response: &rc, w: &wx }, RowDesign { response: &rr, w: &wy }];
    let prior = FeaturePrior::Correlated(correlated_prior(3, 2, &mut g));
    let FeaturePrior::Correlated(s) = &prior else { unreachable!() };
    let mut details = Vec::new();

    let i = 1;
    for k in 0..2 {
        let lw = |on: bool| {
            let mut rb = r.clone();
            rb.set(i, k, on);
            let m = s.loading(i, 0) * s.factor(k)[0];
            let p = if on { phi(m) } else { 1.0 - phi(m) };
            p.ln() + cat.loglik(&oracle_mean(&rb, &mx, &d)) + real.loglik(&oracle_mean(&rb, &my, &c))
        };
        let p = 1.0 / (1.0 + (lw(false) - lw(true)).exp());
        let mut means: Vec<Vec<f64>> = designs
            .iter()
            .map(|des| {
                let w = des.response.width();
                (0..w)
                    .map(|f| (0..2).filter(|&kk| r.get(i, kk)).map(|kk| des.w[kk * w + f]).sum())
                    .collect()
            })
            .collect();
        let (l0, l1) = row_bit_loglik(&designs, &mut means, i, k, r.get(i, k), &mut Vec::new());
        let (p0, p1) = prior.log_activation(i, k);
        close(&format!("r_{i}{k} probability"), two_point_probability(p0 + l0, p1 + l1), p)?;
        if k == 0 {
            let mut hits = 0;
            for _ in 0..MC_DRAWS {
                let (bits, _) = update_row(i, r.row(i), &designs, &prior, &mut g).unwrap();
                hits += bits[0] as usize;
            }
            frequency_matches("r draws", hits, MC_DRAWS, p)?;
        }
        details.push(format!("Pr(r_{i}{k}=1)={p:.6}"));
    }

    // Column bits of the 3-category attribute under an independent prior.
    let j = 1;
    let start = cat.layout.range(j).start;
    let indep = FeaturePrior::Independent(IndependentBernoulli {
        pi: vec![0.3, 0.6],
        alpha: 1.0,
    });
    let lw = |on: bool| {
        let mut db = d.clone();
        db.set(start, 0, on);
        let p: f64 = if on { 0.3 } else { 0.7 };
        p.ln() + cat.loglik(&oracle_mean(&r, &mx, &db))
    };
    let p = 1.0 / (1.0 + (lw(false) - lw(true)).exp());
    let a: Vec<f64> = (0..3)
        .flat_map(|ii| {
            let m = relbin::latent::assemble_regression_matrix(&mx);
            let row: Vec<f64> = (0..2)
                .map(|b| (0..2).filter(|&kk| r.get(ii, kk)).map(|kk| m[(kk, b)]).sum())
                .collect();
            row
        })
        .collect();
    let entity_bits: Vec<Vec<bool>> = cat.layout.range(j).map(|f| d.row(f).to_vec()).collect();
    let mut hits = 0;
    for _ in 0..MC_DRAWS {
        let (bits, _) = update_attribute(j, &entity_bits, &rc, &a, &indep, &mut g).unwrap();
        hits += bits[0][0] as usize;
    }
    frequency_matches("d draws", hits, MC_DRAWS, p)?;
    details.push(format!("Pr(d_{start}0=1)={p:.6}"));
    Ok(details.join(" "))
}

/// Spike-and-slab loading against a point mass plus an integrated slab.
pub fn spike_slab_loading() -> Check {
    let mut s = SparseFactorCovariance::empty(2, 1, 2, 1.0, 1.0, InclusionMode::PerFactor);
    s.set_loadings(&[1.0, 0.0]).unwrap();
    s.set_inclusion(&[0.4]);
    s.set_slab_var(1, 1.7);
    s.set_factor(0, &[0.8]);
    s.set_factor(1, &[-1.3]);
    s.set_eta(1, 0, 0.9);
    s.set_eta(1, 1, -0.4);
    let row = s.loading_row(1).to_vec();
    let (lo, mean, var) = s.loading_conditional(1, 0, &row);
    let p_code = 1.0 / (1.0 + (-lo).exp());

    let loglik = |b: f64| -> f64 { [(0.8, 0.9), (-1.3, -0.4)].iter().map(|(f, e): &(f64, f64)| -0.5 * (e - b * f).powi(2)).sum() };
    let v = 1.7;
    let (m, v_post, log_z) = quadrature(
        |b| -0.5 * b * b / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln() + loglik(b),
        -20.0,
        20.0,
        400_000,
    );
    let w0 = 0.6f64.ln() + loglik(0.0);
    let w1 = 0.4f64.ln() + log_z;
    let p = 1.0 / (1.0 + (w0 - w1).exp());
    close("inclusion probability", p_code, p)?;
    close("slab mean", mean, m)?;
    close("slab variance", var, v_post)?;

    let mut g = rng(404);
    let mut nonzero = Vec::new();
    for _ in 0..MC_DRAWS {
        let b = s.sample_loading_row(1, &mut g).unwrap()[0];
        if b != 0.0 {
            nonzero.push(b);
        }
    }
    frequency_matches("loading nonzero", nonzero.len(), MC_DRAWS, p)?;
    within_se("slab draws", &nonzero, m, v_post)?;
    Ok(format!("Pr(b≠0)={p:.6} slab mean {m:.6}"))
}

/// σ_y² draws against quadrature of the inverse-gamma prior times the likelihood.
pub fn noise_variance() -> Check {
    let mut g = rng(505);
    let residuals = [0.3, -1.1, 0.45, 0.9, -0.2];
    let (a, b): (f64, f64) = (2.0, 1.5);
    let n = residuals.len();
    let ss: f64 = residuals.iter().map(|e| e * e).sum();
    // Density of t = ln σ².
    let logp = |t: f64| {
        let s2 = t.exp();
        let prior = a * b.ln() - ln_gamma(a) - (a + 1.0) * t - b / s2 + t;
        let lik: f64 = residuals.iter().map(|e| -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * e * e / s2).sum();
        prior + lik
    };
    let h = 30.0 / 400_000.0;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    let top = (0..=400_000).map(|k| logp(-15.0 + k as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    for k in 0..=400_000 {
        let t = -15.0 + k as f64 * h;
        let w = (logp(t) - top).exp() * h;
        z += w;
        m1 += w * t.exp();
        m2 += w * (2.0 * t).exp();
    }
    let mean = m1 / z;
    let var = m2 / z - mean * mean;
    let draws: Vec<f64> = (0..MC_DRAWS)
        .map(|_| sample_noise_variance(n, ss, a, b, &mut g).unwrap())
        .collect();
    within_se("σ_y² draws", &draws, mean, var)?;
    Ok(format!("E[σ_y²]={mean:.6}"))
}

pub fn conjugate_checks() -> Vec<(&'static str, Check)> {
    vec![
        ("noise variance", noise_variance()),
        ("u/v scalar terms", term_vectors()),
        ("binary features", binary_features()),
        ("rank indicators", rank_indicator()),
        ("spike-slab loadings", spike_slab_loading()),
    ]
}

/// Σ → (D, R) with `R = D^{-1/2} Σ D^{-1/2}` on the upper triangle.
fn decompose(p: usize, sigma_upper: &[f64]) -> Vec<f64> {
    let mut s = DMatrix::zeros(p, p);
    let mut t = 0;
    for a in 0..p {
        for b in a..p {
            s[(a, b)] = sigma_upper[t];
            s[(b, a)] = sigma_upper[t];
            t += 1;
        }
    }
    let mut out: Vec<f64> = (0..p).map(|a| s[(a, a)]).collect();
    for a in 0..p {
        for b in a + 1..p {
            out.push(s[(a, b)] / (s[(a, a)] * s[(b, b)]).sqrt());
        }
    }
    out
}

/// |det ∂(D, R)/∂Σ| by central differences must equal 1/J(D).
pub fn jacobian() -> Check {
    let mut g = rng(606);
    let mut worst: f64 = 0.0;
    for trial in 0..30 {
        let q = 3 + trial % 3;
        let p = q - 1;
        let a = DMatrix::from_fn(p, p + 2, |_, _| g.random::<f64>() - 0.5);
        let sigma = &a * a.transpose() + DMatrix::identity(p, p) * 0.3;
        let x: Vec<f64> = (0..p).flat_map(|r| (r..p).map(move |c| (r, c))).map(|(r, c)| sigma[(r, c)]).collect();
        let m = x.len();
        let mut jac = DMatrix::zeros(m, m);
        for col in 0..m {
            let h = 1e-5 * x[col].abs().max(1e-2);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[col] += h;
            xm[col] -= h;
            let (fp, fm) = (decompose(p, &xp), decompose(p, &xm));
            for r in 0..m {
                jac[(r, col)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let numeric = jac.determinant().abs();
        let d: Vec<f64> = (0..p).map(|r| sigma[(r, r)]).collect();
        let analytic = (-log_jacobian(&d)).exp();
        let rel = (numeric - analytic).abs() / analytic;
        worst = worst.max(rel);
        if rel > 1e-6 {
            return Err(format!("q={q}: numeric {numeric} vs 1/J {analytic} (rel {rel:.2e})"));
        }
    }
    Ok(format!("worst relative error {worst:.2e} over 30 instances"))
}

/// Prior-only MH chain on Σ_j against forward draws from the Wishart prior.
pub fn prior_only_mh() -> Check {
    let mut g = rng(707);
    let mut worst = f64::INFINITY;
    for dim in [2usize, 3] {
        let prior = NoiseCovPrior {
            df: 8.0,
            scale: 1.0,
            proposal_df: 8.0,
        };
        let mut cur = NoiseCov::identity(dim);
        let mut chain = Vec::new();
        for it in 0..200_000 {
            let (next, _) = update_noise_cov(&cur, &[], &prior, &mut g).map_err(|e| e.to_string())?;
            cur = next;
            if it % 10 == 0 {
                chain.push(cur.restricted()[(0, dim - 1)]);
            }
        }
        let omega = DMatrix::identity(dim, dim);
        let fwd: Vec<f64> = (0..20_000)
            .map(|_| {
                let w = sample_wishart(8.0, &omega, &mut g).unwrap();
                NoiseCov::from_extended(&w).unwrap().restricted()[(0, dim - 1)]
            })
            .collect();
        let (_, p) = ks_two_sample(&chain, &fwd);
        if p <= 1e-3 {
            return Err(format!("dim {dim}: KS p = {p}"));
        }
        worst = worst.min(p);
    }
    Ok(format!("smallest KS p {worst:.3}"))
}

fn labels(n: usize) -> Vec<String> {
    ["a", "b", "c", "d"][..n].iter().map(|s| s.to_string()).collect()
}

/// Leaf sets and heights of every merge, sorted by height.
fn clusters(t: &Dendrogram) -> Vec<(Vec<usize>, f64)> {
    let n = t.n_leaves();
    let mut sets: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut out = Vec::new();
    for m in t.merges() {
        let mut s = [sets[m.left].clone(), sets[m.right].clone()].concat();
        s.sort_unstable();
        out.push((s.clone(), m.height));
        sets.push(s);
    }
    out
}

struct Fixture {
    name: &'static str,
    diss: Vec<f64>,
    linkage: Linkage,
    want: Vec<(Vec<usize>, f64)>,
}

fn fixtures() -> Vec<Fixture> {
    let pairs = vec![0.0, 0.9, 0.2, 0.8, 0.9, 0.0, 0.7, 0.3, 0.2, 0.7, 0.0, 0.6, 0.8, 0.3, 0.6, 0.0];
    let chain = vec![0.0, 0.1, 0.9, 0.3, 0.1, 0.0, 0.9, 0.5, 0.9, 0.9, 0.0, 0.9, 0.3, 0.5, 0.9, 0.0];
    vec![
        Fixture {
            name: "two entities",
            diss: vec![0.0, 0.4, 0.4, 0.0],
            linkage: Linkage::Average,
            want: vec![(vec![0, 1], 0.4)],
        },
        Fixture {
            name: "three entities",
            diss: vec![0.0, 0.2, 0.6, 0.2, 0.0, 0.8, 0.6, 0.8, 0.0],
            linkage: Linkage::Average,
            want: vec![(vec![0, 1], 0.2), (vec![0, 1, 2], 0.7)],
        },
        Fixture {
            name: "three entities, complete",
            diss: vec![0.0, 0.2, 0.6, 0.2, 0.0, 0.8, 0.6, 0.8, 0.0],
            linkage: Linkage::Complete,
            want: vec![(vec![0, 1], 0.2), (vec![0, 1, 2], 0.8)],
        },
        Fixture {
            name: "two pairs",
            diss: pairs.clone(),
            linkage: Linkage::Average,
            want: vec![(vec![0, 2], 0.2), (vec![1, 3], 0.3), (vec![0, 1, 2, 3], 0.75)],
        },
        Fixture {
            name: "two pairs, complete",
            diss: pairs,
            linkage: Linkage::Complete,
            want: vec![(vec![0, 2], 0.2), (vec![1, 3], 0.3), (vec![0, 1, 2, 3], 0.9)],
        },
        Fixture {
            name: "chain",
            diss: chain,
            linkage: Linkage::Average,
            want: vec![(vec![0, 1], 0.1), (vec![0, 1, 3], 0.4), (vec![0, 1, 2, 3], 0.9)],
        },
    ]
}

pub fn upgma_fixtures() -> Check {
    let fx = fixtures();
    for f in &fx {
        let n = (f.diss.len() as f64).sqrt() as usize;
        let d = DMatrix::from_row_slice(n, n, &f.diss);
        let t = agglomerate(&d, &labels(n), f.linkage).map_err(|e| e.to_string())?;
        let got = clusters(&t);
        let ok = got.len() == f.want.len()
            && got.iter().zip(&f.want).all(|((gs, gh), (ws, wh))| gs == ws && (gh - wh).abs() < 1e-12);
        if !ok {
            return Err(format!("{}: got {got:?}, want {:?}", f.name, f.want));
        }
    }
    // From a correlation matrix: 1 − R.
    let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, 0.1, 0.9, 1.0, 0.3, 0.1, 0.3, 1.0]);
    let t = agglomerate(&dissimilarity(&corr), &labels(3), Linkage::Average).map_err(|e| e.to_string())?;
    let got = clusters(&t);
    if got[0].0 != vec![0, 1] || (got[0].1 - 0.1).abs() > 1e-12 || (got[1].1 - 0.8).abs() > 1e-12 {
        return Err(format!("correlation fixture: {got:?}"));
    }
    Ok(format!("{} fixtures", fx.len() + 1))
}

pub fn newick_round_trip() -> Check {
    let mut g = rng(808);
    let mut trees = Vec::new();
    for f in fixtures() {
        let n = (f.diss.len() as f64).sqrt() as usize;
        trees.push(agglomerate(&DMatrix::from_row_slice(n, n, &f.diss), &labels(n), f.linkage).unwrap());
    }
    for n in 2..=12 {
        for linkage in [Linkage::Average, Linkage::Complete] {
            let a = DMatrix::from_fn(n, n + 2, |_, _| g.random::<f64>() - 0.5);
            let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
            let corr = relbin::corrprior::covariance_to_correlation(&cov);
            let names: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
            trees.push(agglomerate(&dissimilarity(&corr), &names, linkage).unwrap());
        }
    }
    for t in &trees {
        let text = t.to_newick();
        let back = Dendrogram::from_newick(&text).map_err(|e| e.to_string())?;
        if &back != t || back.to_newick() != text {
            return Err(format!("round trip changed {text}"));
        }
    }
    Ok(format!("{} trees", trees.len()))
}
