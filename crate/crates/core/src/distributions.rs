//! Random sampling primitives and log densities.
//!
//! Parameterizations used throughout the crate:
//!
//! * `Gamma(shape, rate)` has mean `shape / rate`.
//! * `InvGamma(shape, rate)` is the law of `1 / Gamma(shape, rate)`; its mean is
//!   `rate / (shape - 1)` for `shape > 1`. The spike-and-slab variance prior
//!   `IG(c/2, cd/2)` therefore has mean `cd / (c - 2)`.
//! * `Wishart(df, scale)` has mean `df * scale`.
//!
//! The truncated normal sampler inverts the CDF while the truncation region
//! stays within [`TAIL_SWITCH`] standard deviations of the mean, and switches
//! to exponential (or uniform) accept-reject beyond that.

use std::f64::consts::{LN_2, PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standardized distance from the mean beyond which a one-sided truncation
/// region is sampled by accept-reject instead of CDF inversion.
pub const TAIL_SWITCH: f64 = 5.0;

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `ln Φ(x)`, accurate far into the lower tail.
pub fn std_normal_log_cdf(x: f64) -> f64 {
    if x > -30.0 {
        std_normal_cdf(x).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * LN_2PI + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

pub fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// `ln(Φ(b) - Φ(a))` for `a < b`.
pub fn log_std_normal_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        return log_std_normal_mass(-b, -a);
    }
    if b <= 0.0 {
        let lb = std_normal_log_cdf(b);
        let la = std_normal_log_cdf(a);
        return lb + (-(la - lb).exp()).ln_1p();
    }
    (-(std_normal_cdf(a) + std_normal_cdf(-b))).ln_1p()
}

fn check_var(var: f64) -> Result<()> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::Domain(format!("variance must be positive and finite, got {var}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

#[inline]
pub fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn sample_normal<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> Result<f64> {
    check_var(var)?;
    Ok(mean + var.sqrt() * sample_std_normal(rng))
}

/// Uniform draw on the open interval (0, 1).
#[inline]
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard normal restricted to `(a, b)` with `0 < a < b <= inf`.
fn sample_right_region<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a < TAIL_SWITCH {
        // Invert on the mirrored (negative) side where Φ is computed accurately.
        let lo = std_normal_cdf(-b);
        let hi = std_normal_cdf(-a);
        loop {
            let u = lo + (hi - lo) * open_unit(rng);
            let z = -std_normal_quantile(u);
            if z > a && z < b {
                return z;
            }
        }
    }
    if b.is_finite() && (b - a) < 2.0 / a {
        loop {
            let z = a + (b - a) * open_unit(rng);
            if z < b && open_unit(rng) <= (0.5 * (a * a - z * z)).exp() {
                return z;
            }
        }
    }
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / alpha;
        if z > a && z < b && open_unit(rng) <= (-0.5 * (z - alpha) * (z - alpha)).exp() {
            return z;
        }
    }
}

/// Standard normal restricted to `(a, b)`.
fn sample_std_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return sample_std_normal(rng);
    }
    if a >= 0.0 {
        if a == 0.0 {
            // Reflected normal: exact and cheap for the half-line.
            if b == f64::INFINITY {
                loop {
                    let z = sample_std_normal(rng).abs();
                    if z > 0.0 {
                        return z;
                    }
                }
            }
            return sample_right_region(f64::MIN_POSITIVE, b, rng);
        }
        return sample_right_region(a, b, rng);
    }
    if b <= 0.0 {
        return -sample_std_truncated(-b, -a, rng);
    }
    // Region straddles zero.
    let lo = std_normal_cdf(a);
    let hi = std_normal_cdf(b);
    loop {
        let u = lo + (hi - lo) * open_unit(rng);
        let z = std_normal_quantile(u);
        if z > a && z < b {
            return z;
        }
    }
}

/// Draw from `N(mean, var)` restricted to the open interval `(lower, upper)`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    var: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    check_var(var)?;
    if lower.is_nan() || upper.is_nan() || mean.is_nan() || !(lower < upper) {
        return Err(Error::Domain(format!(
            "truncation bounds must satisfy lower < upper, got ({lower}, {upper})"
        )));
    }
    if !mean.is_finite() {
        return Err(Error::Domain(format!("mean must be finite, got {mean}")));
    }
    let sd = var.sqrt();
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let z = sample_std_truncated(a, b, rng);
    let mut x = mean + sd * z;
    // The affine map can round onto a bound.
    if x <= lower {
        x = lower.next_up();
    }
    if x >= upper {
        x = upper.next_down();
    }
    if !(x > lower && x < upper) {
        x = 0.5 * (lower + upper);
    }
    Ok(x)
}

/// Draw from `N(mean, cov)`.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::Domain(format!(
            "covariance is {}x{} but mean has length {n}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let ch = linalg::cholesky(cov, "sample_mvn covariance")?;
    let z = DVector::from_fn(n, |_, _| sample_std_normal(rng));
    Ok(mean + ch.l() * z)
}

/// Draw from `N(P⁻¹h, P⁻¹)` given the precision `P` and the linear term `h`.
pub fn sample_mvn_canonical<R: Rng + ?Sized>(
    h: &DVector<f64>,
    precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = h.len();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let ch = linalg::cholesky(precision, "posterior precision")?;
    let mean = ch.solve(h);
    let z = DVector::from_fn(n, |_, _| sample_std_normal(rng));
    let lt = ch.l().transpose();
    let offset = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::NotPositiveDefinite("posterior precision".into()))?;
    Ok(mean + offset)
}

/// Draw from `Wishart(df, scale)` (mean `df * scale`) by the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(
    df: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if scale.ncols() != p {
        return Err(Error::Domain("Wishart scale must be square".into()));
    }
    if !(df.is_finite() && df >= p as f64) {
        return Err(Error::Domain(format!(
            "Wishart degrees of freedom {df} must be at least the dimension {p}"
        )));
    }
    if p == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ch = linalg::cholesky(scale, "Wishart scale")?;
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let dof = df - i as f64;
        a[(i, i)] = sample_gamma(0.5 * dof, 0.5, rng)?.sqrt();
        for j in 0..i {
            a[(i, j)] = sample_std_normal(rng);
        }
    }
    let la = ch.l() * a;
    let mut w = &la * la.transpose();
    linalg::symmetrize(&mut w);
    Ok(w)
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma rate", rate)?;
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(g.sample(rng))
}

pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    check_positive("inverse-gamma shape", shape)?;
    check_positive("inverse-gamma rate", rate)?;
    let g = Gamma::new(shape, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    loop {
        let x: f64 = g.sample(rng);
        if x > 0.0 {
            let v = rate / x;
            if v.is_finite() {
                return Ok(v);
            }
        }
    }
}

/// Beta draw, kept strictly inside (0, 1) so that log densities stay finite.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    check_positive("beta a", a)?;
    check_positive("beta b", b)?;
    let d = rand_distr::Beta::new(a, b).map_err(|e| Error::Domain(e.to_string()))?;
    let x: f64 = d.sample(rng);
    Ok(x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

pub fn sample_bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("Bernoulli probability {p} outside [0, 1]")));
    }
    let u: f64 = rng.random();
    Ok(u < p)
}

/// Bernoulli draw given log-weights of the outcomes `false` and `true`.
pub fn sample_two_point<R: Rng + ?Sized>(log_w0: f64, log_w1: f64, rng: &mut R) -> bool {
    let p1 = two_point_probability(log_w0, log_w1);
    let u: f64 = rng.random();
    u < p1
}

/// `w1 / (w0 + w1)` computed from log-weights.
pub fn two_point_probability(log_w0: f64, log_w1: f64) -> f64 {
    if log_w1 == f64::NEG_INFINITY {
        return 0.0;
    }
    if log_w0 == f64::NEG_INFINITY {
        return 1.0;
    }
    let d = log_w0 - log_w1;
    if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> Result<f64> {
    check_var(var)?;
    let d = x - mean;
    Ok(-0.5 * (LN_2PI + var.ln() + d * d / var))
}

pub fn log_truncnorm_pdf(x: f64, mean: f64, var: f64, lower: f64, upper: f64) -> Result<f64> {
    check_var(var)?;
    if !(lower < upper) {
        return Err(Error::Domain(format!("invalid truncation ({lower}, {upper})")));
    }
    if x <= lower || x >= upper {
        return Ok(f64::NEG_INFINITY);
    }
    let sd = var.sqrt();
    let mass = log_std_normal_mass((lower - mean) / sd, (upper - mean) / sd);
    Ok(log_normal_pdf(x, mean, var)? - mass)
}

pub fn log_half_normal_pdf(x: f64, var: f64) -> Result<f64> {
    check_var(var)?;
    if x <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(LN_2 + log_normal_pdf(x, 0.0, var)?)
}

pub fn log_mvn_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let n = x.len();
    if n == 0 {
        return Ok(0.0);
    }
    let ch = linalg::cholesky(cov, "log_mvn_pdf covariance")?;
    let d = x - mean;
    let sol = ch.solve(&d);
    Ok(-0.5 * (n as f64 * LN_2PI + linalg::log_det_from_cholesky(&ch) + d.dot(&sol)))
}

/// `ln Γ_p(a)`, the multivariate gamma function.
pub fn ln_multivariate_gamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    let mut acc = 0.25 * pf * (pf - 1.0) * PI.ln();
    for j in 0..p {
        acc += ln_gamma(a - 0.5 * j as f64);
    }
    acc
}

/// Log density of `Wishart(df, scale)` at `x`.
pub fn log_wishart_pdf(x: &DMatrix<f64>, df: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let p = scale.nrows();
    if !(df.is_finite() && df > p as f64 - 1.0) {
        return Err(Error::Domain(format!("Wishart df {df} too small for dimension {p}")));
    }
    let sch = linalg::cholesky(scale, "Wishart scale")?;
    if x.nrows() != p || x.ncols() != p {
        return Err(Error::Domain("Wishart argument has wrong shape".into()));
    }
    if !linalg::is_symmetric(x, 1e-9) {
        return Ok(f64::NEG_INFINITY);
    }
    let xch = match nalgebra::Cholesky::new(x.clone()) {
        Some(c) => c,
        None => return Ok(f64::NEG_INFINITY),
    };
    let pf = p as f64;
    let log_det_x = linalg::log_det_from_cholesky(&xch);
    let log_det_s = linalg::log_det_from_cholesky(&sch);
    let trace = sch.solve(x).trace();
    Ok(0.5 * (df - pf - 1.0) * log_det_x
        - 0.5 * trace
        - 0.5 * df * pf * LN_2
        - 0.5 * df * log_det_s
        - ln_multivariate_gamma(p, 0.5 * df))
}

pub fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma rate", rate)?;
    if x <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x)
}

pub fn log_inverse_gamma_pdf(x: f64, shape: f64, rate: f64) -> Result<f64> {
    check_positive("inverse-gamma shape", shape)?;
    check_positive("inverse-gamma rate", rate)?;
    if x <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x)
}

pub fn log_beta_pdf(x: f64, a: f64, b: f64) -> Result<f64> {
    check_positive("beta a", a)?;
    check_positive("beta b", b)?;
    if !(0.0..=1.0).contains(&x) {
        return Ok(f64::NEG_INFINITY);
    }
    let ta = if a == 1.0 { 0.0 } else { (a - 1.0) * x.ln() };
    let tb = if b == 1.0 { 0.0 } else { (b - 1.0) * (-x).ln_1p() };
    Ok(ta + tb - statrs::function::beta::ln_beta(a, b))
}

pub fn log_bernoulli_pmf(x: bool, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::Domain(format!("Bernoulli probability {p} outside [0, 1]")));
    }
    Ok(if x { p.ln() } else { (-p).ln_1p() })
}
