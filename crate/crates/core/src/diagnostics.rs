//! Sample statistics used by the sampler checks: moments, Kolmogorov–Smirnov
//! tests and batch-means standard errors for autocorrelated chains.

/// Sample mean and (unbiased) sample variance.
pub fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1) as f64)
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut acc = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        if k % 2 == 1 {
            acc += term;
        } else {
            acc -= term;
        }
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

/// One-sample KS test against a continuous CDF; returns the asymptotic p-value.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    ks_pvalue(d, n)
}

/// Two-sample KS statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x: Vec<f64> = a.to_vec();
    let mut y: Vec<f64> = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = x[i].min(y[j]);
        while i < n && x[i] <= t {
            i += 1;
        }
        while j < m && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    (d, ks_pvalue(d, ne))
}

/// Standard error of the mean of an autocorrelated series by non-overlapping
/// batch means, with `sqrt(len)` batches.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let batches = ((n as f64).sqrt().floor() as usize).max(2);
    let size = n / batches;
    if size == 0 {
        let (_, v) = mean_and_var(xs);
        return (v / n as f64).sqrt();
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let (_, var_b) = mean_and_var(&means);
    (var_b / batches as f64).sqrt()
}

/// Effective sample size implied by the batch-means standard error.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let (_, v) = mean_and_var(xs);
    let se = batch_means_se(xs);
    if se == 0.0 {
        return xs.len() as f64;
    }
    (v / (se * se)).min(xs.len() as f64)
}

/// One-sided p-value for a paired-difference t statistic (H1: mean > 0),
/// using the normal approximation refined by a Student-t CDF.
pub fn paired_one_sided_pvalue(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    if n < 2 {
        return 1.0;
    }
    let (m, v) = mean_and_var(diffs);
    if v == 0.0 {
        return if m > 0.0 { 0.0 } else { 1.0 };
    }
    let t = m / (v / n as f64).sqrt();
    1.0 - student_t_cdf(t, (n - 1) as f64)
}

/// CDF of Student's t distribution with `nu` degrees of freedom.
pub fn student_t_cdf(t: f64, nu: f64) -> f64 {
    let x = nu / (nu + t * t);
    let tail = 0.5 * statrs::function::beta::beta_reg(0.5 * nu, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}
