//! Two-point updates of individual feature bits.
//!
//! Each bit is drawn from its conditional with the prior latent η integrated
//! out, `Pr(bit = 1) ∝ Φ(b_iᵀ f_k) · p(data | bit = 1)`, after which η is
//! redrawn on the side matching the new bit.

use rand::Rng;

use crate::corrprior::FeaturePrior;
use crate::distributions as dist;
use crate::error::Result;
use crate::gibbs::response::Response;
use crate::linalg;

/// A response together with `W = M Colsᵀ` (K_r × width, row-major).
pub struct RowDesign<'a> {
    pub response: &'a Response<'a>,
    pub w: &'a [f64],
}

/// Log weights `(bit = 0, bit = 1)` of row bit `(i, k)` before the prior, given
/// the mean of row `i` with the current bit value `current`.
pub fn row_bit_loglik(
    designs: &[RowDesign<'_>],
    means: &mut [Vec<f64>],
    i: usize,
    k: usize,
    current: bool,
    scratch: &mut Vec<f64>,
) -> (f64, f64) {
    let (mut l0, mut l1) = (0.0, 0.0);
    for (s, des) in designs.iter().enumerate() {
        let width = des.response.width();
        if width == 0 {
            continue;
        }
        let wk = &des.w[k * width..(k + 1) * width];
        let mu = &mut means[s];
        if current {
            for f in 0..width {
                mu[f] -= wk[f];
            }
        }
        l0 += des.response.row_loglik(i, mu, scratch);
        for f in 0..width {
            mu[f] += wk[f];
        }
        l1 += des.response.row_loglik(i, mu, scratch);
        if !current {
            for f in 0..width {
                mu[f] -= wk[f];
            }
        }
    }
    (l0, l1)
}

fn row_mean(des: &RowDesign<'_>, bits: &[bool]) -> Vec<f64> {
    let width = des.response.width();
    let mut mu = vec![0.0; width];
    for (a, &b) in bits.iter().enumerate() {
        if b {
            let wa = &des.w[a * width..(a + 1) * width];
            for f in 0..width {
                mu[f] += wa[f];
            }
        }
    }
    mu
}

/// Resample every bit of row `i`; returns the new bits and refreshed latents.
pub fn update_row<R: Rng + ?Sized>(
    i: usize,
    bits: &[bool],
    designs: &[RowDesign<'_>],
    prior: &FeaturePrior,
    rng: &mut R,
) -> Result<(Vec<bool>, Vec<Option<f64>>)> {
    let mut bits = bits.to_vec();
    let mut means: Vec<Vec<f64>> = designs.iter().map(|d| row_mean(d, &bits)).collect();
    let mut latents = Vec::with_capacity(bits.len());
    let mut scratch = Vec::new();
    for k in 0..bits.len() {
        let current = bits[k];
        let (l0, l1) = row_bit_loglik(designs, &mut means, i, k, current, &mut scratch);
        let (p0, p1) = prior.log_activation(i, k);
        let new = dist::sample_two_point(p0 + l0, p1 + l1, rng);
        if new != current {
            for (s, des) in designs.iter().enumerate() {
                let width = des.response.width();
                let wk = &des.w[k * width..(k + 1) * width];
                let sign = if new { 1.0 } else { -1.0 };
                for f in 0..width {
                    means[s][f] += sign * wk[f];
                }
            }
        }
        bits[k] = new;
        latents.push(prior.refresh_latent(i, k, new, rng)?);
    }
    Ok((bits, latents))
}

/// `−½ Σ_i eᵀ Λ_j e` of attribute `j` over observed rows, with `mu` holding
/// the N × dim block means.
fn attribute_loglik(resp: &Response<'_>, j: usize, mu: &[f64], scratch: &mut Vec<f64>) -> f64 {
    let range = resp.layout.range(j);
    let dim = range.len();
    let mut s = 0.0;
    for i in 0..resp.n_rows {
        if !resp.observed(i, j) {
            continue;
        }
        let t = &resp.target_row(i)[range.clone()];
        scratch.clear();
        scratch.extend((0..dim).map(|p| t[p] - mu[i * dim + p]));
        s += linalg::quad_form(&resp.precision[j], dim, scratch);
    }
    -0.5 * s
}

/// Resample the feature bits of every column entity of attribute `j`.
///
/// `a` is `R M` (N × K_c, row-major) and `entity_bits` holds the current bits
/// of the attribute's entities, one row each. Returns the new rows and latents
/// in the same order.
pub fn update_attribute<R: Rng + ?Sized>(
    j: usize,
    entity_bits: &[Vec<bool>],
    resp: &Response<'_>,
    a: &[f64],
    prior: &FeaturePrior,
    rng: &mut R,
) -> Result<(Vec<Vec<bool>>, Vec<Vec<Option<f64>>>)> {
    let range = resp.layout.range(j);
    let dim = range.len();
    let n = resp.n_rows;
    let kc = entity_bits.first().map_or(0, Vec::len);
    let mut bits: Vec<Vec<bool>> = entity_bits.to_vec();
    let mut mu = vec![0.0; n * dim];
    for i in 0..n {
        for p in 0..dim {
            let mut s = 0.0;
            for k in 0..kc {
                if bits[p][k] {
                    s += a[i * kc + k];
                }
            }
            mu[i * dim + p] = s;
        }
    }
    let mut latents = vec![Vec::with_capacity(kc); dim];
    let mut scratch = Vec::new();
    let any_observed = (0..n).any(|i| resp.observed(i, j));
    for p in 0..dim {
        let entity = range.start + p;
        for k in 0..kc {
            let current = bits[p][k];
            let (l0, l1) = if any_observed {
                if current {
                    for i in 0..n {
                        mu[i * dim + p] -= a[i * kc + k];
                    }
                }
                let l0 = attribute_loglik(resp, j, &mu, &mut scratch);
                for i in 0..n {
                    mu[i * dim + p] += a[i * kc + k];
                }
                let l1 = attribute_loglik(resp, j, &mu, &mut scratch);
                for i in 0..n {
                    mu[i * dim + p] -= a[i * kc + k];
                }
                (l0, l1)
            } else {
                if current {
                    for i in 0..n {
                        mu[i * dim + p] -= a[i * kc + k];
                    }
                }
                (0.0, 0.0)
            };
            let (p0, p1) = prior.log_activation(entity, k);
            let new = dist::sample_two_point(p0 + l0, p1 + l1, rng);
            if new {
                for i in 0..n {
                    mu[i * dim + p] += a[i * kc + k];
                }
            }
            bits[p][k] = new;
            latents[p].push(prior.refresh_latent(entity, k, new, rng)?);
        }
    }
    Ok((bits, latents))
}
