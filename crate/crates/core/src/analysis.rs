//! Posterior summaries: MAP sample, correlation matrices, feature-count and
//! rank posteriors, factor loadings and reordering.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clustering::{agglomerate, dissimilarity, Linkage};
use crate::corrprior::covariance_to_correlation;
use crate::error::{Error, Result};
use crate::latent::{BitMatrix, Family, Side};
use crate::trace::{PosteriorTrace, Sample};

/// Index of the sample with the highest log joint; the first one on ties.
pub fn map_index(log_joints: &[f64]) -> Result<usize> {
    if log_joints.is_empty() {
        return Err(Error::Domain("the trace has no samples".into()));
    }
    let mut best = 0;
    for (k, &v) in log_joints.iter().enumerate() {
        if v > log_joints[best] {
            best = k;
        }
    }
    Ok(best)
}

pub fn map_sample(trace: &PosteriorTrace) -> Result<usize> {
    map_index(&trace.log_joints())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationSource {
    #[default]
    Map,
    PosteriorMean,
}

/// Model-implied correlation of a family's entities.
pub fn entity_correlation(trace: &PosteriorTrace, family: Family, source: CorrelationSource) -> Result<DMatrix<f64>> {
    let n = trace.header.n_entities(family);
    if n == 0 {
        return Err(Error::Domain(format!("family {} has no entities", family.as_str())));
    }
    match source {
        CorrelationSource::Map => {
            let k = map_sample(trace)?;
            trace.samples[k].prior(family).implied_correlation(n)
        }
        CorrelationSource::PosteriorMean => {
            if trace.is_empty() {
                return Err(Error::Domain("the trace has no samples".into()));
            }
            let mut acc = DMatrix::zeros(n, n);
            for s in &trace.samples {
                acc += s.prior(family).implied_correlation(n)?;
            }
            acc /= trace.len() as f64;
            Ok(covariance_to_correlation(&acc))
        }
    }
}

/// Pearson correlation between the binary feature vectors of a family's
/// entities. Entities with constant vectors are uncorrelated with the rest.
pub fn empirical_correlation(bits: &BitMatrix) -> DMatrix<f64> {
    let (n, k) = (bits.rows(), bits.cols());
    let x = bits.to_matrix();
    let mut centered = x.clone();
    for i in 0..n {
        let m = (0..k).map(|c| x[(i, c)]).sum::<f64>() / k.max(1) as f64;
        for c in 0..k {
            centered[(i, c)] -= m;
        }
    }
    let gram = &centered * centered.transpose();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 1.0;
        }
        let d = (gram[(i, i)] * gram[(j, j)]).sqrt();
        if d > 0.0 {
            (gram[(i, j)] / d).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    })
}

/// Number of features used by at least `ceil(min_fraction · entities)` (and at
/// least one) entity.
pub fn used_features(bits: &BitMatrix, min_fraction: f64) -> usize {
    let need = ((min_fraction * bits.rows() as f64).ceil() as usize).max(1);
    bits.used_columns(need)
}

fn normalize(counts: Vec<usize>, total: usize) -> Vec<f64> {
    counts.into_iter().map(|c| c as f64 / total as f64).collect()
}

/// Posterior over the number of used features, indexed by count `0..=K`.
pub fn feature_count_posterior(trace: &PosteriorTrace, family: Family, min_fraction: f64) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::Domain("the trace has no samples".into()));
    }
    let k = trace.samples[0].bits(family).cols();
    let mut counts = vec![0usize; k + 1];
    for s in &trace.samples {
        counts[used_features(s.bits(family), min_fraction)] += 1;
    }
    Ok(normalize(counts, trace.len()))
}

/// Posterior over the effective rank of M^X or M^Y, indexed by rank `0..=L`.
pub fn rank_posterior(trace: &PosteriorTrace, side: Side) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::Domain("the trace has no samples".into()));
    }
    let l = trace.samples[0].regression(side).n_terms;
    let mut counts = vec![0usize; l + 1];
    for s in &trace.samples {
        counts[s.regression(side).effective_rank()] += 1;
    }
    Ok(normalize(counts, trace.len()))
}

/// Factor coordinates of one side of a low-rank term set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Loadings {
    /// Indices of the active terms, one per coordinate.
    pub terms: Vec<usize>,
    /// One vector per entity.
    pub vectors: Vec<Vec<f64>>,
}

/// `√λ_l ⟨c_j, v_l⟩` for every column entity `j` and active term `l`.
pub fn reconstruct_loadings(sample: &Sample, side: Side) -> Loadings {
    let reg = sample.regression(side);
    let cols = match side {
        Side::X => &sample.d,
        Side::Y => &sample.c,
    };
    project(cols, reg.terms.iter().map(|t| (t.index, t.lambda, &t.v)))
}

/// `√λ_l ⟨r_i, u_l⟩` for every row `i`, the row-side counterpart of
/// [`reconstruct_loadings`].
pub fn row_coordinates(sample: &Sample, side: Side) -> Loadings {
    let reg = sample.regression(side);
    project(&sample.r, reg.terms.iter().map(|t| (t.index, t.lambda, &t.u)))
}

fn project<'a>(bits: &BitMatrix, terms: impl Iterator<Item = (usize, f64, &'a Vec<f64>)>) -> Loadings {
    let terms: Vec<_> = terms.collect();
    let vectors = (0..bits.rows())
        .map(|j| {
            let row = bits.row(j);
            terms
                .iter()
                .map(|(_, lam, w)| {
                    let dot: f64 = row.iter().zip(w.iter()).filter(|(b, _)| **b).map(|(_, x)| x).sum();
                    lam.sqrt() * dot
                })
                .collect()
        })
        .collect();
    Loadings {
        terms: terms.iter().map(|t| t.0).collect(),
        vectors,
    }
}

/// Display order of a correlation matrix's entities from its average-linkage
/// dendrogram.
pub fn reorder_indices(corr: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = corr.nrows();
    if n < 2 {
        return Ok((0..n).collect());
    }
    let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    Ok(agglomerate(&dissimilarity(corr), &labels, Linkage::Average)?.leaf_order())
}

pub fn permute(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn write_matrix_csv(path: &Path, row_labels: &[String], col_labels: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec![String::new()];
    head.extend(col_labels.iter().cloned());
    w.write_record(&head)?;
    for i in 0..m.nrows() {
        let mut rec = vec![row_labels[i].clone()];
        rec.extend((0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a square matrix written by [`write_matrix_csv`]; returns labels and values.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let head: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let n = head.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: line + 2,
                column: rec.len(),
                message: format!("expected {} fields", n + 1),
            });
        }
        for (c, f) in rec.iter().skip(1).enumerate() {
            values.push(f.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: line + 2,
                column: c + 2,
                message: format!("`{f}` is not a number"),
            })?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Validation(format!(
            "{}: matrix is {rows}×{n}, expected a square matrix",
            path.display()
        )));
    }
    Ok((head, DMatrix::from_row_slice(n, n, &values)))
}

pub fn write_histogram_csv(path: &Path, label: &str, hist: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([label, "probability"])?;
    for (k, p) in hist.iter().enumerate() {
        w.write_record([k.to_string(), format!("{p:?}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryOptions {
    /// Fraction of entities a feature must reach to count as used.
    pub min_fraction: f64,
    pub linkage: Linkage,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions {
            min_fraction: 0.0,
            linkage: Linkage::Average,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub n_samples: usize,
    pub map_index: usize,
    pub map_iteration: usize,
    pub map_log_joint: f64,
    pub active_factors_at_map: Vec<(Family, usize)>,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Write every summary of `trace` into `dir` and an index of them.
pub fn summarize(trace: &PosteriorTrace, dir: &Path, opts: &SummaryOptions) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let map = map_sample(trace)?;
    let ms = &trace.samples[map];
    let h = &trace.header;
    let mut files = Vec::new();
    let mut add = |file: String, description: String| {
        files.push(ManifestEntry { file, description });
    };

    for family in Family::ALL {
        let n = h.n_entities(family);
        if n == 0 {
            continue;
        }
        let name = family.as_str();
        let labels = h.entity_labels(family);
        let corr = entity_correlation(trace, family, CorrelationSource::Map)?;
        let f = format!("correlation_{name}.csv");
        write_matrix_csv(&dir.join(&f), &labels, &labels, &corr)?;
        add(f, format!("model-implied correlation of {name} at the MAP sample"));

        let mean = entity_correlation(trace, family, CorrelationSource::PosteriorMean)?;
        let f = format!("correlation_{name}_posterior_mean.csv");
        write_matrix_csv(&dir.join(&f), &labels, &labels, &mean)?;
        add(f, format!("posterior-mean implied correlation of {name}"));

        let emp = empirical_correlation(ms.bits(family));
        let f = format!("empirical_correlation_{name}.csv");
        write_matrix_csv(&dir.join(&f), &labels, &labels, &emp)?;
        add(f, format!("Pearson correlation of the MAP binary features of {name}"));

        let order = if n < 2 {
            (0..n).collect()
        } else {
            agglomerate(&dissimilarity(&corr), &labels, opts.linkage)?.leaf_order()
        };
        let ol: Vec<String> = order.iter().map(|&i| labels[i].clone()).collect();
        let f = format!("correlation_{name}_reordered.csv");
        write_matrix_csv(&dir.join(&f), &ol, &ol, &permute(&corr, &order, &order))?;
        add(f, format!("MAP correlation of {name} in dendrogram leaf order"));

        let bits = ms.bits(family).to_matrix();
        let feats: Vec<String> = (0..bits.ncols()).map(|k| format!("f{}", k + 1)).collect();
        let all: Vec<usize> = (0..bits.ncols()).collect();
        let f = format!("map_features_{name}.csv");
        write_matrix_csv(&dir.join(&f), &ol, &feats, &permute(&bits, &order, &all))?;
        add(f, format!("MAP binary features of {name} in dendrogram leaf order"));

        let hist = feature_count_posterior(trace, family, opts.min_fraction)?;
        let f = format!("feature_count_{name}.csv");
        write_histogram_csv(&dir.join(&f), "features", &hist)?;
        add(f, format!("posterior of the number of used features of {name}"));
    }

    for side in [Side::X, Side::Y] {
        let hist = rank_posterior(trace, side)?;
        let f = format!("rank_{}.csv", side.as_str().to_lowercase());
        write_histogram_csv(&dir.join(&f), "rank", &hist)?;
        add(f, format!("posterior of the effective rank of M^{}", side.as_str()));
    }

    if h.n_real > 0 {
        let l = reconstruct_loadings(ms, Side::Y);
        let cols: Vec<String> = l.terms.iter().map(|t| format!("term{}", t + 1)).collect();
        let m = DMatrix::from_fn(h.n_real, l.terms.len(), |j, c| l.vectors[j][c]);
        let f = "loadings_real.csv".to_string();
        write_matrix_csv(&dir.join(&f), &h.real_names, &cols, &m)?;
        add(f, "factor loadings of the real columns at the MAP sample".into());
    }

    let f = "log_joint.csv".to_string();
    {
        let path = dir.join(&f);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["iteration", "log_joint"])?;
        for s in &trace.samples {
            w.write_record([s.iteration.to_string(), format!("{:?}", s.log_joint)])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    add(f, "log joint of every retained sample".into());

    let manifest = Manifest {
        config_hash: h.config_hash.clone(),
        n_samples: trace.len(),
        map_index: map,
        map_iteration: ms.iteration,
        map_log_joint: ms.log_joint,
        active_factors_at_map: Family::ALL.iter().map(|&f| (f, ms.prior(f).active_factors())).collect(),
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_index_examples() {
        assert_eq!(map_index(&[-1.0]).unwrap(), 0);
        assert_eq!(map_index(&[-5.0, -3.0, -4.0]).unwrap(), 1);
        assert_eq!(map_index(&[-3.0, -2.0, -2.0]).unwrap(), 1);
        assert!(map_index(&[]).is_err());
    }

    #[test]
    fn empirical_correlation_of_bit_rows() {
        let b = BitMatrix::from_fn(3, 4, |i, k| match i {
            0 => k < 2,
            1 => k < 2,
            _ => k >= 2,
        });
        let r = empirical_correlation(&b);
        assert_eq!(r[(0, 1)], 1.0);
        assert_eq!(r[(0, 2)], -1.0);
        let z = empirical_correlation(&BitMatrix::zeros(2, 3));
        assert_eq!(z, DMatrix::identity(2, 2));
    }

    #[test]
    fn used_feature_threshold() {
        let b = BitMatrix::from_fn(20, 3, |i, k| match k {
            0 => i == 0,
            1 => i < 5,
            _ => false,
        });
        assert_eq!(used_features(&b, 0.0), 2);
        assert_eq!(used_features(&b, 0.05), 2);
        assert_eq!(used_features(&b, 0.25), 1);
    }

    #[test]
    fn block_correlation_reorders_contiguously() {
        // Entities 0 and 2 form one block, 1 and 3 the other.
        let r = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 0.0, 0.8, 0.0, 0.0, 1.0, 0.0, 0.7, 0.8, 0.0, 1.0, 0.0, 0.0, 0.7, 0.0, 1.0],
        );
        assert_eq!(reorder_indices(&r).unwrap(), vec![0, 2, 1, 3]);
        assert_eq!(reorder_indices(&DMatrix::identity(5, 5)).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1 + 0.2, 0.1 + 0.2, 1.0]);
        let l = vec!["a,1".to_string(), "b".to_string()];
        write_matrix_csv(&p, &l, &l, &m).unwrap();
        let (back_l, back) = read_matrix_csv(&p).unwrap();
        assert_eq!(back_l, l);
        assert_eq!(back, m);
    }
}
