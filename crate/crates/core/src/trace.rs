//! Retained posterior samples in compact form, stored as JSON lines.
//!
//! The first line of a trace file is a [`TraceHeader`]; every following line
//! is one [`Sample`].

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Schedule};
use crate::corrprior::{FeaturePrior, SparseFactorCovariance};
use crate::data::{ChoiceLayout, RelationalDataset};
use crate::error::{Error, Result};
use crate::latent::{BitMatrix, Family, LowRankRegression, ModelState, Side};
use crate::linalg;

pub const TRACE_FORMAT: &str = "relbin-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub n_rows: usize,
    pub category_counts: Vec<usize>,
    pub n_real: usize,
    #[serde(default)]
    pub row_labels: Vec<String>,
    #[serde(default)]
    pub cat_names: Vec<String>,
    #[serde(default)]
    pub real_names: Vec<String>,
}

impl TraceHeader {
    pub fn new(ds: &RelationalDataset, model: &ModelConfig, schedule: &Schedule, seed: u64, config_hash: &str) -> Self {
        TraceHeader {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            config_hash: config_hash.into(),
            seed,
            model: model.clone(),
            schedule: schedule.clone(),
            n_rows: ds.n_rows(),
            category_counts: ds.category_counts().to_vec(),
            n_real: ds.n_real(),
            row_labels: ds.row_labels(),
            cat_names: ds.cat_names().to_vec(),
            real_names: ds.real_names().to_vec(),
        }
    }

    pub fn layout(&self) -> ChoiceLayout {
        ChoiceLayout::new(&self.category_counts)
    }

    pub fn entity_labels(&self, family: Family) -> Vec<String> {
        match family {
            Family::Rows => self.row_labels.clone(),
            Family::Choices => {
                let mut out = Vec::new();
                for (j, &q) in self.category_counts.iter().enumerate() {
                    for p in 1..q {
                        out.push(format!("{}:{}", self.cat_names[j], p));
                    }
                }
                out
            }
            Family::Reals => self.real_names.clone(),
        }
    }

    pub fn n_entities(&self, family: Family) -> usize {
        match family {
            Family::Rows => self.n_rows,
            Family::Choices => self.layout().width(),
            Family::Reals => self.n_real,
        }
    }
}

/// One active rank-one term `λ u vᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSample {
    pub index: usize,
    pub lambda: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub n_terms: usize,
    pub left_dim: usize,
    pub right_dim: usize,
    pub pi: f64,
    pub sigma_lambda2: f64,
    /// Active terms only, in index order.
    pub terms: Vec<TermSample>,
}

impl RegressionSample {
    pub fn from_regression(lr: &LowRankRegression, left_dim: usize, right_dim: usize) -> Self {
        RegressionSample {
            n_terms: lr.n_terms(),
            left_dim,
            right_dim,
            pi: lr.pi,
            sigma_lambda2: lr.sigma_lambda2,
            terms: lr
                .active_terms()
                .map(|l| TermSample {
                    index: l,
                    lambda: lr.lambda[l],
                    u: lr.u[l].clone(),
                    v: lr.v[l].clone(),
                })
                .collect(),
        }
    }

    pub fn effective_rank(&self) -> usize {
        self.terms.len()
    }

    pub fn indicators(&self) -> Vec<bool> {
        let mut b = vec![false; self.n_terms];
        for t in &self.terms {
            b[t.index] = true;
        }
        b
    }

    /// `Σ_{active} λ_l u_l v_lᵀ`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.left_dim, self.right_dim);
        for t in &self.terms {
            for a in 0..self.left_dim {
                let ua = t.lambda * t.u[a];
                if ua == 0.0 {
                    continue;
                }
                for b in 0..self.right_dim {
                    m[(a, b)] += ua * t.v[b];
                }
            }
        }
        m
    }
}

/// Summary of a family's feature prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSample {
    Correlated {
        n_factors: usize,
        /// Entities × factors, row-major.
        loadings: Vec<f64>,
        active_factors: usize,
    },
    Independent {
        pi: Vec<f64>,
    },
}

impl PriorSample {
    pub fn from_prior(p: &FeaturePrior) -> Self {
        match p {
            FeaturePrior::Correlated(s) => PriorSample::Correlated {
                n_factors: s.n_factors(),
                loadings: s.loadings().to_vec(),
                active_factors: s.active_factor_count(),
            },
            FeaturePrior::Independent(b) => PriorSample::Independent { pi: b.pi.clone() },
        }
    }

    /// Implied correlation `corr(B Bᵀ + I)`; identity for the independent prior.
    pub fn implied_correlation(&self, n_entities: usize) -> Result<DMatrix<f64>> {
        match self {
            PriorSample::Correlated { n_factors, loadings, .. } => {
                let mut s = SparseFactorCovariance::empty(
                    n_entities,
                    *n_factors,
                    0,
                    1.0,
                    1.0,
                    Default::default(),
                );
                s.set_loadings(loadings)?;
                Ok(s.implied_correlation())
            }
            PriorSample::Independent { .. } => Ok(DMatrix::identity(n_entities, n_entities)),
        }
    }

    pub fn active_factors(&self) -> usize {
        match self {
            PriorSample::Correlated { active_factors, .. } => *active_factors,
            PriorSample::Independent { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// 1-based sweep number.
    pub iteration: usize,
    pub log_joint: f64,
    pub r: BitMatrix,
    pub d: BitMatrix,
    pub c: BitMatrix,
    pub mx: RegressionSample,
    pub my: RegressionSample,
    /// Restricted Σ_j, row-major.
    pub noise: Vec<Vec<f64>>,
    pub sigma_y2: f64,
    pub prior_r: PriorSample,
    pub prior_d: PriorSample,
    pub prior_c: PriorSample,
}

impl Sample {
    pub fn from_state(state: &ModelState, iteration: usize, log_joint: f64) -> Self {
        Sample {
            iteration,
            log_joint,
            r: state.r.clone(),
            d: state.d.clone(),
            c: state.c.clone(),
            mx: RegressionSample::from_regression(&state.mx, state.r.cols(), state.d.cols()),
            my: RegressionSample::from_regression(&state.my, state.r.cols(), state.c.cols()),
            noise: state.noise.iter().map(|n| n.restricted_row_major().to_vec()).collect(),
            sigma_y2: state.sigma_y2,
            prior_r: PriorSample::from_prior(&state.prior_r),
            prior_d: PriorSample::from_prior(&state.prior_d),
            prior_c: PriorSample::from_prior(&state.prior_c),
        }
    }

    pub fn bits(&self, family: Family) -> &BitMatrix {
        match family {
            Family::Rows => &self.r,
            Family::Choices => &self.d,
            Family::Reals => &self.c,
        }
    }

    pub fn prior(&self, family: Family) -> &PriorSample {
        match family {
            Family::Rows => &self.prior_r,
            Family::Choices => &self.prior_d,
            Family::Reals => &self.prior_c,
        }
    }

    pub fn regression(&self, side: Side) -> &RegressionSample {
        match side {
            Side::X => &self.mx,
            Side::Y => &self.my,
        }
    }

    pub fn noise_cov(&self, j: usize) -> DMatrix<f64> {
        let n = &self.noise[j];
        let dim = (n.len() as f64).sqrt().round() as usize;
        linalg::from_row_major(dim, dim, n)
    }

    /// Structural checks against the header shape.
    pub fn validate(&self, header: &TraceHeader) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidState(format!("sample at iteration {}: {m}", self.iteration)));
        if !self.log_joint.is_finite() {
            return bad("log joint is not finite".into());
        }
        let fc = header.model.feature_counts();
        let layout = header.layout();
        for (name, b, rows, cols) in [
            ("R", &self.r, header.n_rows, fc.rows),
            ("D", &self.d, layout.width(), fc.choices),
            ("C", &self.c, header.n_real, fc.reals),
        ] {
            if b.rows() != rows || b.cols() != cols {
                return bad(format!("{name} is {}×{}, expected {rows}×{cols}", b.rows(), b.cols()));
            }
        }
        for (side, reg, right) in [(Side::X, &self.mx, fc.choices), (Side::Y, &self.my, fc.reals)] {
            if reg.left_dim != fc.rows || reg.right_dim != right {
                return bad(format!("M^{} has the wrong shape", side.as_str()));
            }
            for t in &reg.terms {
                if t.index >= reg.n_terms || t.u.len() != reg.left_dim || t.v.len() != reg.right_dim {
                    return bad(format!("M^{} term {} is malformed", side.as_str(), t.index));
                }
                if !(t.lambda.is_finite() && t.lambda > 0.0) {
                    return bad(format!("M^{} term {} has a non-positive weight", side.as_str(), t.index));
                }
            }
        }
        if self.noise.len() != layout.n_attributes() {
            return bad("one noise covariance per categorical attribute is required".into());
        }
        for (j, n) in self.noise.iter().enumerate() {
            let dim = layout.dim(j);
            if n.len() != dim * dim {
                return bad(format!("Σ_{j} has the wrong size"));
            }
        }
        if !(self.sigma_y2.is_finite() && self.sigma_y2 > 0.0) {
            return bad("σ_y² must be positive".into());
        }
        for family in Family::ALL {
            if let PriorSample::Correlated { n_factors, loadings, .. } = self.prior(family) {
                if loadings.len() != header.n_entities(family) * n_factors {
                    return bad(format!("{} loadings have the wrong size", family.as_str()));
                }
            }
        }
        Ok(())
    }
}

/// A header plus retained samples in iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTrace {
    pub header: TraceHeader,
    pub samples: Vec<Sample>,
}

impl PosteriorTrace {
    pub fn new(header: TraceHeader) -> Self {
        PosteriorTrace {
            header,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn log_joints(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.log_joint).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let corrupt = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            row: line,
            column: 0,
            message,
        };
        let first = match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e))?,
            None => return Err(corrupt(1, "empty trace file".into())),
        };
        let header: TraceHeader =
            serde_json::from_str(&first).map_err(|e| corrupt(1, format!("bad trace header: {e}")))?;
        if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
            return Err(corrupt(
                1,
                format!("unsupported trace format {} v{}", header.format, header.version),
            ));
        }
        let mut trace = PosteriorTrace::new(header);
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Sample = serde_json::from_str(&line).map_err(|e| corrupt(n + 2, format!("bad sample: {e}")))?;
            s.validate(&trace.header).map_err(|e| corrupt(n + 2, e.to_string()))?;
            trace.samples.push(s);
        }
        Ok(trace)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = TraceWriter::create(path, &self.header)?;
        for s in &self.samples {
            w.append(s)?;
        }
        w.flush()
    }
}

/// Appends samples to a trace file and tracks its length.
pub struct TraceWriter {
    path: PathBuf,
    file: File,
    offset: u64,
}

impl TraceWriter {
    pub fn create(path: &Path, header: &TraceHeader) -> Result<Self> {
        Self::create_with_first_line(path, &serde_json::to_string(header)?)
    }

    pub fn create_with_first_line(path: &Path, first: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = TraceWriter {
            path: path.to_path_buf(),
            file,
            offset: 0,
        };
        w.write_line(first)?;
        Ok(w)
    }

    /// Reopen an existing trace, discarding everything past `offset`.
    pub fn reopen(path: &Path, offset: u64) -> Result<Self> {
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        if len < offset {
            return Err(Error::Validation(format!(
                "{} is shorter than the checkpoint expects ({len} < {offset} bytes)",
                path.display()
            )));
        }
        file.set_len(offset).map_err(|e| Error::io(path, e))?;
        let mut file = file;
        use std::io::Seek;
        file.seek(std::io::SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
        Ok(TraceWriter {
            path: path.to_path_buf(),
            file,
            offset,
        })
    }

    pub fn append(&mut self, s: &Sample) -> Result<()> {
        let line = serde_json::to_string(s)?;
        self.write_line(&line)
    }

    pub fn write_line(&mut self, line: &str) -> Result<()> {
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))?;
        self.offset += line.len() as u64 + 1;
        Ok(())
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{Shape, simulate_data};
    use crate::latent::assemble_regression_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_state(seed: u64) -> (ModelState, RelationalDataset) {
        let mut g = ChaCha8Rng::seed_from_u64(seed);
        let config: ModelConfig = serde_json::from_str(r#"{"features": 4, "factors": {"rows": 2, "choices": 2, "reals": 2}}"#).unwrap();
        let shape = Shape {
            n_rows: 7,
            category_counts: vec![2, 3],
            n_real: 2,
        };
        let mut st = ModelState::sample_prior(&shape, &config, &mut g).unwrap();
        let ds = simulate_data(&mut st, &mut g).unwrap();
        (st, ds)
    }

    #[test]
    fn compact_regression_matches_assembled_matrix() {
        let (st, _) = small_state(1);
        let s = Sample::from_state(&st, 1, -1.0);
        let a = assemble_regression_matrix(&st.mx);
        let b = s.mx.matrix();
        assert_eq!(a, b);
        assert_eq!(s.mx.indicators(), st.mx.active);
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let (st, ds) = small_state(2);
        let header = TraceHeader::new(&ds, &st.config, &Schedule::new(9, 3, 3), 5, "abc");
        let mut t = PosteriorTrace::new(header);
        t.samples.push(Sample::from_state(&st, 6, -12.25));
        t.samples.push(Sample::from_state(&st, 9, -10.0 / 3.0));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.jsonl");
        t.write(&p).unwrap();
        let back = PosteriorTrace::read(&p).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn corrupt_trace_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        fs::write(&p, "not json\n").unwrap();
        assert!(PosteriorTrace::read(&p).is_err());
        let (st, ds) = small_state(3);
        let header = TraceHeader::new(&ds, &st.config, &Schedule::new(9, 3, 3), 5, "abc");
        let mut w = TraceWriter::create(&p, &header).unwrap();
        w.write_line("{\"iteration\": 1}").unwrap();
        w.flush().unwrap();
        match PosteriorTrace::read(&p) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reopen_truncates_to_offset() {
        let (st, ds) = small_state(4);
        let header = TraceHeader::new(&ds, &st.config, &Schedule::new(9, 3, 3), 5, "abc");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.jsonl");
        let mut w = TraceWriter::create(&p, &header).unwrap();
        w.append(&Sample::from_state(&st, 6, -1.0)).unwrap();
        let off = w.offset();
        w.append(&Sample::from_state(&st, 9, -2.0)).unwrap();
        w.flush().unwrap();
        drop(w);
        let mut w = TraceWriter::reopen(&p, off).unwrap();
        w.append(&Sample::from_state(&st, 9, -3.0)).unwrap();
        w.flush().unwrap();
        let t = PosteriorTrace::read(&p).unwrap();
        assert_eq!(t.log_joints(), vec![-1.0, -3.0]);
    }
}
