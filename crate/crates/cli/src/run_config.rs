//! The versioned JSON run configuration shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use relbin::clustering::Linkage;
use relbin::config::{config_hash, ModelConfig, PriorMode, Schedule};
use relbin::evaluation::SweepConfig;
use relbin::init::Shape;
use relbin::simulate::Planted;
use relbin::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categorical: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    /// Center and scale each real column before fitting.
    #[serde(default = "yes")]
    pub standardize: bool,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            categorical: None,
            real: None,
            schema: None,
            standardize: true,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default = "default_rows")]
    pub n_rows: usize,
    #[serde(default = "default_counts")]
    pub category_counts: Vec<usize>,
    #[serde(default = "default_reals")]
    pub n_real: usize,
    #[serde(default)]
    pub planted: Planted,
}

fn default_rows() -> usize {
    10
}
fn default_counts() -> Vec<usize> {
    vec![2, 3]
}
fn default_reals() -> usize {
    3
}

impl Default for SimulateSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl SimulateSpec {
    pub fn shape(&self) -> Shape {
        Shape {
            n_rows: self.n_rows,
            category_counts: self.category_counts.clone(),
            n_real: self.n_real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSpec {
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default = "default_variants")]
    pub variants: Vec<PriorMode>,
    #[serde(default = "default_mc")]
    pub n_mc: usize,
}

fn default_fractions() -> Vec<f64> {
    vec![0.1, 0.2, 0.3]
}
fn one() -> usize {
    1
}
fn default_variants() -> Vec<PriorMode> {
    vec![PriorMode::Correlated, PriorMode::IndependentBernoulli]
}
fn default_mc() -> usize {
    200
}

impl Default for EvaluateSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySpec {
    #[serde(default)]
    pub min_fraction: f64,
    #[serde(default)]
    pub linkage: Linkage,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    #[serde(default)]
    pub linkage: Linkage,
    /// Also write flat cluster labels for this many clusters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub evaluate: EvaluateSpec,
    #[serde(default)]
    pub summary: SummarySpec,
    #[serde(default)]
    pub cluster: ClusterSpec,
    /// Write wall-clock timing files next to the regular outputs.
    #[serde(default)]
    pub timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            model: ModelConfig::default(),
            schedule: Schedule::default(),
            data: DataPaths::default(),
            simulate: SimulateSpec::default(),
            evaluate: EvaluateSpec::default(),
            summary: SummarySpec::default(),
            cluster: ClusterSpec::default(),
            timings: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.sweep_config().validate()?;
        if self.summary.min_fraction < 0.0 || self.summary.min_fraction > 1.0 {
            return Err(Error::Config("summary.min_fraction must lie in [0, 1]".into()));
        }
        if self.cluster.cut == Some(0) {
            return Err(Error::Config("cluster.cut must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. Output paths and the worker count
    /// are not part of the configuration, so they never change the hash.
    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            fractions: self.evaluate.fractions.clone(),
            repeats: self.evaluate.repeats,
            variants: self.evaluate.variants.clone(),
            n_mc: self.evaluate.n_mc,
            model: self.model.clone(),
            schedule: self.schedule.clone(),
        }
    }
}
