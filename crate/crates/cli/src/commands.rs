use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use log::{info, warn};
use relbin::analysis::{self, read_matrix_csv, SummaryOptions};
use relbin::clustering::{agglomerate, dissimilarity, Merge};
use relbin::config::Schedule;
use relbin::data::{load_dataset, save_dataset, standardize_real, CodeInference, ColumnStandardization, RelationalDataset, Schema};
use relbin::diagnostics::effective_sample_size;
use relbin::evaluation::missing_fraction_sweep;
use relbin::gibbs::{self, RunOptions, TRACE_FILE};
use relbin::rng::RngStream;
use relbin::simulate::{simulate as draw, Truth};
use relbin::trace::PosteriorTrace;
use relbin::workers::Workers;
use relbin::{Error, Result};
use serde::Serialize;

use crate::run_config::RunConfig;
use crate::Common;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Input files; each overrides the matching `data` entry of the config.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub categorical: Option<PathBuf>,
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Stop after this many sweeps as if killed (fit only).
    #[arg(long, hide = true)]
    pub halt_after: Option<usize>,
}

fn load_config(common: &Common, data: Option<&DataArgs>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if common.workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = data {
        if d.categorical.is_some() {
            cfg.data.categorical = d.categorical.clone();
        }
        if d.real.is_some() {
            cfg.data.real = d.real.clone();
        }
        if d.schema.is_some() {
            cfg.data.schema = d.schema.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn no_resume(common: &Common, what: &str) -> Result<()> {
    if common.resume {
        return Err(Error::Config(format!("--resume only applies to fit, not {what}")));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn workers(common: &Common) -> Result<Workers> {
    Workers::new(common.workers)
}

struct Loaded {
    dataset: RelationalDataset,
    inferred: Vec<CodeInference>,
}

fn load_data(cfg: &RunConfig) -> Result<Loaded> {
    let d = &cfg.data;
    if d.categorical.is_none() && d.real.is_none() {
        return Err(Error::Config(
            "no input data: set data.categorical and/or data.real, or pass --categorical/--real".into(),
        ));
    }
    let schema = d.schema.as_deref().map(Schema::from_path).transpose()?;
    let loaded = load_dataset(d.categorical.as_deref(), d.real.as_deref(), schema.as_ref())?;
    for inf in &loaded.inferred {
        warn!("column `{}`: category count {} inferred from the data", inf.column, inf.categories);
    }
    Ok(Loaded {
        dataset: loaded.dataset,
        inferred: loaded.inferred,
    })
}

#[derive(Serialize)]
struct TruthFile<'a> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    truth: &'a Truth,
}

pub fn simulate(common: &Common) -> Result<()> {
    no_resume(common, "simulate")?;
    let cfg = load_config(common, None)?;
    let hash = cfg.hash()?;
    let shape = cfg.simulate.shape();
    shape.validate()?;
    let mut rng = RngStream::new(cfg.seed).substream(&[0]);
    let (ds, truth) = draw(&shape, &cfg.model, &cfg.simulate.planted, &mut rng)?;
    let out = &common.out;
    create_out(out)?;
    save_dataset(&ds, &out.join("categorical.csv"), &out.join("real.csv"), &out.join("schema.json"))?;
    write_json(
        &out.join("truth.json"),
        &TruthFile {
            config_hash: &hash,
            seed: cfg.seed,
            truth: &truth,
        },
    )?;
    write_json(&out.join(RUN_CONFIG_FILE), &cfg)?;
    info!(
        "simulated {} rows, {} categorical and {} real columns; effective ranks {} and {}",
        ds.n_rows(),
        ds.n_cat(),
        ds.n_real(),
        truth.effective_rank_x,
        truth.effective_rank_y
    );
    Ok(())
}

#[derive(Serialize)]
struct AttributeRate<'a> {
    attribute: &'a str,
    acceptance: Option<f64>,
    proposals: u64,
    invalid: u64,
}

#[derive(Serialize)]
struct FitDiagnostics<'a> {
    config_hash: &'a str,
    seed: u64,
    schedule: &'a Schedule,
    retained_samples: usize,
    final_log_joint: Option<f64>,
    log_joint_ess: f64,
    mh: Vec<AttributeRate<'a>>,
    inferred_categories: &'a [CodeInference],
    standardization: &'a ColumnStandardization,
}

pub fn fit(common: &Common, data: &DataArgs) -> Result<()> {
    let cfg = load_config(common, Some(data))?;
    let hash = cfg.hash()?;
    let loaded = load_data(&cfg)?;
    let (ds, st) = if cfg.data.standardize {
        standardize_real(&loaded.dataset)?
    } else {
        let n = loaded.dataset.n_real();
        (loaded.dataset, ColumnStandardization::identity(n))
    };
    let out = &common.out;
    create_out(out)?;
    let opts = RunOptions {
        config_hash: hash.clone(),
        out_dir: Some(out.clone()),
        timings: cfg.timings,
        halt_after: data.halt_after,
        ..RunOptions::in_memory(cfg.schedule.clone(), cfg.seed)
    };
    let pool = workers(common)?;
    let started = Instant::now();
    let summary = if common.resume {
        gibbs::resume(&ds, &cfg.model, &opts, &pool)?
    } else {
        write_json(&out.join(RUN_CONFIG_FILE), &cfg)?;
        gibbs::run(&ds, &cfg.model, &opts, &pool)?
    };
    info!(
        "{} sweeps done in {:.1}s, {} samples retained",
        cfg.schedule.iterations,
        started.elapsed().as_secs_f64(),
        summary.trace.len()
    );

    let lj = summary.trace.log_joints();
    let rates = summary.mh.rates();
    let diag = FitDiagnostics {
        config_hash: &hash,
        seed: cfg.seed,
        schedule: &cfg.schedule,
        retained_samples: summary.trace.len(),
        final_log_joint: lj.last().copied(),
        log_joint_ess: if lj.len() > 1 { effective_sample_size(&lj) } else { lj.len() as f64 },
        mh: ds
            .cat_names()
            .iter()
            .enumerate()
            .map(|(j, name)| AttributeRate {
                attribute: name,
                acceptance: rates[j],
                proposals: summary.mh.proposals[j],
                invalid: summary.mh.invalid[j],
            })
            .collect(),
        inferred_categories: &loaded.inferred,
        standardization: &st,
    };
    write_json(&out.join("diagnostics.json"), &diag)
}

pub fn summarize(common: &Common, trace: Option<&Path>) -> Result<()> {
    no_resume(common, "summarize")?;
    let cfg = load_config(common, None)?;
    let default = common.out.join(TRACE_FILE);
    let path = trace.unwrap_or(&default);
    let trace = PosteriorTrace::read(path)?;
    let opts = SummaryOptions {
        min_fraction: cfg.summary.min_fraction,
        linkage: cfg.summary.linkage,
    };
    let manifest = analysis::summarize(&trace, &common.out, &opts)?;
    info!(
        "wrote {} summary files; MAP sample at iteration {}",
        manifest.files.len(),
        manifest.map_iteration
    );
    Ok(())
}

#[derive(Serialize)]
struct ClusterFile<'a> {
    config_hash: &'a str,
    input: &'a Path,
    linkage: relbin::clustering::Linkage,
    leaf_order: Vec<&'a str>,
    merges: &'a [Merge],
    #[serde(skip_serializing_if = "Option::is_none")]
    cut: Option<usize>,
}

pub fn cluster(common: &Common, input: &Path) -> Result<()> {
    no_resume(common, "cluster")?;
    let cfg = load_config(common, None)?;
    let hash = cfg.hash()?;
    let (labels, corr) = read_matrix_csv(input)?;
    if corr.nrows() != corr.ncols() {
        return Err(Error::Validation(format!(
            "{}: correlation matrix must be square, got {}×{}",
            input.display(),
            corr.nrows(),
            corr.ncols()
        )));
    }
    let tree = agglomerate(&dissimilarity(&corr), &labels, cfg.cluster.linkage)?;
    let out = &common.out;
    create_out(out)?;
    write_text(&out.join("tree.nwk"), &(tree.to_newick() + "\n"))?;
    let order = tree.leaf_order();
    let mut text = String::from("position,label\n");
    for (pos, &i) in order.iter().enumerate() {
        text.push_str(&format!("{},{}\n", pos, labels[i]));
    }
    write_text(&out.join("leaf_order.csv"), &text)?;
    if let Some(k) = cfg.cluster.cut {
        let ids = tree.cut(k)?;
        let mut text = String::from("label,cluster\n");
        for (l, c) in labels.iter().zip(&ids) {
            text.push_str(&format!("{l},{c}\n"));
        }
        write_text(&out.join("clusters.csv"), &text)?;
    }
    write_json(
        &out.join("cluster.json"),
        &ClusterFile {
            config_hash: &hash,
            input,
            linkage: cfg.cluster.linkage,
            leaf_order: order.iter().map(|&i| labels[i].as_str()).collect(),
            merges: tree.merges(),
            cut: cfg.cluster.cut,
        },
    )
}

pub fn evaluate(common: &Common, data: &DataArgs) -> Result<()> {
    no_resume(common, "evaluate")?;
    let cfg = load_config(common, Some(data))?;
    let loaded = load_data(&cfg)?;
    let pool = workers(common)?;
    let mut report = missing_fraction_sweep(&loaded.dataset, &cfg.sweep_config(), cfg.seed, &pool)?;
    // The sweep hashes only its own section; outputs carry the full config hash.
    report.config_hash = cfg.hash()?;
    let out = &common.out;
    create_out(out)?;
    write_json(&out.join(RUN_CONFIG_FILE), &cfg)?;
    report.write_json(&out.join("eval.json"))?;
    report.write_runs_csv(&out.join("eval_runs.csv"))?;
    report.write_summary_csv(&out.join("eval_summary.csv"))?;
    if cfg.timings {
        report.write_timings_csv(&out.join("eval_timings.csv"))?;
    }
    for s in &report.summary {
        info!(
            "fraction {} {}: accuracy {:?} over {} runs ({} failed)",
            s.fraction,
            relbin::evaluation::variant_name(s.variant),
            s.accuracy_mean,
            s.runs,
            s.failed
        );
    }
    Ok(())
}
