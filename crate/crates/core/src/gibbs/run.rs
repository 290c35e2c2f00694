//! The sampling loop: schedule, retained samples, progress log and checkpoints.

use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{sweep, Block, MhDiagnostics, SweepSchedule};
use crate::config::{ModelConfig, Schedule};
use crate::data::RelationalDataset;
use crate::error::{Error, Result};
use crate::latent::{self, ModelState};
use crate::rng::RngStream;
use crate::trace::{PosteriorTrace, Sample, TraceHeader, TraceWriter};
use crate::workers::Workers;

const KEY_INIT: u64 = 0;
const KEY_SWEEPS: u64 = 1;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const PROGRESS_FILE: &str = "progress.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

const CHECKPOINT_FORMAT: &str = "relbin-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub schedule: Schedule,
    pub sweep: SweepSchedule,
    pub seed: u64,
    /// Hash of the full run configuration, echoed into every output.
    pub config_hash: String,
    /// Directory for the trace, progress log and checkpoints; None keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many sweeps without writing a final checkpoint, as if
    /// the process had been killed.
    pub halt_after: Option<usize>,
    /// Also write per-block wall-clock times. Off by default because they
    /// differ between otherwise identical runs.
    pub timings: bool,
}

impl RunOptions {
    pub fn in_memory(schedule: Schedule, seed: u64) -> Self {
        RunOptions {
            schedule,
            sweep: SweepSchedule::default(),
            seed,
            config_hash: String::new(),
            out_dir: None,
            halt_after: None,
            timings: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub trace: PosteriorTrace,
    pub mh: MhDiagnostics,
    /// Log joint after every sweep.
    pub log_joint: Vec<f64>,
    pub final_state: ModelState,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Number of completed sweeps.
    pub iteration: usize,
    pub state: ModelState,
    pub mh: MhDiagnostics,
    pub trace_offset: u64,
    pub progress_offset: u64,
    pub timings_offset: u64,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "{}: unsupported checkpoint format {} v{}",
                path.display(),
                c.format,
                c.version
            )));
        }
        Ok(c)
    }

    fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct ProgressLine {
    iteration: usize,
    log_joint: f64,
    retained: bool,
    mh_acceptance: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct TimingLine<'a> {
    iteration: usize,
    seconds: Vec<(&'a str, f64)>,
}

struct Sink {
    dir: PathBuf,
    trace: TraceWriter,
    progress: TraceWriter,
    timings: Option<TraceWriter>,
}

impl Sink {
    fn flush(&mut self) -> Result<()> {
        self.trace.flush()?;
        self.progress.flush()?;
        if let Some(t) = self.timings.as_mut() {
            t.flush()?;
        }
        Ok(())
    }
}

impl Sink {
    fn checkpoint(&mut self, opts: &RunOptions, iteration: usize, state: &ModelState, mh: &MhDiagnostics) -> Result<()> {
        self.flush()?;
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: opts.config_hash.clone(),
            seed: opts.seed,
            iteration,
            state: state.clone(),
            mh: mh.clone(),
            trace_offset: self.trace.offset(),
            progress_offset: self.progress.offset(),
            timings_offset: self.timings.as_ref().map_or(0, |t| t.offset()),
        }
        .write(&self.dir.join(CHECKPOINT_FILE))
    }
}

fn validate_options(config: &ModelConfig, opts: &RunOptions) -> Result<()> {
    config.validate()?;
    opts.schedule.validate()?;
    opts.sweep.validate()
}

/// Initialize from the seed and run the full schedule.
pub fn run(ds: &RelationalDataset, config: &ModelConfig, opts: &RunOptions, workers: &Workers) -> Result<RunSummary> {
    validate_options(config, opts)?;
    let stream = RngStream::new(opts.seed);
    let state = ModelState::initialize(ds, config, &mut stream.substream(&[KEY_INIT]))?;
    let header = TraceHeader::new(ds, config, &opts.schedule, opts.seed, &opts.config_hash);
    let sink = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(Sink {
                dir: dir.clone(),
                trace: TraceWriter::create(&dir.join(TRACE_FILE), &header)?,
                progress: TraceWriter::create_with_first_line(&dir.join(PROGRESS_FILE), &progress_header(opts))?,
                timings: if opts.timings {
                    Some(TraceWriter::create_with_first_line(&dir.join(TIMINGS_FILE), &progress_header(opts))?)
                } else {
                    None
                },
            })
        }
        None => None,
    };
    let trace = PosteriorTrace::new(header);
    drive(ds, state, 0, trace, MhDiagnostics::new(ds.n_cat()), Vec::new(), sink, opts, workers)
}

/// Continue the run stored in `opts.out_dir` from its last checkpoint.
pub fn resume(ds: &RelationalDataset, config: &ModelConfig, opts: &RunOptions, workers: &Workers) -> Result<RunSummary> {
    validate_options(config, opts)?;
    let dir = opts
        .out_dir
        .as_ref()
        .ok_or_else(|| Error::Config("resuming needs an output directory".into()))?;
    let ck = Checkpoint::read(&dir.join(CHECKPOINT_FILE))?;
    if ck.config_hash != opts.config_hash || ck.seed != opts.seed {
        return Err(Error::Validation(
            "checkpoint was written by a run with a different configuration or seed".into(),
        ));
    }
    if &ck.state.config != config {
        return Err(Error::Validation("checkpoint model configuration differs".into()));
    }
    ck.state.validate(ds)?;
    let mut sink = Sink {
        dir: dir.clone(),
        trace: TraceWriter::reopen(&dir.join(TRACE_FILE), ck.trace_offset)?,
        progress: TraceWriter::reopen(&dir.join(PROGRESS_FILE), ck.progress_offset)?,
        timings: if opts.timings {
            Some(TraceWriter::reopen(&dir.join(TIMINGS_FILE), ck.timings_offset)?)
        } else {
            None
        },
    };
    sink.trace.flush()?;
    let trace = PosteriorTrace::read(&dir.join(TRACE_FILE))?;
    if trace.header != TraceHeader::new(ds, config, &opts.schedule, opts.seed, &opts.config_hash) {
        return Err(Error::Validation("trace header does not match this run".into()));
    }
    let log_joint = read_progress(&dir.join(PROGRESS_FILE))?;
    if log_joint.len() != ck.iteration {
        return Err(Error::Validation("progress log and checkpoint disagree".into()));
    }
    drive(ds, ck.state, ck.iteration, trace, ck.mh, log_joint, Some(sink), opts, workers)
}

fn progress_header(opts: &RunOptions) -> String {
    serde_json::json!({ "config_hash": opts.config_hash, "seed": opts.seed }).to_string()
}

fn read_progress(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate().skip(1) {
        let line = line.map_err(|e| Error::io(path, e))?;
        let p: ProgressLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: n + 1,
            column: 0,
            message: e.to_string(),
        })?;
        out.push(p.log_joint);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn drive(
    ds: &RelationalDataset,
    mut state: ModelState,
    start: usize,
    mut trace: PosteriorTrace,
    mut mh: MhDiagnostics,
    mut log_joint: Vec<f64>,
    mut sink: Option<Sink>,
    opts: &RunOptions,
    workers: &Workers,
) -> Result<RunSummary> {
    let sweeps = RngStream::new(opts.seed).child(&[KEY_SWEEPS]);
    let total = opts.schedule.iterations;
    let every = opts.schedule.checkpoint_every;
    for it in start + 1..=total {
        let before = sink.as_ref().map(|_| state.clone());
        let outcome = sweep(&mut state, ds, &sweeps, it as u64, &opts.sweep, workers).and_then(|diag| {
            let lj = latent::log_joint(&state, ds).map_err(|e| Error::Numerical {
                block: "log-joint".into(),
                iteration: it,
                message: e.to_string(),
            })?;
            Ok((diag, lj.total()))
        });
        let (diag, lj) = match outcome {
            Ok(v) => v,
            Err(e) => {
                if let (Some(s), Some(prev)) = (sink.as_mut(), before) {
                    s.checkpoint(opts, it - 1, &prev, &mh)?;
                }
                return Err(e);
            }
        };
        mh.record(&diag);
        log_joint.push(lj);
        let keep = opts.schedule.keeps(it);
        if keep {
            trace.samples.push(Sample::from_state(&state, it, lj));
        }
        if let Some(s) = sink.as_mut() {
            if keep {
                s.trace.append(trace.samples.last().expect("just pushed"))?;
            }
            s.progress.write_line(&serde_json::to_string(&ProgressLine {
                iteration: it,
                log_joint: lj,
                retained: keep,
                mh_acceptance: mh.rates(),
            })?)?;
            if let Some(t) = s.timings.as_mut() {
                t.write_line(&serde_json::to_string(&TimingLine {
                    iteration: it,
                    seconds: diag.block_seconds.iter().map(|(b, t)| (Block::name(b), *t)).collect(),
                })?)?;
            }
            if (every > 0 && it % every == 0) || it == total {
                s.checkpoint(opts, it, &state, &mh)?;
            }
        }
        if opts.halt_after == Some(it) {
            if let Some(s) = sink.as_mut() {
                s.flush()?;
            }
            break;
        }
        if it % 1000 == 0 {
            log::info!("iteration {it}/{total}, log joint {lj:.3}");
        }
    }
    for (j, r) in mh.rates().iter().enumerate() {
        if let Some(r) = r {
            if !(0.05..=0.95).contains(r) {
                log::warn!("Σ_{j} acceptance rate {r:.3} is outside (0.05, 0.95)");
            }
        }
    }
    Ok(RunSummary {
        trace,
        mh,
        log_joint,
        final_state: state,
    })
}
