//! Experiment runner: configuration, replicated method comparisons and
//! persisted traces, summaries and comparison tables.
//!
//! Output layout for an experiment with output directory `out`:
//!
//! ```text
//! out/<method>/<seed>/trace.csv     iter, x_1..x_d, w, y, running_min_w, ei_at_chosen
//! out/<method>/<seed>/summary.json  method, seed, x_opt, w_opt, evals, wall_time_seconds
//! out/comparison.csv                method, seed, iter, running_min_w
//! ```
//!
//! Reals are written in `{:.16e}` scientific notation (17 significant
//! digits), so every file reloads to the exact in-memory values. Initial
//! design rows have no acquisition value and carry `NaN` in `ei_at_chosen`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::lhd;
use crate::scalarize::DEFAULT_LOG_FLOOR;
use crate::sequential::{
    run_sequential_from, IterationRecord, RunTrace, SequentialConfig, SequentialError, SurrogateKind,
};
use crate::simulators::{
    make_target, BuiltinSim, ExternalSimSpec, ExternalSimulator, InputPoint, SimError, Simulator,
    TargetProvenance, TargetSeries, TestSimulator, TimeGrid, TimeSeries,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("malformed target file {path}: {reason}")]
    Target { path: PathBuf, reason: String },
    #[error("malformed trace file {path}: {reason}")]
    Trace { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("simulator error: {0}")]
    Simulator(#[from] SimError),
    #[error("run {method} seed {seed} failed: {source}")]
    Run {
        method: SurrogateKind,
        seed: u64,
        #[source]
        source: SequentialError,
    },
}

impl HarnessError {
    /// Process exit code: 2 for configuration or input problems, 3 for
    /// simulator failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Parse(_) | HarnessError::Target { .. } => 2,
            HarnessError::Simulator(_) => 3,
            HarnessError::Run { source, .. } => match source {
                SequentialError::Config(_) => 2,
                SequentialError::Simulator { .. } => 3,
                _ => 1,
            },
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// One experiment: a simulator, a target, the methods to compare and the
/// replication plan. Read from TOML, for example
///
/// ```toml
/// simulator = "test2"
/// x0 = [0.5, 0.5]
/// methods = ["gp_on_w", "bart_on_logw"]
/// n0 = 10
/// n_new = 20
/// replications = 3
/// seed = 1
/// output_dir = "runs/example2"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in simulator; exclusive with `external`.
    #[serde(default)]
    pub simulator: Option<BuiltinSim>,
    /// External executable speaking the line protocol; exclusive with `simulator`.
    #[serde(default)]
    pub external: Option<ExternalSimSpec>,
    /// Input producing the synthetic target; exclusive with `target_file`.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Two-column `t,value` CSV with the target series.
    #[serde(default)]
    pub target_file: Option<PathBuf>,
    /// Time grid; defaults to the grid of `target_file` or 0.5, 0.52, ..., 2.5.
    #[serde(default)]
    pub grid: Option<TimeGrid>,
    pub methods: Vec<SurrogateKind>,
    pub n0: usize,
    pub n_new: usize,
    #[serde(default = "one")]
    pub replications: usize,
    /// Base seed; replication `r` uses `seed + r` unless `seeds` is given.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub candidate_count: Option<usize>,
    #[serde(default)]
    pub multistart_count: Option<usize>,
    #[serde(default)]
    pub log_floor: Option<f64>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = cfg.target_file.as_mut() {
            rebase(t);
        }
        if let Some(ext) = cfg.external.as_mut() {
            if ext.path.components().count() > 1 {
                rebase(&mut ext.path);
            }
        }
        rebase(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        match (&self.simulator, &self.external) {
            (Some(_), Some(_)) => return bad("give either `simulator` or `external`, not both"),
            (None, None) => return bad("one of `simulator` or `external` is required"),
            _ => {}
        }
        match (&self.x0, &self.target_file) {
            (Some(_), Some(_)) => return bad("give either `x0` or `target_file`, not both"),
            (None, None) => return bad("one of `x0` or `target_file` is required"),
            _ => {}
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.dim() {
                return Err(HarnessError::Config(format!(
                    "x0 has {} coordinates, simulator takes {}",
                    x0.len(),
                    self.dim()
                )));
            }
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.replications {
                return Err(HarnessError::Config(format!(
                    "{} seeds given for {} replications",
                    seeds.len(),
                    self.replications
                )));
            }
        }
        if let Some(grid) = &self.grid {
            grid.validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.sequential_config(self.methods[0], 0)
            .validate()
            .map_err(HarnessError::Config)
    }

    pub fn dim(&self) -> usize {
        match (&self.simulator, &self.external) {
            (Some(b), _) => b.dim(),
            (None, Some(e)) => e.d,
            (None, None) => 0,
        }
    }

    /// Seeds of the replications in order.
    pub fn replication_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.replications as u64)
                .map(|r| self.seed.wrapping_add(r))
                .collect(),
        }
    }

    pub fn sequential_config(&self, method: SurrogateKind, seed: u64) -> SequentialConfig {
        let mut cfg = SequentialConfig::new(method, self.n0, self.n_new, seed);
        cfg.candidate_count = self.candidate_count;
        if let Some(m) = self.multistart_count {
            cfg.multistart_count = m;
        }
        cfg.log_floor = self.log_floor.unwrap_or(DEFAULT_LOG_FLOOR);
        cfg
    }

    /// Builds the simulator and target series the runs are scored against.
    pub fn resolve(&self) -> Result<(Box<dyn Simulator>, TargetSeries), HarnessError> {
        let file_target = self.target_file.as_deref().map(load_target).transpose()?;
        let grid = match (&self.grid, &file_target) {
            (Some(g), Some(t)) if !g.matches(t.series.grid()) => {
                return Err(HarnessError::Config(
                    "configured grid differs from the target file's grid".into(),
                ))
            }
            (Some(g), _) => *g,
            (None, Some(t)) => *t.series.grid(),
            (None, None) => TimeGrid::default(),
        };
        let sim: Box<dyn Simulator> = match (&self.simulator, &self.external) {
            (Some(b), _) => Box::new(TestSimulator::new(*b, grid)),
            (None, Some(spec)) => Box::new(
                ExternalSimulator::new(spec.clone(), grid)
                    .map_err(|e| HarnessError::Config(e.to_string()))?,
            ),
            (None, None) => unreachable!("validated"),
        };
        let target = match (file_target, &self.x0) {
            (Some(t), _) => t,
            (None, Some(x0)) => {
                let point = InputPoint::new(x0.clone()).map_err(|e| HarnessError::Config(e.to_string()))?;
                make_target(sim.as_ref(), &point)?
            }
            (None, None) => unreachable!("validated"),
        };
        Ok((sim, target))
    }
}

/// Headline numbers of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: SurrogateKind,
    pub seed: u64,
    pub x_opt: Vec<f64>,
    pub w_opt: f64,
    pub evals: usize,
    pub wall_time_seconds: f64,
}

impl RunSummary {
    pub fn from_trace(trace: &RunTrace, wall_time_seconds: f64) -> Option<Self> {
        let best = trace.best()?;
        Some(RunSummary {
            method: trace.surrogate,
            seed: trace.seed,
            x_opt: best.x.clone(),
            w_opt: best.w,
            evals: trace.evals(),
            wall_time_seconds,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub traces: Vec<RunTrace>,
    pub summaries: Vec<RunSummary>,
}

pub fn run_dir(out: &Path, method: SurrogateKind, seed: u64) -> PathBuf {
    out.join(method.name()).join(seed.to_string())
}

/// Runs every (replication, method) pair, writing each run's files as soon
/// as it finishes, then the comparison table. Results are ordered by method
/// name, then seed. Within a replication all
/// methods start from the same initial design. A failing run still has its
/// partial trace written; the first failure is returned after all runs end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    let (sim, target) = cfg.resolve()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let jobs: Vec<(u64, SurrogateKind)> = cfg
        .replication_seeds()
        .into_iter()
        .flat_map(|seed| cfg.methods.iter().map(move |m| (seed, *m)))
        .collect();

    let results: Vec<Result<(RunTrace, RunSummary), HarnessError>> = jobs
        .par_iter()
        .map(|&(seed, method)| {
            let seq = cfg.sequential_config(method, seed);
            let initial = lhd(cfg.n0, sim.dim(), seed, &seq.initial_design);
            let started = Instant::now();
            let result = run_sequential_from(sim.as_ref(), &target, &seq, initial);
            let elapsed = started.elapsed().as_secs_f64();
            let dir = run_dir(out, method, seed);
            match result {
                Ok(trace) => {
                    let summary = RunSummary::from_trace(&trace, elapsed).expect("n0 >= 2");
                    write_run(&dir, &trace, Some(&summary))?;
                    log::info!("{method} seed {seed}: w_opt={:e} in {elapsed:.2}s", summary.w_opt);
                    Ok((trace, summary))
                }
                Err(source) => {
                    if let Some(partial) = source.partial_trace() {
                        write_run(&dir, partial, None)?;
                    }
                    Err(HarnessError::Run {
                        method,
                        seed,
                        source,
                    })
                }
            }
        })
        .collect();

    let mut traces = Vec::new();
    let mut summaries = Vec::new();
    let mut first_error = None;
    for r in results {
        match r {
            Ok((t, s)) => {
                traces.push(t);
                summaries.push(s);
            }
            Err(e) => {
                log::error!("{e}");
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    traces.sort_by(|a, b| a.surrogate.name().cmp(b.surrogate.name()).then(a.seed.cmp(&b.seed)));
    summaries.sort_by(|a, b| a.method.name().cmp(b.method.name()).then(a.seed.cmp(&b.seed)));
    emit_comparison(&traces, &out.join("comparison.csv"))?;
    Ok(ExperimentOutcome { traces, summaries })
}

fn write_run(dir: &Path, trace: &RunTrace, summary: Option<&RunSummary>) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_trace(trace, &dir.join("trace.csv"))?;
    if let Some(s) = summary {
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(s).map_err(|source| HarnessError::Json {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
    }
    Ok(())
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(field: &str) -> Option<f64> {
    field.trim().parse().ok()
}

pub fn trace_header(dim: usize) -> Vec<String> {
    let mut h = vec!["iter".to_string()];
    h.extend((1..=dim).map(|j| format!("x_{j}")));
    h.extend(["w", "y", "running_min_w", "ei_at_chosen"].map(String::from));
    h
}

pub fn write_trace(trace: &RunTrace, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(trace_header(trace.dim)).map_err(csv_err(path))?;
    for r in &trace.records {
        let mut row = vec![r.iter.to_string()];
        row.extend(r.x.iter().map(|v| real(*v)));
        row.push(real(r.w));
        row.push(real(r.y));
        row.push(real(r.running_min_w));
        row.push(real(r.ei_at_chosen.unwrap_or(f64::NAN)));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a trace written by [`write_trace`]. Method and seed are not stored
/// in the file and are supplied by the caller; rows with a `NaN`
/// acquisition value are taken as the initial design.
pub fn read_trace(path: &Path, method: SurrogateKind, seed: u64) -> Result<RunTrace, HarnessError> {
    let bad = |reason: String| HarnessError::Trace {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.len() < 5 {
        return Err(bad(format!("expected at least 5 columns, found {}", header.len())));
    }
    let dim = header.len() - 5;
    let expected = trace_header(dim);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(format!("unexpected header {:?}", header)));
    }
    let mut records = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let num = |i: usize| {
            parse_real(&row[i]).ok_or_else(|| bad(format!("row {}: cannot parse '{}'", line + 1, &row[i])))
        };
        let iter: usize = row[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("row {}: bad iteration '{}'", line + 1, &row[0])))?;
        let x = (1..=dim).map(num).collect::<Result<Vec<_>, _>>()?;
        let ei = num(dim + 4)?;
        records.push(IterationRecord {
            iter,
            x,
            w: num(dim + 1)?,
            y: num(dim + 2)?,
            running_min_w: num(dim + 3)?,
            ei_at_chosen: if ei.is_nan() { None } else { Some(ei) },
        });
    }
    let n0 = records.iter().take_while(|r| r.ei_at_chosen.is_none()).count();
    Ok(RunTrace {
        surrogate: method,
        seed,
        dim,
        n0,
        records,
    })
}

/// Writes the long-format running-minimum table for plotting.
pub fn emit_comparison(traces: &[RunTrace], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["method", "seed", "iter", "running_min_w"])
        .map_err(csv_err(path))?;
    for t in traces {
        for r in &t.records {
            w.write_record([
                t.surrogate.name().to_string(),
                t.seed.to_string(),
                r.iter.to_string(),
                real(r.running_min_w),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ComparisonRow {
    pub method: SurrogateKind,
    pub seed: u64,
    pub iter: usize,
    pub running_min_w: f64,
}

pub fn read_comparison(path: &Path) -> Result<Vec<ComparisonRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(csv_err(path))
}

/// Collects every `<method>/<seed>/trace.csv` under `out`, ordered by
/// method then seed.
pub fn collect_traces(out: &Path) -> Result<Vec<RunTrace>, HarnessError> {
    let mut found = Vec::new();
    for method_entry in fs::read_dir(out).map_err(io_err(out))? {
        let method_dir = method_entry.map_err(io_err(out))?.path();
        let Some(method) = method_dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse::<SurrogateKind>().ok())
        else {
            continue;
        };
        for seed_entry in fs::read_dir(&method_dir).map_err(io_err(&method_dir))? {
            let seed_dir = seed_entry.map_err(io_err(&method_dir))?.path();
            let Some(seed) = seed_dir
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.parse::<u64>().ok())
            else {
                continue;
            };
            let trace_path = seed_dir.join("trace.csv");
            if trace_path.is_file() {
                found.push((method.name(), seed, read_trace(&trace_path, method, seed)?));
            }
        }
    }
    found.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
    Ok(found.into_iter().map(|(_, _, t)| t).collect())
}

/// Rebuilds `<out>/comparison.csv` from the traces on disk and returns
/// the number of traces included.
pub fn compare_dir(out: &Path) -> Result<usize, HarnessError> {
    let traces = collect_traces(out)?;
    if traces.is_empty() {
        return Err(HarnessError::Config(format!("no traces found under {}", out.display())));
    }
    emit_comparison(&traces, &out.join("comparison.csv"))?;
    Ok(traces.len())
}

/// Writes a target as a `t,value` CSV with header.
pub fn write_target(series: &TimeSeries, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["t", "value"]).map_err(csv_err(path))?;
    for (t, v) in series.grid().times().zip(series.values()) {
        w.write_record([real(t), real(*v)]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a `t,value` CSV. The times must be strictly increasing and evenly
/// spaced; the grid is inferred from them.
pub fn load_target(path: &Path) -> Result<TargetSeries, HarnessError> {
    let bad = |reason: String| HarnessError::Target {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.len() != 2 {
        return Err(bad(format!("expected 2 columns, found {}", header.len())));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let field = |j: usize| -> Result<f64, HarnessError> {
            let v = parse_real(&row[j]).ok_or_else(|| bad(format!("row {}: cannot parse '{}'", i + 1, &row[j])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("row {}: non-finite value", i + 1)))
            }
        };
        times.push(field(0)?);
        values.push(field(1)?);
    }
    if times.len() < 2 {
        return Err(bad("need at least two rows".into()));
    }
    if times.windows(2).any(|p| p[1] <= p[0]) {
        return Err(bad("times are not strictly increasing".into()));
    }
    let n = times.len();
    let step = (times[n - 1] - times[0]) / (n - 1) as f64;
    if let Some(i) = (0..n).find(|&i| (times[i] - (times[0] + i as f64 * step)).abs() > 1e-9 * step) {
        return Err(bad(format!("times are not evenly spaced at row {}", i + 1)));
    }
    let grid = TimeGrid::new(times[0], step, n).map_err(|e| bad(e.to_string()))?;
    let series = TimeSeries::new(grid, values).map_err(|e| bad(e.to_string()))?;
    Ok(TargetSeries {
        series,
        provenance: TargetProvenance::File(path.to_path_buf()),
    })
}
