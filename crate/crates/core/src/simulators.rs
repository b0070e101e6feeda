//! Deterministic time-series simulators.
//!
//! Three closed-form test functions (one-, two- and three-dimensional inputs)
//! share a common time grid, plus an adapter that runs an external executable
//! once per evaluation over a line-oriented text protocol.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("input coordinate {index} = {value} is outside [0, 1]")]
    OutOfDomain { index: usize, value: f64 },
    #[error("simulator expects a {expected}-dimensional input, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("time grid must have count >= 2, step > 0 and only positive times")]
    InvalidGrid,
    #[error("simulator produced a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("series length {got} does not match grid count {expected}")]
    Length { expected: usize, got: usize },
    #[error("failed to launch external simulator {path}: {source}")]
    Spawn {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("external simulator i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("external simulator exited with {status}: {stderr}")]
    ProcessFailed { status: String, stderr: String },
    #[error("external simulator produced malformed output: {0}")]
    Malformed(String),
    #[error("external simulator timed out after {0:?}")]
    Timeout(Duration),
}

/// Evenly spaced, closed time grid `t_start, t_start + t_step, ...` with
/// `count` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_step: f64,
    pub count: usize,
}

impl Default for TimeGrid {
    /// t = 0.50, 0.52, ..., 2.50 (101 points).
    fn default() -> Self {
        TimeGrid {
            t_start: 0.5,
            t_step: 0.02,
            count: 101,
        }
    }
}

impl TimeGrid {
    pub fn new(t_start: f64, t_step: f64, count: usize) -> Result<Self, SimError> {
        let grid = TimeGrid {
            t_start,
            t_step,
            count,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.count < 2
            || !(self.t_step > 0.0)
            || !self.t_start.is_finite()
            || !self.t_step.is_finite()
        {
            return Err(SimError::InvalidGrid);
        }
        Ok(())
    }

    /// The i-th time point. Computed as `start + i * step` rather than by
    /// accumulation so that every caller sees identical values.
    pub fn time(&self, i: usize) -> f64 {
        self.t_start + i as f64 * self.t_step
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.time(i))
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.count - 1)
    }

    /// Grids are compared up to a small relative tolerance on the spacing so
    /// that grids reconstructed from decimal files still match.
    pub fn matches(&self, other: &TimeGrid) -> bool {
        let tol = 1e-9 * self.t_step.abs().max(other.t_step.abs());
        self.count == other.count
            && (self.t_start - other.t_start).abs() <= tol
            && (self.t_step - other.t_step).abs() <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self, SimError> {
        if values.len() != grid.count {
            return Err(SimError::Length {
                expected: grid.count,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(i));
        }
        Ok(TimeSeries { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A point of the unit hypercube `[0, 1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InputPoint(Vec<f64>);

impl InputPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, SimError> {
        for (index, &value) in coords.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimError::OutOfDomain { index, value });
            }
        }
        Ok(InputPoint(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for InputPoint {
    type Error = SimError;

    fn try_from(coords: Vec<f64>) -> Result<Self, Self::Error> {
        InputPoint::new(coords)
    }
}

impl From<InputPoint> for Vec<f64> {
    fn from(p: InputPoint) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetProvenance {
    Synthetic(InputPoint),
    File(PathBuf),
}

/// The pre-specified output the inverse problem tries to reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSeries {
    pub series: TimeSeries,
    pub provenance: TargetProvenance,
}

/// Anything that maps an input point to a time series on a fixed grid.
pub trait Simulator: Send + Sync {
    fn dim(&self) -> usize;
    fn grid(&self) -> &TimeGrid;
    fn eval(&self, x: &InputPoint) -> Result<TimeSeries, SimError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinSim {
    Test1,
    Test2,
    Test3,
}

impl BuiltinSim {
    pub fn dim(self) -> usize {
        match self {
            BuiltinSim::Test1 => 1,
            BuiltinSim::Test2 => 2,
            BuiltinSim::Test3 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BuiltinSim::Test1 => "test1",
            BuiltinSim::Test2 => "test2",
            BuiltinSim::Test3 => "test3",
        }
    }

    pub fn eval(self, x: &InputPoint, grid: &TimeGrid) -> Result<TimeSeries, SimError> {
        match self {
            BuiltinSim::Test1 => eval_test1(x, grid),
            BuiltinSim::Test2 => eval_test2(x, grid),
            BuiltinSim::Test3 => eval_test3(x, grid),
        }
    }
}

impl std::str::FromStr for BuiltinSim {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "test1" => Ok(BuiltinSim::Test1),
            "test2" => Ok(BuiltinSim::Test2),
            "test3" => Ok(BuiltinSim::Test3),
            other => Err(format!("unknown builtin simulator '{other}'")),
        }
    }
}

fn check_input(x: &InputPoint, d: usize, grid: &TimeGrid) -> Result<(), SimError> {
    if x.dim() != d {
        return Err(SimError::Dimension {
            expected: d,
            got: x.dim(),
        });
    }
    // InputPoint is validated on construction, but the coordinates may have
    // come through a deserializer that bypassed it.
    for (index, &value) in x.coords().iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(SimError::OutOfDomain { index, value });
        }
    }
    grid.validate()?;
    if grid.t_start <= 0.0 {
        return Err(SimError::InvalidGrid);
    }
    Ok(())
}

fn tabulate(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Result<TimeSeries, SimError> {
    TimeSeries::new(*grid, grid.times().map(f).collect())
}

/// `g(x, t) = sin(10 pi t) / (2 t) + |t - 1|^(2 + 4 x)`.
pub fn eval_test1(x: &InputPoint, grid: &TimeGrid) -> Result<TimeSeries, SimError> {
    check_input(x, 1, grid)?;
    let x = x.coords()[0];
    tabulate(grid, |t| {
        (10.0 * PI * t).sin() / (2.0 * t) + (t - 1.0).abs().powf(2.0 + 4.0 * x)
    })
}

/// `g(x, t) = sin(10 pi t) / ((1 + 2 x1) t) + |t - 1|^(2 + 4 x2)`.
pub fn eval_test2(x: &InputPoint, grid: &TimeGrid) -> Result<TimeSeries, SimError> {
    check_input(x, 2, grid)?;
    let (x1, x2) = (x.coords()[0], x.coords()[1]);
    tabulate(grid, |t| {
        (10.0 * PI * t).sin() / ((1.0 + 2.0 * x1) * t) + (t - 1.0).abs().powf(2.0 + 4.0 * x2)
    })
}

/// `g(x, t) = sin(10 pi t^(2 x3)) / ((1 + 2 x2) t) + |t - 1|^(2 + 4 x3)`.
///
/// The first coordinate does not enter the response.
pub fn eval_test3(x: &InputPoint, grid: &TimeGrid) -> Result<TimeSeries, SimError> {
    check_input(x, 3, grid)?;
    let (x2, x3) = (x.coords()[1], x.coords()[2]);
    tabulate(grid, |t| {
        (10.0 * PI * t.powf(2.0 * x3)).sin() / ((1.0 + 2.0 * x2) * t)
            + (t - 1.0).abs().powf(2.0 + 4.0 * x3)
    })
}

/// A built-in test function bound to a time grid.
#[derive(Debug, Clone)]
pub struct TestSimulator {
    pub kind: BuiltinSim,
    pub grid: TimeGrid,
}

impl TestSimulator {
    pub fn new(kind: BuiltinSim, grid: TimeGrid) -> Self {
        TestSimulator { kind, grid }
    }
}

impl Simulator for TestSimulator {
    fn dim(&self) -> usize {
        self.kind.dim()
    }

    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn eval(&self, x: &InputPoint) -> Result<TimeSeries, SimError> {
        self.kind.eval(x, &self.grid)
    }
}

/// Evaluates `sim` at `x0` and wraps the result as a synthetic target.
pub fn make_target(sim: &dyn Simulator, x0: &InputPoint) -> Result<TargetSeries, SimError> {
    Ok(TargetSeries {
        series: sim.eval(x0)?,
        provenance: TargetProvenance::Synthetic(x0.clone()),
    })
}

fn default_timeout() -> f64 {
    60.0
}

/// How to launch an external simulator.
///
/// Each evaluation starts `path` (with `args`), writes the `d` input
/// coordinates as one space-separated line to its stdin and reads `L`
/// whitespace-separated reals from its stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSimSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    /// Allow concurrent invocations of the executable.
    #[serde(default)]
    pub reentrant: bool,
}

/// Formats a request line: the coordinates in shortest round-trip decimal,
/// space separated, newline terminated.
pub fn format_request(x: &InputPoint) -> String {
    let mut line = x
        .coords()
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ");
    line.push('\n');
    line
}

pub fn parse_response(text: &str, expected: usize) -> Result<Vec<f64>, SimError> {
    let values = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| SimError::Malformed(format!("not a number: '{tok}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(SimError::Length {
            expected,
            got: values.len(),
        });
    }
    Ok(values)
}

/// Runs one evaluation of an external simulator process.
pub fn eval_external(
    x: &InputPoint,
    spec: &ExternalSimSpec,
    grid: &TimeGrid,
) -> Result<TimeSeries, SimError> {
    if x.dim() != spec.d {
        return Err(SimError::Dimension {
            expected: spec.d,
            got: x.dim(),
        });
    }
    if grid.count != spec.l {
        return Err(SimError::Length {
            expected: grid.count,
            got: spec.l,
        });
    }
    let timeout = Duration::from_secs_f64(spec.timeout_seconds.max(0.0));

    let mut child = Command::new(&spec.path)
        .args(&spec.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| SimError::Spawn {
            path: spec.path.clone(),
            source,
        })?;

    let mut stdout = child.stdout.take().expect("stdout piped");
    let mut stderr = child.stderr.take().expect("stderr piped");
    let out_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        stdout.read_to_string(&mut buf).map(|_| buf)
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });

    if let Some(mut stdin) = child.stdin.take() {
        // A simulator that exits without reading its input closes the pipe;
        // its exit status and output decide the outcome.
        let _ = stdin.write_all(format_request(x).as_bytes());
    }

    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if start.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(SimError::Timeout(timeout));
        }
        std::thread::sleep(Duration::from_millis(2));
    };

    let stdout = out_reader
        .join()
        .map_err(|_| SimError::Malformed("stdout reader panicked".into()))??;
    let stderr = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(SimError::ProcessFailed {
            status: status.to_string(),
            stderr: stderr.trim().to_string(),
        });
    }
    let values = parse_response(&stdout, spec.l)?;
    TimeSeries::new(*grid, values)
}

/// External simulator with per-spec serialization of calls.
#[derive(Debug)]
pub struct ExternalSimulator {
    spec: ExternalSimSpec,
    grid: TimeGrid,
    lock: Mutex<()>,
}

impl ExternalSimulator {
    pub fn new(spec: ExternalSimSpec, grid: TimeGrid) -> Result<Self, SimError> {
        grid.validate()?;
        if grid.count != spec.l {
            return Err(SimError::Length {
                expected: grid.count,
                got: spec.l,
            });
        }
        Ok(ExternalSimulator {
            spec,
            grid,
            lock: Mutex::new(()),
        })
    }

    pub fn spec(&self) -> &ExternalSimSpec {
        &self.spec
    }
}

impl Simulator for ExternalSimulator {
    fn dim(&self) -> usize {
        self.spec.d
    }

    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn eval(&self, x: &InputPoint) -> Result<TimeSeries, SimError> {
        if self.spec.reentrant {
            return eval_external(x, &self.spec, &self.grid);
        }
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        eval_external(x, &self.spec, &self.grid)
    }
}
