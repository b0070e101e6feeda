//! Expected-improvement sequential design for the scalarized inverse problem.
//!
//! Each run evaluates an initial space-filling design, then repeatedly fits
//! a surrogate to the scalarized responses, picks the point of largest
//! expected improvement over the best observed value, evaluates it and
//! refits, until the follow-up budget is spent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bart::{fit_bart, BartOptions};
use crate::design::{lhd, Design, LhdOptions};
use crate::ei::{argmax_ei_excluding, AcquisitionOptions, Surrogate};
use crate::gp::{fit_gp, GpOptions};
use crate::scalarize::{scalarize, ScalarObjectiveValue, ScalarizeError, DEFAULT_LOG_FLOOR};
use crate::simulators::{InputPoint, SimError, Simulator, TargetSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    /// Gaussian process on `w`.
    GpOnW,
    /// Sum-of-trees model on `log w`.
    BartOnLogw,
    /// Gaussian process on `log w`.
    GpOnLogw,
}

impl SurrogateKind {
    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::GpOnW => "gp_on_w",
            SurrogateKind::BartOnLogw => "bart_on_logw",
            SurrogateKind::GpOnLogw => "gp_on_logw",
        }
    }

    /// Whether the surrogate models `log w` rather than `w`.
    pub fn on_log_scale(self) -> bool {
        !matches!(self, SurrogateKind::GpOnW)
    }

    pub fn response(self, v: &ScalarObjectiveValue) -> f64 {
        if self.on_log_scale() {
            v.y
        } else {
            v.w
        }
    }
}

impl std::fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gp_on_w" => Ok(SurrogateKind::GpOnW),
            "bart_on_logw" => Ok(SurrogateKind::BartOnLogw),
            "gp_on_logw" => Ok(SurrogateKind::GpOnLogw),
            other => Err(format!("unknown surrogate '{other}'")),
        }
    }
}

/// Chain settings used inside the loop: shorter than a standalone fit and
/// thinned to 200 retained draws, since the sum-of-trees model is refitted
/// and scored on every candidate at each follow-up.
pub fn loop_bart_options() -> BartOptions {
    BartOptions {
        iterations: 1200,
        burn_in: 200,
        thin: 5,
        ..BartOptions::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialConfig {
    pub n0: usize,
    pub n_new: usize,
    pub surrogate: SurrogateKind,
    /// Candidates per EI maximization; `None` means `1000 * d`.
    pub candidate_count: Option<usize>,
    pub multistart_count: usize,
    pub seed: u64,
    pub initial_design: LhdOptions,
    pub gp: GpOptions,
    pub bart: BartOptions,
    pub log_floor: f64,
}

impl SequentialConfig {
    pub fn new(surrogate: SurrogateKind, n0: usize, n_new: usize, seed: u64) -> Self {
        SequentialConfig {
            n0,
            n_new,
            surrogate,
            candidate_count: None,
            multistart_count: 5,
            seed,
            initial_design: LhdOptions::default(),
            gp: GpOptions::default(),
            bart: loop_bart_options(),
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n0 < 2 {
            return Err(format!("n0 must be at least 2, got {}", self.n0));
        }
        if self.candidate_count == Some(0) {
            return Err("candidate_count must be at least 1".into());
        }
        if !(self.log_floor > 0.0) {
            return Err("log_floor must be positive".into());
        }
        Ok(())
    }
}

/// One simulator evaluation in the order it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub x: Vec<f64>,
    pub w: f64,
    pub y: f64,
    pub running_min_w: f64,
    /// EI at the chosen point; `None` for the initial design.
    pub ei_at_chosen: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub surrogate: SurrogateKind,
    pub seed: u64,
    pub dim: usize,
    pub n0: usize,
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    fn new(surrogate: SurrogateKind, seed: u64, dim: usize, n0: usize) -> Self {
        RunTrace {
            surrogate,
            seed,
            dim,
            n0,
            records: Vec::new(),
        }
    }

    pub fn evals(&self) -> usize {
        self.records.len()
    }

    fn push(&mut self, x: Vec<f64>, v: ScalarObjectiveValue, ei: Option<f64>) {
        let prev = self.records.last().map_or(f64::INFINITY, |r| r.running_min_w);
        self.records.push(IterationRecord {
            iter: self.records.len(),
            x,
            w: v.w,
            y: v.y,
            running_min_w: prev.min(v.w),
            ei_at_chosen: ei,
        });
    }

    /// First record attaining the smallest `w`.
    pub fn best(&self) -> Option<&IterationRecord> {
        self.records
            .iter()
            .reduce(|best, r| if r.w < best.w { r } else { best })
    }

    pub fn x_opt(&self) -> Option<&[f64]> {
        self.best().map(|r| r.x.as_slice())
    }

    pub fn w_opt(&self) -> Option<f64> {
        self.best().map(|r| r.w)
    }

    pub fn design(&self) -> Option<Design> {
        if self.records.is_empty() {
            None
        } else {
            Some(Design::from_rows(self.records.iter().map(|r| r.x.clone()).collect()))
        }
    }
}

#[derive(Debug, Error)]
pub enum SequentialError {
    #[error("invalid sequential configuration: {0}")]
    Config(String),
    #[error("simulator failed after {} evaluations: {source}", partial.evals())]
    Simulator {
        #[source]
        source: SimError,
        partial: Box<RunTrace>,
    },
    #[error("scalarization failed: {source}")]
    Scalarize {
        #[source]
        source: ScalarizeError,
        partial: Box<RunTrace>,
    },
    #[error("surrogate fit failed after {} evaluations: {message}", partial.evals())]
    Surrogate { message: String, partial: Box<RunTrace> },
}

impl SequentialError {
    pub fn partial_trace(&self) -> Option<&RunTrace> {
        match self {
            SequentialError::Config(_) => None,
            SequentialError::Simulator { partial, .. }
            | SequentialError::Scalarize { partial, .. }
            | SequentialError::Surrogate { partial, .. } => Some(partial),
        }
    }
}

/// Independent seed for one (stream, iteration) pair of a run.
pub fn derive_seed(seed: u64, stream: u64, iter: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(iter.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_GP: u64 = 1;
const STREAM_BART: u64 = 2;
const STREAM_CANDIDATES: u64 = 3;

/// Fits the configured surrogate to `responses` (already on the surrogate's
/// scale). `round` is the follow-up index and selects the fit seed.
pub fn fit_surrogate(
    cfg: &SequentialConfig,
    design: &Design,
    responses: &[f64],
    round: usize,
) -> Result<Surrogate, String> {
    match cfg.surrogate {
        SurrogateKind::GpOnW | SurrogateKind::GpOnLogw => {
            let opts = GpOptions {
                seed: derive_seed(cfg.seed, STREAM_GP, round as u64),
                ..cfg.gp.clone()
            };
            fit_gp(design, responses, &opts)
                .map(Surrogate::Gp)
                .map_err(|e| e.to_string())
        }
        SurrogateKind::BartOnLogw => {
            let opts = BartOptions {
                seed: derive_seed(cfg.seed, STREAM_BART, round as u64),
                ..cfg.bart.clone()
            };
            fit_bart(design, responses, &opts)
                .map(Surrogate::Bart)
                .map_err(|e| e.to_string())
        }
    }
}

/// The initial design a run with this configuration starts from.
pub fn initial_design(cfg: &SequentialConfig, dim: usize) -> Design {
    lhd(cfg.n0, dim, cfg.seed, &cfg.initial_design)
}

pub fn run_sequential(
    sim: &dyn Simulator,
    target: &TargetSeries,
    cfg: &SequentialConfig,
) -> Result<RunTrace, SequentialError> {
    let design = initial_design(cfg, sim.dim());
    run_sequential_from(sim, target, cfg, design)
}

/// Runs the loop from a given initial design (which must have `cfg.n0`
/// rows), so several surrogates can share one design.
pub fn run_sequential_from(
    sim: &dyn Simulator,
    target: &TargetSeries,
    cfg: &SequentialConfig,
    initial: Design,
) -> Result<RunTrace, SequentialError> {
    cfg.validate().map_err(SequentialError::Config)?;
    if initial.n() != cfg.n0 || initial.dim() != sim.dim() {
        return Err(SequentialError::Config(format!(
            "initial design is {}x{}, expected {}x{}",
            initial.n(),
            initial.dim(),
            cfg.n0,
            sim.dim()
        )));
    }
    if !sim.grid().matches(target.series.grid()) {
        return Err(SequentialError::Config(
            "simulator and target use different time grids".into(),
        ));
    }

    let mut trace = RunTrace::new(cfg.surrogate, cfg.seed, sim.dim(), cfg.n0);
    let evaluate = |x: &[f64], trace: &RunTrace| -> Result<ScalarObjectiveValue, SequentialError> {
        let point = InputPoint::new(x.to_vec()).map_err(|source| SequentialError::Simulator {
            source,
            partial: Box::new(trace.clone()),
        })?;
        let series = sim.eval(&point).map_err(|source| SequentialError::Simulator {
            source,
            partial: Box::new(trace.clone()),
        })?;
        scalarize(&series, target, cfg.log_floor).map_err(|source| SequentialError::Scalarize {
            source,
            partial: Box::new(trace.clone()),
        })
    };

    for x in initial.rows() {
        let v = evaluate(x, &trace)?;
        trace.push(x.clone(), v, None);
    }
    let mut design = initial;

    for round in 0..cfg.n_new {
        let responses: Vec<f64> = trace
            .records
            .iter()
            .map(|r| {
                cfg.surrogate.response(&ScalarObjectiveValue { w: r.w, y: r.y })
            })
            .collect();
        let ymin = responses.iter().copied().fold(f64::INFINITY, f64::min);
        let surrogate = fit_surrogate(cfg, &design, &responses, round).map_err(|message| {
            SequentialError::Surrogate {
                message,
                partial: Box::new(trace.clone()),
            }
        })?;
        let acq = AcquisitionOptions {
            candidate_count: cfg.candidate_count,
            multistart_count: cfg.multistart_count,
            seed: derive_seed(cfg.seed, STREAM_CANDIDATES, round as u64),
            ..AcquisitionOptions::default()
        };
        let chosen = argmax_ei_excluding(&surrogate, ymin, &acq, &design);
        log::debug!(
            "{} seed {} round {}: x={:?} ei={:e}",
            cfg.surrogate,
            cfg.seed,
            round,
            chosen.x,
            chosen.ei
        );
        let v = evaluate(&chosen.x, &trace)?;
        design.push(chosen.x.clone());
        trace.push(chosen.x, v, Some(chosen.ei));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::{make_target, BuiltinSim, TestSimulator, TimeGrid};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: TestSimulator,
        calls: AtomicUsize,
    }

    impl Simulator for Counting {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn grid(&self) -> &TimeGrid {
            self.inner.grid()
        }
        fn eval(&self, x: &InputPoint) -> Result<crate::simulators::TimeSeries, SimError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.eval(x)
        }
    }

    fn test1() -> (Counting, TargetSeries) {
        let inner = TestSimulator::new(BuiltinSim::Test1, TimeGrid::default());
        let target = make_target(&inner, &InputPoint::new(vec![0.5]).unwrap()).unwrap();
        (
            Counting {
                inner,
                calls: AtomicUsize::new(0),
            },
            target,
        )
    }

    #[test]
    fn no_follow_ups() {
        let (sim, target) = test1();
        let cfg = SequentialConfig::new(SurrogateKind::GpOnW, 5, 0, 3);
        let trace = run_sequential(&sim, &target, &cfg).unwrap();
        assert_eq!(trace.evals(), 5);
        let min = trace.records.iter().map(|r| r.w).fold(f64::INFINITY, f64::min);
        assert_eq!(trace.w_opt(), Some(min));
        assert_eq!(trace.records.last().unwrap().running_min_w, min);
    }

    #[test]
    fn exact_hit_in_initial_design() {
        let (sim, target) = test1();
        let cfg = SequentialConfig {
            candidate_count: Some(200),
            ..SequentialConfig::new(SurrogateKind::GpOnW, 3, 2, 1)
        };
        let design = Design::from_rows(vec![vec![0.5], vec![0.1], vec![0.9]]);
        let trace = run_sequential_from(&sim, &target, &cfg, design).unwrap();
        assert!(trace.records.iter().all(|r| r.running_min_w == 0.0));
        assert_eq!(trace.x_opt(), Some(&[0.5][..]));
    }

    #[test]
    fn budget_and_monotone_trace() {
        for kind in [SurrogateKind::GpOnW, SurrogateKind::GpOnLogw, SurrogateKind::BartOnLogw] {
            let (sim, target) = test1();
            let cfg = SequentialConfig {
                candidate_count: Some(200),
                bart: BartOptions {
                    trees: 20,
                    iterations: 300,
                    burn_in: 100,
                    thin: 2,
                    ..BartOptions::default()
                },
                ..SequentialConfig::new(kind, 4, 3, 9)
            };
            let trace = run_sequential(&sim, &target, &cfg).unwrap();
            assert_eq!(sim.calls.load(Ordering::SeqCst), 7);
            assert_eq!(trace.evals(), 7);
            for pair in trace.records.windows(2) {
                assert!(pair[1].running_min_w <= pair[0].running_min_w);
            }
            assert!(trace.records[4..].iter().all(|r| r.ei_at_chosen.unwrap() >= 0.0));
            assert_eq!(trace.records.last().unwrap().running_min_w, trace.w_opt().unwrap());
            let again = run_sequential(&sim, &target, &cfg).unwrap();
            assert_eq!(trace, again);
        }
    }

    #[test]
    fn seeds_are_spread() {
        let a = derive_seed(1, 1, 0);
        assert_ne!(a, derive_seed(1, 1, 1));
        assert_ne!(a, derive_seed(1, 2, 0));
        assert_ne!(a, derive_seed(2, 1, 0));
    }

    #[test]
    fn rejects_small_n0() {
        let (sim, target) = test1();
        let cfg = SequentialConfig::new(SurrogateKind::GpOnW, 1, 0, 0);
        assert!(matches!(
            run_sequential(&sim, &target, &cfg),
            Err(SequentialError::Config(_))
        ));
    }
}
