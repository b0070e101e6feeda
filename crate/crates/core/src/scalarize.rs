//! Collapse a time-series discrepancy into a scalar objective.

use thiserror::Error;

use crate::simulators::{TargetSeries, TimeGrid, TimeSeries};

/// Floor applied before taking the log so an exact hit stays finite.
pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScalarizeError {
    #[error("series grid {got:?} does not match target grid {expected:?}")]
    GridMismatch { expected: TimeGrid, got: TimeGrid },
}

/// The discrepancy `w` together with its floored log `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarObjectiveValue {
    pub w: f64,
    pub y: f64,
}

impl ScalarObjectiveValue {
    pub fn from_w(w: f64, floor: f64) -> Self {
        ScalarObjectiveValue {
            w,
            y: log_objective(w, floor),
        }
    }
}

/// Root-mean-square discrepancy `sqrt(mean((g - g0)^2))` over the grid.
pub fn rms_distance(g: &TimeSeries, target: &TargetSeries) -> Result<f64, ScalarizeError> {
    rms_between(g, &target.series)
}

pub fn rms_between(a: &TimeSeries, b: &TimeSeries) -> Result<f64, ScalarizeError> {
    if !a.grid().matches(b.grid()) {
        return Err(ScalarizeError::GridMismatch {
            expected: *b.grid(),
            got: *a.grid(),
        });
    }
    let sum_sq: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum_sq / a.len() as f64).sqrt())
}

/// `ln(max(w, floor))`.
pub fn log_objective(w: f64, floor: f64) -> f64 {
    w.max(floor).ln()
}

pub fn scalarize(
    g: &TimeSeries,
    target: &TargetSeries,
    floor: f64,
) -> Result<ScalarObjectiveValue, ScalarizeError> {
    Ok(ScalarObjectiveValue::from_w(rms_distance(g, target)?, floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::{eval_test1, InputPoint, TargetProvenance};
    use proptest::prelude::*;

    fn series(values: Vec<f64>) -> TimeSeries {
        let grid = TimeGrid {
            t_start: 1.0,
            t_step: 1.0,
            count: values.len(),
        };
        TimeSeries::new(grid, values).unwrap()
    }

    fn target(values: Vec<f64>) -> TargetSeries {
        TargetSeries {
            series: series(values),
            provenance: TargetProvenance::File("mem".into()),
        }
    }

    #[test]
    fn identical_series_have_zero_distance() {
        let v = vec![0.3, -1.0, 2.5, 4.0];
        assert_eq!(rms_distance(&series(v.clone()), &target(v)).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let v = vec![0.3, -1.0, 2.5, 4.0];
        let shifted = v.iter().map(|x| x - 0.75).collect();
        let w = rms_distance(&series(shifted), &target(v)).unwrap();
        assert!((w - 0.75).abs() < 1e-15);
    }

    #[test]
    fn test1_far_from_target() {
        // 50-digit summation of the same discrepancy.
        let grid = TimeGrid::default();
        let g = eval_test1(&InputPoint::new(vec![0.0]).unwrap(), &grid).unwrap();
        let g0 = eval_test1(&InputPoint::new(vec![0.5]).unwrap(), &grid).unwrap();
        let w = rms_between(&g, &g0).unwrap();
        assert!((w - 0.701_554_338_371_909_7).abs() < 1e-13, "{w}");
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = series(vec![1.0, 2.0, 3.0]);
        let b = target(vec![1.0, 2.0]);
        assert!(rms_distance(&a, &b).is_err());
    }

    #[test]
    fn log_values() {
        assert_eq!(log_objective(1.0, DEFAULT_LOG_FLOOR), 0.0);
        assert!((log_objective(0.0, 1e-12) - (-27.631_021_115_928_547)).abs() < 1e-12);
        assert!((log_objective(0.0004, 1e-12) - (-7.824_046_010_856_292)).abs() < 1e-12);
        assert!((log_objective(0.0012, 1e-12) - (-6.725_433_722_188_183)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metric_axioms(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
            c in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let (sa, sb, sc) = (series(a.clone()), series(b.clone()), series(c));
            let ab = rms_between(&sa, &sb).unwrap();
            let ba = rms_between(&sb, &sa).unwrap();
            let ac = rms_between(&sa, &sc).unwrap();
            let cb = rms_between(&sc, &sb).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ab <= ac + cb + 1e-12);
            prop_assert_eq!(ab == 0.0, a == b);
        }

        #[test]
        fn log_is_increasing_above_floor(w1 in 1e-12f64..1e3, w2 in 1e-12f64..1e3) {
            prop_assume!(w1 < w2);
            prop_assert!(log_objective(w1, 1e-12) < log_objective(w2, 1e-12));
        }

        #[test]
        fn argmin_is_preserved(ws in prop::collection::vec(1e-10f64..10.0, 1..40)) {
            let argmin = |v: &[f64]| {
                v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
            };
            let ys: Vec<f64> = ws.iter().map(|&w| log_objective(w, 1e-12)).collect();
            prop_assert_eq!(argmin(&ws), argmin(&ys));
        }
    }
}
