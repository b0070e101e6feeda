//! Expected improvement and its maximization over the unit hypercube.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::erf::erfc;

use crate::bart::{bin, TreeEnsembleFit};
use crate::design::{lhd, Design, LhdOptions};
use crate::gp::GpFit;
use crate::optim::{nelder_mead, NelderMeadOptions};

pub fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(u: f64) -> f64 {
    0.5 * erfc(-u * FRAC_1_SQRT_2)
}

/// Closed-form `E[max(ymin - Y, 0)]` for `Y ~ N(yhat, s^2)`.
pub fn expected_improvement(yhat: f64, s: f64, ymin: f64) -> f64 {
    let gap = ymin - yhat;
    if !(s > 0.0) {
        return gap.max(0.0);
    }
    let u = gap / s;
    (gap * normal_cdf(u) + s * normal_pdf(u)).max(0.0)
}

/// Improvement averaged over posterior draws, `mean(max(ymin - y_k, 0))`.
/// Returns `None` for an empty draw vector.
pub fn ei_from_draws(draws: &[f64], ymin: f64) -> Option<f64> {
    if draws.is_empty() {
        return None;
    }
    let total: f64 = draws.iter().map(|y| (ymin - y).max(0.0)).sum();
    Some(total / draws.len() as f64)
}

/// A fitted surrogate that can score candidate points.
#[derive(Debug, Clone)]
pub enum Surrogate {
    Gp(GpFit),
    Bart(TreeEnsembleFit),
}

/// EI and predicted value at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPoint {
    pub x: Vec<f64>,
    pub ei: f64,
    pub yhat: f64,
}

impl Surrogate {
    pub fn dim(&self) -> usize {
        match self {
            Surrogate::Gp(fit) => fit.design().dim(),
            Surrogate::Bart(fit) => fit.dim(),
        }
    }

    pub fn score(&self, x: &[f64], ymin: f64) -> ScoredPoint {
        let (ei, yhat) = match self {
            Surrogate::Gp(fit) => {
                let (yhat, s2) = fit.predict(x);
                (expected_improvement(yhat, s2.sqrt(), ymin), yhat)
            }
            Surrogate::Bart(fit) => {
                let draws = fit.predict_draws(x);
                let mean = draws.iter().sum::<f64>() / draws.len() as f64;
                (ei_from_draws(&draws, ymin).expect("fit has draws"), mean)
            }
        };
        ScoredPoint {
            x: x.to_vec(),
            ei,
            yhat,
        }
    }

    fn score_all(&self, points: Vec<Vec<f64>>, ymin: f64) -> Vec<ScoredPoint> {
        match self {
            Surrogate::Gp(_) => points.iter().map(|x| self.score(x, ymin)).collect(),
            // Tree predictions only depend on the cutpoint cell, so each
            // distinct cell is scored once.
            Surrogate::Bart(fit) => {
                let mut cell_of: HashMap<Vec<u16>, usize> = HashMap::new();
                let mut reps: Vec<Vec<f64>> = Vec::new();
                let slots: Vec<usize> = points
                    .iter()
                    .map(|x| {
                        let key: Vec<u16> = x.iter().map(|v| bin(*v)).collect();
                        *cell_of.entry(key).or_insert_with(|| {
                            reps.push(x.clone());
                            reps.len() - 1
                        })
                    })
                    .collect();
                let scores: Vec<(f64, f64)> = fit
                    .predict_draws_many(&reps)
                    .iter()
                    .map(|draws| {
                        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
                        (ei_from_draws(draws, ymin).expect("fit has draws"), mean)
                    })
                    .collect();
                points
                    .into_iter()
                    .zip(slots)
                    .map(|(x, slot)| ScoredPoint {
                        x,
                        ei: scores[slot].0,
                        yhat: scores[slot].1,
                    })
                    .collect()
            }
        }
    }
}

/// Larger EI first, then smaller prediction, then lexicographically smaller x.
pub fn candidate_order(a: &ScoredPoint, b: &ScoredPoint) -> Ordering {
    b.ei
        .total_cmp(&a.ei)
        .then(a.yhat.total_cmp(&b.yhat))
        .then_with(|| {
            a.x.iter()
                .zip(&b.x)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionOptions {
    /// Space-filling candidates scored each round; `None` means `1000 * d`.
    pub candidate_count: Option<usize>,
    /// Local ascents started from the best candidates (GP only).
    pub multistart_count: usize,
    pub seed: u64,
    pub local: NelderMeadOptions,
}

impl Default for AcquisitionOptions {
    fn default() -> Self {
        AcquisitionOptions {
            candidate_count: None,
            multistart_count: 5,
            seed: 0,
            local: NelderMeadOptions {
                max_evals: 300,
                f_tol: 1e-14,
                x_tol: 1e-10,
                initial_step: 0.02,
            },
        }
    }
}

/// All scored points of one EI maximization, best first.
pub fn ranked_candidates(surrogate: &Surrogate, ymin: f64, opts: &AcquisitionOptions) -> Vec<ScoredPoint> {
    let d = surrogate.dim();
    let count = opts.candidate_count.unwrap_or(1000 * d).max(1);
    let candidates = lhd(count, d, opts.seed, &LhdOptions::random()).into_rows();
    let mut scored = surrogate.score_all(candidates, ymin);
    scored.sort_by(candidate_order);

    if let Surrogate::Gp(_) = surrogate {
        let (lo, hi) = (vec![0.0; d], vec![1.0; d]);
        let starts: Vec<Vec<f64>> = scored
            .iter()
            .take(opts.multistart_count)
            .map(|s| s.x.clone())
            .collect();
        for start in starts {
            let m = nelder_mead(|x| -surrogate.score(x, ymin).ei, &start, &lo, &hi, &opts.local);
            scored.push(surrogate.score(&m.x, ymin));
        }
        scored.sort_by(candidate_order);
    }
    scored
}

/// The point with the largest EI found by candidates plus local ascent.
pub fn argmax_ei(surrogate: &Surrogate, ymin: f64, opts: &AcquisitionOptions) -> ScoredPoint {
    ranked_candidates(surrogate, ymin, opts)
        .into_iter()
        .next()
        .expect("at least one candidate")
}

/// Infinity-norm tolerance under which two inputs count as the same point.
pub const DUPLICATE_TOL: f64 = 1e-9;

pub fn is_duplicate(x: &[f64], design: &Design) -> bool {
    design.rows().iter().any(|row| {
        row.iter()
            .zip(x)
            .all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL)
    })
}

/// Best-ranked point that is not within `DUPLICATE_TOL` of an existing design
/// point. Falls back to the overall best if every scored point is taken.
pub fn argmax_ei_excluding(
    surrogate: &Surrogate,
    ymin: f64,
    opts: &AcquisitionOptions,
    existing: &Design,
) -> ScoredPoint {
    let ranked = ranked_candidates(surrogate, ymin, opts);
    match ranked.iter().position(|s| !is_duplicate(&s.x, existing)) {
        Some(i) => ranked[i].clone(),
        None => ranked[0].clone(),
    }
}
