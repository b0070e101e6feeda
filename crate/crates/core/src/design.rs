//! Latin hypercube designs on the unit hypercube.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LhdVariant {
    Random,
    /// Best of `restarts` random LHDs by minimum pairwise distance.
    Maximin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LhdOptions {
    pub variant: LhdVariant,
    pub restarts: usize,
    /// Place points at stratum midpoints instead of uniformly inside them.
    pub midpoint: bool,
}

impl Default for LhdOptions {
    fn default() -> Self {
        LhdOptions {
            variant: LhdVariant::Maximin,
            restarts: 100,
            midpoint: false,
        }
    }
}

impl LhdOptions {
    pub fn random() -> Self {
        LhdOptions {
            variant: LhdVariant::Random,
            ..Default::default()
        }
    }
}

/// An `n x d` set of points in `[0, 1]^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl Design {
    /// Panics if rows are ragged or empty.
    pub fn from_rows(points: Vec<Vec<f64>>) -> Self {
        assert!(!points.is_empty(), "design needs at least one point");
        let dim = points[0].len();
        assert!(dim >= 1, "design needs at least one dimension");
        assert!(points.iter().all(|p| p.len() == dim), "ragged design");
        Design { dim, points }
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn push(&mut self, x: Vec<f64>) {
        assert_eq!(x.len(), self.dim);
        self.points.push(x);
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.points
    }

    /// Smallest Euclidean distance between two distinct rows (infinite for n = 1).
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                let d2: f64 = self.points[i]
                    .iter()
                    .zip(&self.points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                best = best.min(d2);
            }
        }
        best.sqrt()
    }
}

fn random_lhd(n: usize, d: usize, midpoint: bool, rng: &mut ChaCha8Rng) -> Design {
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..d {
        perm.shuffle(rng);
        for (row, &stratum) in points.iter_mut().zip(&perm) {
            let offset = if midpoint { 0.5 } else { rng.gen::<f64>() };
            // Stay strictly inside the stratum even if offset*width rounds up.
            let v = (stratum as f64 + offset) / n as f64;
            let upper = (stratum + 1) as f64 / n as f64;
            row[k] = if v >= upper { upper - f64::EPSILON } else { v };
        }
    }
    Design { dim: d, points }
}

/// Latin hypercube design of `n` points in `d` dimensions.
///
/// The maximin variant draws its restarts from the same random stream as the
/// plain variant, so restart 0 of a maximin design is the random design for
/// that seed. The winner is the first restart attaining the largest minimum
/// pairwise distance.
pub fn lhd(n: usize, d: usize, seed: u64, opts: &LhdOptions) -> Design {
    assert!(n >= 1 && d >= 1, "lhd needs n >= 1 and d >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match opts.variant {
        LhdVariant::Random => random_lhd(n, d, opts.midpoint, &mut rng),
        LhdVariant::Maximin => {
            let mut best = random_lhd(n, d, opts.midpoint, &mut rng);
            let mut best_dist = best.min_pairwise_distance();
            for _ in 1..opts.restarts.max(1) {
                let cand = random_lhd(n, d, opts.midpoint, &mut rng);
                let dist = cand.min_pairwise_distance();
                if dist > best_dist {
                    best = cand;
                    best_dist = dist;
                }
            }
            best
        }
    }
}

/// True when every column has exactly one point in each stratum `[k/n, (k+1)/n)`.
pub fn is_latin(design: &Design) -> bool {
    let n = design.n();
    (0..design.dim()).all(|k| {
        let mut seen = vec![false; n];
        design.rows().iter().all(|row| {
            let v = row[k];
            if !(0.0..1.0).contains(&v) {
                return false;
            }
            let bucket = ((v * n as f64).floor() as usize).min(n - 1);
            !std::mem::replace(&mut seen[bucket], true)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_points_one_dim() {
        let d = lhd(4, 1, 7, &LhdOptions::random());
        let mut xs: Vec<f64> = d.rows().iter().map(|r| r[0]).collect();
        xs.sort_by(f64::total_cmp);
        for (k, x) in xs.iter().enumerate() {
            assert!(*x >= k as f64 * 0.25 && *x < (k + 1) as f64 * 0.25);
        }
    }

    #[test]
    fn single_point() {
        let d = lhd(1, 3, 0, &LhdOptions::default());
        assert_eq!(d.n(), 1);
        assert!(d.row(0).iter().all(|v| (0.0..1.0).contains(v)));
        assert!(is_latin(&d));
    }

    #[test]
    fn maximin_beats_random_with_same_seed() {
        for seed in 0..20 {
            let plain = lhd(5, 2, seed, &LhdOptions::random());
            let mm = lhd(5, 2, seed, &LhdOptions::default());
            assert!(mm.min_pairwise_distance() >= plain.min_pairwise_distance());
            assert!(is_latin(&mm));
        }
    }

    #[test]
    fn midpoint_placement() {
        let d = lhd(
            5,
            2,
            3,
            &LhdOptions {
                midpoint: true,
                ..LhdOptions::random()
            },
        );
        for row in d.rows() {
            for v in row {
                let frac = v * 5.0 - (v * 5.0).floor();
                assert!((frac - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn detects_non_latin() {
        let d = Design::from_rows(vec![vec![0.1], vec![0.2]]);
        assert!(!is_latin(&d));
    }

    #[test]
    fn reproducible() {
        let opts = LhdOptions::default();
        assert_eq!(lhd(10, 3, 42, &opts), lhd(10, 3, 42, &opts));
        assert_ne!(lhd(10, 3, 42, &opts), lhd(10, 3, 43, &opts));
    }
}
