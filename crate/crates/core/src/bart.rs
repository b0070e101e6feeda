//! Sum-of-trees regression fitted by MCMC Bayesian backfitting.
//!
//! The response is modelled as `y = sum_j h(x; T_j, M_j) + eps` with
//! `eps ~ N(0, sigma^2)`. Each sweep updates every tree in turn against the
//! residual of the other `m - 1` trees: a Metropolis-Hastings step on the
//! tree structure (grow, prune, change, swap) using the likelihood with the
//! leaf means integrated out, then a conjugate normal draw of the leaf means.
//! The sweep ends with an inverse chi-squared draw of `sigma^2`.
//!
//! Priors follow the usual sum-of-trees defaults with two changes for
//! deterministic simulators: leaf means are `N(0, 1/(4 k^2 m))` with `k = 1`
//! on a response scaled to `[-0.5, 0.5]`, and the `nu = 3` inverse
//! chi-squared prior on `sigma^2` puts its 90th percentile of `sigma` at
//! `0.2 * sd(y)`.
//!
//! Splits use 100 fixed, equally spaced cutpoints per input dimension, and
//! a proposal that would leave a leaf without observations is rejected.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF};
use thiserror::Error;

use crate::design::Design;

/// Number of candidate split values per input dimension.
pub const NUM_CUTS: usize = 100;

#[derive(Debug, Error)]
pub enum BartError {
    #[error("need at least 2 training points, got {0}")]
    TooFewPoints(usize),
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("design has {design} rows but {responses} responses")]
    SizeMismatch { design: usize, responses: usize },
    #[error("invalid chain settings: {0}")]
    InvalidOptions(String),
}

/// Split value `j` (0-based) on the unit interval.
pub fn cutpoint(j: usize) -> f64 {
    (j + 1) as f64 / (NUM_CUTS + 1) as f64
}

/// Number of cutpoints strictly below `x`; an observation goes left at a
/// split on cut `j` iff `x <= cutpoint(j)`, i.e. iff `bin(x) <= j`.
pub fn bin(x: f64) -> u16 {
    let mut b = ((x * (NUM_CUTS + 1) as f64).ceil() as isize - 1).clamp(0, NUM_CUTS as isize) as usize;
    while b > 0 && cutpoint(b - 1) >= x {
        b -= 1;
    }
    while b < NUM_CUTS && cutpoint(b) < x {
        b += 1;
    }
    b as u16
}

fn bins_of(point: &[f64]) -> Vec<u16> {
    point.iter().map(|v| bin(*v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { mu: f64 },
    Split { var: usize, cut: u16, left: usize, right: usize },
}

/// A binary regression tree over the cutpoint grid. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

/// Per-dimension range `[lo, hi)` of cut indices still able to split a cell.
type Cell = Vec<(u16, u16)>;

#[derive(Debug, Clone)]
struct NodeInfo {
    idx: usize,
    depth: usize,
    cell: Cell,
    parent: Option<usize>,
    is_leaf: bool,
}

fn available_vars(cell: &Cell) -> usize {
    cell.iter().filter(|(lo, hi)| hi > lo).count()
}

impl DecisionTree {
    pub fn leaf(mu: f64) -> Self {
        DecisionTree {
            nodes: vec![Node::Leaf { mu }],
        }
    }

    /// A depth-one tree: `left_mu` when `x[var] <= cutpoint(cut)`.
    pub fn stump(var: usize, cut: u16, left_mu: f64, right_mu: f64) -> Self {
        DecisionTree {
            nodes: vec![
                Node::Split { var, cut, left: 1, right: 2 },
                Node::Leaf { mu: left_mu },
                Node::Leaf { mu: right_mu },
            ],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    fn leaf_index(&self, bins: &[u16]) -> usize {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf { .. } => return idx,
                Node::Split { var, cut, left, right } => {
                    idx = if bins[var] <= cut { left } else { right };
                }
            }
        }
    }

    pub fn predict_bins(&self, bins: &[u16]) -> f64 {
        match self.nodes[self.leaf_index(bins)] {
            Node::Leaf { mu } => mu,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn predict(&self, point: &[f64]) -> f64 {
        self.predict_bins(&bins_of(point))
    }

    fn infos(&self, dim: usize) -> Vec<NodeInfo> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(0usize, 0usize, vec![(0u16, NUM_CUTS as u16); dim], None)];
        while let Some((idx, depth, cell, parent)) = stack.pop() {
            match self.nodes[idx] {
                Node::Leaf { .. } => out.push(NodeInfo { idx, depth, cell, parent, is_leaf: true }),
                Node::Split { var, cut, left, right } => {
                    let (lo, hi) = cell[var];
                    let mut lcell = cell.clone();
                    lcell[var] = (lo, cut.max(lo));
                    let mut rcell = cell.clone();
                    rcell[var] = ((cut + 1).min(hi), hi);
                    out.push(NodeInfo { idx, depth, cell, parent, is_leaf: false });
                    stack.push((right, depth + 1, rcell, Some(idx)));
                    stack.push((left, depth + 1, lcell, Some(idx)));
                }
            }
        }
        out
    }

    /// Log prior of the tree structure and split rules, or `None` if some
    /// split rule is not available inside its cell.
    fn log_prior(&self, dim: usize, alpha: f64, beta: f64) -> Option<f64> {
        let mut lp = 0.0;
        for info in self.infos(dim) {
            let nvars = available_vars(&info.cell);
            let p_split = if nvars > 0 {
                alpha * (1.0 + info.depth as f64).powf(-beta)
            } else {
                0.0
            };
            match self.nodes[info.idx] {
                Node::Leaf { .. } => lp += (1.0 - p_split).ln(),
                Node::Split { var, cut, .. } => {
                    let (lo, hi) = info.cell[var];
                    if !(lo <= cut && cut < hi) || p_split == 0.0 {
                        return None;
                    }
                    lp += p_split.ln() - (nvars as f64).ln() - ((hi - lo) as f64).ln();
                }
            }
        }
        Some(lp)
    }

    fn grow(&mut self, leaf: usize, var: usize, cut: u16) {
        let left = self.nodes.len();
        self.nodes.push(Node::Leaf { mu: 0.0 });
        self.nodes.push(Node::Leaf { mu: 0.0 });
        self.nodes[leaf] = Node::Split { var, cut, left, right: left + 1 };
    }

    fn prune(&mut self, idx: usize) {
        self.nodes[idx] = Node::Leaf { mu: 0.0 };
        self.compact();
    }

    /// Drops unreachable nodes, renumbering in preorder.
    fn compact(&mut self) {
        let mut out = Vec::with_capacity(self.nodes.len());
        fn copy(src: &[Node], idx: usize, out: &mut Vec<Node>) -> usize {
            let at = out.len();
            out.push(src[idx]);
            if let Node::Split { var, cut, left, right } = src[idx] {
                let l = copy(src, left, out);
                let r = copy(src, right, out);
                out[at] = Node::Split { var, cut, left: l, right: r };
            }
            at
        }
        copy(&self.nodes, 0, &mut out);
        self.nodes = out;
    }

    fn rule(&self, idx: usize) -> Option<(usize, u16)> {
        match self.nodes[idx] {
            Node::Split { var, cut, .. } => Some((var, cut)),
            Node::Leaf { .. } => None,
        }
    }

    fn set_rule(&mut self, idx: usize, rule: (usize, u16)) {
        if let Node::Split { var, cut, .. } = &mut self.nodes[idx] {
            *var = rule.0;
            *cut = rule.1;
        }
    }

    fn children(&self, idx: usize) -> Option<(usize, usize)> {
        match self.nodes[idx] {
            Node::Split { left, right, .. } => Some((left, right)),
            Node::Leaf { .. } => None,
        }
    }
}

/// Affine map between the data scale and the `[-0.5, 0.5]` fitting scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataTransform {
    pub shift: f64,
    pub scale: f64,
}

impl DataTransform {
    pub fn min_max(y: &[f64]) -> Self {
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        DataTransform {
            shift: 0.5 * (hi + lo),
            scale: if range > 0.0 { range } else { 1.0 },
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.scale * z + self.shift
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartOptions {
    pub trees: usize,
    /// Total MCMC iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    /// Leaf-mean prior shrinkage.
    pub k: f64,
    /// Degrees of freedom of the inverse chi-squared prior on `sigma^2`.
    pub nu: f64,
    /// Prior probability that `sigma <= sigma_anchor * sd(y)`.
    pub q: f64,
    pub sigma_anchor: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Proposal probabilities of grow, prune, change and swap.
    pub move_probs: [f64; 4],
    pub seed: u64,
}

impl Default for BartOptions {
    fn default() -> Self {
        BartOptions {
            trees: 200,
            iterations: 2000,
            burn_in: 500,
            thin: 1,
            chains: 1,
            k: 1.0,
            nu: 3.0,
            q: 0.90,
            sigma_anchor: 0.20,
            alpha: 0.95,
            beta: 2.0,
            move_probs: [0.25, 0.25, 0.40, 0.10],
            seed: 0,
        }
    }
}

impl BartOptions {
    fn validate(&self) -> Result<(), BartError> {
        let bad = |msg: &str| Err(BartError::InvalidOptions(msg.to_string()));
        if self.trees == 0 {
            return bad("need at least one tree");
        }
        if self.thin == 0 || self.chains == 0 {
            return bad("thin and chains must be positive");
        }
        if self.burn_in >= self.iterations {
            return bad("burn-in must be shorter than the chain");
        }
        if !(self.k > 0.0 && self.nu > 0.0 && self.sigma_anchor > 0.0) {
            return bad("k, nu and sigma_anchor must be positive");
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad("q must lie in (0, 1)");
        }
        if self.move_probs.iter().any(|p| *p < 0.0) || self.move_probs.iter().sum::<f64>() <= 0.0 {
            return bad("move probabilities must be nonnegative with positive sum");
        }
        Ok(())
    }

    /// Retained draws per chain, `ceil((N - B) / thin)`.
    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Scale `lambda` of the `nu * lambda / chi2_nu` prior on `sigma^2` with
/// `P(sigma <= sigma_at) = q`, found by bisection on the chi-squared CDF.
pub fn solve_sigma_prior_scale(nu: f64, q: f64, sigma_at: f64) -> f64 {
    // P(sigma^2 <= s^2) = P(X >= nu lambda / s^2) = q with X ~ chi2_nu,
    // so nu lambda / s^2 is the (1 - q) quantile of X.
    let chi = ChiSquaredDist::new(nu).expect("nu > 0");
    let target = 1.0 - q;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while chi.cdf(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi.cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let quantile = 0.5 * (lo + hi);
    sigma_at * sigma_at * quantile / nu
}

/// Prior probability `P(sigma <= s)` under `sigma^2 ~ nu lambda / chi2_nu`.
pub fn sigma_prior_cdf(s: f64, nu: f64, lambda: f64) -> f64 {
    let chi = ChiSquaredDist::new(nu).expect("nu > 0");
    1.0 - chi.cdf(nu * lambda / (s * s))
}

/// Prior hyperparameters on the fitting scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BartHyper {
    pub k: f64,
    pub nu: f64,
    pub q: f64,
    pub lambda: f64,
    /// Prior variance of each leaf mean, `1 / (4 k^2 m)`.
    pub mu_var: f64,
}

/// One retained posterior state: `m` trees flattened into a single arena.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDraw {
    nodes: Vec<Node>,
    roots: Vec<usize>,
    pub sigma: f64,
}

impl EnsembleDraw {
    pub fn from_trees(trees: &[DecisionTree], sigma: f64) -> Self {
        let mut nodes = Vec::new();
        let mut roots = Vec::with_capacity(trees.len());
        for t in trees {
            let off = nodes.len();
            roots.push(off);
            nodes.extend(t.nodes.iter().map(|n| match *n {
                Node::Split { var, cut, left, right } => Node::Split {
                    var,
                    cut,
                    left: left + off,
                    right: right + off,
                },
                leaf => leaf,
            }));
        }
        EnsembleDraw { nodes, roots, sigma }
    }

    /// Sum of the tree outputs on the fitting scale.
    pub fn sum_bins(&self, bins: &[u16]) -> f64 {
        let mut total = 0.0;
        for &root in &self.roots {
            let mut idx = root;
            loop {
                match self.nodes[idx] {
                    Node::Leaf { mu } => {
                        total += mu;
                        break;
                    }
                    Node::Split { var, cut, left, right } => {
                        idx = if bins[var] <= cut { left } else { right };
                    }
                }
            }
        }
        total
    }

    pub fn num_trees(&self) -> usize {
        self.roots.len()
    }
}

/// Posterior summary at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct BartPrediction {
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
    pub draws: Vec<f64>,
}

/// Chain diagnostics suitable for a JSON dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartDump {
    pub options: BartOptions,
    pub hyper: BartHyper,
    pub transform: DataTransform,
    pub sigma_draws: Vec<f64>,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TreeEnsembleFit {
    dim: usize,
    pub options: BartOptions,
    pub hyper: BartHyper,
    pub transform: DataTransform,
    draws: Vec<EnsembleDraw>,
    pub acceptance_rate: f64,
}

impl TreeEnsembleFit {
    /// Assembles a fit from explicit draws (fitting-scale trees and `sigma`).
    pub fn from_draws(dim: usize, draws: Vec<EnsembleDraw>, transform: DataTransform) -> Self {
        assert!(!draws.is_empty(), "need at least one draw");
        TreeEnsembleFit {
            dim,
            options: BartOptions::default(),
            hyper: BartHyper {
                k: f64::NAN,
                nu: f64::NAN,
                q: f64::NAN,
                lambda: f64::NAN,
                mu_var: f64::NAN,
            },
            transform,
            draws,
            acceptance_rate: f64::NAN,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draws(&self) -> &[EnsembleDraw] {
        &self.draws
    }

    pub fn num_draws(&self) -> usize {
        self.draws.len()
    }

    /// Per-draw predictions on the data scale.
    pub fn predict_draws(&self, point: &[f64]) -> Vec<f64> {
        let bins = bins_of(point);
        self.draws
            .iter()
            .map(|d| self.transform.inverse(d.sum_bins(&bins)))
            .collect()
    }

    /// Posterior draws at many points, one vector per point. Iterates draw by
    /// draw so each ensemble stays in cache across all points.
    pub fn predict_draws_many(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let bins: Vec<Vec<u16>> = points.iter().map(|p| bins_of(p)).collect();
        let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(self.draws.len()); points.len()];
        for draw in &self.draws {
            for (b, o) in bins.iter().zip(out.iter_mut()) {
                o.push(self.transform.inverse(draw.sum_bins(b)));
            }
        }
        out
    }

    pub fn predict(&self, point: &[f64]) -> BartPrediction {
        summarize_draws(self.predict_draws(point))
    }

    pub fn dump(&self) -> BartDump {
        BartDump {
            options: self.options.clone(),
            hyper: self.hyper,
            transform: self.transform,
            sigma_draws: self
                .draws
                .iter()
                .map(|d| d.sigma * self.transform.scale)
                .collect(),
            acceptance_rate: self.acceptance_rate,
        }
    }
}

pub fn bart_predict(fit: &TreeEnsembleFit, point: &[f64]) -> BartPrediction {
    fit.predict(point)
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_draws(draws: Vec<f64>) -> BartPrediction {
    assert!(!draws.is_empty(), "need at least one draw");
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    BartPrediction {
        mean,
        q05: quantile_sorted(&sorted, 0.05),
        q95: quantile_sorted(&sorted, 0.95),
        draws,
    }
}

fn sample_sd(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// sd used for the sigma prior when the scaled response is constant.
const SD_FLOOR: f64 = 1e-6;

/// State shared by every tree update within a chain.
struct Sampler<'a> {
    bins: &'a [Vec<u16>],
    dim: usize,
    opts: &'a BartOptions,
    mu_var: f64,
}

/// Leaf membership and residual sums for one tree.
struct LeafStats {
    count: Vec<usize>,
    sum: Vec<f64>,
}

impl Sampler<'_> {
    fn leaf_stats(&self, tree: &DecisionTree, resid: &[f64]) -> LeafStats {
        let mut count = vec![0usize; tree.nodes.len()];
        let mut sum = vec![0.0; tree.nodes.len()];
        for (b, r) in self.bins.iter().zip(resid) {
            let l = tree.leaf_index(b);
            count[l] += 1;
            sum[l] += r;
        }
        LeafStats { count, sum }
    }

    /// Log likelihood of a structure with the leaf means integrated out, up
    /// to terms shared by every tree. `None` if some leaf is empty.
    fn log_likelihood(&self, tree: &DecisionTree, resid: &[f64], sigma2: f64) -> Option<(f64, LeafStats)> {
        let stats = self.leaf_stats(tree, resid);
        let tau2 = self.mu_var;
        let mut ll = 0.0;
        for (idx, node) in tree.nodes.iter().enumerate() {
            if let Node::Leaf { .. } = node {
                if stats.count[idx] == 0 {
                    return None;
                }
                let n = stats.count[idx] as f64;
                let s = stats.sum[idx];
                let denom = sigma2 + n * tau2;
                ll += 0.5 * (sigma2 / denom).ln() + tau2 * s * s / (2.0 * sigma2 * denom);
            }
        }
        Some((ll, stats))
    }

    fn move_probs(&self, tree: &DecisionTree) -> [f64; 4] {
        if tree.nodes.len() == 1 {
            [1.0, 0.0, 0.0, 0.0]
        } else {
            let total: f64 = self.opts.move_probs.iter().sum();
            self.opts.move_probs.map(|p| p / total)
        }
    }

    /// One Metropolis-Hastings structure update followed by a draw of the
    /// leaf means. `prior` caches the log prior of `tree`. Returns whether
    /// the proposal was accepted.
    fn update_tree(
        &self,
        tree: &mut DecisionTree,
        prior: &mut f64,
        resid: &[f64],
        sigma2: f64,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        let probs = self.move_probs(tree);
        let u: f64 = rng.gen();
        let infos = tree.infos(self.dim);

        let mut proposal = tree.clone();
        // Log proposal ratio q(T*->T) / q(T->T*), zero for symmetric moves.
        let log_q: f64;
        if u < probs[0] {
            let growable: Vec<&NodeInfo> = infos
                .iter()
                .filter(|i| i.is_leaf && available_vars(&i.cell) > 0)
                .collect();
            if growable.is_empty() {
                return self.finish(tree, resid, sigma2, rng, false);
            }
            let leaf = growable[rng.gen_range(0..growable.len())];
            let vars: Vec<usize> = (0..self.dim).filter(|&k| leaf.cell[k].1 > leaf.cell[k].0).collect();
            let var = vars[rng.gen_range(0..vars.len())];
            let (lo, hi) = leaf.cell[var];
            let cut = rng.gen_range(lo..hi);
            proposal.grow(leaf.idx, var, cut);
            let nog_after = count_nog(&proposal);
            let fwd = probs[0].ln() - (growable.len() as f64).ln() - (vars.len() as f64).ln() - ((hi - lo) as f64).ln();
            let rev = self.move_probs(&proposal)[1].ln() - (nog_after as f64).ln();
            log_q = rev - fwd;
        } else if u < probs[0] + probs[1] {
            let nogs: Vec<&NodeInfo> = infos.iter().filter(|i| is_nog(tree, i.idx)).collect();
            if nogs.is_empty() {
                return self.finish(tree, resid, sigma2, rng, false);
            }
            let node = nogs[rng.gen_range(0..nogs.len())];
            let (var, _) = tree.rule(node.idx).expect("nog node splits");
            let (lo, hi) = node.cell[var];
            let nvars = available_vars(&node.cell);
            proposal.prune(node.idx);
            let growable_after = proposal
                .infos(self.dim)
                .iter()
                .filter(|i| i.is_leaf && available_vars(&i.cell) > 0)
                .count();
            let fwd = probs[1].ln() - (nogs.len() as f64).ln();
            let rev = self.move_probs(&proposal)[0].ln()
                - (growable_after as f64).ln()
                - (nvars as f64).ln()
                - ((hi - lo) as f64).ln();
            log_q = rev - fwd;
        } else if u < probs[0] + probs[1] + probs[2] {
            let internal: Vec<&NodeInfo> = infos.iter().filter(|i| !i.is_leaf).collect();
            if internal.is_empty() {
                return self.finish(tree, resid, sigma2, rng, false);
            }
            let node = internal[rng.gen_range(0..internal.len())];
            let vars: Vec<usize> = (0..self.dim).filter(|&k| node.cell[k].1 > node.cell[k].0).collect();
            let var = vars[rng.gen_range(0..vars.len())];
            let (lo, hi) = node.cell[var];
            proposal.set_rule(node.idx, (var, rng.gen_range(lo..hi)));
            log_q = 0.0;
        } else {
            let pairs: Vec<&NodeInfo> = infos
                .iter()
                .filter(|i| !i.is_leaf && i.parent.is_some())
                .collect();
            if pairs.is_empty() {
                return self.finish(tree, resid, sigma2, rng, false);
            }
            let child = pairs[rng.gen_range(0..pairs.len())];
            let parent = child.parent.expect("filtered on parent");
            let parent_rule = tree.rule(parent).expect("parent splits");
            let child_rule = tree.rule(child.idx).expect("child splits");
            let (l, r) = tree.children(parent).expect("parent splits");
            let sibling = if l == child.idx { r } else { l };
            proposal.set_rule(parent, child_rule);
            proposal.set_rule(child.idx, parent_rule);
            if tree.rule(sibling) == Some(child_rule) {
                proposal.set_rule(sibling, parent_rule);
            }
            log_q = 0.0;
        }

        let Some(new_prior) = proposal.log_prior(self.dim, self.opts.alpha, self.opts.beta) else {
            return self.finish(tree, resid, sigma2, rng, false);
        };
        let Some((new_ll, new_stats)) = self.log_likelihood(&proposal, resid, sigma2) else {
            return self.finish(tree, resid, sigma2, rng, false);
        };
        let (old_ll, old_stats) = self
            .log_likelihood(tree, resid, sigma2)
            .expect("current tree has no empty leaves");
        let log_ratio = new_prior + new_ll - *prior - old_ll + log_q;
        let accept = log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio;
        if accept {
            *tree = proposal;
            *prior = new_prior;
            self.draw_leaves(tree, &new_stats, sigma2, rng);
        } else {
            self.draw_leaves(tree, &old_stats, sigma2, rng);
        }
        accept
    }

    fn finish(&self, tree: &mut DecisionTree, resid: &[f64], sigma2: f64, rng: &mut ChaCha8Rng, accepted: bool) -> bool {
        let stats = self.leaf_stats(tree, resid);
        self.draw_leaves(tree, &stats, sigma2, rng);
        accepted
    }

    fn draw_leaves(&self, tree: &mut DecisionTree, stats: &LeafStats, sigma2: f64, rng: &mut ChaCha8Rng) {
        for (idx, node) in tree.nodes.iter_mut().enumerate() {
            if let Node::Leaf { mu } = node {
                let n = stats.count[idx] as f64;
                let var = 1.0 / (n / sigma2 + 1.0 / self.mu_var);
                let mean = var * stats.sum[idx] / sigma2;
                let z: f64 = rng.sample(StandardNormal);
                *mu = mean + var.sqrt() * z;
            }
        }
    }
}

fn is_nog(tree: &DecisionTree, idx: usize) -> bool {
    match tree.children(idx) {
        Some((l, r)) => tree.children(l).is_none() && tree.children(r).is_none(),
        None => false,
    }
}

fn count_nog(tree: &DecisionTree) -> usize {
    (0..tree.nodes.len()).filter(|&i| is_nog(tree, i)).count()
}

struct ChainOutput {
    draws: Vec<EnsembleDraw>,
    accepted: usize,
    proposed: usize,
}

fn run_chain(sampler: &Sampler, z: &[f64], lambda: f64, seed: u64, chain: u64) -> ChainOutput {
    let opts = sampler.opts;
    let n = z.len();
    let m = opts.trees;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);

    let mut trees = vec![DecisionTree::leaf(0.0); m];
    let root_prior = trees[0]
        .log_prior(sampler.dim, opts.alpha, opts.beta)
        .expect("single leaf is valid");
    let mut priors = vec![root_prior; m];
    let mut fits = vec![vec![0.0; n]; m];
    let mut total = vec![0.0; n];
    let mut sigma2 = {
        let sd = sample_sd(z).max(SD_FLOOR);
        sd * sd
    };
    let chi = ChiSquared::new(opts.nu + n as f64).expect("positive degrees of freedom");
    let mut resid = vec![0.0; n];
    let mut draws = Vec::with_capacity(opts.draws_per_chain());
    let (mut accepted, mut proposed) = (0, 0);

    for iter in 0..opts.iterations {
        for j in 0..m {
            for i in 0..n {
                resid[i] = z[i] - (total[i] - fits[j][i]);
            }
            if sampler.update_tree(&mut trees[j], &mut priors[j], &resid, sigma2, &mut rng) {
                accepted += 1;
            }
            proposed += 1;
            for i in 0..n {
                let new = trees[j].predict_bins(&sampler.bins[i]);
                total[i] += new - fits[j][i];
                fits[j][i] = new;
            }
        }
        let sse: f64 = z.iter().zip(&total).map(|(a, b)| (a - b) * (a - b)).sum();
        let x: f64 = chi.sample(&mut rng);
        sigma2 = (opts.nu * lambda + sse) / x;

        if iter >= opts.burn_in && (iter - opts.burn_in).is_multiple_of(opts.thin) {
            draws.push(EnsembleDraw::from_trees(&trees, sigma2.sqrt()));
        }
    }
    ChainOutput { draws, accepted, proposed }
}

/// Fits the sum-of-trees model. Deterministic given `opts.seed`; chains
/// run in parallel and their retained draws are pooled in chain order.
pub fn fit_bart(x: &Design, y: &[f64], opts: &BartOptions) -> Result<TreeEnsembleFit, BartError> {
    if x.n() != y.len() {
        return Err(BartError::SizeMismatch {
            design: x.n(),
            responses: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(BartError::TooFewPoints(y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) || x.rows().iter().flatten().any(|v| !v.is_finite()) {
        return Err(BartError::NonFinite);
    }
    opts.validate()?;

    let transform = DataTransform::min_max(y);
    let z: Vec<f64> = y.iter().map(|v| transform.forward(*v)).collect();
    let sd = sample_sd(&z).max(SD_FLOOR);
    let lambda = solve_sigma_prior_scale(opts.nu, opts.q, opts.sigma_anchor * sd);
    let mu_var = 1.0 / (4.0 * opts.k * opts.k * opts.trees as f64);
    let bins: Vec<Vec<u16>> = x.rows().iter().map(|r| bins_of(r)).collect();
    let sampler = Sampler {
        bins: &bins,
        dim: x.dim(),
        opts,
        mu_var,
    };

    let outputs: Vec<ChainOutput> = (0..opts.chains as u64)
        .into_par_iter()
        .map(|c| run_chain(&sampler, &z, lambda, opts.seed, c))
        .collect();
    let accepted: usize = outputs.iter().map(|o| o.accepted).sum();
    let proposed: usize = outputs.iter().map(|o| o.proposed).sum();
    let draws: Vec<EnsembleDraw> = outputs.into_iter().flat_map(|o| o.draws).collect();

    Ok(TreeEnsembleFit {
        dim: x.dim(),
        options: opts.clone(),
        hyper: BartHyper {
            k: opts.k,
            nu: opts.nu,
            q: opts.q,
            lambda,
            mu_var,
        },
        transform,
        draws,
        acceptance_rate: accepted as f64 / proposed.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_opts(seed: u64) -> BartOptions {
        BartOptions {
            trees: 50,
            iterations: 600,
            burn_in: 200,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn binning_agrees_with_cut_rule() {
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            let b = bin(x) as usize;
            for j in 0..NUM_CUTS {
                assert_eq!(x <= cutpoint(j), b <= j, "x={x} j={j}");
            }
        }
    }

    #[test]
    fn stump_prediction() {
        let t = DecisionTree::stump(0, 49, -1.0, 2.0);
        assert_eq!(t.predict(&[0.2]), -1.0);
        assert_eq!(t.predict(&[0.8]), 2.0);
        assert_eq!(t.predict(&[cutpoint(49)]), -1.0);
    }

    #[test]
    fn single_leaf_single_draw() {
        let draw = EnsembleDraw::from_trees(&[DecisionTree::leaf(0.7)], 0.1);
        let fit = TreeEnsembleFit::from_draws(2, vec![draw], DataTransform { shift: 0.0, scale: 1.0 });
        let p = fit.predict(&[0.3, 0.9]);
        assert_eq!(p.mean, 0.7);
        assert_eq!(p.q05, 0.7);
        assert_eq!(p.q95, 0.7);
    }

    #[test]
    fn identical_draws_collapse_quantiles() {
        let p = summarize_draws(vec![1.25; 40]);
        assert_eq!((p.mean, p.q05, p.q95), (1.25, 1.25, 1.25));
    }

    #[test]
    fn summary_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<f64> = (0..100).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let p = summarize_draws(draws.clone());
        let mut s = draws.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // (K - 1) * 0.05 = 4.95 and (K - 1) * 0.95 = 94.05
        let q05 = s[4] + 0.95 * (s[5] - s[4]);
        let q95 = s[94] + 0.05 * (s[95] - s[94]);
        let mean = draws.iter().sum::<f64>() / 100.0;
        assert!((p.mean - mean).abs() < 1e-12);
        assert!((p.q05 - q05).abs() < 1e-12);
        assert!((p.q95 - q95).abs() < 1e-12);
        assert!(p.q05 <= p.q95);
    }

    #[test]
    fn sigma_prior_anchor() {
        for sd in [0.05, 0.3, 2.0] {
            let lambda = solve_sigma_prior_scale(3.0, 0.9, 0.2 * sd);
            assert!((sigma_prior_cdf(0.2 * sd, 3.0, lambda) - 0.9).abs() < 1e-9);
        }
    }

    #[test]
    fn tree_prior_rejects_unavailable_rule() {
        // Right child of a split at cut 10 cannot split again at cut 5.
        let t = DecisionTree {
            nodes: vec![
                Node::Split { var: 0, cut: 10, left: 1, right: 2 },
                Node::Leaf { mu: 0.0 },
                Node::Split { var: 0, cut: 5, left: 3, right: 4 },
                Node::Leaf { mu: 0.0 },
                Node::Leaf { mu: 0.0 },
            ],
        };
        assert!(t.log_prior(1, 0.95, 2.0).is_none());
        let ok = DecisionTree::stump(0, 10, 0.0, 0.0);
        let lp = ok.log_prior(1, 0.95, 2.0).unwrap();
        let p1: f64 = 0.95 / 4.0;
        let want = 0.95f64.ln() - 100f64.ln() + (1.0 - p1).ln() + (1.0 - p1).ln();
        assert!((lp - want).abs() < 1e-12);
    }

    #[test]
    fn prune_compacts() {
        let mut t = DecisionTree::leaf(0.0);
        t.grow(0, 0, 50);
        t.grow(2, 0, 70);
        assert_eq!(t.nodes.len(), 5);
        t.prune(2);
        assert_eq!(t.nodes.len(), 3);
        assert_eq!(t.num_leaves(), 2);
    }

    #[test]
    fn constant_response() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 + 0.5) / 12.0]).collect();
        let c = 3.7;
        let fit = fit_bart(&Design::from_rows(rows), &[c; 12], &small_opts(1)).unwrap();
        for k in 0..100 {
            let p = fit.predict(&[k as f64 / 99.0]);
            assert!((p.mean - c).abs() <= 0.05 * (1.0 + c), "{}", p.mean);
        }
    }

    #[test]
    fn affine_transform_round_trip() {
        let rows: Vec<Vec<f64>> = (0..15).map(|i| vec![(i as f64 + 0.3) / 15.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (5.0 * r[0]).sin()).collect();
        // A power-of-two scale keeps the fitting-scale responses bitwise
        // identical; a general affine map perturbs them by rounding, which
        // can flip individual accept/reject decisions.
        let (a, b) = (4.0, 0.0);
        let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let x = Design::from_rows(rows);
        let f1 = fit_bart(&x, &y, &small_opts(3)).unwrap();
        let f2 = fit_bart(&x, &ya, &small_opts(3)).unwrap();
        for t in [0.1, 0.45, 0.9] {
            let p1 = f1.predict(&[t]).mean;
            let p2 = f2.predict(&[t]).mean;
            assert!((p2 - (a * p1 + b)).abs() < 1e-9, "{p1} {p2}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| (i as f64).sqrt()).collect();
        let x = Design::from_rows(rows);
        let a = fit_bart(&x, &y, &small_opts(5)).unwrap();
        let b = fit_bart(&x, &y, &small_opts(5)).unwrap();
        assert_eq!(a.draws(), b.draws());
        assert_eq!(a.num_draws(), 400);
        assert!(a.draws().iter().all(|d| d.sigma > 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        let x = Design::from_rows(vec![vec![0.5]]);
        assert!(matches!(fit_bart(&x, &[1.0], &small_opts(0)), Err(BartError::TooFewPoints(1))));
        let x = Design::from_rows(vec![vec![0.2], vec![0.6]]);
        assert!(matches!(fit_bart(&x, &[1.0, f64::NAN], &small_opts(0)), Err(BartError::NonFinite)));
    }
}
