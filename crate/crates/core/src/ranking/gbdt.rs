//! Gradient-boosted regression trees trained on a pairwise logistic ranking loss.
//!
//! Each boosting round computes, for every ordered pair `(better, worse)` in a
//! group, `ρ = σ(s_worse - s_better)`; the better item receives gradient `-ρ`,
//! the worse `+ρ`, and both receive hessian `ρ(1-ρ)`. Trees are grown greedily
//! with second-order gain and L2-regularized leaf weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub min_split_gain: f64,
    /// When set, every tree's root splits on this feature. Items that differ
    /// only in this feature then get separate subtrees, which lets greedy
    /// growth find interactions whose marginal gain is zero.
    pub forced_root_feature: Option<usize>,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_estimators: 300,
            learning_rate: 0.001,
            max_depth: 6,
            min_child_weight: 1.0,
            lambda: 1.0,
            min_split_gain: 1e-12,
            forced_root_feature: None,
        }
    }
}

/// Items to rank, grouped; within a group lower cost ranks higher.
#[derive(Debug, Clone, Default)]
pub struct RankingSet {
    pub rows: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub groups: Vec<Vec<usize>>,
}

impl RankingSet {
    pub fn push_group(&mut self, items: impl IntoIterator<Item = (Vec<f64>, f64)>) {
        let mut ids = Vec::new();
        for (row, cost) in items {
            ids.push(self.rows.len());
            self.rows.push(row);
            self.costs.push(cost);
        }
        self.groups.push(ids);
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for g in &self.groups {
            for &a in g {
                for &b in g {
                    if self.costs[a] < self.costs[b] {
                        out.push((a, b));
                    }
                }
            }
        }
        out
    }
}

/// A regression tree stored as parallel node arrays. `feature[i] < 0` marks a
/// leaf; otherwise `x[feature] < threshold` goes to `left`, else `right`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
    pub gain: Vec<f64>,
}

impl Tree {
    fn empty() -> Self {
        Self {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
            gain: Vec::new(),
        }
    }

    fn push(&mut self, feature: i32, threshold: f64, value: f64, gain: f64) -> usize {
        self.feature.push(feature);
        self.threshold.push(threshold);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.gain.push(gain);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            let f = self.feature[node];
            if f < 0 {
                return self.value[node];
            }
            node = if x[f as usize] < self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        let n = self.feature.len();
        let lens = [
            self.threshold.len(),
            self.left.len(),
            self.right.len(),
            self.value.len(),
            self.gain.len(),
        ];
        if n == 0 || lens.iter().any(|&l| l != n) {
            return Err(Error::Config("tree arrays have inconsistent lengths".into()));
        }
        for i in 0..n {
            let f = self.feature[i];
            if f >= 0 {
                let (l, r) = (self.left[i] as usize, self.right[i] as usize);
                if f as usize >= n_features || l <= i || r <= i || l >= n || r >= n {
                    return Err(Error::Config(format!("malformed split node {i}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

struct Grower<'a> {
    rows: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a BoostParams,
    n_features: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Grower<'_> {
    fn grow(&self, items: Vec<usize>) -> Tree {
        let mut tree = Tree::empty();
        self.grow_node(&mut tree, items, 0);
        tree
    }

    fn grow_node(&self, tree: &mut Tree, items: Vec<usize>, depth: usize) -> usize {
        let (g, h) = self.sums(&items);
        let lambda = self.params.lambda;
        let split = if depth < self.params.max_depth && items.len() >= 2 {
            match (depth, self.params.forced_root_feature) {
                (0, Some(f)) => self
                    .best_split(&items, f, g, h, true)
                    .or_else(|| self.best_split_any(&items, g, h)),
                _ => self.best_split_any(&items, g, h),
            }
        } else {
            None
        };
        match split {
            None => tree.push(-1, 0.0, -g / (h + lambda) * self.params.learning_rate, 0.0),
            Some(s) => {
                let id = tree.push(s.feature as i32, s.threshold, 0.0, s.gain);
                let l = self.grow_node(tree, s.left, depth + 1);
                let r = self.grow_node(tree, s.right, depth + 1);
                tree.left[id] = l as u32;
                tree.right[id] = r as u32;
                id
            }
        }
    }

    fn sums(&self, items: &[usize]) -> (f64, f64) {
        items
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]))
    }

    fn best_split_any(&self, items: &[usize], g: f64, h: f64) -> Option<Split> {
        let mut best: Option<Split> = None;
        for f in 0..self.n_features {
            if let Some(s) = self.best_split(items, f, g, h, false) {
                if best.as_ref().map_or(true, |b| s.gain > b.gain) {
                    best = Some(s);
                }
            }
        }
        best.filter(|s| s.gain > self.params.min_split_gain)
    }

    /// Best threshold on feature `f`. `forced` ignores the child-weight floor.
    fn best_split(&self, items: &[usize], f: usize, g: f64, h: f64, forced: bool) -> Option<Split> {
        let lambda = self.params.lambda;
        let mut order = items.to_vec();
        order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]).then(a.cmp(&b)));
        let parent = g * g / (h + lambda);
        let (mut gl, mut hl) = (0.0, 0.0);
        let mut best: Option<(usize, f64)> = None;
        for p in 0..order.len() - 1 {
            gl += self.grad[order[p]];
            hl += self.hess[order[p]];
            let (lo, hi) = (self.rows[order[p]][f], self.rows[order[p + 1]][f]);
            if lo >= hi {
                continue;
            }
            let (gr, hr) = (g - gl, h - hl);
            if !forced && (hl < self.params.min_child_weight || hr < self.params.min_child_weight) {
                continue;
            }
            let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
            if best.map_or(true, |(_, b)| gain > b) {
                best = Some((p, gain));
            }
        }
        let (p, gain) = best?;
        let (lo, hi) = (self.rows[order[p]][f], self.rows[order[p + 1]][f]);
        let mut threshold = lo + (hi - lo) / 2.0;
        if !(lo < threshold && threshold <= hi) {
            threshold = hi;
        }
        let right = order.split_off(p + 1);
        Some(Split {
            feature: f,
            threshold,
            gain: gain.max(0.0),
            left: order,
            right,
        })
    }
}

impl Ensemble {
    pub fn fit(set: &RankingSet, params: &BoostParams) -> Result<Self> {
        let n_features = set.rows.first().map_or(0, Vec::len);
        if set.rows.iter().any(|r| r.len() != n_features) {
            return Err(Error::Schema {
                expected: format!("{n_features} features per row"),
                got: "ragged rows".into(),
            });
        }
        if set.rows.iter().flatten().chain(&set.costs).any(|v| !v.is_finite()) {
            return Err(Error::Config("training data contains non-finite values".into()));
        }
        if let Some(f) = params.forced_root_feature.filter(|&f| f >= n_features) {
            return Err(Error::Config(format!("forced root feature {f} out of range")));
        }
        let pairs = set.pairs();
        let items: Vec<usize> = set.groups.iter().flatten().copied().collect();
        let n = set.rows.len();
        let mut scores = vec![0.0f64; n];
        let mut trees = Vec::with_capacity(params.n_estimators);
        let mut grad = vec![0.0f64; n];
        let mut hess = vec![0.0f64; n];
        for _ in 0..params.n_estimators {
            grad.iter_mut().for_each(|g| *g = 0.0);
            hess.iter_mut().for_each(|h| *h = 0.0);
            for &(better, worse) in &pairs {
                let rho = 1.0 / (1.0 + (scores[better] - scores[worse]).exp());
                let w = (rho * (1.0 - rho)).max(1e-16);
                grad[better] -= rho;
                grad[worse] += rho;
                hess[better] += w;
                hess[worse] += w;
            }
            let tree = Grower {
                rows: &set.rows,
                grad: &grad,
                hess: &hess,
                params,
                n_features,
            }
            .grow(items.clone());
            for &i in &items {
                scores[i] += tree.predict(&set.rows[i]);
            }
            trees.push(tree);
        }
        Ok(Self { n_features, trees })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum()
    }

    /// Total split gain attributed to each feature.
    pub fn gain_by_feature(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        for t in &self.trees {
            for (i, &f) in t.feature.iter().enumerate() {
                if f >= 0 {
                    out[f as usize] += t.gain[i];
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.trees.iter().try_for_each(|t| t.validate(self.n_features))
    }
}
