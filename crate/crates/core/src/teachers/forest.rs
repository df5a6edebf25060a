//! CART regression trees and a bagged forest of them.
//!
//! Splits minimise the summed squared error of the two children, searching
//! every feature and every midpoint between consecutive distinct values.
//! Nodes split until they are pure, cannot be split, or reach `max_depth`.

use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 1000,
            max_depth: 25,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature, left, right, ..
            } => Some(*feature).max(left.max_feature()).max(right.max_feature()),
        }
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
    max_depth: usize,
}

impl Builder<'_> {
    fn build(&self, rows: &mut [usize], depth: usize) -> TreeNode {
        let leaf = || TreeNode::Leaf {
            value: mean_within_range(rows.iter().map(|&r| self.y[r])),
        };
        let first = self.y[rows[0]];
        if depth >= self.max_depth || rows.len() < 2 || rows.iter().all(|&r| self.y[r] == first) {
            return leaf();
        }
        let Some((feature, threshold)) = self.best_split(rows) else {
            return leaf();
        };
        let mut split_at = 0;
        for i in 0..rows.len() {
            if self.x[[rows[i], feature]] <= threshold {
                rows.swap(i, split_at);
                split_at += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split_at);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(self.build(l, depth + 1)),
            right: Box::new(self.build(r, depth + 1)),
        }
    }

    /// Maximises `S_l^2 / n_l + S_r^2 / n_r`, which is equivalent to
    /// minimising the children's summed squared error.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for f in 0..self.x.ncols() {
            order.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]));
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += self.y[order[i]];
                let (lo, hi) = (self.x[[order[i], f]], self.x[[order[i + 1], f]]);
                if lo == hi {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = (n - i - 1) as f64;
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    let mut threshold = 0.5 * (lo + hi);
                    if !(threshold < hi) {
                        threshold = lo;
                    }
                    best = Some((gain, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Mean of the values, kept inside their min/max despite rounding.
fn mean_within_range(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        sum += v;
        n += 1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (sum / n as f64).clamp(lo, hi)
}

/// Fits one tree on the given rows (duplicates allowed, as in a bootstrap
/// sample).
pub fn fit_tree(x: ArrayView2<f64>, y: ArrayView1<f64>, rows: &[usize], max_depth: usize) -> Result<TreeNode> {
    if rows.is_empty() {
        return Err(Error::Empty("tree training rows"));
    }
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    let mut rows = rows.to_vec();
    Ok(Builder { x, y, max_depth }.build(&mut rows, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

fn tree_seed(master: u64, tree: usize) -> u64 {
    master ^ (tree as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Bagged CART forest using every feature at every split.
pub fn train_rf(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &ForestConfig) -> Result<ForestModel> {
    if cfg.n_trees == 0 || cfg.max_depth == 0 {
        return Err(Error::Config("rf.n_trees and rf.max_depth must be positive".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewRows { min: 2, found: n });
    }
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let rows: Vec<usize> = if cfg.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(cfg.seed, t));
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(x, y, &rows, cfg.max_depth)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        n_features: x.ncols(),
        trees,
    })
}

impl ForestModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        Ok(x
            .axis_iter(Axis(0))
            .map(|row| mean_within_range(self.trees.iter().map(|t| t.predict_row(row))))
            .collect())
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Empty("forest"));
        }
        if let Some(f) = self.trees.iter().filter_map(TreeNode::max_feature).max() {
            if f >= self.n_features {
                return Err(Error::DimensionMismatch {
                    expected: self.n_features,
                    found: f + 1,
                });
            }
        }
        Ok(())
    }
}
