//! Gradient-boosted regression trees for squared-error loss.
//!
//! Each round fits a CART regression tree to the current residuals with an
//! exact greedy search over midpoints between consecutive distinct feature
//! values, then adds the tree scaled by the learning rate. There is no row or
//! column subsampling, so fitting is fully deterministic.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Splits whose SSE reduction is below this fraction of the node's sum of
/// squared residuals are treated as zero-gain (absorbs rounding noise).
const RELATIVE_MIN_GAIN: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Rows with `x[feature] <= threshold`.
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
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
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 2,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::config("n_trees, max_depth and min_leaf must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::config("learning_rate must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n_features: usize,
    pub base_prediction: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeNode>,
}

impl Ensemble {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::domain(format!(
                "ensemble expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.base_prediction + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Row indices of a node sorted by each feature (ties by row index), plus
/// the rows in index order.
struct NodeRows {
    by_feature: Vec<Vec<u32>>,
    rows: Vec<u32>,
}

struct Presorted {
    by_feature: Vec<Vec<u32>>,
}

impl Presorted {
    fn new(x: &[Vec<f64>], n_features: usize) -> Self {
        let by_feature = (0..n_features)
            .map(|f| {
                let mut idx: Vec<u32> = (0..x.len() as u32).collect();
                idx.sort_by(|&a, &b| x[a as usize][f].total_cmp(&x[b as usize][f]));
                idx
            })
            .collect();
        Self { by_feature }
    }

    fn root(&self, n_rows: usize) -> NodeRows {
        NodeRows {
            by_feature: self.by_feature.clone(),
            rows: (0..n_rows as u32).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Midpoint of `lo < hi` that still separates them. Between adjacent floats
/// the rounded midpoint can equal `hi`; `lo` is used then.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

fn best_split(x: &[Vec<f64>], r: &[f64], node: &NodeRows, min_leaf: usize) -> Option<Split> {
    let n = node.rows.len();
    if n < 2 * min_leaf || n < 2 {
        return None;
    }
    let total: f64 = node.rows.iter().map(|&i| r[i as usize]).sum();
    let sum_sq: f64 = node.rows.iter().map(|&i| r[i as usize].powi(2)).sum();
    let parent = total * total / n as f64;
    let min_gain = RELATIVE_MIN_GAIN * sum_sq;
    let mut best: Option<Split> = None;

    for (f, sorted) in node.by_feature.iter().enumerate() {
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            let row = sorted[k] as usize;
            left_sum += r[row];
            let n_left = k + 1;
            let n_right = n - n_left;
            if n_left < min_leaf {
                continue;
            }
            if n_right < min_leaf {
                break;
            }
            let here = x[row][f];
            let next = x[sorted[k + 1] as usize][f];
            if !(here < next) {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64 - parent;
            if gain > min_gain && best.is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(here, next),
                    gain,
                });
            }
        }
    }
    best
}

fn partition(x: &[Vec<f64>], node: NodeRows, split: &Split) -> (NodeRows, NodeRows) {
    let goes_left = |i: u32| x[i as usize][split.feature] <= split.threshold;
    let split_list = |list: Vec<u32>| -> (Vec<u32>, Vec<u32>) { list.into_iter().partition(|&i| goes_left(i)) };
    let (rows_l, rows_r) = split_list(node.rows);
    let mut left = NodeRows {
        by_feature: Vec::with_capacity(node.by_feature.len()),
        rows: rows_l,
    };
    let mut right = NodeRows {
        by_feature: Vec::with_capacity(node.by_feature.len()),
        rows: rows_r,
    };
    for list in node.by_feature {
        let (l, r) = split_list(list);
        left.by_feature.push(l);
        right.by_feature.push(r);
    }
    (left, right)
}

fn leaf_value(r: &[f64], rows: &[u32]) -> f64 {
    rows.iter().map(|&i| r[i as usize]).sum::<f64>() / rows.len() as f64
}

fn grow(x: &[Vec<f64>], r: &[f64], node: NodeRows, depth: usize, max_depth: usize, min_leaf: usize) -> TreeNode {
    if depth >= max_depth {
        return TreeNode::Leaf {
            value: leaf_value(r, &node.rows),
        };
    }
    match best_split(x, r, &node, min_leaf) {
        None => TreeNode::Leaf {
            value: leaf_value(r, &node.rows),
        },
        Some(split) => {
            let (left, right) = partition(x, node, &split);
            TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: Box::new(grow(x, r, left, depth + 1, max_depth, min_leaf)),
                right: Box::new(grow(x, r, right, depth + 1, max_depth, min_leaf)),
            }
        }
    }
}

fn check_matrix(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::domain("no training rows"));
    }
    if x.len() != y.len() {
        return Err(Error::domain(format!("{} rows but {} targets", x.len(), y.len())));
    }
    let n_features = x[0].len();
    if n_features == 0 {
        return Err(Error::domain("rows have no features"));
    }
    for row in x {
        if row.len() != n_features {
            return Err(Error::domain("ragged feature matrix"));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite feature value"));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite target value"));
    }
    Ok(n_features)
}

/// Greedy regression tree on `residuals`.
pub fn fit_tree(x: &[Vec<f64>], residuals: &[f64], max_depth: usize, min_leaf: usize) -> Result<TreeNode> {
    let n_features = check_matrix(x, residuals)?;
    let pre = Presorted::new(x, n_features);
    Ok(grow(x, residuals, pre.root(x.len()), 0, max_depth, min_leaf.max(1)))
}

/// Boosts `params.n_trees` trees. Also returns the training MSE after each
/// round (entry 0 is the constant model).
pub fn fit_traced(x: &[Vec<f64>], y: &[f64], params: &GbtParams) -> Result<(Ensemble, Vec<f64>)> {
    params.validate()?;
    let n_features = check_matrix(x, y)?;
    let pre = Presorted::new(x, n_features);
    let n = y.len() as f64;
    let base = y.iter().sum::<f64>() / n;
    let mut fitted = vec![base; y.len()];
    let mut residuals: Vec<f64> = y.iter().map(|v| v - base).collect();
    let mut trace = vec![residuals.iter().map(|r| r * r).sum::<f64>() / n];
    let mut trees = Vec::with_capacity(params.n_trees);

    for _ in 0..params.n_trees {
        let tree = grow(x, &residuals, pre.root(x.len()), 0, params.max_depth, params.min_leaf);
        for (i, row) in x.iter().enumerate() {
            fitted[i] += params.learning_rate * tree.predict(row);
            residuals[i] = y[i] - fitted[i];
        }
        trace.push(residuals.iter().map(|r| r * r).sum::<f64>() / n);
        trees.push(tree);
    }
    Ok((
        Ensemble {
            n_features,
            base_prediction: base,
            learning_rate: params.learning_rate,
            trees,
        },
        trace,
    ))
}

pub fn fit(x: &[Vec<f64>], y: &[f64], params: &GbtParams) -> Result<Ensemble> {
    fit_traced(x, y, params).map(|(e, _)| e)
}
