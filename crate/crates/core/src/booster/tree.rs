use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BoosterError, HyperParams};
use crate::data::{Cell, FeatureMatrix};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode<T> {
    /// Rows with `value < threshold` go left; MISSING follows `default_left`.
    Split {
        feature: usize,
        threshold: T,
        default_left: bool,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: T,
    },
}

/// A regression tree stored as a node array with the root at index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    nodes: Vec<TreeNode<T>>,
}

impl<T: Scalar> Tree<T> {
    pub fn leaf(weight: T) -> Self {
        Tree {
            nodes: vec![TreeNode::Leaf { weight }],
        }
    }

    /// Builds a tree from a node array after checking its structure.
    pub fn from_nodes(nodes: Vec<TreeNode<T>>, n_features: usize) -> Result<Self, BoosterError> {
        let tree = Tree { nodes };
        tree.validate(n_features).map_err(BoosterError::CorruptModel)?;
        Ok(tree)
    }

    pub fn nodes(&self) -> &[TreeNode<T>] {
        &self.nodes
    }

    /// Every non-root node has exactly one parent that precedes it, thresholds
    /// and weights are finite, and features are in range.
    pub(crate) fn validate(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if feature >= n_features {
                        return Err(format!("node {i} splits on feature {feature} of {n_features}"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("node {i} has a non-finite threshold"));
                    }
                    for child in [left, right] {
                        if child <= i || child >= self.nodes.len() {
                            return Err(format!("node {i} has invalid child {child}"));
                        }
                        parents[child] += 1;
                    }
                }
                TreeNode::Leaf { weight } => {
                    if !weight.is_finite() {
                        return Err(format!("leaf {i} has a non-finite weight"));
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err("node array is not a tree".into());
        }
        Ok(())
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[Cell<T>]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    let go_left = match row[feature] {
                        Some(v) => v < threshold,
                        None => default_left,
                    };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    /// Leaf weight reached by `row`.
    pub fn predict_row(&self, row: &[Cell<T>]) -> T {
        match self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { weight } => weight,
            TreeNode::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[TreeNode<T>], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

/// Threshold placed between two consecutive distinct values `lo < hi`.
pub fn split_threshold<T: Scalar>(lo: T, hi: T) -> T {
    let two = T::of(2.0);
    let mid = lo / two + hi / two;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

/// Gain of splitting a node with totals (g, h) into a left part (gl, hl) and
/// the complement.
#[inline]
pub fn split_gain<T: Scalar>(g: T, h: T, gl: T, hl: T, lambda: T, gamma: T) -> T {
    let gr = g - gl;
    let hr = h - hl;
    T::of(0.5) * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma
}

/// Closed-form optimal leaf weight −G/(H+λ) (zero for an empty leaf).
#[inline]
pub fn leaf_weight<T: Scalar>(g: T, h: T, lambda: T) -> T {
    let denom = h + lambda;
    if denom == T::zero() {
        T::zero()
    } else {
        -g / denom
    }
}

/// Per-column row orderings reused across boosting rounds.
pub(crate) struct SortedColumns<T> {
    /// Present (value, row) pairs, ascending by value then row.
    present: Vec<Vec<(T, u32)>>,
    missing: Vec<Vec<u32>>,
}

impl<T: Scalar> SortedColumns<T> {
    pub(crate) fn new(matrix: &FeatureMatrix<T>) -> Self {
        let mut present = Vec::with_capacity(matrix.n_cols());
        let mut missing = Vec::with_capacity(matrix.n_cols());
        for c in 0..matrix.n_cols() {
            let mut rows: Vec<(T, u32)> = Vec::new();
            let mut miss = Vec::new();
            for (r, v) in matrix.column(c).enumerate() {
                match v {
                    Some(v) => rows.push((v, r as u32)),
                    None => miss.push(r as u32),
                }
            }
            rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite cells").then(a.1.cmp(&b.1)));
            present.push(rows);
            missing.push(miss);
        }
        SortedColumns { present, missing }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate<T> {
    gain: T,
    feature: usize,
    threshold: T,
    default_left: bool,
}

/// True when `gain` beats `best` by more than rounding. Two splits that
/// produce the same partition can differ in the last bits because their
/// child sums are accumulated in different orders; they count as tied so the
/// earlier feature and threshold keep the split.
fn beats<T: Scalar>(gain: T, best: T, node: &NodeStats<T>, lambda: T) -> bool {
    let scale = (node.g * node.g / (node.h + lambda)).abs() + best.abs();
    gain - best > T::epsilon() * T::of(16.0) * scale
}

#[derive(Clone, Copy)]
struct NodeStats<T> {
    g: T,
    h: T,
    count: usize,
    depth: usize,
}

const NO_NODE: u32 = u32::MAX;

/// Grows one tree by exact greedy search.
///
/// At every node each unmasked feature is scanned in sorted order and every
/// threshold between consecutive distinct present values is scored with
/// [`split_gain`]; rows missing the feature are tried on the left and then on
/// the right, and the better side becomes the default direction. A node is
/// split only if the best gain is positive, both children carry at least
/// `min_child_weight` curvature and its depth is below `max_depth`. Ties keep
/// the lowest feature index, then the lowest threshold, then missing-left.
/// `grad`/`hess` may carry row multiplicities (bootstrap weights).
pub fn grow_tree<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    grad: &[T],
    hess: &[T],
    row_mask: &[bool],
    col_mask: &[bool],
    params: &HyperParams,
) -> Result<Tree<T>, BoosterError> {
    let n = matrix.n_rows();
    if grad.len() != n || hess.len() != n || row_mask.len() != n {
        return Err(BoosterError::DimensionMismatch(format!(
            "{n} rows but {} gradients, {} curvatures, {} mask entries",
            grad.len(),
            hess.len(),
            row_mask.len()
        )));
    }
    if col_mask.len() != matrix.n_cols() {
        return Err(BoosterError::DimensionMismatch(format!(
            "{} columns but {} column mask entries",
            matrix.n_cols(),
            col_mask.len()
        )));
    }
    let sorted = SortedColumns::new(matrix);
    Ok(grow_presorted(matrix, &sorted, grad, hess, row_mask, col_mask, params))
}

pub(crate) fn grow_presorted<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    sorted: &SortedColumns<T>,
    grad: &[T],
    hess: &[T],
    row_mask: &[bool],
    col_mask: &[bool],
    params: &HyperParams,
) -> Tree<T> {
    let n = matrix.n_rows();
    let lambda = T::of(params.reg_lambda);
    let gamma = T::of(params.gamma);
    let min_child = T::of(params.min_child_weight);

    let mut node_of_row: Vec<u32> = row_mask.iter().map(|&m| if m { 0 } else { NO_NODE }).collect();
    let mut root = NodeStats {
        g: T::zero(),
        h: T::zero(),
        count: 0,
        depth: 0,
    };
    for r in (0..n).filter(|&r| row_mask[r]) {
        root.g += grad[r];
        root.h += hess[r];
        root.count += 1;
    }
    let mut stats = vec![root];
    let mut nodes = vec![TreeNode::Leaf { weight: T::zero() }];
    let mut frontier: Vec<usize> = if root.count >= 2 && params.max_depth > 0 { vec![0] } else { vec![] };
    let features: Vec<usize> = (0..matrix.n_cols()).filter(|&c| col_mask[c]).collect();

    while !frontier.is_empty() {
        let mut slot_of = vec![NO_NODE; nodes.len()];
        for (s, &id) in frontier.iter().enumerate() {
            slot_of[id] = s as u32;
        }
        let row_slot: Vec<u32> = node_of_row
            .iter()
            .map(|&id| if id == NO_NODE { NO_NODE } else { slot_of.get(id as usize).copied().unwrap_or(NO_NODE) })
            .collect();
        let scan = |f: usize| -> Vec<Option<Candidate<T>>> {
            scan_feature(sorted, f, grad, hess, &row_slot, &frontier, &stats, lambda, gamma, min_child)
        };
        let active: usize = frontier.iter().map(|&id| stats[id].count).sum();
        let per_feature: Vec<Vec<Option<Candidate<T>>>> = if features.len() * active > 32_768 {
            features.par_iter().map(|&f| scan(f)).collect()
        } else {
            features.iter().map(|&f| scan(f)).collect()
        };

        // Reduce in feature order so the result does not depend on scheduling.
        let mut best: Vec<Option<Candidate<T>>> = vec![None; frontier.len()];
        for candidates in per_feature {
            for (slot, cand) in candidates.into_iter().enumerate() {
                if let Some(c) = cand {
                    if best[slot].is_none_or(|b| beats(c.gain, b.gain, &stats[frontier[slot]], lambda)) {
                        best[slot] = Some(c);
                    }
                }
            }
        }

        // (feature, threshold, default_left, left child id) per frontier slot
        let mut split_of_slot: Vec<Option<(usize, T, bool, usize)>> = vec![None; frontier.len()];
        for (slot, &id) in frontier.iter().enumerate() {
            let Some(c) = best[slot] else { continue };
            if !(c.gain > T::zero()) {
                continue;
            }
            let left = nodes.len();
            let depth = stats[id].depth + 1;
            for _ in 0..2 {
                nodes.push(TreeNode::Leaf { weight: T::zero() });
                stats.push(NodeStats {
                    g: T::zero(),
                    h: T::zero(),
                    count: 0,
                    depth,
                });
            }
            nodes[id] = TreeNode::Split {
                feature: c.feature,
                threshold: c.threshold,
                default_left: c.default_left,
                left,
                right: left + 1,
            };
            split_of_slot[slot] = Some((c.feature, c.threshold, c.default_left, left));
        }

        // Route rows in ascending order; child totals are direct row-order sums.
        for r in 0..n {
            let id = node_of_row[r];
            if id == NO_NODE {
                continue;
            }
            let slot = slot_of.get(id as usize).copied().unwrap_or(NO_NODE);
            if slot == NO_NODE {
                continue;
            }
            let Some((feature, threshold, default_left, left)) = split_of_slot[slot as usize] else {
                continue;
            };
            let go_left = match matrix.get(r, feature) {
                Some(v) => v < threshold,
                None => default_left,
            };
            let child = if go_left { left } else { left + 1 };
            node_of_row[r] = child as u32;
            let st = &mut stats[child];
            st.g += grad[r];
            st.h += hess[r];
            st.count += 1;
        }

        frontier = split_of_slot
            .iter()
            .flatten()
            .flat_map(|&(_, _, _, left)| [left, left + 1])
            .filter(|&c| stats[c].count >= 2 && stats[c].depth < params.max_depth)
            .collect();
    }

    for (id, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { weight } = node {
            *weight = leaf_weight(stats[id].g, stats[id].h, lambda);
        }
    }
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn scan_feature<T: Scalar>(
    sorted: &SortedColumns<T>,
    feature: usize,
    grad: &[T],
    hess: &[T],
    row_slot: &[u32],
    frontier: &[usize],
    stats: &[NodeStats<T>],
    lambda: T,
    gamma: T,
    min_child: T,
) -> Vec<Option<Candidate<T>>> {
    let slots = frontier.len();
    let slot = |r: u32| -> Option<usize> {
        let s = row_slot[r as usize];
        (s != NO_NODE).then_some(s as usize)
    };

    let mut gm = vec![T::zero(); slots];
    let mut hm = vec![T::zero(); slots];
    let mut has_missing = vec![false; slots];
    for &r in &sorted.missing[feature] {
        if let Some(s) = slot(r) {
            gm[s] += grad[r as usize];
            hm[s] += hess[r as usize];
            has_missing[s] = true;
        }
    }

    let mut gl = vec![T::zero(); slots];
    let mut hl = vec![T::zero(); slots];
    let mut last: Vec<Option<T>> = vec![None; slots];
    let mut best: Vec<Option<Candidate<T>>> = vec![None; slots];

    for &(v, r) in &sorted.present[feature] {
        let Some(s) = slot(r) else { continue };
        if let Some(lo) = last[s] {
            if v > lo {
                let node = &stats[frontier[s]];
                let threshold = split_threshold(lo, v);
                let mut consider = |left_g: T, left_h: T, default_left: bool| {
                    let right_h = node.h - left_h;
                    if left_h < min_child || right_h < min_child {
                        return;
                    }
                    let gain = split_gain(node.g, node.h, left_g, left_h, lambda, gamma);
                    if best[s].is_none_or(|b| beats(gain, b.gain, node, lambda)) {
                        best[s] = Some(Candidate {
                            gain,
                            feature,
                            threshold,
                            default_left,
                        });
                    }
                };
                consider(gl[s] + gm[s], hl[s] + hm[s], true);
                if has_missing[s] {
                    consider(gl[s], hl[s], false);
                }
            }
        }
        gl[s] += grad[r as usize];
        hl[s] += hess[r as usize];
        last[s] = Some(v);
    }
    best
}
