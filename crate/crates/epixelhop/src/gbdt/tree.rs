//! Regression trees with axis-aligned, histogram-quantized splits and
//! second-order leaf weights.

use rayon::prelude::*;

use super::binning::Binner;

/// One tree node. Interior nodes route by `x[feature] <= threshold`
/// (equivalently `bin <= split_bin` on quantized rows); leaves carry the
/// additive log-odds contribution, learning rate already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub feature: u32,
    pub threshold: f64,
    pub split_bin: u8,
    /// Index of the left child; -1 marks a leaf.
    pub left: i32,
    pub right: i32,
    pub value: f64,
}

impl TreeNode {
    fn leaf(value: f64) -> TreeNode {
        TreeNode {
            feature: 0,
            threshold: 0.0,
            split_bin: 0,
            left: -1,
            right: -1,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.left < 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            let node = &self.nodes[idx];
            if node.is_leaf() {
                return node.value;
            }
            idx = if row[node.feature as usize] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    /// Same routing on a quantized row; used while boosting.
    pub(crate) fn predict_binned(&self, bins: &[u8]) -> f64 {
        let mut idx = 0usize;
        loop {
            let node = &self.nodes[idx];
            if node.is_leaf() {
                return node.value;
            }
            idx = if bins[node.feature as usize] <= node.split_bin {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], idx: usize) -> usize {
            let n = &nodes[idx];
            if n.is_leaf() {
                0
            } else {
                1 + walk(nodes, n.left as usize).max(walk(nodes, n.right as usize))
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub learning_rate: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Default)]
struct BinStats {
    grad: f64,
    hess: f64,
    count: u32,
}

struct Candidate {
    gain: f64,
    feature: usize,
    bin: u8,
}

/// Best split of one feature's histogram, or None when no valid split exists.
fn best_feature_split(
    hist: &[BinStats],
    cuts_len: usize,
    total: BinStats,
    min_leaf: usize,
    lambda: f64,
    parent_obj: f64,
) -> Option<(f64, u8)> {
    let mut left = BinStats::default();
    let mut best: Option<(f64, u8)> = None;
    for (b, s) in hist.iter().enumerate().take(cuts_len) {
        left.grad += s.grad;
        left.hess += s.hess;
        left.count += s.count;
        let right_count = total.count - left.count;
        if (left.count as usize) < min_leaf || (right_count as usize) < min_leaf {
            continue;
        }
        let rg = total.grad - left.grad;
        let rh = total.hess - left.hess;
        let gain =
            left.grad * left.grad / (left.hess + lambda) + rg * rg / (rh + lambda) - parent_obj;
        if gain > 1e-12 && best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, b as u8));
        }
    }
    best
}

/// Grow one tree, breadth-first, on the given row subset.
pub(crate) fn grow_tree(
    binned: &[u8],
    width: usize,
    binner: &Binner,
    rows: Vec<u32>,
    grad: &[f64],
    hess: &[f64],
    params: &GrowParams,
) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    // (node index, depth, rows)
    let mut queue: Vec<(usize, usize, Vec<u32>)> = Vec::new();
    tree.nodes.push(TreeNode::leaf(0.0));
    queue.push((0, 0, rows));

    while let Some((node_idx, depth, node_rows)) = queue.pop() {
        let mut total = BinStats::default();
        for &r in &node_rows {
            total.grad += grad[r as usize];
            total.hess += hess[r as usize];
            total.count += 1;
        }
        let leaf_value = |t: &BinStats| -params.learning_rate * t.grad / (t.hess + params.lambda);

        if depth >= params.max_depth || (total.count as usize) < 2 * params.min_leaf {
            tree.nodes[node_idx] = TreeNode::leaf(leaf_value(&total));
            continue;
        }

        // Histograms per feature over this node's rows, features in parallel.
        let parent_obj = total.grad * total.grad / (total.hess + params.lambda);
        let candidate: Option<Candidate> = (0..width)
            .into_par_iter()
            .map(|f| {
                let cuts_len = binner.cuts[f].len();
                if cuts_len == 0 {
                    return None;
                }
                let mut hist = [BinStats::default(); 256];
                for &r in &node_rows {
                    let b = binned[r as usize * width + f] as usize;
                    let s = &mut hist[b];
                    s.grad += grad[r as usize];
                    s.hess += hess[r as usize];
                    s.count += 1;
                }
                best_feature_split(
                    &hist,
                    cuts_len,
                    total,
                    params.min_leaf,
                    params.lambda,
                    parent_obj,
                )
                .map(|(gain, bin)| Candidate {
                    gain,
                    feature: f,
                    bin,
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            // Deterministic arg-max: strict improvement, features in order.
            .fold(None, |best: Option<Candidate>, c| match best {
                Some(b) if b.gain >= c.gain => Some(b),
                _ => Some(c),
            });

        let Some(cand) = candidate else {
            tree.nodes[node_idx] = TreeNode::leaf(leaf_value(&total));
            continue;
        };

        let mut left_rows = Vec::with_capacity(node_rows.len() / 2);
        let mut right_rows = Vec::with_capacity(node_rows.len() / 2);
        for &r in &node_rows {
            if binned[r as usize * width + cand.feature] <= cand.bin {
                left_rows.push(r);
            } else {
                right_rows.push(r);
            }
        }

        let left_idx = tree.nodes.len();
        tree.nodes.push(TreeNode::leaf(0.0));
        let right_idx = tree.nodes.len();
        tree.nodes.push(TreeNode::leaf(0.0));
        tree.nodes[node_idx] = TreeNode {
            feature: cand.feature as u32,
            threshold: binner.cuts[cand.feature][cand.bin as usize],
            split_bin: cand.bin,
            left: left_idx as i32,
            right: right_idx as i32,
            value: 0.0,
        };
        queue.push((right_idx, depth + 1, right_rows));
        queue.push((left_idx, depth + 1, left_rows));
    }
    tree
}
