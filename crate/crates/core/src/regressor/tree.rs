use serde::{Deserialize, Serialize};

/// Binary regression tree stored as flat arrays. Node 0 is the root.
/// `feature[i] < 0` marks a leaf whose output is `value[i]`; otherwise rows
/// with `x[feature] <= threshold` go to `left[i]`, the rest to `right[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
    /// Squared-error reduction achieved by each split (0 at leaves).
    pub gain: Vec<f64>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        let mut t = Tree::empty();
        t.push_leaf(value);
        t
    }

    fn empty() -> Self {
        Tree {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
            gain: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.feature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature.is_empty()
    }

    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.gain.push(0.0);
        self.len() - 1
    }

    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let f = self.feature[i];
            if f < 0 {
                return self.value[i];
            }
            i = if x[f as usize] <= self.threshold[i] {
                self.left[i] as usize
            } else {
                self.right[i] as usize
            };
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.feature.iter().filter(|&&f| f >= 0).map(|&f| f as usize).max()
    }

    /// Structural check used when loading artifacts.
    pub fn is_well_formed(&self, arity: usize) -> bool {
        let n = self.len();
        n > 0
            && [self.threshold.len(), self.left.len(), self.right.len(), self.value.len(), self.gain.len()]
                .iter()
                .all(|&l| l == n)
            && (0..n).all(|i| {
                let f = self.feature[i];
                f < 0
                    || ((f as usize) < arity
                        && (self.left[i] as usize) > i
                        && (self.left[i] as usize) < n
                        && (self.right[i] as usize) > i
                        && (self.right[i] as usize) < n)
            })
    }
}

pub(crate) struct SplitParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Sum in a canonical order so results do not depend on row order.
fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

/// Fits one squared-error tree to `target` over the rows in `rows`.
pub(crate) fn grow(x: &[Vec<f64>], target: &[f64], rows: &[usize], p: &SplitParams) -> Tree {
    let mut tree = Tree::empty();
    let mut rows = rows.to_vec();
    grow_node(&mut tree, x, target, &mut rows, 0, p);
    tree
}

fn grow_node(
    tree: &mut Tree,
    x: &[Vec<f64>],
    target: &[f64],
    rows: &mut [usize],
    depth: usize,
    p: &SplitParams,
) -> usize {
    let mut r: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
    let mean = canonical_sum(&mut r) / rows.len() as f64;
    let split = if depth < p.max_depth && rows.len() >= 2 * p.min_samples_leaf.max(1) {
        best_split(x, target, rows, p.min_samples_leaf.max(1))
    } else {
        None
    };
    let Some(split) = split else {
        return tree.push_leaf(mean);
    };
    let node = tree.push_leaf(mean);
    tree.feature[node] = split.feature as i32;
    tree.threshold[node] = split.threshold;
    tree.gain[node] = split.gain;
    tree.value[node] = 0.0;

    let mid = partition(rows, |&i| x[i][split.feature] <= split.threshold);
    let (l, rr) = rows.split_at_mut(mid);
    let left = grow_node(tree, x, target, l, depth + 1, p);
    let right = grow_node(tree, x, target, rr, depth + 1, p);
    tree.left[node] = left as u32;
    tree.right[node] = right as u32;
    node
}

/// Stable in-place partition; returns the count of rows satisfying `pred`.
fn partition(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let (mut yes, no): (Vec<usize>, Vec<usize>) = rows.iter().partition(|i| pred(i));
    let mid = yes.len();
    yes.extend(no);
    rows.copy_from_slice(&yes);
    mid
}

/// Exhaustive search over every feature and every gap between consecutive
/// distinct values. Candidates are scanned in (feature, threshold) order and
/// only a strictly larger gain replaces the incumbent.
fn best_split(x: &[Vec<f64>], target: &[f64], rows: &[usize], min_leaf: usize) -> Option<Split> {
    let n = rows.len();
    let arity = x[rows[0]].len();
    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for f in 0..arity {
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (x[i][f], target[i])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if pairs[0].0 == pairs[n - 1].0 {
            continue;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let parent = total * total / n as f64;
        let mut left_sum = 0.0;
        for k in 1..n {
            left_sum += pairs[k - 1].1;
            if pairs[k].0 == pairs[k - 1].0 || k < min_leaf || n - k < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64 - parent;
            if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                let (a, b) = (pairs[k - 1].0, pairs[k].0);
                let mut threshold = a + (b - a) / 2.0;
                if !(threshold < b) {
                    threshold = a;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}
