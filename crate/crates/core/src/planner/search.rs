use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};

use super::grid::{neighbors_into, Constraints, GridSpec, Resolved};
use super::{NodeOracle, NodeValue, PlanError};

#[derive(Debug, Clone, Copy)]
struct Label {
    cost: f64,
    pred: Option<u64>,
    visited: bool,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    cost: f64,
    seq: u64,
    key: u64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // reversed so that BinaryHeap pops the smallest (cost, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Node evaluations cached for one search.
pub(crate) struct Memo<'a> {
    grid: &'a GridSpec,
    oracle: &'a dyn NodeOracle,
    values: HashMap<u64, NodeValue>,
    pub weight_floor: bool,
    pub negative_weights: usize,
}

impl<'a> Memo<'a> {
    pub fn new(grid: &'a GridSpec, oracle: &'a dyn NodeOracle, weight_floor: bool) -> Self {
        Self {
            grid,
            oracle,
            values: HashMap::new(),
            weight_floor,
            negative_weights: 0,
        }
    }

    pub fn value(&mut self, offsets: &[i32]) -> Result<NodeValue, PlanError> {
        let key = self.grid.key(offsets);
        if let Some(v) = self.values.get(&key) {
            return Ok(*v);
        }
        let v = self.oracle.evaluate(self.grid, offsets)?;
        if !v.prediction.is_finite() || !v.log_density.is_finite() {
            return Err(PlanError::NonFinite(offsets.to_vec()));
        }
        if v.log_density > 0.0 {
            self.negative_weights += 1;
        }
        self.values.insert(key, v);
        Ok(v)
    }

    /// Edge weight of entering a node: its negative log-density.
    pub fn weight(&self, v: &NodeValue) -> f64 {
        let w = -v.log_density;
        if self.weight_floor {
            w.max(0.0)
        } else {
            w
        }
    }

    pub fn evaluated(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Nodes from the origin to the destination.
    pub path: Vec<Vec<i32>>,
    pub cost: f64,
    pub settled: usize,
    pub exhausted: bool,
    pub target_reached: bool,
}

fn decode(grid: &GridSpec, mut key: u64) -> Vec<i32> {
    let d = grid.dims();
    let mut out = vec![0; d];
    for j in (0..d).rev() {
        let w = (grid.hi[j] - grid.lo[j] + 1) as u64;
        out[j] = (key % w) as i32 + grid.lo[j];
        key /= w;
    }
    out
}

/// Label-setting search from the origin. Each of the `l` iterations relaxes
/// the neighbors of the current node, marks it visited and moves to the
/// cheapest unvisited labeled node (earliest insertion on ties). The
/// destination is the settled node with the best prediction, the cheaper one
/// on equal predictions.
pub(crate) fn run(
    grid: &GridSpec,
    memo: &mut Memo<'_>,
    l: usize,
    constraints: &Constraints,
    cancel: Option<&AtomicBool>,
) -> Result<SearchOutcome, PlanError> {
    let rules = Resolved::new(grid, constraints)?;
    let origin = vec![0; grid.dims()];
    let origin_key = grid.key(&origin);
    let origin_value = memo.value(&origin)?;

    let mut labels: HashMap<u64, Label> = HashMap::new();
    labels.insert(
        origin_key,
        Label {
            cost: 0.0,
            pred: None,
            visited: false,
        },
    );
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut settled: Vec<(u64, f64)> = Vec::new();
    let mut exhausted = false;
    let mut target_reached = constraints
        .target
        .is_some_and(|t| grid.direction.meets(origin_value.prediction, t));
    let mut current = Some((origin_key, origin, origin_value.prediction));
    let mut nbrs = Vec::new();

    if !target_reached {
        for _ in 0..l {
            if cancel.is_some_and(|c| c.load(AtomicOrdering::Relaxed)) {
                return Err(PlanError::Cancelled);
            }
            let (ckey, cnode, cpred) = current.take().expect("current node");
            let ccost = labels[&ckey].cost;
            neighbors_into(grid, &rules, &cnode, &mut nbrs);
            for n in &nbrs {
                let nkey = grid.key(n);
                if labels.get(&nkey).is_some_and(|lb| lb.visited) {
                    continue;
                }
                let v = memo.value(n)?;
                if !constraints.prediction_allowed(v.prediction) {
                    continue;
                }
                let cost = ccost + memo.weight(&v);
                let improve = labels.get(&nkey).is_none_or(|lb| lb.cost > cost);
                if improve {
                    labels.insert(
                        nkey,
                        Label {
                            cost,
                            pred: Some(ckey),
                            visited: false,
                        },
                    );
                    seq += 1;
                    heap.push(Entry { cost, seq, key: nkey });
                }
            }
            labels.get_mut(&ckey).expect("labeled").visited = true;
            settled.push((ckey, cpred));

            let next = loop {
                match heap.pop() {
                    None => break None,
                    Some(e) => {
                        let lb = labels[&e.key];
                        if !lb.visited && lb.cost == e.cost {
                            break Some(e.key);
                        }
                    }
                }
            };
            let Some(nkey) = next else {
                exhausted = true;
                break;
            };
            let node = decode(grid, nkey);
            let pred = memo.value(&node)?.prediction;
            current = Some((nkey, node, pred));
            if constraints
                .target
                .is_some_and(|t| grid.direction.meets(pred, t))
            {
                target_reached = true;
                break;
            }
        }
    }
    if let Some((k, _, p)) = current {
        settled.push((k, p));
    }

    let mut best = 0;
    for (i, &(k, p)) in settled.iter().enumerate() {
        let (bk, bp) = settled[best];
        if grid.direction.better(p, bp) || (p == bp && labels[&k].cost < labels[&bk].cost) {
            best = i;
        }
    }
    let dest = settled[best].0;
    let mut path = vec![];
    let mut at = Some(dest);
    while let Some(k) = at {
        path.push(decode(grid, k));
        at = labels[&k].pred;
    }
    path.reverse();
    Ok(SearchOutcome {
        path,
        cost: labels[&dest].cost,
        settled: settled.len(),
        exhausted,
        target_reached,
    })
}
