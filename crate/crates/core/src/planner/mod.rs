//! Path planning over a per-instance lattice of intervention features:
//! label-setting least-cost search weighted by surrogate node densities,
//! random monotone baselines, and the actionability score.

mod grid;
mod search;

pub use grid::{
    build_grid, neighbors, AxisInfo, Constraints, Direction, GridSpec, MoveRule, RealBound,
};
pub use search::SearchOutcome;
#[cfg(test)]
pub(crate) use grid::tests::box_grid;

use std::collections::HashMap;
use std::sync::atomic::AtomicBool;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FeatureLayout;
use crate::regressor::{Regressor, RegressorError};
use crate::surrogate::{DensityMode, SurrogateError, SurrogateModel};
use search::Memo;

pub const DEFAULT_ITERATIONS: usize = 20_000;
pub const DEFAULT_BASELINES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("invalid plan request: {0}")]
    Invalid(String),
    #[error("intervention feature `{0}` is missing for this instance")]
    MissingIntervention(String),
    #[error("non-finite node value at offsets {0:?}")]
    NonFinite(Vec<i32>),
    #[error("search cancelled")]
    Cancelled,
    #[error("node outside the grid: {0:?}")]
    OutOfGrid(Vec<i32>),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// Regressor prediction and surrogate log-density at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeValue {
    pub prediction: f64,
    pub log_density: f64,
}

/// Source of node values for a grid.
pub trait NodeOracle: Sync {
    fn evaluate(&self, grid: &GridSpec, offsets: &[i32]) -> Result<NodeValue, PlanError>;
}

/// Node values from a fitted regressor and surrogate: the regressor predicts
/// at the node, and the surrogate scores the node's features together with
/// that prediction.
pub struct ModelOracle<'a> {
    pub regressor: &'a dyn Regressor,
    pub surrogate: &'a SurrogateModel,
    pub layout: &'a FeatureLayout,
}

impl NodeOracle for ModelOracle<'_> {
    fn evaluate(&self, grid: &GridSpec, offsets: &[i32]) -> Result<NodeValue, PlanError> {
        let x = grid.node_cont(offsets);
        let prediction = self.regressor.predict(&self.layout.encode(&x, &grid.origin_disc))?;
        let log_density = self.surrogate.node_log_density(&x, &grid.origin_disc, prediction)?;
        Ok(NodeValue {
            prediction,
            log_density,
        })
    }
}

/// Fixed table of node values, for precomputed predictions and tests.
#[derive(Debug, Clone, Default)]
pub struct TableOracle {
    values: HashMap<Vec<i32>, NodeValue>,
}

impl TableOracle {
    /// Tabulates `f(offsets) -> (prediction, log_density)` over every node.
    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(&[i32]) -> (f64, f64)) -> Self {
        let mut values = HashMap::new();
        let mut node = grid.lo.clone();
        loop {
            let (prediction, log_density) = f(&node);
            values.insert(
                node.clone(),
                NodeValue {
                    prediction,
                    log_density,
                },
            );
            let mut j = 0;
            loop {
                if j == node.len() {
                    return Self { values };
                }
                if node[j] < grid.hi[j] {
                    node[j] += 1;
                    break;
                }
                node[j] = grid.lo[j];
                j += 1;
            }
        }
    }

    pub fn get(&self, offsets: &[i32]) -> Option<NodeValue> {
        self.values.get(offsets).copied()
    }
}

impl NodeOracle for TableOracle {
    fn evaluate(&self, _grid: &GridSpec, offsets: &[i32]) -> Result<NodeValue, PlanError> {
        self.get(offsets).ok_or_else(|| PlanError::OutOfGrid(offsets.to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSettings {
    /// Search iteration count L.
    pub iterations: usize,
    #[serde(default)]
    pub constraints: Constraints,
    pub seed: u64,
    pub baseline_count: usize,
    /// Clamp node weights at zero; off reproduces the raw algorithm.
    #[serde(default)]
    pub weight_floor: bool,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            constraints: Constraints::default(),
            seed: 0,
            baseline_count: DEFAULT_BASELINES,
            weight_floor: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSign {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepChange {
    pub feature: String,
    pub sign: StepSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub offsets: Vec<i32>,
    /// `None` for the initial node.
    pub change: Option<StepChange>,
    /// Real-space values of the intervention features.
    pub values: Vec<f64>,
    pub prediction: f64,
    pub log_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    pub steps: Vec<PathStep>,
    /// Sum of node log-densities over the non-initial nodes.
    pub log_actionability: f64,
}

impl PlannedPath {
    pub fn moves(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub settled: usize,
    pub evaluated: usize,
    /// Nodes whose log-density was positive, i.e. whose weight was negative.
    pub negative_weights: usize,
    pub exhausted: bool,
    pub target_reached: bool,
}

/// Inputs echoed into every result so a file is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEcho {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub intervention: Vec<String>,
    pub cell_sigma: f64,
    pub direction: Direction,
    pub lo: Vec<i32>,
    pub hi: Vec<i32>,
    pub settings: PlanSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_mode: Option<DensityMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub config: PlanEcho,
    pub optimal: PlannedPath,
    pub baselines: Vec<f64>,
    pub score: f64,
    pub diagnostics: PlanDiagnostics,
}

impl PlanResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan result serializes");
        s.push('\n');
        s
    }
}

fn path_steps(grid: &GridSpec, memo: &mut Memo<'_>, nodes: &[Vec<i32>]) -> Result<PlannedPath, PlanError> {
    let mut steps = Vec::with_capacity(nodes.len());
    let mut la = 0.0;
    for (i, n) in nodes.iter().enumerate() {
        let v = memo.value(n)?;
        let change = if i == 0 {
            None
        } else {
            let prev = &nodes[i - 1];
            let moved: Vec<usize> = (0..grid.dims()).filter(|&j| prev[j] != n[j]).collect();
            if moved.len() != 1 || (prev[moved[0]] - n[moved[0]]).abs() != 1 {
                return Err(PlanError::Invalid(format!("non-unit step {prev:?} -> {n:?}")));
            }
            let j = moved[0];
            la -= memo.weight(&v);
            Some(StepChange {
                feature: grid.feature_names[j].clone(),
                sign: if n[j] > prev[j] { StepSign::Up } else { StepSign::Down },
            })
        };
        steps.push(PathStep {
            offsets: n.clone(),
            change,
            values: grid.node_real(n),
            prediction: v.prediction,
            log_density: v.log_density,
        });
    }
    Ok(PlannedPath {
        steps,
        log_actionability: la,
    })
}

/// Random monotone shortest lattice paths from `start` to `end`, each a
/// uniform shuffle of the required unit moves.
pub fn baseline_paths(start: &[i32], end: &[i32], count: usize, seed: u64) -> Vec<Vec<Vec<i32>>> {
    let mut moves: Vec<(usize, i32)> = Vec::new();
    for (j, (&a, &b)) in start.iter().zip(end).enumerate() {
        let s = (b - a).signum();
        moves.extend(std::iter::repeat_n((j, s), (b - a).unsigned_abs() as usize));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut order = moves.clone();
            order.shuffle(&mut rng);
            let mut at = start.to_vec();
            let mut path = vec![at.clone()];
            for (j, s) in order {
                at[j] += s;
                path.push(at.clone());
            }
            path
        })
        .collect()
}

/// Log-actionability of the optimal path minus the mean over baselines.
pub fn actionability_score(optimal: f64, baselines: &[f64]) -> Result<f64, PlanError> {
    if baselines.is_empty() {
        return Err(PlanError::Invalid("no baseline paths".into()));
    }
    let mean = baselines.iter().sum::<f64>() / baselines.len() as f64;
    let s = optimal - mean;
    if !s.is_finite() {
        return Err(PlanError::Invalid("non-finite actionability".into()));
    }
    Ok(s)
}

/// Searches one grid and scores the result against random baselines.
pub fn path_search(
    grid: &GridSpec,
    oracle: &dyn NodeOracle,
    settings: &PlanSettings,
    cancel: Option<&AtomicBool>,
) -> Result<PlanResult, PlanError> {
    grid.validate()?;
    if settings.baseline_count == 0 {
        return Err(PlanError::Invalid("baseline_count must be at least 1".into()));
    }
    let mut memo = Memo::new(grid, oracle, settings.weight_floor);
    let out = search::run(grid, &mut memo, settings.iterations, &settings.constraints, cancel)?;
    let optimal = path_steps(grid, &mut memo, &out.path)?;
    let origin = &out.path[0];
    let dest = out.path.last().expect("non-empty path");
    let mut baselines = Vec::with_capacity(settings.baseline_count);
    for nodes in baseline_paths(origin, dest, settings.baseline_count, settings.seed) {
        baselines.push(path_steps(grid, &mut memo, &nodes)?.log_actionability);
    }
    let score = if out.path.len() == 1 {
        0.0
    } else {
        actionability_score(optimal.log_actionability, &baselines)?
    };
    Ok(PlanResult {
        config: PlanEcho {
            instance_id: None,
            intervention: grid.feature_names.clone(),
            cell_sigma: grid.cell_sigma,
            direction: grid.direction,
            lo: grid.lo.clone(),
            hi: grid.hi.clone(),
            settings: settings.clone(),
            density_mode: None,
        },
        optimal,
        baselines,
        score,
        diagnostics: PlanDiagnostics {
            settled: out.settled,
            evaluated: memo.evaluated(),
            negative_weights: memo.negative_weights,
            exhausted: out.exhausted,
            target_reached: out.target_reached,
        },
    })
}
