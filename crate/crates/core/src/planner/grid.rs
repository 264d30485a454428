use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::PlanError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

impl Direction {
    /// True when `a` is a strictly better prediction than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Minimize => a < b,
            Direction::Maximize => a > b,
        }
    }

    pub fn meets(self, prediction: f64, target: f64) -> bool {
        match self {
            Direction::Minimize => prediction <= target,
            Direction::Maximize => prediction >= target,
        }
    }
}

/// Per-instance lattice over the intervention features. Offsets are
/// integers; the standardized coordinate of dim `j` is
/// `origin_cont[features[j]] + offset_j * cell[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Positions in the continuous feature vector.
    pub features: Vec<usize>,
    pub feature_names: Vec<String>,
    pub cell_sigma: f64,
    /// Cell size in standardized units.
    pub cell: Vec<f64>,
    pub lo: Vec<i32>,
    pub hi: Vec<i32>,
    pub origin_cont: Vec<f64>,
    pub origin_disc: Vec<usize>,
    /// Real-space value at offset 0 and real-space cell size.
    pub real_origin: Vec<f64>,
    pub real_cell: Vec<f64>,
    pub direction: Direction,
}

/// What `build_grid` needs to know about one intervention feature.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisInfo {
    pub position: usize,
    pub name: String,
    /// Training mean and std in real units.
    pub mean: f64,
    pub std: f64,
    /// Training range in standardized units.
    pub train_min: f64,
    pub train_max: f64,
}

/// Cells are `cell_sigma` training standard deviations wide. Bounds span the
/// training range widened by one cell, and always contain the origin.
pub fn build_grid(
    origin_cont: &[f64],
    origin_disc: &[usize],
    axes: &[AxisInfo],
    cell_sigma: f64,
    direction: Direction,
) -> Result<GridSpec, PlanError> {
    if !(cell_sigma > 0.0 && cell_sigma.is_finite()) {
        return Err(PlanError::Invalid(format!("cell_sigma must be positive, got {cell_sigma}")));
    }
    let mut grid = GridSpec {
        features: vec![],
        feature_names: vec![],
        cell_sigma,
        cell: vec![],
        lo: vec![],
        hi: vec![],
        origin_cont: origin_cont.to_vec(),
        origin_disc: origin_disc.to_vec(),
        real_origin: vec![],
        real_cell: vec![],
        direction,
    };
    for a in axes {
        let o = *origin_cont
            .get(a.position)
            .ok_or_else(|| PlanError::Invalid(format!("feature `{}` outside the feature vector", a.name)))?;
        if !o.is_finite() {
            return Err(PlanError::MissingIntervention(a.name.clone()));
        }
        if grid.features.contains(&a.position) {
            return Err(PlanError::Invalid(format!("feature `{}` listed twice", a.name)));
        }
        // standardized training std is 1 under the population convention
        let cell = cell_sigma;
        let lo = ((a.train_min - cell - o) / cell - 1e-9).ceil();
        let hi = ((a.train_max + cell - o) / cell + 1e-9).floor();
        grid.features.push(a.position);
        grid.feature_names.push(a.name.clone());
        grid.cell.push(cell);
        grid.lo.push((lo as i32).min(0));
        grid.hi.push((hi as i32).max(0));
        grid.real_origin.push(a.mean + o * a.std);
        grid.real_cell.push(cell * a.std);
    }
    grid.validate()?;
    Ok(grid)
}

impl GridSpec {
    pub fn dims(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let d = self.features.len();
        let lens = [
            self.feature_names.len(),
            self.cell.len(),
            self.lo.len(),
            self.hi.len(),
            self.real_origin.len(),
            self.real_cell.len(),
        ];
        if lens.iter().any(|&l| l != d) {
            return Err(PlanError::Invalid("grid field lengths disagree".into()));
        }
        for j in 0..d {
            if !(self.cell[j] > 0.0) || !(self.real_cell[j] > 0.0) {
                return Err(PlanError::Invalid(format!("non-positive cell for `{}`", self.feature_names[j])));
            }
            if self.lo[j] > 0 || self.hi[j] < 0 {
                return Err(PlanError::Invalid(format!("origin outside bounds for `{}`", self.feature_names[j])));
            }
            if self.features[j] >= self.origin_cont.len() {
                return Err(PlanError::Invalid(format!("feature `{}` outside the feature vector", self.feature_names[j])));
            }
        }
        self.node_count()?;
        Ok(())
    }

    /// Total lattice size; errors when it does not fit in 64 bits.
    pub fn node_count(&self) -> Result<u64, PlanError> {
        let mut n: u64 = 1;
        for j in 0..self.dims() {
            let w = (self.hi[j] - self.lo[j] + 1) as u64;
            n = n
                .checked_mul(w)
                .ok_or_else(|| PlanError::Invalid("grid too large".into()))?;
        }
        Ok(n)
    }

    pub fn contains(&self, offsets: &[i32]) -> bool {
        offsets.len() == self.dims()
            && offsets
                .iter()
                .enumerate()
                .all(|(j, &o)| self.lo[j] <= o && o <= self.hi[j])
    }

    pub(crate) fn key(&self, offsets: &[i32]) -> u64 {
        let mut k = 0u64;
        for j in 0..self.dims() {
            let w = (self.hi[j] - self.lo[j] + 1) as u64;
            k = k * w + (offsets[j] - self.lo[j]) as u64;
        }
        k
    }

    /// Standardized continuous vector at a node.
    pub fn node_cont(&self, offsets: &[i32]) -> Vec<f64> {
        let mut x = self.origin_cont.clone();
        for (j, &f) in self.features.iter().enumerate() {
            x[f] += offsets[j] as f64 * self.cell[j];
        }
        x
    }

    /// Real-space values of the intervention features at a node.
    pub fn node_real(&self, offsets: &[i32]) -> Vec<f64> {
        (0..self.dims())
            .map(|j| self.real_origin[j] + offsets[j] as f64 * self.real_cell[j])
            .collect()
    }

    pub fn dim_of(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MoveRule {
    #[default]
    Both,
    IncreaseOnly,
    DecreaseOnly,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RealBound {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

/// Restrictions on which nodes a path may pass through. Feature bounds are
/// in real units; prediction limits apply to every node after the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Constraints {
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub bounds: IndexMap<String, RealBound>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub moves: IndexMap<String, MoveRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_ceiling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_floor: Option<f64>,
    /// The search stops once a settled node meets this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

impl Constraints {
    pub fn validate(&self, grid: &GridSpec) -> Result<(), PlanError> {
        for name in self.bounds.keys().chain(self.moves.keys()) {
            if grid.dim_of(name).is_none() {
                return Err(PlanError::Invalid(format!("constraint on `{name}`, which is not an intervention feature")));
            }
        }
        for (name, b) in &self.bounds {
            if let (Some(lo), Some(hi)) = (b.min, b.max) {
                if lo > hi {
                    return Err(PlanError::Invalid(format!("bound min > max for `{name}`")));
                }
            }
        }
        if let (Some(c), Some(f)) = (self.prediction_ceiling, self.prediction_floor) {
            if c < f {
                return Err(PlanError::Invalid("prediction ceiling below floor".into()));
            }
        }
        let finite = self
            .bounds
            .values()
            .flat_map(|b| [b.min, b.max])
            .chain([self.prediction_ceiling, self.prediction_floor, self.target])
            .flatten()
            .all(f64::is_finite);
        if !finite {
            return Err(PlanError::Invalid("non-finite constraint value".into()));
        }
        Ok(())
    }

    pub fn prediction_allowed(&self, prediction: f64) -> bool {
        self.prediction_ceiling.is_none_or(|c| prediction <= c)
            && self.prediction_floor.is_none_or(|f| prediction >= f)
    }
}

/// Constraints keyed by grid dimension.
#[derive(Debug, Clone)]
pub(crate) struct Resolved {
    rules: Vec<MoveRule>,
    bounds: Vec<RealBound>,
}

impl Resolved {
    pub fn new(grid: &GridSpec, c: &Constraints) -> Result<Self, PlanError> {
        c.validate(grid)?;
        let mut rules = vec![MoveRule::Both; grid.dims()];
        let mut bounds = vec![RealBound::default(); grid.dims()];
        for (name, r) in &c.moves {
            rules[grid.dim_of(name).expect("validated")] = *r;
        }
        for (name, b) in &c.bounds {
            bounds[grid.dim_of(name).expect("validated")] = *b;
        }
        Ok(Self { rules, bounds })
    }

    fn allows(&self, grid: &GridSpec, j: usize, step: i32, offset: i32) -> bool {
        let rule_ok = match self.rules[j] {
            MoveRule::Both => true,
            MoveRule::IncreaseOnly => step > 0,
            MoveRule::DecreaseOnly => step < 0,
            MoveRule::Frozen => false,
        };
        if !rule_ok {
            return false;
        }
        let v = grid.real_origin[j] + offset as f64 * grid.real_cell[j];
        let b = self.bounds[j];
        b.min.is_none_or(|m| v >= m) && b.max.is_none_or(|m| v <= m)
    }
}

/// Unit-step neighbors inside the grid and the feature constraints, in
/// order of feature index with the decrease before the increase.
pub fn neighbors(grid: &GridSpec, node: &[i32], constraints: &Constraints) -> Result<Vec<Vec<i32>>, PlanError> {
    let r = Resolved::new(grid, constraints)?;
    let mut out = Vec::new();
    neighbors_into(grid, &r, node, &mut out);
    Ok(out)
}

pub(crate) fn neighbors_into(grid: &GridSpec, r: &Resolved, node: &[i32], out: &mut Vec<Vec<i32>>) {
    out.clear();
    for j in 0..grid.dims() {
        for step in [-1, 1] {
            let o = node[j] + step;
            if o < grid.lo[j] || o > grid.hi[j] || !r.allows(grid, j, step, o) {
                continue;
            }
            let mut n = node.to_vec();
            n[j] = o;
            out.push(n);
        }
    }
}
