use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::data::SyntheticSpec;
use crate::planner::{Constraints, Direction, DEFAULT_BASELINES, DEFAULT_ITERATIONS};
use crate::regressor::GbtHyperParams;
use crate::surrogate::DensityMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Csv { path: String, schema: String },
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub folds: usize,
    /// Candidate hyperparameters; the built-in grid when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<GbtHyperParams>>,
    /// Keep this many features by recursive elimination before tuning.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rfe_keep: Option<usize>,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            grid: None,
            rfe_keep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub k_range: Vec<usize>,
    pub iterations: usize,
    pub warmup: usize,
    pub planning_draws: usize,
    pub density_mode: DensityMode,
    /// Smallest component scale, in training standard deviations.
    pub scale_floor: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            k_range: (1..=8).collect(),
            iterations: 1500,
            warmup: 500,
            planning_draws: 64,
            density_mode: DensityMode::SampleAverage,
            scale_floor: 0.1,
        }
    }
}

/// Either an explicit feature list or the top features by importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    pub top_n: usize,
    /// Never chosen by importance, e.g. age.
    pub exclude: Vec<String>,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            features: None,
            top_n: 5,
            exclude: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub cell_sigma: f64,
    pub iterations: usize,
    pub direction: Direction,
    pub constraints: Constraints,
    pub baseline_count: usize,
    pub weight_floor: bool,
    /// Worker threads for batch planning; all cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            cell_sigma: 0.2,
            iterations: DEFAULT_ITERATIONS,
            direction: Direction::Minimize,
            constraints: Constraints::default(),
            baseline_count: DEFAULT_BASELINES,
            weight_floor: false,
            threads: None,
        }
    }
}

/// Which test instances to plan for. Bounds apply to the observed response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceFilter {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

impl InstanceFilter {
    /// Parses a comma-separated list such as `response>=150,response<300`
    /// (`>` and `>=` both set the lower bound, inclusively).
    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        let mut f = InstanceFilter::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let bad = || PipelineError::Config(format!("malformed filter term `{part}`"));
            let rest = part.strip_prefix("response").ok_or_else(bad)?;
            let (lower, num) = if let Some(v) = rest.strip_prefix(">=").or_else(|| rest.strip_prefix('>')) {
                (true, v)
            } else if let Some(v) = rest.strip_prefix("<=").or_else(|| rest.strip_prefix('<')) {
                (false, v)
            } else {
                return Err(bad());
            };
            let v: f64 = num.trim().parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            if lower {
                f.response_min = Some(v);
            } else {
                f.response_max = Some(v);
            }
        }
        Ok(f)
    }

    pub fn accepts(&self, id: &str, response: Option<f64>) -> bool {
        if let Some(ids) = &self.ids {
            if !ids.iter().any(|i| i == id) {
                return false;
            }
        }
        if self.response_min.is_none() && self.response_max.is_none() {
            return true;
        }
        let Some(r) = response else { return false };
        self.response_min.is_none_or(|m| r >= m) && self.response_max.is_none_or(|m| r <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSource,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub regressor: RegressorConfig,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub intervention: InterventionConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub instances: InstanceFilter,
    /// Run directory; relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_fraction() -> f64 {
    0.8
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub cell_sigma: Option<f64>,
    pub direction: Option<Direction>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut c: RunConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), PipelineError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(l) = o.iterations {
            self.plan.iterations = l;
        }
        if let Some(c) = o.cell_sigma {
            self.plan.cell_sigma = c;
        }
        if let Some(d) = o.direction {
            self.plan.direction = d;
        }
        if let Some(p) = &o.output {
            let abs = std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.clone());
            self.output = Some(abs.to_string_lossy().into_owned());
        }
        self.validate()
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> Result<PathBuf, PipelineError> {
        self.output
            .as_deref()
            .map(|o| self.resolve(o))
            .ok_or_else(|| PipelineError::Config("no output directory (set `output` or pass --out)".into()))
    }

    /// The config as embedded in artifacts: no machine-specific paths.
    pub fn portable(&self) -> RunConfig {
        RunConfig {
            output: None,
            base_dir: PathBuf::new(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if self.regressor.folds < 2 {
            return bad("regressor.folds must be at least 2".into());
        }
        if let Some(g) = &self.regressor.grid {
            if g.is_empty() {
                return bad("regressor.grid is empty".into());
            }
            for hp in g {
                hp.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            }
        }
        if self.regressor.rfe_keep == Some(0) {
            return bad("regressor.rfe_keep must be at least 1".into());
        }
        let s = &self.surrogate;
        if s.k_range.is_empty() || s.k_range.contains(&0) {
            return bad("surrogate.k_range must be non-empty and positive".into());
        }
        if s.warmup >= s.iterations {
            return bad("surrogate.warmup must be below surrogate.iterations".into());
        }
        if !(s.scale_floor >= 0.0 && s.scale_floor < 1.0) {
            return bad(format!("surrogate.scale_floor {} outside [0, 1)", s.scale_floor));
        }
        if s.planning_draws == 0 {
            return bad("surrogate.planning_draws must be at least 1".into());
        }
        if self.intervention.features.as_ref().is_some_and(|f| f.is_empty())
            || (self.intervention.features.is_none() && self.intervention.top_n == 0)
        {
            return bad("no intervention features requested".into());
        }
        let p = &self.plan;
        if !(p.cell_sigma > 0.0 && p.cell_sigma.is_finite()) {
            return bad(format!("plan.cell_sigma {} must be positive", p.cell_sigma));
        }
        if p.baseline_count == 0 {
            return bad("plan.baseline_count must be at least 1".into());
        }
        if p.threads == Some(0) {
            return bad("plan.threads must be at least 1".into());
        }
        if let DatasetSource::Synthetic { spec } = &self.dataset {
            spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
