use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::time::Instant;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{InstanceRecord, ModelBundle};
use super::ledger::{Ledger, LedgerEntry};
use super::{write_json, InstanceFilter, PipelineError, RunConfig};
use crate::data::{ColumnKind, Fill};
use crate::planner::{
    build_grid, path_search, AxisInfo, Direction, ModelOracle, PlanError, PlanResult, PlanSettings,
};

pub const PLANS_DIR: &str = "plans";
pub const PLAN_SUMMARY_FILE: &str = "plan_summary.json";

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    /// A test instance stored in the bundle.
    Id(String),
    /// Caller-supplied values in real units.
    Raw(InstanceRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub instance: InstanceSource,
    pub intervention: Vec<String>,
    pub cell_sigma: f64,
    pub direction: Direction,
    pub settings: PlanSettings,
}

impl PlanRequest {
    /// Request for a stored instance using the run configuration.
    pub fn from_config(bundle: &ModelBundle, config: &RunConfig, id: &str) -> Self {
        Self {
            instance: InstanceSource::Id(id.to_string()),
            intervention: bundle.meta.intervention.clone(),
            cell_sigma: config.plan.cell_sigma,
            direction: config.plan.direction,
            settings: PlanSettings {
                iterations: config.plan.iterations,
                constraints: config.plan.constraints.clone(),
                seed: config.seed,
                baseline_count: config.plan.baseline_count,
                weight_floor: config.plan.weight_floor,
            },
        }
    }
}

/// Builds an instance from a name-to-value map. Continuous features take
/// numbers; discrete features take a level label (or a number matching
/// one). Absent features are missing.
pub fn raw_instance(
    bundle: &ModelBundle,
    values: &IndexMap<String, serde_json::Value>,
) -> Result<InstanceRecord, PipelineError> {
    let layout = bundle.layout();
    for name in values.keys() {
        if !layout.feature_names.contains(name) {
            return Err(PipelineError::Plan(PlanError::Invalid(format!("unknown feature `{name}`"))));
        }
    }
    let invalid = |m: String| PipelineError::Plan(PlanError::Invalid(m));
    let mut continuous = Vec::with_capacity(layout.d_cont());
    for name in &layout.continuous {
        continuous.push(match values.get(name) {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(
                v.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| invalid(format!("feature `{name}` must be a finite number")))?,
            ),
        });
    }
    let schema = &bundle.meta.schema;
    let mut discrete = Vec::with_capacity(layout.discrete.len());
    for name in &layout.discrete {
        let col = &schema.columns()[schema.index_of(name).expect("layout from schema")];
        debug_assert_eq!(col.kind, ColumnKind::Discrete);
        discrete.push(match values.get(name) {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => {
                let label = match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(n) => n.to_string(),
                    _ => return Err(invalid(format!("feature `{name}` must be a level label"))),
                };
                let num = label.parse::<f64>().ok();
                let level = col.levels.iter().position(|l| {
                    *l == label || (num.is_some() && l.parse::<f64>().ok() == num)
                });
                Some(level.ok_or_else(|| invalid(format!("unknown level `{label}` for `{name}`")))?)
            }
        });
    }
    let mut rec = InstanceRecord {
        id: String::new(),
        continuous,
        discrete,
        response: None,
        prediction: f64::NAN,
    };
    let (x, xd) = fill_and_standardize(bundle, &rec)?;
    rec.prediction = bundle
        .regressor
        .model
        .predict_unchecked(&layout.encode(&x, &xd));
    Ok(rec)
}

/// Imputes missing cells with the training fills and standardizes.
pub fn fill_and_standardize(
    bundle: &ModelBundle,
    rec: &InstanceRecord,
) -> Result<(Vec<f64>, Vec<usize>), PipelineError> {
    let layout = bundle.layout();
    if rec.continuous.len() != layout.d_cont() || rec.discrete.len() != layout.discrete.len() {
        return Err(PipelineError::Plan(PlanError::Invalid("instance arity does not match the model".into())));
    }
    let fill_of = |name: &str| {
        bundle.meta.imputer.fills.iter().find(|f| match f {
            Fill::Median { name: n, .. } | Fill::Mode { name: n, .. } => n == name,
        })
    };
    let mut x = Vec::with_capacity(rec.continuous.len());
    for (j, name) in layout.continuous.iter().enumerate() {
        let v = match rec.continuous[j] {
            Some(v) => v,
            None => match fill_of(name) {
                Some(Fill::Median { value, .. }) => *value,
                _ => return Err(PipelineError::Artifact(format!("no fill for `{name}`"))),
            },
        };
        let a = &bundle.meta.axes[j];
        x.push((v - a.mean) / a.std);
    }
    let mut xd = Vec::with_capacity(rec.discrete.len());
    for (j, name) in layout.discrete.iter().enumerate() {
        xd.push(match rec.discrete[j] {
            Some(l) => l,
            None => match fill_of(name) {
                Some(Fill::Mode { level, .. }) => *level,
                _ => return Err(PipelineError::Artifact(format!("no fill for `{name}`"))),
            },
        });
    }
    Ok((x, xd))
}

/// Plans one instance. Shared by batch planning and the HTTP service so both
/// produce identical results for identical inputs.
pub fn plan_instance(
    bundle: &ModelBundle,
    req: &PlanRequest,
    cancel: Option<&AtomicBool>,
) -> Result<PlanResult, PipelineError> {
    let (rec, id) = match &req.instance {
        InstanceSource::Id(id) => (
            bundle
                .instance(id)
                .ok_or_else(|| PipelineError::UnknownInstance(id.clone()))?
                .clone(),
            Some(id.clone()),
        ),
        InstanceSource::Raw(r) => (r.clone(), None),
    };
    if req.intervention.is_empty() {
        return Err(PlanError::Invalid("no intervention features".into()).into());
    }
    let layout = bundle.layout();
    let mut axes = Vec::with_capacity(req.intervention.len());
    for name in &req.intervention {
        let j = layout.continuous_index(name).ok_or_else(|| {
            PlanError::Invalid(format!("`{name}` is not a continuous model feature"))
        })?;
        if rec.continuous.get(j).copied().flatten().is_none() {
            return Err(PlanError::MissingIntervention(name.clone()).into());
        }
        let a = &bundle.meta.axes[j];
        axes.push(AxisInfo {
            position: j,
            name: name.clone(),
            mean: a.mean,
            std: a.std,
            train_min: a.train_min,
            train_max: a.train_max,
        });
    }
    let (x, xd) = fill_and_standardize(bundle, &rec)?;
    let grid = build_grid(&x, &xd, &axes, req.cell_sigma, req.direction)?;
    let oracle = ModelOracle {
        regressor: &bundle.regressor.model,
        surrogate: &bundle.surrogate,
        layout,
    };
    let mut result = path_search(&grid, &oracle, &req.settings, cancel)?;
    result.config.instance_id = id;
    result.config.density_mode = Some(bundle.surrogate.density_mode);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub file: String,
    pub score: f64,
    pub moves: usize,
    pub start_prediction: f64,
    pub end_prediction: f64,
    pub settled: usize,
    pub negative_weights: usize,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over the observed range; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    if values.is_empty() || bins == 0 {
        return Histogram {
            edges: vec![],
            counts: vec![],
        };
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Histogram {
            edges: vec![lo, hi],
            counts: vec![values.len()],
        };
    }
    let w = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + w * i as f64 }).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / w) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Scores at or below this count as ties with the baseline; it absorbs
/// summation round-off when both paths have the same weight.
pub const POSITIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub planned: Vec<ScoreRow>,
    pub skipped: Vec<Skipped>,
    pub count: usize,
    pub positive: usize,
    pub positive_fraction: f64,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub histogram: Histogram,
}

impl PlanSummary {
    pub fn from_rows(planned: Vec<ScoreRow>, skipped: Vec<Skipped>) -> Self {
        let scores: Vec<f64> = planned.iter().map(|r| r.score).collect();
        let positive = scores.iter().filter(|&&s| s > POSITIVE_TOLERANCE).count();
        Self {
            count: scores.len(),
            positive,
            positive_fraction: if scores.is_empty() { 0.0 } else { positive as f64 / scores.len() as f64 },
            median: median(&scores),
            min: scores.iter().copied().reduce(f64::min),
            histogram: histogram(&scores, 10),
            planned,
            skipped,
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.planned.iter().map(|r| r.score).collect()
    }
}

/// File-system safe form of an instance id.
pub fn plan_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

pub fn select_instances<'a>(bundle: &'a ModelBundle, filter: &InstanceFilter) -> Vec<&'a InstanceRecord> {
    let mut out: Vec<&InstanceRecord> = bundle
        .meta
        .test_instances
        .iter()
        .filter(|r| filter.accepts(&r.id, r.response))
        .collect();
    if let Some(l) = filter.limit {
        out.truncate(l);
    }
    out
}

/// Plans every selected instance of a batch in parallel, in input order.
pub fn plan_batch(
    bundle: &ModelBundle,
    config: &RunConfig,
    ids: &[String],
) -> Result<Vec<(String, Result<PlanResult, PipelineError>)>, PipelineError> {
    let run = || {
        ids.par_iter()
            .map(|id| {
                let req = PlanRequest::from_config(bundle, config, id);
                (id.clone(), plan_instance(bundle, &req, None))
            })
            .collect::<Vec<_>>()
    };
    match config.plan.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| PipelineError::Stage {
                    stage: "plan".into(),
                    message: e.to_string(),
                })?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

/// Plans the filtered test instances and writes one result file per
/// instance plus a summary with the score histogram.
pub fn cmd_plan(config: &RunConfig) -> Result<PlanSummary, PipelineError> {
    let started = Instant::now();
    let dir = config.output_dir()?;
    let bundle = ModelBundle::load(&dir)?;
    let ids: Vec<String> = select_instances(&bundle, &config.instances)
        .into_iter()
        .map(|r| r.id.clone())
        .collect();
    if ids.is_empty() {
        return Err(PipelineError::EmptySelection);
    }
    let plans_dir: PathBuf = dir.join(PLANS_DIR);
    if plans_dir.exists() {
        std::fs::remove_dir_all(&plans_dir)?;
    }
    std::fs::create_dir_all(&plans_dir)?;

    let mut planned = Vec::new();
    let mut skipped = Vec::new();
    let mut artifacts = Vec::new();
    for (id, res) in plan_batch(&bundle, config, &ids)? {
        match res {
            Ok(r) => {
                let file = format!("{PLANS_DIR}/{}", plan_file_name(&id));
                std::fs::write(dir.join(&file), r.to_json())?;
                let steps = &r.optimal.steps;
                planned.push(ScoreRow {
                    id,
                    file: file.clone(),
                    score: r.score,
                    moves: r.optimal.moves(),
                    start_prediction: steps[0].prediction,
                    end_prediction: steps[steps.len() - 1].prediction,
                    settled: r.diagnostics.settled,
                    negative_weights: r.diagnostics.negative_weights,
                    exhausted: r.diagnostics.exhausted,
                });
                artifacts.push(file);
            }
            Err(PipelineError::Plan(e @ PlanError::MissingIntervention(_))) => {
                skipped.push(Skipped {
                    id,
                    reason: e.to_string(),
                });
            }
            Err(e) => {
                return Err(PipelineError::Stage {
                    stage: "plan".into(),
                    message: format!("instance {id}: {e}"),
                })
            }
        }
    }
    let summary = PlanSummary::from_rows(planned, skipped);
    write_json(&dir.join(PLAN_SUMMARY_FILE), &summary)?;
    artifacts.push(PLAN_SUMMARY_FILE.into());
    Ledger::new(&dir).append(&LedgerEntry::new(
        "plan",
        started,
        config.seed,
        artifacts,
        serde_json::json!({
            "count": summary.count,
            "skipped": summary.skipped.len(),
            "median": summary.median,
            "positive_fraction": summary.positive_fraction,
            "min": summary.min,
        }),
    ))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins() {
        let h = histogram(&[0.0, 1.0, 2.0, 10.0], 5);
        assert_eq!(h.edges, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(h.counts, vec![2, 1, 0, 0, 1]);
        assert_eq!(histogram(&[3.0, 3.0], 4).counts, vec![2]);
        assert!(histogram(&[], 4).counts.is_empty());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn file_names_are_safe() {
        assert_eq!(plan_file_name("12"), "12.json");
        assert_eq!(plan_file_name("a/b c"), "a_b_c.json");
    }

    #[test]
    fn summary_counts() {
        let row = |id: &str, score: f64| ScoreRow {
            id: id.into(),
            file: String::new(),
            score,
            moves: 1,
            start_prediction: 0.0,
            end_prediction: 0.0,
            settled: 1,
            negative_weights: 0,
            exhausted: false,
        };
        let s = PlanSummary::from_rows(vec![row("a", 1e-12), row("b", 2.0), row("c", 1.0)], vec![]);
        assert_eq!((s.count, s.positive), (3, 2));
        assert_eq!(s.median, Some(1.0));
        assert_eq!(s.min, Some(1e-12));
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 3);
    }
}
