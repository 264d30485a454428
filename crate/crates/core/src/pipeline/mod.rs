//! End-to-end orchestration: run configuration, fitting, batch planning,
//! reporting, and the artifact files that connect the stages.
//!
//! A run directory holds `bundle.json`, `regressor.json`,
//! `surrogate.json`, `fit_summary.json`, `plans/*.json`,
//! `plan_summary.json`, `report/` and the append-only `ledger.jsonl`.

mod bundle;
mod config;
mod fit;
mod ledger;
mod plan;
mod report;

pub use bundle::{
    AxisSummary, BundleMeta, InstanceRecord, ModelBundle, RegressorArtifact, BUNDLE_FILE,
    REGRESSOR_FILE, SURROGATE_FILE,
};
pub use config::{
    DatasetSource, InstanceFilter, InterventionConfig, Overrides, PlanConfig, RegressorConfig,
    RunConfig, SurrogateConfig,
};
pub use fit::{
    choose_intervention, cmd_fit, cmd_synth, fit_bundle, load_dataset, FitSummary,
    FIT_SUMMARY_FILE, SYNTH_CSV, SYNTH_SCHEMA,
};
pub use ledger::{Ledger, LedgerEntry, LEDGER_FILE};
pub use plan::{
    cmd_plan, fill_and_standardize, histogram, median, plan_batch, plan_file_name, plan_instance,
    raw_instance, select_instances, Histogram, InstanceSource, PlanRequest, PlanSummary, ScoreRow,
    Skipped, PLANS_DIR, PLAN_SUMMARY_FILE, POSITIVE_TOLERANCE,
};
pub use report::{
    cmd_report, histogram_svg, projection, projection_axes, projection_svg, Ladder, LadderRow,
    Projection, PREDICTION_AXIS, REPORT_DIR,
};

use std::fmt::Display;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::data::DataError;
use crate::planner::PlanError;
use crate::regressor::RegressorError;
use crate::surrogate::SurrogateError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error("artifact: {0}")]
    Artifact(String),
    #[error("io: {0}")]
    Io(String),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("instance filter selected no instances")]
    EmptySelection,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl PipelineError {
    /// True for problems with the caller's input rather than the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::UnknownInstance(_)
                | PipelineError::EmptySelection
                | PipelineError::Plan(PlanError::Invalid(_) | PlanError::MissingIntervention(_))
        )
    }

    /// Process exit code: 1 for validation failures, 2 for runtime ones.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            1
        } else {
            2
        }
    }
}

pub(crate) fn stage<T, E: Display>(name: &str, r: Result<T, E>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::Stage {
        stage: name.to_string(),
        message: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Io(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Artifact(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact(format!("{}: {e}", path.display())))
}
