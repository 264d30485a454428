use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, PipelineError};
use crate::data::{Cell, FeatureLayout, Imputer, Schema, Standardizer};
use crate::regressor::{GbtModel, ImportanceReport, Metrics};
use crate::surrogate::SurrogateModel;

pub const BUNDLE_FILE: &str = "bundle.json";
pub const REGRESSOR_FILE: &str = "regressor.json";
pub const SURROGATE_FILE: &str = "surrogate.json";

/// Regressor artifact: the tree ensemble plus the transforms it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorArtifact {
    pub model: GbtModel,
    pub standardizer: Standardizer,
    pub layout: FeatureLayout,
    pub metrics: Metrics,
    pub importance: ImportanceReport,
}

/// Training statistics of one continuous feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSummary {
    pub name: String,
    /// Real-space mean and standard deviation.
    pub mean: f64,
    pub std: f64,
    /// Training range in standardized units.
    pub train_min: f64,
    pub train_max: f64,
}

/// One row in real units. `continuous` follows the layout's continuous
/// order and `discrete` its discrete order; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub continuous: Vec<Option<f64>>,
    pub discrete: Vec<Option<usize>>,
    pub response: Option<f64>,
    /// Regressor prediction after imputation.
    pub prediction: f64,
}

impl InstanceRecord {
    pub fn from_row(id: String, schema: &Schema, layout: &FeatureLayout, row: &[Cell]) -> Self {
        let col = |n: &String| &row[schema.index_of(n).expect("layout from schema")];
        Self {
            id,
            continuous: layout.continuous.iter().map(|n| col(n).as_real()).collect(),
            discrete: layout.discrete.iter().map(|n| col(n).as_category()).collect(),
            response: row[schema.response_index()].as_real(),
            prediction: f64::NAN,
        }
    }
}

/// Everything the planner and the service need, loaded from a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub meta: BundleMeta,
    pub regressor: RegressorArtifact,
    pub surrogate: SurrogateModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    /// Schema restricted to the model's features.
    pub schema: Schema,
    pub imputer: Imputer,
    pub axes: Vec<AxisSummary>,
    pub intervention: Vec<String>,
    pub regressor_file: String,
    pub surrogate_file: String,
    pub test_instances: Vec<InstanceRecord>,
    /// Training rows in real units, for projections and scatter plots.
    pub training: Vec<InstanceRecord>,
    pub config: super::RunConfig,
}

impl ModelBundle {
    pub fn save(&self, dir: &Path) -> Result<Vec<String>, PipelineError> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join(&self.meta.regressor_file), &self.regressor)?;
        write_json(&dir.join(&self.meta.surrogate_file), &self.surrogate)?;
        write_json(&dir.join(BUNDLE_FILE), &self.meta)?;
        Ok(vec![
            self.meta.regressor_file.clone(),
            self.meta.surrogate_file.clone(),
            BUNDLE_FILE.to_string(),
        ])
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let meta: BundleMeta = read_json(&dir.join(BUNDLE_FILE))?;
        let regressor: RegressorArtifact = read_json(&dir.join(&meta.regressor_file))?;
        let surrogate: SurrogateModel = read_json(&dir.join(&meta.surrogate_file))?;
        let b = Self {
            meta,
            regressor,
            surrogate,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.regressor.layout
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Artifact(m.to_string()));
        let layout = &self.regressor.layout;
        if *layout != FeatureLayout::from_schema(&self.meta.schema) {
            return bad("regressor layout does not match the bundle schema");
        }
        self.regressor
            .model
            .validate()
            .map_err(|e| PipelineError::Artifact(e.to_string()))?;
        if self.regressor.model.arity != layout.encoded_width() {
            return bad("regressor arity does not match the layout");
        }
        self.surrogate
            .validate()
            .map_err(|e| PipelineError::Artifact(e.to_string()))?;
        let spec = &self.surrogate.spec;
        if spec.d_cont != layout.d_cont() || spec.disc_cards != layout.cardinalities {
            return bad("surrogate dimensions do not match the layout");
        }
        let std_names: Vec<&String> = self.regressor.standardizer.columns.iter().map(|c| &c.name).collect();
        let axis_names: Vec<&String> = self.meta.axes.iter().map(|a| &a.name).collect();
        let cont: Vec<&String> = layout.continuous.iter().collect();
        if std_names != cont || axis_names != cont {
            return bad("standardizer or axis list does not match the continuous features");
        }
        for name in &self.meta.intervention {
            if layout.continuous_index(name).is_none() {
                return bad("intervention feature is not a continuous model feature");
            }
        }
        Ok(())
    }

    pub fn instance(&self, id: &str) -> Option<&InstanceRecord> {
        self.meta.test_instances.iter().find(|i| i.id == id)
    }
}
