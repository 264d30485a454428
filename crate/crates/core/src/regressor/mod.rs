//! Gradient-boosted regression trees with squared loss, plus the model
//! selection utilities around them (k-fold CV and recursive feature
//! elimination).

mod gbt;
mod select;
mod tree;

pub use gbt::{GbtHyperParams, GbtModel};
pub use select::{cross_validate, rfe, CvOutcome};
pub use tree::Tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, FeatureLayout};

#[derive(Debug, Error, PartialEq)]
pub enum RegressorError {
    #[error("invalid hyperparameters: {0}")]
    HyperParams(String),
    #[error("need at least two training rows, got {0}")]
    TooFewRows(usize),
    #[error("feature arity mismatch: expected {expected}, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("empty evaluation set")]
    EmptyTest,
    #[error("malformed model artifact")]
    Malformed,
    #[error("{folds} folds need at least {folds} rows, got {rows}")]
    Folds { folds: usize, rows: usize },
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("keep count {keep} outside 1..={features}")]
    KeepRange { keep: usize, features: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Anything that maps an encoded feature vector to a response prediction.
pub trait Regressor: Send + Sync {
    fn arity(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<f64, RegressorError>;
}

/// Encoded training table: one-hot expanded features and the response.
#[derive(Debug, Clone)]
pub struct EncodedTable {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub layout: FeatureLayout,
    pub slot_names: Vec<String>,
}

impl EncodedTable {
    /// Requires every feature and response cell to be present.
    pub fn from_dataset(ds: &Dataset) -> Result<Self, RegressorError> {
        let layout = FeatureLayout::from_schema(&ds.schema);
        let rows = ds.model_rows()?;
        let mut x = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            x.push(layout.encode(&r.x_cont, &r.x_disc));
            y.push(r.y.ok_or_else(|| {
                DataError::Schema(format!("row {i} is missing its response"))
            })?);
        }
        let slot_names = layout.encoded_names(&ds.schema);
        Ok(Self {
            x,
            y,
            layout,
            slot_names,
        })
    }

    pub fn subset(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            idx.iter().map(|&i| self.x[i].clone()).collect(),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

pub fn fit_gbt(train: &Dataset, hp: &GbtHyperParams) -> Result<GbtModel, RegressorError> {
    let t = EncodedTable::from_dataset(train)?;
    GbtModel::fit(&t.x, &t.y, t.slot_names, hp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    /// `None` when the test response has zero variance.
    pub r2: Option<f64>,
}

pub fn evaluate_predictions(pred: &[f64], truth: &[f64]) -> Result<Metrics, RegressorError> {
    if truth.is_empty() || pred.len() != truth.len() {
        return Err(RegressorError::EmptyTest);
    }
    let n = truth.len() as f64;
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    Ok(Metrics {
        rmse: (ss_res / n).sqrt(),
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
    })
}

pub fn evaluate(model: &dyn Regressor, test: &Dataset) -> Result<Metrics, RegressorError> {
    let t = EncodedTable::from_dataset(test)?;
    let pred = t
        .x
        .iter()
        .map(|r| model.predict(r))
        .collect::<Result<Vec<_>, _>>()?;
    evaluate_predictions(&pred, &t.y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGain {
    pub feature: String,
    pub gain: f64,
}

/// Per-feature total squared-error reduction, sorted by descending gain
/// (ties keep schema order). One-hot slots are summed into their feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub features: Vec<FeatureGain>,
}

impl ImportanceReport {
    pub fn ranked_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.feature.clone()).collect()
    }

    pub fn gain_of(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|f| f.feature == name).map(|f| f.gain)
    }
}

pub(crate) fn feature_gains(model: &GbtModel, layout: &FeatureLayout) -> Vec<f64> {
    let mut gains = vec![0.0; layout.feature_names.len()];
    for (slot, owner) in layout.slot_owner().into_iter().enumerate() {
        gains[owner] += model.slot_gains()[slot];
    }
    gains
}

pub fn importance(model: &GbtModel, layout: &FeatureLayout) -> ImportanceReport {
    let gains = feature_gains(model, layout);
    let mut features: Vec<FeatureGain> = layout
        .feature_names
        .iter()
        .zip(gains)
        .map(|(f, gain)| FeatureGain {
            feature: f.clone(),
            gain,
        })
        .collect();
    features.sort_by(|a, b| b.gain.total_cmp(&a.gain));
    ImportanceReport { features }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cell, ColumnRole, ColumnSpec, Schema};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn linear_dataset(seed: u64, n: usize) -> Dataset {
        let schema = Schema::new(vec![
            ColumnSpec::continuous("X1", ColumnRole::Feature),
            ColumnSpec::continuous("X2", ColumnRole::Feature),
            ColumnSpec::discrete("G", &["a", "b"]),
            ColumnSpec::continuous("Y", ColumnRole::Response),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                let x1: f64 = rng.sample(StandardNormal);
                let x2: f64 = rng.sample(StandardNormal);
                let g = rng.random_range(0..2usize);
                let e: f64 = rng.sample(StandardNormal);
                vec![
                    Cell::Real(x1),
                    Cell::Real(x2),
                    Cell::Category(g),
                    Cell::Real(10.0 * x1 + e),
                ]
            })
            .collect();
        Dataset::new(schema, rows, "linear").unwrap()
    }

    #[test]
    fn metrics_definitions() {
        let t = [1.0, 2.0, 3.0, 6.0];
        let perfect = evaluate_predictions(&t, &t).unwrap();
        assert_eq!(perfect.rmse, 0.0);
        assert_eq!(perfect.r2, Some(1.0));
        let mean = [3.0; 4];
        assert_eq!(evaluate_predictions(&mean, &t).unwrap().r2, Some(0.0));
        let flat = evaluate_predictions(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert_eq!(flat.r2, None);
        assert_eq!(flat.rmse, 1.0);
        assert!(evaluate_predictions(&[], &[]).is_err());
    }

    #[test]
    fn importance_single_split_and_constant_model() {
        let ds = linear_dataset(1, 50);
        let hp = GbtHyperParams {
            tree_count: 1,
            max_depth: 1,
            learning_rate: 1.0,
            ..Default::default()
        };
        let m = fit_gbt(&ds, &hp).unwrap();
        let layout = FeatureLayout::from_schema(&ds.schema);
        let rep = importance(&m, &layout);
        assert_eq!(rep.features[0].feature, "X1");
        assert!(rep.features[0].gain > 0.0);
        assert!(rep.features[1..].iter().all(|f| f.gain == 0.0));

        let mut flat = ds.clone();
        for r in &mut flat.rows {
            r[3] = Cell::Real(1.0);
        }
        let c = fit_gbt(&flat, &GbtHyperParams::default()).unwrap();
        assert!(importance(&c, &layout).features.iter().all(|f| f.gain == 0.0));
    }

    #[test]
    fn informative_feature_dominates_importance() {
        let wins = (0..10)
            .filter(|&s| {
                let ds = linear_dataset(100 + s, 200);
                let m = fit_gbt(&ds, &GbtHyperParams::default()).unwrap();
                let rep = importance(&m, &FeatureLayout::from_schema(&ds.schema));
                rep.gain_of("X1").unwrap() > rep.gain_of("X2").unwrap()
            })
            .count();
        assert!(wins >= 9, "{wins}/10");
    }

    #[test]
    fn evaluate_on_dataset() {
        let ds = linear_dataset(2, 300);
        let m = fit_gbt(&ds, &GbtHyperParams::default()).unwrap();
        let test = linear_dataset(3, 100);
        let met = evaluate(&m, &test).unwrap();
        assert!(met.r2.unwrap() > 0.9, "{met:?}");
    }
}
