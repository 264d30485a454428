use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, SplitParams, Tree};
use super::{Regressor, RegressorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtHyperParams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for GbtHyperParams {
    fn default() -> Self {
        Self {
            tree_count: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            subsample_fraction: 1.0,
            seed: 0,
        }
    }
}

impl GbtHyperParams {
    pub fn validate(&self) -> Result<(), RegressorError> {
        let bad = |m: &str| Err(RegressorError::HyperParams(m.to_string()));
        if self.tree_count < 1 {
            return bad("tree_count must be at least 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad("subsample_fraction must lie in (0, 1]");
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be at least 1");
        }
        Ok(())
    }

    /// depth {2,3,4} x trees {100,300} x rate {0.05,0.1}.
    pub fn default_grid(seed: u64) -> Vec<GbtHyperParams> {
        let mut grid = Vec::new();
        for max_depth in [2, 3, 4] {
            for tree_count in [100, 300] {
                for learning_rate in [0.05, 0.1] {
                    grid.push(GbtHyperParams {
                        tree_count,
                        max_depth,
                        learning_rate,
                        seed,
                        ..Default::default()
                    });
                }
            }
        }
        grid
    }
}

/// Additive ensemble: `base_score + learning_rate * sum(leaf values)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub hyperparams: GbtHyperParams,
    pub arity: usize,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    /// Training RMSE after each boosting round (index 0 = base score only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_rmse_trace: Vec<f64>,
}

fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    let sse: f64 = pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum();
    (sse / y.len() as f64).sqrt()
}

impl GbtModel {
    /// Fits on an already encoded matrix. `x` rows must share one width.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[f64],
        feature_names: Vec<String>,
        hp: &GbtHyperParams,
    ) -> Result<Self, RegressorError> {
        hp.validate()?;
        if x.len() < 2 || x.len() != y.len() {
            return Err(RegressorError::TooFewRows(x.len()));
        }
        let arity = x[0].len();
        if x.iter().any(|r| r.len() != arity) || feature_names.len() != arity {
            return Err(RegressorError::Arity {
                expected: arity,
                found: feature_names.len(),
            });
        }
        if y.iter().chain(x.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(RegressorError::NonFinite);
        }

        let n = y.len();
        let mut sorted = y.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let base_score = sorted.iter().sum::<f64>() / n as f64;

        let params = SplitParams {
            max_depth: hp.max_depth,
            min_samples_leaf: hp.min_samples_leaf,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let mut pred = vec![base_score; n];
        let mut residual = vec![0.0; n];
        let mut trees = Vec::with_capacity(hp.tree_count);
        let mut trace = vec![rmse(&pred, y)];
        let all: Vec<usize> = (0..n).collect();
        let take = ((hp.subsample_fraction * n as f64).ceil() as usize).clamp(1, n);

        for _ in 0..hp.tree_count {
            for i in 0..n {
                residual[i] = y[i] - pred[i];
            }
            let tree = if take < n {
                let mut rows = sample(&mut rng, n, take).into_vec();
                rows.sort_unstable();
                grow(x, &residual, &rows, &params)
            } else {
                grow(x, &residual, &all, &params)
            };
            for i in 0..n {
                pred[i] += hp.learning_rate * tree.leaf_value(&x[i]);
            }
            trace.push(rmse(&pred, y));
            trees.push(tree);
        }

        Ok(GbtModel {
            base_score,
            hyperparams: hp.clone(),
            arity,
            feature_names,
            trees,
            train_rmse_trace: trace,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, RegressorError> {
        if x.len() != self.arity {
            return Err(RegressorError::Arity {
                expected: self.arity,
                found: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = self.base_score;
        for t in &self.trees {
            acc += self.hyperparams.learning_rate * t.leaf_value(x);
        }
        acc
    }

    /// Total split gain per encoded input slot.
    pub fn slot_gains(&self) -> Vec<f64> {
        let mut gains = vec![0.0; self.arity];
        for t in &self.trees {
            for (i, &f) in t.feature.iter().enumerate() {
                if f >= 0 {
                    gains[f as usize] += t.gain[i];
                }
            }
        }
        gains
    }

    pub fn validate(&self) -> Result<(), RegressorError> {
        self.hyperparams.validate()?;
        if self.feature_names.len() != self.arity
            || !self.trees.iter().all(|t| t.is_well_formed(self.arity))
        {
            return Err(RegressorError::Malformed);
        }
        Ok(())
    }
}

impl Regressor for GbtModel {
    fn arity(&self) -> usize {
        self.arity
    }

    fn predict(&self, x: &[f64]) -> Result<f64, RegressorError> {
        GbtModel::predict(self, x)
    }
}
