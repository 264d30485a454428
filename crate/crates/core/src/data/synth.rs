use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Cell, ColumnRole, ColumnSpec, DataError, Dataset, Schema};

/// Three axis-aligned 3-D Gaussian clusters with response
/// `X1 + X2 + X3 + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub means: [[f64; 3]; 3],
    /// Diagonal of each component covariance (variances).
    pub variances: [[f64; 3]; 3],
    pub points_per_component: usize,
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            means: [[0.0, -5.0, -5.0], [5.0, 0.0, -5.0], [5.0, 5.0, 0.0]],
            variances: [[5.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 5.0]],
            points_per_component: 200,
            noise_std: 2.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Schema(format!("synthetic spec: {m}")));
        if !(self.noise_std > 0.0) {
            return bad("noise std must be positive");
        }
        if self.points_per_component == 0 {
            return bad("points per component must be positive");
        }
        if self.variances.iter().flatten().any(|v| !(*v > 0.0)) {
            return bad("variances must be positive");
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return bad("means must be finite");
        }
        Ok(())
    }

    pub fn schema() -> Schema {
        Schema::new(vec![
            ColumnSpec::continuous("X1", ColumnRole::Feature),
            ColumnSpec::continuous("X2", ColumnRole::Feature),
            ColumnSpec::continuous("X3", ColumnRole::Feature),
            ColumnSpec::continuous("Y", ColumnRole::Response),
        ])
        .expect("static schema")
    }
}

/// Rows are emitted component by component.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(3 * spec.points_per_component);
    for (mean, var) in spec.means.iter().zip(&spec.variances) {
        for _ in 0..spec.points_per_component {
            let mut row = Vec::with_capacity(4);
            let mut sum = 0.0;
            for j in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                let x = mean[j] + var[j].sqrt() * z;
                sum += x;
                row.push(Cell::Real(x));
            }
            let e: f64 = rng.sample(StandardNormal);
            row.push(Cell::Real(sum + spec.noise_std * e));
            rows.push(row);
        }
    }
    Dataset::new(SyntheticSpec::schema(), rows, &format!("synthetic(seed={seed})"))
}
