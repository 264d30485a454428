use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cell, ColumnKind, DataError, Dataset};

/// Seeded random partition. Each side keeps the input's relative row order.
pub fn split(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::Fraction(train_fraction));
    }
    let n = dataset.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(DataError::EmptyPartition {
            n,
            fraction: train_fraction,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let (train, test) = idx.split_at_mut(n_train);
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(train), dataset.subset(test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdConvention {
    /// Divide by n.
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-column affine transform for continuous features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub convention: StdConvention,
    pub columns: Vec<ColumnStats>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn observed(dataset: &Dataset, col: usize) -> Vec<f64> {
    dataset.rows.iter().filter_map(|r| r[col].as_real()).collect()
}

pub fn fit_standardizer(train: &Dataset) -> Result<Standardizer, DataError> {
    let mut columns = Vec::new();
    for c in train.schema.continuous_features() {
        let name = &train.schema.columns()[c].name;
        let values = observed(train, c);
        if values.len() < 2 {
            return Err(DataError::TooFewValues(name.clone()));
        }
        let (mean, std) = mean_std(&values);
        if !(std > 0.0) || std < 1e-12 * mean.abs().max(1.0) {
            return Err(DataError::ZeroVariance(name.clone()));
        }
        columns.push(ColumnStats {
            name: name.clone(),
            mean,
            std,
        });
    }
    Ok(Standardizer {
        convention: StdConvention::Population,
        columns,
    })
}

impl Standardizer {
    pub fn stats(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset, DataError> {
        self.map(ds, |v, s| (v - s.mean) / s.std)
    }

    pub fn invert(&self, ds: &Dataset) -> Result<Dataset, DataError> {
        self.map(ds, |v, s| v * s.std + s.mean)
    }

    pub fn to_real(&self, name: &str, z: f64) -> f64 {
        match self.stats(name) {
            Some(s) => z * s.std + s.mean,
            None => z,
        }
    }

    pub fn to_standard(&self, name: &str, v: f64) -> f64 {
        match self.stats(name) {
            Some(s) => (v - s.mean) / s.std,
            None => v,
        }
    }

    fn map(&self, ds: &Dataset, f: impl Fn(f64, &ColumnStats) -> f64) -> Result<Dataset, DataError> {
        let mut cols = Vec::with_capacity(self.columns.len());
        for s in &self.columns {
            let i = ds
                .schema
                .index_of(&s.name)
                .ok_or_else(|| DataError::UnknownColumn(s.name.clone()))?;
            cols.push((i, s));
        }
        let mut out = ds.clone();
        for row in &mut out.rows {
            for &(i, s) in &cols {
                if let Cell::Real(v) = row[i] {
                    row[i] = Cell::Real(f(v, s));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Fill {
    Median { name: String, value: f64 },
    Mode { name: String, level: usize },
}

/// Missing-value fill learned from a training split: median for continuous
/// features, mode (lowest level on ties) for discrete ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub fills: Vec<Fill>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl Imputer {
    pub fn fit(train: &Dataset) -> Result<Self, DataError> {
        let mut fills = Vec::new();
        for c in train.schema.feature_indices() {
            let spec = &train.schema.columns()[c];
            match spec.kind {
                ColumnKind::Continuous => {
                    let values = observed(train, c);
                    if values.is_empty() {
                        return Err(DataError::AllMissing(spec.name.clone()));
                    }
                    fills.push(Fill::Median {
                        name: spec.name.clone(),
                        value: median(values),
                    });
                }
                ColumnKind::Discrete => {
                    let mut counts = vec![0usize; spec.levels.len()];
                    for r in &train.rows {
                        if let Some(l) = r[c].as_category() {
                            counts[l] += 1;
                        }
                    }
                    let best = counts.iter().copied().max().unwrap_or(0);
                    if best == 0 {
                        return Err(DataError::AllMissing(spec.name.clone()));
                    }
                    let level = counts.iter().position(|&n| n == best).expect("max exists");
                    fills.push(Fill::Mode {
                        name: spec.name.clone(),
                        level,
                    });
                }
            }
        }
        Ok(Self { fills })
    }

    pub fn apply(&self, target: &Dataset) -> Result<Dataset, DataError> {
        let mut out = target.clone();
        for fill in &self.fills {
            let (name, cell) = match fill {
                Fill::Median { name, value } => (name, Cell::Real(*value)),
                Fill::Mode { name, level } => (name, Cell::Category(*level)),
            };
            let i = target
                .schema
                .index_of(name)
                .ok_or_else(|| DataError::UnknownColumn(name.clone()))?;
            for row in &mut out.rows {
                if row[i].is_missing() {
                    row[i] = cell.clone();
                }
            }
        }
        Ok(out)
    }
}

pub fn impute_median(train: &Dataset, target: &Dataset) -> Result<Dataset, DataError> {
    Imputer::fit(train)?.apply(target)
}

/// Removes rows with any continuous feature more than three (population)
/// standard deviations from this dataset's own mean. Missing cells never
/// trigger removal; constant columns remove nothing.
pub fn drop_outliers_3sigma(train: &Dataset) -> Dataset {
    let stats: Vec<(usize, f64, f64)> = train
        .schema
        .continuous_features()
        .into_iter()
        .filter_map(|c| {
            let values = observed(train, c);
            if values.is_empty() {
                return None;
            }
            let (m, s) = mean_std(&values);
            (s > 0.0).then_some((c, m, s))
        })
        .collect();
    let keep: Vec<usize> = (0..train.len())
        .filter(|&r| {
            stats.iter().all(|&(c, m, s)| match train.rows[r][c] {
                Cell::Real(v) => ((v - m) / s).abs() <= 3.0,
                _ => true,
            })
        })
        .collect();
    train.subset(&keep)
}
