use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_predictions, feature_gains, EncodedTable, GbtHyperParams, GbtModel, RegressorError};
use crate::data::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best: GbtHyperParams,
    pub best_index: usize,
    /// Mean held-out RMSE per grid entry, in grid order.
    pub mean_rmse: Vec<f64>,
}

/// Seeded assignment of rows to folds; returns the held-out rows per fold.
fn fold_rows(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>, RegressorError> {
    if folds < 2 || n < folds {
        return Err(RegressorError::Folds { folds, rows: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (p, i) in idx.into_iter().enumerate() {
        out[p % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

fn complement(n: usize, held: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in held {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

pub(crate) fn cross_validate_table(
    table: &EncodedTable,
    grid: &[GbtHyperParams],
    folds: usize,
    seed: u64,
) -> Result<CvOutcome, RegressorError> {
    if grid.is_empty() {
        return Err(RegressorError::EmptyGrid);
    }
    let n = table.y.len();
    let fold_sets = fold_rows(n, folds, seed)?;
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..folds).map(move |f| (g, f)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(g, f)| {
            let held = &fold_sets[f];
            let (xt, yt) = table.subset(&complement(n, held));
            let (xv, yv) = table.subset(held);
            let m = GbtModel::fit(&xt, &yt, table.slot_names.clone(), &grid[g])?;
            let pred: Vec<f64> = xv.iter().map(|r| m.predict_unchecked(r)).collect();
            Ok(evaluate_predictions(&pred, &yv)?.rmse)
        })
        .collect::<Result<Vec<f64>, RegressorError>>()?;
    let mean_rmse: Vec<f64> = scores
        .chunks(folds)
        .map(|c| c.iter().sum::<f64>() / folds as f64)
        .collect();
    let mut best_index = 0;
    for (i, &s) in mean_rmse.iter().enumerate() {
        if s < mean_rmse[best_index] {
            best_index = i;
        }
    }
    Ok(CvOutcome {
        best: grid[best_index].clone(),
        best_index,
        mean_rmse,
    })
}

/// Picks the grid entry with the lowest mean held-out RMSE; ties go to the
/// earliest entry.
pub fn cross_validate(
    train: &Dataset,
    grid: &[GbtHyperParams],
    folds: usize,
    seed: u64,
) -> Result<CvOutcome, RegressorError> {
    cross_validate_table(&EncodedTable::from_dataset(train)?, grid, folds, seed)
}

/// Recursive feature elimination: repeatedly drops the feature with the
/// lowest gain averaged over CV training folds until `keep` remain. Ties
/// drop the later feature in schema order. Returns names in schema order.
pub fn rfe(
    train: &Dataset,
    keep: usize,
    folds: usize,
    seed: u64,
    hp: &GbtHyperParams,
) -> Result<Vec<String>, RegressorError> {
    let all = crate::data::FeatureLayout::from_schema(&train.schema).feature_names;
    if keep < 1 || keep > all.len() {
        return Err(RegressorError::KeepRange {
            keep,
            features: all.len(),
        });
    }
    let mut current = all;
    let fold_sets = fold_rows(train.len(), folds, seed)?;
    while current.len() > keep {
        let table = EncodedTable::from_dataset(&train.project_features(&current)?)?;
        let n = table.y.len();
        let per_fold = fold_sets
            .par_iter()
            .map(|held| {
                let (xt, yt) = table.subset(&complement(n, held));
                let m = GbtModel::fit(&xt, &yt, table.slot_names.clone(), hp)?;
                Ok(feature_gains(&m, &table.layout))
            })
            .collect::<Result<Vec<Vec<f64>>, RegressorError>>()?;
        let mean: Vec<f64> = (0..current.len())
            .map(|j| per_fold.iter().map(|g| g[j]).sum::<f64>() / folds as f64)
            .collect();
        let mut drop = 0;
        for (j, &g) in mean.iter().enumerate() {
            if g <= mean[drop] {
                drop = j;
            }
        }
        current.remove(drop);
    }
    Ok(current)
}
