use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bundle::{
    AxisSummary, BundleMeta, InstanceRecord, ModelBundle, RegressorArtifact, REGRESSOR_FILE,
    SURROGATE_FILE,
};
use super::ledger::{Ledger, LedgerEntry};
use super::{stage, write_json, DatasetSource, PipelineError, RunConfig};
use crate::data::{
    drop_outliers_3sigma, fit_standardizer, gen_synthetic, load_csv, load_schema, split, write_csv,
    write_schema, Dataset, FeatureLayout, Fill, Imputer, SyntheticSpec,
};
use crate::regressor::{
    cross_validate, evaluate, fit_gbt, importance, rfe, EncodedTable, GbtHyperParams, Metrics,
};
use crate::surrogate::{select_k, SelectConfig, SurrogateData, SurrogateSpec, WbicEntry};

pub const SYNTH_CSV: &str = "synthetic.csv";
pub const SYNTH_SCHEMA: &str = "synthetic.schema.json";
pub const FIT_SUMMARY_FILE: &str = "fit_summary.json";

/// Writes the synthetic dataset and its schema into the run directory.
pub fn cmd_synth(config: &RunConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let started = Instant::now();
    let spec = match &config.dataset {
        DatasetSource::Synthetic { spec } => spec.clone(),
        DatasetSource::Csv { .. } => SyntheticSpec::default(),
    };
    let dir = config.output_dir()?;
    std::fs::create_dir_all(&dir)?;
    let ds = stage("synth", gen_synthetic(&spec, config.seed))?;
    let csv = dir.join(SYNTH_CSV);
    let schema = dir.join(SYNTH_SCHEMA);
    stage("synth", write_csv(&csv, &ds))?;
    stage("synth", write_schema(&schema, &ds.schema))?;
    Ledger::new(&dir).append(&LedgerEntry::new(
        "synth",
        started,
        config.seed,
        vec![SYNTH_CSV.into(), SYNTH_SCHEMA.into()],
        serde_json::json!({ "rows": ds.len() }),
    ))?;
    Ok(vec![csv, schema])
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset, PipelineError> {
    match &config.dataset {
        DatasetSource::Synthetic { spec } => stage("load", gen_synthetic(spec, config.seed)),
        DatasetSource::Csv { path, schema } => {
            let schema = stage("load", load_schema(&config.resolve(schema)))?;
            stage("load", load_csv(&config.resolve(path), &schema))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub rows: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub surrogate_rows: usize,
    pub features: Vec<String>,
    pub cv_mean_rmse: Vec<f64>,
    pub hyperparams: GbtHyperParams,
    pub metrics: Metrics,
    pub sigma: f64,
    pub wbic: Vec<WbicEntry>,
    pub chosen_k: usize,
    pub intervention: Vec<String>,
}

/// Picks intervention features: the explicit list, or the most important
/// continuous features not excluded.
pub fn choose_intervention(
    config: &RunConfig,
    layout: &FeatureLayout,
    ranked: &[String],
) -> Result<Vec<String>, PipelineError> {
    let iv = &config.intervention;
    for name in &iv.exclude {
        if !layout.feature_names.contains(name) {
            return Err(PipelineError::Config(format!("excluded feature `{name}` is not a model feature")));
        }
    }
    if let Some(list) = &iv.features {
        for name in list {
            if layout.continuous_index(name).is_none() {
                return Err(PipelineError::Config(format!(
                    "intervention feature `{name}` is not a continuous model feature"
                )));
            }
        }
        return Ok(list.clone());
    }
    let candidates: Vec<String> = ranked
        .iter()
        .filter(|n| layout.continuous_index(n).is_some() && !iv.exclude.contains(n))
        .cloned()
        .collect();
    if iv.top_n > candidates.len() {
        return Err(PipelineError::Config(format!(
            "top_n {} exceeds the {} eligible features",
            iv.top_n,
            candidates.len()
        )));
    }
    Ok(candidates[..iv.top_n].to_vec())
}

fn records(ds: &Dataset, layout: &FeatureLayout) -> Vec<InstanceRecord> {
    (0..ds.len())
        .map(|r| InstanceRecord::from_row(ds.instance_id(r), &ds.schema, layout, &ds.rows[r]))
        .collect()
}

/// Runs split, optional feature elimination, tuning, regressor fit and
/// evaluation, surrogate fitting with K selection, and writes the bundle.
pub fn fit_bundle(config: &RunConfig) -> Result<(ModelBundle, FitSummary), PipelineError> {
    let raw = load_dataset(config)?;
    let (train_raw, test_raw) = stage("split", split(&raw, config.train_fraction, config.seed))?;
    // rows without a response cannot train or score the regressor
    let keep_resp = |d: &Dataset| {
        let idx: Vec<usize> = (0..d.len()).filter(|&i| d.response()[i].is_some()).collect();
        d.subset(&idx)
    };
    let train_raw = keep_resp(&train_raw);

    let imputer = stage("impute", Imputer::fit(&train_raw))?;
    let train_imp = stage("impute", imputer.apply(&train_raw))?;
    let mut standardizer = stage("standardize", fit_standardizer(&train_imp))?;
    let mut train = stage("standardize", standardizer.apply(&train_imp))?;

    let mut model_schema = train.schema.clone();
    if let Some(keep) = config.regressor.rfe_keep {
        let hp = GbtHyperParams {
            seed: config.seed,
            ..Default::default()
        };
        let kept = stage("rfe", rfe(&train, keep, config.regressor.folds, config.seed, &hp))?;
        train = stage("rfe", train.project_features(&kept))?;
        model_schema = train.schema.clone();
        standardizer.columns.retain(|c| kept.contains(&c.name));
    }
    let layout = FeatureLayout::from_schema(&model_schema);
    let imputer = Imputer {
        fills: imputer
            .fills
            .into_iter()
            .filter(|f| {
                let name = match f {
                    Fill::Median { name, .. } | Fill::Mode { name, .. } => name,
                };
                layout.feature_names.contains(name)
            })
            .collect(),
    };
    let project = |d: &Dataset| d.project_features(&layout.feature_names);

    let grid = config
        .regressor
        .grid
        .clone()
        .unwrap_or_else(|| GbtHyperParams::default_grid(config.seed));
    let cv = stage("cv", cross_validate(&train, &grid, config.regressor.folds, config.seed))?;
    let model = stage("regressor", fit_gbt(&train, &cv.best))?;

    let test_proj = stage("evaluate", project(&test_raw))?;
    let test_scored = keep_resp(&test_proj);
    let test_std = stage("evaluate", standardizer.apply(&stage("evaluate", imputer.apply(&test_scored))?))?;
    let metrics = stage("evaluate", evaluate(&model, &test_std))?;
    let sigma = metrics.rmse / 2.0;
    if !(sigma > 0.0) {
        return Err(PipelineError::Stage {
            stage: "surrogate".into(),
            message: "test RMSE is zero, so the response noise scale is undefined".into(),
        });
    }

    let sur_train = drop_outliers_3sigma(&train);
    let sur_table = stage("surrogate", EncodedTable::from_dataset(&sur_train))?;
    let rows = stage("surrogate", sur_train.model_rows())?;
    let y_hat: Vec<f64> = sur_table.x.iter().map(|x| model.predict_unchecked(x)).collect();
    let n = y_hat.len() as f64;
    let y_mean = y_hat.iter().sum::<f64>() / n;
    let y_std = (y_hat.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
    let data = SurrogateData {
        x_cont: rows.iter().map(|r| r.x_cont.clone()).collect(),
        x_disc: rows.iter().map(|r| r.x_disc.clone()).collect(),
        y: y_hat,
    };
    let base = SurrogateSpec {
        k: 1,
        d_cont: layout.d_cont(),
        disc_cards: layout.cardinalities.clone(),
        sigma,
        y_mean,
        y_std: if y_std > 0.0 { y_std } else { 1.0 },
        scale_floor: config.surrogate.scale_floor,
    };
    let sel = SelectConfig {
        iterations: config.surrogate.iterations,
        warmup: config.surrogate.warmup,
        seed: config.seed,
        planning_draws: config.surrogate.planning_draws,
        density_mode: config.surrogate.density_mode,
    };
    let surrogate = stage("surrogate", select_k(&data, &base, &config.surrogate.k_range, &sel))?;

    let imp = importance(&model, &layout);
    let intervention = choose_intervention(config, &layout, &imp.ranked_names())?;

    let axes = layout
        .continuous
        .iter()
        .map(|name| {
            let s = standardizer.stats(name).expect("standardized column");
            let c = train.schema.index_of(name).expect("model column");
            let vals: Vec<f64> = train.rows.iter().filter_map(|r| r[c].as_real()).collect();
            AxisSummary {
                name: name.clone(),
                mean: s.mean,
                std: s.std,
                train_min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                train_max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();

    let predict_records = |ds: &Dataset| -> Result<Vec<InstanceRecord>, PipelineError> {
        let filled = standardizer.apply(&imputer.apply(ds)?)?;
        let rows = filled.model_rows()?;
        let mut recs = records(ds, &layout);
        for (r, m) in recs.iter_mut().zip(&rows) {
            r.prediction = model.predict(&layout.encode(&m.x_cont, &m.x_disc))?;
        }
        Ok(recs)
    };
    let test_instances = stage("instances", predict_records(&test_proj))?;
    let training = stage("instances", predict_records(&stage("instances", project(&train_imp))?))?;

    let summary = FitSummary {
        rows: raw.len(),
        train_rows: train.len(),
        test_rows: test_proj.len(),
        surrogate_rows: data.len(),
        features: layout.feature_names.clone(),
        cv_mean_rmse: cv.mean_rmse.clone(),
        hyperparams: cv.best.clone(),
        metrics,
        sigma,
        wbic: surrogate.wbic_table.clone(),
        chosen_k: surrogate.k(),
        intervention: intervention.clone(),
    };
    let bundle = ModelBundle {
        meta: BundleMeta {
            schema: model_schema,
            imputer,
            axes,
            intervention,
            regressor_file: REGRESSOR_FILE.into(),
            surrogate_file: SURROGATE_FILE.into(),
            test_instances,
            training,
            config: config.portable(),
        },
        regressor: RegressorArtifact {
            model,
            standardizer,
            layout,
            metrics,
            importance: imp,
        },
        surrogate,
    };
    bundle.validate()?;
    Ok((bundle, summary))
}

/// Fits all models and writes the bundle, a summary and a ledger entry.
pub fn cmd_fit(config: &RunConfig) -> Result<(ModelBundle, FitSummary), PipelineError> {
    let started = Instant::now();
    let dir = config.output_dir()?;
    let (bundle, summary) = fit_bundle(config)?;
    let mut artifacts = bundle.save(&dir)?;
    write_json(&dir.join(FIT_SUMMARY_FILE), &summary)?;
    artifacts.push(FIT_SUMMARY_FILE.into());
    if let DatasetSource::Synthetic { .. } = config.dataset {
        let ds = load_dataset(config)?;
        stage("fit", write_csv(&dir.join(SYNTH_CSV), &ds))?;
        stage("fit", write_schema(&dir.join(SYNTH_SCHEMA), &ds.schema))?;
        artifacts.push(SYNTH_CSV.into());
        artifacts.push(SYNTH_SCHEMA.into());
    }
    Ledger::new(&dir).append(&LedgerEntry::new(
        "fit",
        started,
        config.seed,
        artifacts,
        serde_json::json!({
            "rmse": summary.metrics.rmse,
            "r2": summary.metrics.r2,
            "chosen_k": summary.chosen_k,
            "wbic": summary.wbic.iter().map(|e| (e.k, e.wbic)).collect::<Vec<_>>(),
        }),
    ))?;
    Ok((bundle, summary))
}
