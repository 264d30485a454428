//! Stochastic surrogate: a K-component mixture of experts over
//! (continuous features, discrete features, predicted response), fitted by
//! MCMC, with the component count chosen by WBIC.

mod mcmc;
mod params;

pub use mcmc::{
    batch_means_se, fit_mcmc, BlockAcceptance, BlockKind, ChainDiagnostics, McmcConfig,
    PosteriorSamples, SurrogateData,
};
pub use params::{
    log_joint_density, log_joint_unchecked, log_prior, Component, ParamSet, SurrogateSpec,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::log_sum_exp;

#[derive(Debug, Error, PartialEq)]
pub enum SurrogateError {
    #[error("invalid surrogate spec: {0}")]
    Spec(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("temper beta {0} outside (0, 1]")]
    Temper(f64),
    #[error("{rows} rows are too few for {k} components (need 10 per component)")]
    TooFewRows { rows: usize, k: usize },
    #[error("no finite starting point after {0} attempts")]
    Initialization(usize),
    #[error("WBIC needs draws at beta = 1/ln({n}) = {expected}, chain used {found}")]
    WbicTemper { n: usize, expected: f64, found: f64 },
    #[error("WBIC needs at least 3 rows, got {0}")]
    WbicRows(usize),
    #[error("model has no posterior draws")]
    Unfitted,
    #[error("empty component range")]
    EmptyRange,
    #[error("chain for K={k} failed: {source}")]
    Chain {
        k: usize,
        #[source]
        source: Box<SurrogateError>,
    },
}

/// The inverse temperature WBIC requires for `n` rows.
pub fn wbic_beta(n: usize) -> f64 {
    1.0 / (n as f64).ln()
}

/// Mean over tempered draws of the total negative log-likelihood.
pub fn wbic(samples: &PosteriorSamples, data: &SurrogateData) -> Result<f64, SurrogateError> {
    let n = data.len();
    if n < 3 {
        return Err(SurrogateError::WbicRows(n));
    }
    let expected = wbic_beta(n);
    if (samples.temper_beta - expected).abs() > 1e-12 * expected {
        return Err(SurrogateError::WbicTemper {
            n,
            expected,
            found: samples.temper_beta,
        });
    }
    if samples.draws.is_empty() {
        return Err(SurrogateError::Unfitted);
    }
    let sigma = samples.spec.sigma;
    let total: f64 = samples
        .draws
        .iter()
        .map(|d| -data.log_likelihood(d, sigma))
        .sum();
    let value = total / samples.draws.len() as f64;
    if !value.is_finite() {
        return Err(SurrogateError::NonFinite);
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMode {
    /// Log of the average density over the thinned planning draws.
    #[default]
    SampleAverage,
    /// Density under the single draw with the highest log posterior.
    MapSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WbicEntry {
    pub k: usize,
    pub wbic: f64,
    pub diagnostics: ChainDiagnostics,
}

/// Fitted surrogate used for planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub spec: SurrogateSpec,
    pub density_mode: DensityMode,
    /// Thinned untempered draws averaged in sample-average mode.
    pub draws: Vec<ParamSet>,
    pub map_draw: ParamSet,
    pub wbic: f64,
    pub wbic_table: Vec<WbicEntry>,
    pub seed: u64,
    pub iterations: usize,
    pub warmup: usize,
    pub planning_diagnostics: ChainDiagnostics,
}

impl SurrogateModel {
    /// Builds a planning model from an untempered chain, keeping `count`
    /// evenly spaced draws.
    pub fn from_samples(
        samples: &PosteriorSamples,
        count: usize,
        density_mode: DensityMode,
        wbic_table: Vec<WbicEntry>,
    ) -> Result<Self, SurrogateError> {
        if samples.draws.is_empty() || count == 0 {
            return Err(SurrogateError::Unfitted);
        }
        let n = samples.draws.len();
        let count = count.min(n);
        let draws = (0..count).map(|i| samples.draws[i * n / count].clone()).collect();
        let map_index = (0..n)
            .max_by(|&a, &b| samples.log_post[a].total_cmp(&samples.log_post[b]).then(b.cmp(&a)))
            .expect("non-empty");
        let wbic = wbic_table
            .iter()
            .find(|e| e.k == samples.spec.k)
            .map(|e| e.wbic)
            .unwrap_or(f64::NAN);
        Ok(Self {
            spec: samples.spec.clone(),
            density_mode,
            draws,
            map_draw: samples.draws[map_index].clone(),
            wbic,
            wbic_table,
            seed: samples.seed,
            iterations: samples.iterations,
            warmup: samples.warmup,
            planning_diagnostics: samples.diagnostics.clone(),
        })
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn node_log_density(&self, x_cont: &[f64], x_disc: &[usize], y: f64) -> Result<f64, SurrogateError> {
        if self.draws.is_empty() {
            return Err(SurrogateError::Unfitted);
        }
        log_joint_density(&self.draws[0], self.spec.sigma, x_cont, x_disc, y)?;
        Ok(self.node_log_density_unchecked(x_cont, x_disc, y))
    }

    pub fn node_log_density_unchecked(&self, x_cont: &[f64], x_disc: &[usize], y: f64) -> f64 {
        let sigma = self.spec.sigma;
        match self.density_mode {
            DensityMode::MapSample => log_joint_unchecked(&self.map_draw, sigma, x_cont, x_disc, y),
            DensityMode::SampleAverage => {
                let v: Vec<f64> = self
                    .draws
                    .iter()
                    .map(|d| log_joint_unchecked(d, sigma, x_cont, x_disc, y))
                    .collect();
                log_sum_exp(&v) - (v.len() as f64).ln()
            }
        }
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        self.spec.validate()?;
        if self.draws.is_empty() {
            return Err(SurrogateError::Unfitted);
        }
        for d in self.draws.iter().chain(std::iter::once(&self.map_draw)) {
            d.validate(&self.spec)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub planning_draws: usize,
    pub density_mode: DensityMode,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            iterations: 1500,
            warmup: 500,
            seed: 0,
            planning_draws: 64,
            density_mode: DensityMode::SampleAverage,
        }
    }
}

/// Runs one tempered chain per K and returns the WBIC table, in `k_range`
/// order. Chains run in parallel with per-K random streams.
pub fn wbic_sweep(
    data: &SurrogateData,
    base: &SurrogateSpec,
    k_range: &[usize],
    cfg: &SelectConfig,
) -> Result<Vec<WbicEntry>, SurrogateError> {
    if k_range.is_empty() {
        return Err(SurrogateError::EmptyRange);
    }
    let beta = wbic_beta(data.len());
    k_range
        .par_iter()
        .map(|&k| {
            let wrap = |e: SurrogateError| SurrogateError::Chain { k, source: Box::new(e) };
            let mcmc = McmcConfig {
                iterations: cfg.iterations,
                warmup: cfg.warmup,
                seed: cfg.seed,
                ..Default::default()
            };
            let samples = fit_mcmc(data, &base.with_k(k), beta, &mcmc).map_err(wrap)?;
            Ok(WbicEntry {
                k,
                wbic: wbic(&samples, data).map_err(wrap)?,
                diagnostics: samples.diagnostics,
            })
        })
        .collect()
}

/// Chooses K by minimum WBIC (ties go to the smaller K), then fits the
/// untempered planning chain at that K.
pub fn select_k(
    data: &SurrogateData,
    base: &SurrogateSpec,
    k_range: &[usize],
    cfg: &SelectConfig,
) -> Result<SurrogateModel, SurrogateError> {
    let table = wbic_sweep(data, base, k_range, cfg)?;
    let best = table
        .iter()
        .min_by(|a, b| a.wbic.total_cmp(&b.wbic).then(a.k.cmp(&b.k)))
        .expect("non-empty table")
        .k;
    let mcmc = McmcConfig {
        iterations: cfg.iterations,
        warmup: cfg.warmup,
        seed: cfg.seed ^ 0x9E37_79B9_7F4A_7C15,
        ..Default::default()
    };
    let samples = fit_mcmc(data, &base.with_k(best), 1.0, &mcmc).map_err(|e| SurrogateError::Chain {
        k: best,
        source: Box::new(e),
    })?;
    let mut model = SurrogateModel::from_samples(&samples, cfg.planning_draws, cfg.density_mode, table)?;
    model.seed = cfg.seed;
    Ok(model)
}
