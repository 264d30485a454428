//! Adaptive random-walk Metropolis-within-Gibbs over the surrogate
//! parameters, with the component labels marginalized out of the
//! likelihood.
//!
//! Constrained parameters are moved in unconstrained coordinates: mixture
//! weights and categorical probabilities through the additive log-ratio
//! map, component scales through `log`. The corresponding log-Jacobian
//! terms are part of the target. Every scalar coordinate (and every simplex
//! as a whole) has its own proposal scale, tuned during warmup towards an
//! acceptance rate of 0.3 and frozen afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::{log_prior, Component, ParamSet, SurrogateSpec};
use super::SurrogateError;
use crate::math::{alr, alr_inverse, log_sum_exp};
#[cfg(test)]
use crate::math::normal_ln_pdf;

/// Rows the surrogate is fitted to: standardized features paired with the
/// regressor's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateData {
    pub x_cont: Vec<Vec<f64>>,
    pub x_disc: Vec<Vec<usize>>,
    pub y: Vec<f64>,
}

impl SurrogateData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn validate(&self, spec: &SurrogateSpec) -> Result<(), SurrogateError> {
        let n = self.y.len();
        if self.x_cont.len() != n || self.x_disc.len() != n {
            return Err(SurrogateError::Dimension("row counts differ".into()));
        }
        for (xc, xd) in self.x_cont.iter().zip(&self.x_disc) {
            if xc.len() != spec.d_cont || xd.len() != spec.disc_cards.len() {
                return Err(SurrogateError::Dimension("row width does not match spec".into()));
            }
            if xd.iter().zip(&spec.disc_cards).any(|(&l, &c)| l >= c) {
                return Err(SurrogateError::Dimension("discrete level out of range".into()));
            }
        }
        if self
            .y
            .iter()
            .chain(self.x_cont.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(SurrogateError::NonFinite);
        }
        Ok(())
    }

    /// Total log-likelihood of all rows under one parameter draw.
    pub fn log_likelihood(&self, p: &ParamSet, sigma: f64) -> f64 {
        (0..self.len())
            .map(|i| super::params::log_joint_unchecked(p, sigma, &self.x_cont[i], &self.x_disc[i], self.y[i]))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Weights,
    Mean,
    LogScale,
    Intercept,
    SlopeCont,
    SlopeDisc,
    DiscProbs,
}

const BLOCK_KINDS: [BlockKind; 7] = [
    BlockKind::Weights,
    BlockKind::Mean,
    BlockKind::LogScale,
    BlockKind::Intercept,
    BlockKind::SlopeCont,
    BlockKind::SlopeDisc,
    BlockKind::DiscProbs,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total iterations including warmup.
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Optional starting point; otherwise a seeded data-driven start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<ParamSet>,
    /// Blocks held fixed at their starting values.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen: Vec<BlockKind>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 1500,
            warmup: 500,
            seed: 0,
            init: None,
            frozen: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAcceptance {
    pub block: BlockKind,
    pub proposals: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Post-warmup acceptance per block kind.
    pub acceptance: Vec<BlockAcceptance>,
    /// Mean log-likelihood over the first and second half of the kept draws.
    pub split_half_log_lik: (f64, f64),
    pub init_attempts: usize,
}

/// Post-warmup draws from one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub spec: SurrogateSpec,
    pub draws: Vec<ParamSet>,
    /// Untempered total log-likelihood of each draw.
    pub log_lik: Vec<f64>,
    /// Untempered log prior + log-likelihood of each draw.
    pub log_post: Vec<f64>,
    pub temper_beta: f64,
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub diagnostics: ChainDiagnostics,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Coord {
    Weights,
    Mean(usize, usize),
    LogScale(usize, usize),
    Intercept(usize),
    SlopeCont(usize, usize),
    SlopeDisc(usize, usize),
    DiscProbs(usize, usize),
}

impl Coord {
    fn kind(&self) -> BlockKind {
        match self {
            Coord::Weights => BlockKind::Weights,
            Coord::Mean(..) => BlockKind::Mean,
            Coord::LogScale(..) => BlockKind::LogScale,
            Coord::Intercept(_) => BlockKind::Intercept,
            Coord::SlopeCont(..) => BlockKind::SlopeCont,
            Coord::SlopeDisc(..) => BlockKind::SlopeDisc,
            Coord::DiscProbs(..) => BlockKind::DiscProbs,
        }
    }

    fn component(&self) -> Option<usize> {
        match *self {
            Coord::Weights => None,
            Coord::Mean(k, _)
            | Coord::LogScale(k, _)
            | Coord::Intercept(k)
            | Coord::SlopeCont(k, _)
            | Coord::SlopeDisc(k, _)
            | Coord::DiscProbs(k, _) => Some(k),
        }
    }
}

/// Sum of log-Jacobians of the unconstrained parameterization.
fn log_jacobian(p: &ParamSet) -> f64 {
    let mut lj = 0.0;
    if p.k() > 1 {
        lj += p.weights.iter().map(|w| w.ln()).sum::<f64>();
    }
    for c in &p.components {
        lj += c.scale.iter().map(|s| s.ln()).sum::<f64>();
        for probs in &c.disc_probs {
            if probs.len() > 1 {
                lj += probs.iter().map(|v| v.ln()).sum::<f64>();
            }
        }
    }
    lj
}

struct Chain<'a> {
    data: &'a SurrogateData,
    spec: &'a SurrogateSpec,
    beta: f64,
    params: ParamSet,
    /// Per component, per row: log density of the row under that component.
    columns: Vec<Vec<f64>>,
    scratch: Vec<f64>,
    log_lik: f64,
    log_prior: f64,
    target: f64,
}

impl<'a> Chain<'a> {
    fn new(data: &'a SurrogateData, spec: &'a SurrogateSpec, beta: f64, params: ParamSet) -> Self {
        let mut chain = Chain {
            data,
            spec,
            beta,
            params,
            columns: vec![Vec::new(); spec.k],
            scratch: vec![0.0; data.len()],
            log_lik: 0.0,
            log_prior: 0.0,
            target: 0.0,
        };
        for k in 0..spec.k {
            let mut col = vec![0.0; data.len()];
            chain.fill_column(k, &mut col);
            chain.columns[k] = col;
        }
        chain.log_lik = chain.mixture_log_lik(None);
        chain.log_prior = log_prior(&chain.params, spec);
        chain.target = chain.log_prior + log_jacobian(&chain.params) + beta * chain.log_lik;
        chain
    }

    fn fill_column(&self, k: usize, out: &mut [f64]) {
        let c = &self.params.components[k];
        let d = self.data;
        for (i, o) in out.iter_mut().enumerate() {
            *o = c.log_density(self.spec.sigma, &d.x_cont[i], &d.x_disc[i], d.y[i]);
        }
    }

    /// Mixture log-likelihood, optionally with `scratch` standing in for
    /// component `replace`'s column.
    fn mixture_log_lik(&self, replace: Option<usize>) -> f64 {
        let log_w: Vec<f64> = self.params.weights.iter().map(|w| w.ln()).collect();
        let k = self.spec.k;
        let mut terms = vec![0.0; k];
        let mut total = 0.0;
        for i in 0..self.data.len() {
            for j in 0..k {
                let col = if Some(j) == replace { &self.scratch } else { &self.columns[j] };
                terms[j] = log_w[j] + col[i];
            }
            total += if k == 1 { terms[0] } else { log_sum_exp(&terms) };
        }
        total
    }

    /// Moves `coord` by a Gaussian step in unconstrained space and applies
    /// the Metropolis test. Returns whether the move was accepted.
    fn update(&mut self, coord: Coord, step: f64, rng: &mut ChaCha8Rng) -> bool {
        let saved = self.params.clone();
        self.propose(coord, step, rng);

        let new_prior = log_prior(&self.params, self.spec);
        if !new_prior.is_finite() {
            self.params = saved;
            return false;
        }
        let new_lik = match coord.component() {
            Some(k) => {
                let mut scratch = std::mem::take(&mut self.scratch);
                self.fill_column(k, &mut scratch);
                self.scratch = scratch;
                self.mixture_log_lik(Some(k))
            }
            None => self.mixture_log_lik(None),
        };
        let new_target = new_prior + log_jacobian(&self.params) + self.beta * new_lik;
        let log_u: f64 = rng.random::<f64>().ln();
        if new_target.is_finite() && log_u < new_target - self.target {
            if let Some(k) = coord.component() {
                std::mem::swap(&mut self.columns[k], &mut self.scratch);
            }
            self.log_lik = new_lik;
            self.log_prior = new_prior;
            self.target = new_target;
            true
        } else {
            self.params = saved;
            false
        }
    }

    fn propose(&mut self, coord: Coord, step: f64, rng: &mut ChaCha8Rng) {
        let mut z = || -> f64 { step * rng.sample::<f64, _>(StandardNormal) };
        let p = &mut self.params;
        match coord {
            Coord::Weights => {
                let eta: Vec<f64> = alr(&p.weights).into_iter().map(|e| e + z()).collect();
                p.weights = alr_inverse(&eta);
            }
            Coord::Mean(k, j) => p.components[k].mean[j] += z(),
            Coord::LogScale(k, j) => {
                let s = &mut p.components[k].scale[j];
                *s = (s.ln() + z()).exp();
            }
            Coord::Intercept(k) => p.components[k].intercept += z(),
            Coord::SlopeCont(k, j) => p.components[k].slope_cont[j] += z(),
            Coord::SlopeDisc(k, j) => p.components[k].slope_disc[j] += z(),
            Coord::DiscProbs(k, j) => {
                let probs = &mut p.components[k].disc_probs[j];
                let eta: Vec<f64> = alr(probs).into_iter().map(|e| e + z()).collect();
                *probs = alr_inverse(&eta);
            }
        }
    }
}

fn coordinates(spec: &SurrogateSpec, frozen: &[BlockKind]) -> Vec<Coord> {
    let mut out = Vec::new();
    if spec.k > 1 {
        out.push(Coord::Weights);
    }
    for k in 0..spec.k {
        out.extend((0..spec.d_cont).map(|j| Coord::Mean(k, j)));
        out.extend((0..spec.d_cont).map(|j| Coord::LogScale(k, j)));
        out.push(Coord::Intercept(k));
        out.extend((0..spec.d_cont).map(|j| Coord::SlopeCont(k, j)));
        out.extend((0..spec.one_hot_width()).map(|j| Coord::SlopeDisc(k, j)));
        out.extend(
            spec.disc_cards
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 1)
                .map(|(j, _)| Coord::DiscProbs(k, j)),
        );
    }
    out.retain(|c| !frozen.contains(&c.kind()));
    out
}

fn column_std(data: &SurrogateData, j: usize) -> f64 {
    let n = data.len() as f64;
    let m = data.x_cont.iter().map(|r| r[j]).sum::<f64>() / n;
    let v = data.x_cont.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
    v.sqrt().max(1e-3)
}

/// Least-squares fit of the response on [1, x_cont, one-hot], with a tiny
/// ridge so collinear one-hot blocks stay solvable.
fn pooled_regression(data: &SurrogateData, spec: &SurrogateSpec) -> (f64, Vec<f64>, Vec<f64>) {
    let width = 1 + spec.d_cont + spec.one_hot_width();
    let mut ata = vec![vec![0.0; width]; width];
    let mut atb = vec![0.0; width];
    let mut row = vec![0.0; width];
    for i in 0..data.len() {
        row.iter_mut().for_each(|v| *v = 0.0);
        row[0] = 1.0;
        row[1..=spec.d_cont].copy_from_slice(&data.x_cont[i]);
        let mut off = 1 + spec.d_cont;
        for (j, &l) in data.x_disc[i].iter().enumerate() {
            row[off + l] = 1.0;
            off += spec.disc_cards[j];
        }
        for a in 0..width {
            atb[a] += row[a] * data.y[i];
            for b in 0..width {
                ata[a][b] += row[a] * row[b];
            }
        }
    }
    for (a, r) in ata.iter_mut().enumerate() {
        r[a] += 1e-6 * data.len() as f64;
    }
    let beta = solve(ata, atb);
    let intercept = beta[0];
    let slope_cont = beta[1..=spec.d_cont].to_vec();
    let slope_disc = beta[1 + spec.d_cont..].to_vec();
    (intercept, slope_cont, slope_disc)
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        for r in col + 1..n {
            let f = a[r][col] / d;
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = if a[r][r].abs() < 1e-300 { 0.0 } else { (b[r] - s) / a[r][r] };
    }
    x
}

/// Seeded start: component means at k-means++ picks among the rows, scales
/// at the data standard deviations, uniform weights and categorical
/// probabilities, and every expert at the pooled least-squares fit.
fn initial_params(data: &SurrogateData, spec: &SurrogateSpec, rng: &mut ChaCha8Rng) -> ParamSet {
    let n = data.len();
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut dist = vec![f64::INFINITY; n];
    while centers.len() < spec.k {
        let last = &data.x_cont[*centers.last().expect("non-empty")];
        for (i, d) in dist.iter_mut().enumerate() {
            let sq: f64 = data.x_cont[i].iter().zip(last).map(|(a, b)| (a - b).powi(2)).sum();
            *d = d.min(sq);
        }
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(pick);
    }
    let scale: Vec<f64> = (0..spec.d_cont)
        .map(|j| column_std(data, j).max(spec.scale_floor))
        .collect();
    let (intercept, slope_cont, slope_disc) = pooled_regression(data, spec);
    ParamSet {
        weights: vec![1.0 / spec.k as f64; spec.k],
        components: centers
            .iter()
            .map(|&c| Component {
                mean: data.x_cont[c].clone(),
                scale: scale.clone(),
                disc_probs: spec.disc_cards.iter().map(|&m| vec![1.0 / m as f64; m]).collect(),
                intercept,
                slope_cont: slope_cont.clone(),
                slope_disc: slope_disc.clone(),
            })
            .collect(),
    }
}

fn initial_step(coord: Coord, data: &SurrogateData, spec: &SurrogateSpec) -> f64 {
    match coord {
        Coord::Weights | Coord::DiscProbs(..) => 0.3,
        Coord::Mean(_, j) => 0.1 * column_std(data, j),
        Coord::LogScale(..) => 0.1,
        Coord::Intercept(_) | Coord::SlopeCont(..) | Coord::SlopeDisc(..) => 0.1 * spec.sigma,
    }
}

const TARGET_ACCEPT: f64 = 0.3;
const MAX_INIT_ATTEMPTS: usize = 100;

/// Runs one chain targeting `log prior + temper_beta * log likelihood`.
pub fn fit_mcmc(
    data: &SurrogateData,
    spec: &SurrogateSpec,
    temper_beta: f64,
    cfg: &McmcConfig,
) -> Result<PosteriorSamples, SurrogateError> {
    spec.validate()?;
    data.validate(spec)?;
    if !(temper_beta > 0.0 && temper_beta <= 1.0) {
        return Err(SurrogateError::Temper(temper_beta));
    }
    if data.len() < 10 * spec.k {
        return Err(SurrogateError::TooFewRows {
            rows: data.len(),
            k: spec.k,
        });
    }
    if cfg.warmup >= cfg.iterations {
        return Err(SurrogateError::Spec(format!(
            "warmup {} must be below iterations {}",
            cfg.warmup, cfg.iterations
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(spec.k as u64);

    let mut attempts = 0;
    let mut chain = loop {
        attempts += 1;
        let init = match &cfg.init {
            Some(p) => {
                p.validate(spec)?;
                p.clone()
            }
            None => initial_params(data, spec, &mut rng),
        };
        let chain = Chain::new(data, spec, temper_beta, init);
        if chain.target.is_finite() {
            break chain;
        }
        if cfg.init.is_some() || attempts >= MAX_INIT_ATTEMPTS {
            return Err(SurrogateError::Initialization(attempts));
        }
    };

    let coords = coordinates(spec, &cfg.frozen);
    let mut log_steps: Vec<f64> = coords.iter().map(|&c| initial_step(c, data, spec).ln()).collect();
    let mut proposals = [0u64; BLOCK_KINDS.len()];
    let mut accepts = [0u64; BLOCK_KINDS.len()];
    let keep = cfg.iterations - cfg.warmup;
    let mut draws = Vec::with_capacity(keep);
    let mut log_lik = Vec::with_capacity(keep);
    let mut log_post = Vec::with_capacity(keep);

    for it in 0..cfg.iterations {
        let warm = it < cfg.warmup;
        let gain = (it as f64 + 1.0).powf(-0.6);
        for (ci, &coord) in coords.iter().enumerate() {
            let accepted = chain.update(coord, log_steps[ci].exp(), &mut rng);
            if warm {
                let a = if accepted { 1.0 } else { 0.0 };
                log_steps[ci] += gain * (a - TARGET_ACCEPT);
            } else {
                let b = BLOCK_KINDS.iter().position(|&k| k == coord.kind()).expect("known kind");
                proposals[b] += 1;
                accepts[b] += accepted as u64;
            }
        }
        if !warm {
            draws.push(chain.params.clone());
            log_lik.push(chain.log_lik);
            log_post.push(chain.log_prior + chain.log_lik);
        }
    }

    let half = log_lik.len() / 2;
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let acceptance = BLOCK_KINDS
        .iter()
        .enumerate()
        .filter(|(b, _)| proposals[*b] > 0)
        .map(|(b, &block)| BlockAcceptance {
            block,
            proposals: proposals[b],
            rate: accepts[b] as f64 / proposals[b] as f64,
        })
        .collect();
    Ok(PosteriorSamples {
        spec: spec.clone(),
        diagnostics: ChainDiagnostics {
            acceptance,
            split_half_log_lik: (mean(&log_lik[..half]), mean(&log_lik[half..])),
            init_attempts: attempts,
        },
        draws,
        log_lik,
        log_post,
        temper_beta,
        iterations: cfg.iterations,
        warmup: cfg.warmup,
        seed: cfg.seed,
    })
}

/// Standard error of a chain average by non-overlapping batch means.
pub fn batch_means_se(values: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(values.len());
    let size = values.len() / b;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b)
        .map(|i| values[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

#[cfg(test)]
fn mean_prior_ln_pdf(m: f64) -> f64 {
    normal_ln_pdf(m, 0.0, super::params::MEAN_PRIOR_SD)
}
