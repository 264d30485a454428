use serde::{Deserialize, Serialize};

use super::SurrogateError;
use crate::math::{
    half_cauchy_ln_pdf, laplace_ln_pdf, ln_gamma_int, log_sum_exp, normal_ln_pdf,
};

/// Fixed structure and hyperparameters of the mixture-of-experts surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub k: usize,
    pub d_cont: usize,
    pub disc_cards: Vec<usize>,
    /// Response noise scale, fixed to half the regressor's test RMSE.
    pub sigma: f64,
    pub y_mean: f64,
    pub y_std: f64,
    /// Lower bound on component scales. The scale prior is truncated here,
    /// which keeps a component from collapsing onto tied feature values.
    #[serde(default)]
    pub scale_floor: f64,
}

/// Scale of the half-Cauchy prior on component scales.
pub const SCALE_PRIOR: f64 = 2.5;
/// Prior standard deviation of component means (variance 5).
pub const MEAN_PRIOR_SD: f64 = 2.236_067_977_499_79;
/// Intercept prior sd as a multiple of the response std.
pub const INTERCEPT_PRIOR_MULT: f64 = 5.0;

impl SurrogateSpec {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: String| Err(SurrogateError::Spec(m));
        if self.k < 1 {
            return bad("component count must be at least 1".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.y_std > 0.0 && self.y_std.is_finite()) || !self.y_mean.is_finite() {
            return bad(format!("invalid response stats ({}, {})", self.y_mean, self.y_std));
        }
        if !(self.scale_floor >= 0.0 && self.scale_floor.is_finite()) {
            return bad(format!("scale floor must be finite and non-negative, got {}", self.scale_floor));
        }
        if self.disc_cards.iter().any(|&c| c < 1) {
            return bad("discrete cardinalities must be positive".into());
        }
        Ok(())
    }

    /// Total width of the one-hot discrete block.
    pub fn one_hot_width(&self) -> usize {
        self.disc_cards.iter().sum()
    }

    pub fn with_k(&self, k: usize) -> Self {
        Self { k, ..self.clone() }
    }
}

/// Parameters of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Mean of the continuous features.
    pub mean: Vec<f64>,
    /// Per-dimension standard deviation (diagonal covariance).
    pub scale: Vec<f64>,
    /// One probability vector per discrete feature.
    pub disc_probs: Vec<Vec<f64>>,
    pub intercept: f64,
    pub slope_cont: Vec<f64>,
    /// Coefficients over the concatenated one-hot discrete slots.
    pub slope_disc: Vec<f64>,
}

impl Component {
    /// Expert mean for the response.
    pub fn response_mean(&self, x_cont: &[f64], x_disc: &[usize]) -> f64 {
        let mut mu = self.intercept;
        for (b, x) in self.slope_cont.iter().zip(x_cont) {
            mu += b * x;
        }
        let mut offset = 0;
        for (j, &level) in x_disc.iter().enumerate() {
            mu += self.slope_disc[offset + level];
            offset += self.disc_probs[j].len();
        }
        mu
    }

    /// Log of the features-and-response density under this component alone.
    pub fn log_density(&self, sigma: f64, x_cont: &[f64], x_disc: &[usize], y: f64) -> f64 {
        self.log_feature_density(x_cont, x_disc)
            + normal_ln_pdf(y, self.response_mean(x_cont, x_disc), sigma)
    }

    pub fn log_feature_density(&self, x_cont: &[f64], x_disc: &[usize]) -> f64 {
        let mut lp = 0.0;
        for ((x, m), s) in x_cont.iter().zip(&self.mean).zip(&self.scale) {
            lp += normal_ln_pdf(*x, *m, *s);
        }
        for (probs, &level) in self.disc_probs.iter().zip(x_disc) {
            lp += probs[level].ln();
        }
        lp
    }
}

/// One posterior draw of all mixture parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub weights: Vec<f64>,
    pub components: Vec<Component>,
}

impl ParamSet {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Checks shapes against `spec` and the simplex/positivity invariants.
    pub fn validate(&self, spec: &SurrogateSpec) -> Result<(), SurrogateError> {
        let dim = |m: String| Err(SurrogateError::Dimension(m));
        if self.weights.len() != spec.k || self.components.len() != spec.k {
            return dim(format!("expected {} components", spec.k));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
            || self.weights.iter().any(|w| !(*w >= 0.0))
        {
            return Err(SurrogateError::Invalid("mixture weights are not a simplex".into()));
        }
        for c in &self.components {
            if c.mean.len() != spec.d_cont
                || c.scale.len() != spec.d_cont
                || c.slope_cont.len() != spec.d_cont
                || c.slope_disc.len() != spec.one_hot_width()
                || c.disc_probs.len() != spec.disc_cards.len()
            {
                return dim("component shape does not match spec".into());
            }
            if c.scale.iter().any(|s| !(*s > 0.0)) {
                return Err(SurrogateError::Invalid("non-positive scale".into()));
            }
            for (p, &card) in c.disc_probs.iter().zip(&spec.disc_cards) {
                if p.len() != card {
                    return dim("discrete probability length mismatch".into());
                }
                if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.iter().any(|v| !(*v >= 0.0)) {
                    return Err(SurrogateError::Invalid(
                        "discrete probabilities are not a simplex".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Applies a component relabeling: new component `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ParamSet {
        ParamSet {
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
            components: perm.iter().map(|&i| self.components[i].clone()).collect(),
        }
    }
}

/// `log sum_k pi_k N(x|m_k, S_k) prod_j Cat(x_j|phi_kj) N(y|mu_k, sigma)`.
/// Inputs are not validated; use [`log_joint_density`] at API boundaries.
pub fn log_joint_unchecked(p: &ParamSet, sigma: f64, x_cont: &[f64], x_disc: &[usize], y: f64) -> f64 {
    let mut terms = [0.0f64; 16];
    if p.k() <= terms.len() {
        for (t, (w, c)) in terms.iter_mut().zip(p.weights.iter().zip(&p.components)) {
            *t = w.ln() + c.log_density(sigma, x_cont, x_disc, y);
        }
        log_sum_exp(&terms[..p.k()])
    } else {
        let v: Vec<f64> = p
            .weights
            .iter()
            .zip(&p.components)
            .map(|(w, c)| w.ln() + c.log_density(sigma, x_cont, x_disc, y))
            .collect();
        log_sum_exp(&v)
    }
}

pub fn log_joint_density(
    p: &ParamSet,
    sigma: f64,
    x_cont: &[f64],
    x_disc: &[usize],
    y: f64,
) -> Result<f64, SurrogateError> {
    let Some(c0) = p.components.first() else {
        return Err(SurrogateError::Dimension("no components".into()));
    };
    if x_cont.len() != c0.mean.len() || x_disc.len() != c0.disc_probs.len() {
        return Err(SurrogateError::Dimension(format!(
            "expected {} continuous and {} discrete values, got {} and {}",
            c0.mean.len(),
            c0.disc_probs.len(),
            x_cont.len(),
            x_disc.len()
        )));
    }
    if x_disc.iter().zip(&c0.disc_probs).any(|(&l, p)| l >= p.len()) {
        return Err(SurrogateError::Dimension("discrete level out of range".into()));
    }
    if !y.is_finite() || x_cont.iter().any(|v| !v.is_finite()) || !(sigma > 0.0) {
        return Err(SurrogateError::NonFinite);
    }
    Ok(log_joint_unchecked(p, sigma, x_cont, x_disc, y))
}

/// Log prior density including every normalizing constant, so values are
/// comparable across component counts. `-inf` outside the support.
pub fn log_prior(p: &ParamSet, spec: &SurrogateSpec) -> f64 {
    if p.weights.iter().any(|w| !(*w > 0.0)) {
        return f64::NEG_INFINITY;
    }
    // Dirichlet(1) on the mixture weights: density Γ(K) on the simplex.
    let mut lp = ln_gamma_int(spec.k);
    let intercept_sd = INTERCEPT_PRIOR_MULT * spec.y_std;
    // Half-Cauchy mass above the floor.
    let tail = (1.0 - std::f64::consts::FRAC_2_PI * (spec.scale_floor / SCALE_PRIOR).atan()).ln();
    for c in &p.components {
        for &s in &c.scale {
            if s < spec.scale_floor {
                return f64::NEG_INFINITY;
            }
            lp += half_cauchy_ln_pdf(s, SCALE_PRIOR) - tail;
        }
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        for &m in &c.mean {
            lp += normal_ln_pdf(m, 0.0, MEAN_PRIOR_SD);
        }
        lp += normal_ln_pdf(c.intercept, spec.y_mean, intercept_sd);
        for &b in c.slope_cont.iter().chain(&c.slope_disc) {
            lp += laplace_ln_pdf(b, 0.0, 1.0);
        }
        for probs in &c.disc_probs {
            if probs.iter().any(|v| !(*v > 0.0)) {
                return f64::NEG_INFINITY;
            }
            lp += ln_gamma_int(probs.len());
        }
    }
    lp
}
