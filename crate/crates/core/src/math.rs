//! Small numeric helpers shared by the surrogate and planner.

use std::f64::consts::PI;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log(sum(exp(v)))` without overflow. Empty input or all `-inf` gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log density of `N(mean, sd^2)` at `x`.
pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

/// Log density of the Laplace (double exponential) distribution.
pub fn laplace_ln_pdf(x: f64, loc: f64, scale: f64) -> f64 {
    -(x - loc).abs() / scale - (2.0 * scale).ln()
}

/// Log density of the half-Cauchy on `(0, inf)`; `-inf` off the support.
pub fn half_cauchy_ln_pdf(x: f64, scale: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    let r = x / scale;
    (2.0 / (PI * scale)).ln() - (1.0 + r * r).ln()
}

/// `ln Γ(n)` for positive integers.
pub fn ln_gamma_int(n: usize) -> f64 {
    (1..n).map(|k| (k as f64).ln()).sum()
}

/// Softmax of `[eta_1 .. eta_{K-1}, 0]` (additive log-ratio inverse).
pub fn alr_inverse(eta: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = eta.iter().copied().chain(std::iter::once(0.0)).collect();
    let lse = log_sum_exp(&v);
    for x in &mut v {
        *x = (*x - lse).exp();
    }
    v
}

/// Inverse of [`alr_inverse`]; the last coordinate is the reference.
pub fn alr(p: &[f64]) -> Vec<f64> {
    let last = p[p.len() - 1].ln();
    p[..p.len() - 1].iter().map(|x| x.ln() - last).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0, 0.0, 0.0]) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn laplace_mode_is_log_half() {
        assert!((laplace_ln_pdf(0.0, 0.0, 1.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn half_cauchy_integrates_to_one() {
        // Substitute x = 2.5 tan(t), t in (0, pi/2): integrand becomes
        // f(x) dx/dt; midpoint rule on a fine grid.
        let n = 200_000;
        let h = (PI / 2.0) / n as f64;
        let mut mass = 0.0;
        for i in 0..n {
            let t = (i as f64 + 0.5) * h;
            let x = 2.5 * t.tan();
            let dxdt = 2.5 / t.cos().powi(2);
            mass += half_cauchy_ln_pdf(x, 2.5).exp() * dxdt * h;
        }
        assert!((mass - 1.0).abs() < 1e-8, "{mass}");
        assert_eq!(half_cauchy_ln_pdf(-1.0, 2.5), f64::NEG_INFINITY);
        let s: f64 = 1.3;
        let direct = (2.0 / (PI * 2.5 * (1.0 + (s / 2.5).powi(2)))).ln();
        assert!((half_cauchy_ln_pdf(s, 2.5) - direct).abs() < 1e-14);
    }

    #[test]
    fn alr_round_trips() {
        let p = [0.2, 0.5, 0.3];
        let back = alr_inverse(&alr(&p));
        for (a, b) in p.iter().zip(&back) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(alr_inverse(&[]), vec![1.0]);
    }

    #[test]
    fn ln_gamma_matches_factorial() {
        assert_eq!(ln_gamma_int(1), 0.0);
        assert!((ln_gamma_int(5) - 24f64.ln()).abs() < 1e-14);
    }
}
