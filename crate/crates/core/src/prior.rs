//! Prior hierarchy: number of terms, variable subsets, numeric term
//! parameters and the gaussian noise variance.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::basis::BasisTerm;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::{Family, ModelState};

/// All hyperparameters. Serialized flat, so it can be embedded in a larger
/// JSON config with `#[serde(flatten)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "K_max")]
    pub k_max: usize,
    pub alpha_adding: f64,
    pub gamma_adding: f64,
    pub sigma_beta2: f64,
    pub a_gamma: f64,
    /// Scale (not rate) of the bandwidth prior.
    pub b_gamma: f64,
    pub v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_lambda: Option<f64>,
    pub q_add: f64,
    pub q_delete: f64,
    pub q_change: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub step_size: f64,
    /// Variable-selection weights for stepwise and subset moves; uniform
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            c0: 0.005,
            k_max: 100,
            alpha_adding: 0.95,
            gamma_adding: 2.0,
            sigma_beta2: 1e-2,
            a_gamma: 2.0,
            b_gamma: 5e-3,
            v: 3.0,
            lambda: None,
            q_lambda: Some(0.9),
            q_add: 0.28,
            q_delete: 0.28,
            q_change: 0.44,
            m: 1.0,
            step_size: 0.01,
            omega: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 >= 0.0 && self.c0.is_finite()) {
            return Err(Error::Config(format!("C0 must be non-negative, got {}", self.c0)));
        }
        if self.k_max < 1 {
            return Err(Error::Config("K_max must be at least 1".into()));
        }
        if !(self.alpha_adding > 0.0 && self.alpha_adding < 1.0) {
            return Err(Error::Config(format!(
                "alpha_adding must lie in (0, 1), got {}",
                self.alpha_adding
            )));
        }
        positive("gamma_adding", self.gamma_adding)?;
        positive("sigma_beta2", self.sigma_beta2)?;
        positive("a_gamma", self.a_gamma)?;
        positive("b_gamma", self.b_gamma)?;
        positive("v", self.v)?;
        positive("M", self.m)?;
        positive("step_size", self.step_size)?;
        match (self.lambda, self.q_lambda) {
            (Some(l), None) => positive("lambda", l)?,
            (None, Some(q)) => {
                if !(q > 0.0 && q < 1.0) {
                    return Err(Error::Config(format!("q_lambda must lie in (0, 1), got {q}")));
                }
            }
            _ => return Err(Error::Config("exactly one of lambda and q_lambda must be given".into())),
        }
        let qs = [self.q_add, self.q_delete, self.q_change];
        if qs.iter().any(|q| !(*q >= 0.0)) {
            return Err(Error::Config("move probabilities must be non-negative".into()));
        }
        let total: f64 = qs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "q_add + q_delete + q_change must equal 1, got {total}"
            )));
        }
        if let Some(w) = &self.omega {
            if w.is_empty() || w.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::Config("omega weights must all be positive".into()));
            }
        }
        Ok(())
    }

    /// Normalized selection weights for `p` columns.
    pub fn omega_for(&self, p: usize) -> Result<Vec<f64>> {
        match &self.omega {
            None => Ok(vec![1.0 / p as f64; p]),
            Some(w) if w.len() != p => Err(Error::Config(format!(
                "omega has {} weights but the data has {p} columns",
                w.len()
            ))),
            Some(w) => {
                let s: f64 = w.iter().sum();
                Ok(w.iter().map(|x| x / s).collect())
            }
        }
    }

    /// `lambda`, calibrating from `q_lambda` against `ds` if needed.
    pub fn resolve_lambda(&self, ds: &Dataset) -> Result<f64> {
        match (self.lambda, self.q_lambda) {
            (Some(l), _) => Ok(l),
            (None, Some(q)) => calibrate_lambda(self.v, q, ols_residual_variance(ds.columns(), ds.y())?),
            (None, None) => Err(Error::Config("neither lambda nor q_lambda given".into())),
        }
    }
}

/// Log normalizer of `pi(K) ∝ exp(-C0 k ln n)` over `k = 0..=K_max`.
fn log_k_normalizer(c0: f64, k_max: usize, n: usize) -> f64 {
    let r = -c0 * (n as f64).ln();
    // log-sum-exp; terms are non-increasing so the k = 0 term is the max
    (0..=k_max).map(|k| (r * k as f64).exp()).sum::<f64>().ln()
}

#[allow(non_snake_case)]
pub fn log_prior_K(k: usize, cfg: &PriorConfig, n: usize) -> Result<f64> {
    if k > cfg.k_max {
        return Err(Error::Invalid(format!("K = {k} exceeds K_max = {}", cfg.k_max)));
    }
    Ok(-cfg.c0 * k as f64 * (n as f64).ln() - log_k_normalizer(cfg.c0, cfg.k_max, n))
}

/// Probability of adding a further variable once the subset has `l` of them.
#[inline]
fn p_adding(cfg: &PriorConfig, l: usize) -> f64 {
    cfg.alpha_adding * (1.0 + l as f64).powf(-cfg.gamma_adding)
}

/// Normalized subset-size weights; element `d - 1` is the weight of size `d`.
pub fn subset_weights(cfg: &PriorConfig, p: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(p);
    let mut reach = 1.0;
    for d in 1..=p {
        w.push((1.0 - p_adding(cfg, d)) * reach);
        reach *= p_adding(cfg, d);
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn log_prior_subset(s: &[usize], cfg: &PriorConfig, p: usize) -> Result<f64> {
    let d = s.len();
    if d == 0 {
        return Err(Error::Invalid("empty variable set".into()));
    }
    if d > p {
        return Err(Error::Invalid(format!("variable set of size {d} exceeds p = {p}")));
    }
    Ok(subset_weights(cfg, p)[d - 1].ln() - ln_binomial(p as u64, d as u64))
}

/// Draws a size from the subset weights, then a uniform subset of that size.
pub fn sample_subset<R: Rng + ?Sized>(cfg: &PriorConfig, p: usize, rng: &mut R) -> Vec<usize> {
    let w = subset_weights(cfg, p);
    sample_subset_with(&w, p, rng)
}

pub(crate) fn sample_subset_with<R: Rng + ?Sized>(weights: &[f64], p: usize, rng: &mut R) -> Vec<usize> {
    let d = 1 + sample_index(weights, rng);
    let mut s = rand::seq::index::sample(rng, p, d).into_vec();
    s.sort_unstable();
    s
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn log_normal_density(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - x * x / (2.0 * var)
}

/// Gamma log-density with shape `a` and scale `s`.
pub fn log_gamma_density(x: f64, a: f64, s: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() - x / s - a * s.ln() - ln_gamma(a)
}

/// Log-prior of the numeric parameters of one term; `-inf` outside support.
pub fn log_prior_numeric(term: &BasisTerm, cfg: &PriorConfig) -> f64 {
    let mut lp = log_normal_density(term.beta, cfg.sigma_beta2);
    for (&b, &g) in term.knots.iter().zip(&term.bandwidths) {
        if !(0.0..=1.0).contains(&b) {
            return f64::NEG_INFINITY;
        }
        lp += log_gamma_density(g, cfg.a_gamma, cfg.b_gamma);
    }
    lp
}

/// Inverse-gamma log-density with shape `a` and scale `s`.
pub fn log_inv_gamma_density(x: f64, a: f64, s: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    a * s.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - s / x
}

/// `sigma^2 ~ IG(v/2, v*lambda/2)`; `lambda` must be resolved.
pub fn log_prior_eta(sigma2: f64, cfg: &PriorConfig) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Invalid(format!("sigma^2 = {sigma2} must be positive")));
    }
    let lambda = cfg
        .lambda
        .ok_or_else(|| Error::Config("lambda has not been resolved".into()))?;
    Ok(log_inv_gamma_density(sigma2, cfg.v / 2.0, cfg.v * lambda / 2.0))
}

/// Full log-prior of a state: K, then per-term subsets and parameters, then
/// the dispersion for the gaussian family.
pub fn log_prior_state(state: &ModelState, cfg: &PriorConfig, p: usize, n: usize, family: Family) -> Result<f64> {
    let mut lp = log_prior_K(state.k(), cfg, n)?;
    for t in &state.terms {
        lp += log_prior_subset(&t.vars, cfg, p)? + log_prior_numeric(t, cfg);
    }
    if family.has_dispersion() {
        lp += log_prior_eta(state.eta, cfg)?;
    }
    Ok(lp)
}

/// Residual variance of an ordinary least-squares fit with intercept.
pub fn ols_residual_variance(cols: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let n = y.len();
    let p = cols.len();
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
    let yv = DVector::from_column_slice(y);
    let svd = x.clone().svd(true, true);
    let rank = svd.rank(1e-10 * svd.singular_values.max().max(1.0));
    let coef = svd
        .solve(&yv, 1e-10)
        .map_err(|e| Error::Invalid(format!("least squares failed: {e}")))?;
    let rss = (yv - x * coef).norm_squared();
    let dof = if n > rank { n - rank } else { n };
    let var = rss / dof as f64;
    if !(var > 0.0) {
        // perfectly fitted responses; fall back to the raw variance scale
        let mean = y.iter().sum::<f64>() / n as f64;
        let raw = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        return Ok(if raw > 0.0 { raw } else { 1.0 });
    }
    Ok(var)
}

/// Prior probability `P(sigma^2 <= s)` under `IG(v/2, v*lambda/2)`.
pub fn inv_gamma_cdf(s: f64, v: f64, lambda: f64) -> f64 {
    gamma_ur(v / 2.0, v * lambda / (2.0 * s))
}

/// Solves `P(sigma^2 <= s_hat) = q` for `lambda` by bisection in log space.
pub fn calibrate_lambda(v: f64, q: f64, s_hat: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) || !(s_hat > 0.0) {
        return Err(Error::Config(format!("cannot calibrate lambda from q = {q}, variance {s_hat}")));
    }
    // CDF is decreasing in lambda
    let (mut lo, mut hi) = ((s_hat * 1e-12).ln(), (s_hat * 1e12).ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if inv_gamma_cdf(s_hat, v, mid.exp()) > q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Fresh knots, bandwidths and coefficient for the given variables.
pub fn sample_term<R: Rng + ?Sized>(vars: Vec<usize>, cfg: &PriorConfig, rng: &mut R) -> BasisTerm {
    let d = vars.len();
    let knots = (0..d).map(|_| rng.random::<f64>()).collect();
    let bandwidths = (0..d).map(|_| sample_bandwidth(cfg, rng)).collect();
    let beta = sample_beta(cfg, rng);
    BasisTerm {
        vars,
        knots,
        bandwidths,
        beta,
    }
}

pub fn sample_bandwidth<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> f64 {
    Gamma::new(cfg.a_gamma, cfg.b_gamma)
        .expect("validated gamma prior")
        .sample(rng)
}

pub fn sample_beta<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> f64 {
    Normal::new(0.0, cfg.sigma_beta2.sqrt())
        .expect("validated beta prior")
        .sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> PriorConfig {
        PriorConfig {
            lambda: Some(1.0),
            q_lambda: None,
            ..PriorConfig::default()
        }
    }

    #[test]
    fn default_config_validates() {
        PriorConfig::default().validate().unwrap();
        cfg().validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = PriorConfig {
            q_add: 0.5,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let both = PriorConfig {
            q_lambda: Some(0.9),
            ..cfg()
        };
        assert!(both.validate().is_err());
        let neither = PriorConfig {
            lambda: None,
            ..cfg()
        };
        assert!(neither.validate().is_err());
        assert!(PriorConfig { alpha_adding: 1.0, ..cfg() }.validate().is_err());
        assert!(PriorConfig { k_max: 0, ..cfg() }.validate().is_err());
        assert!(PriorConfig { omega: Some(vec![1.0, 0.0]), ..cfg() }.validate().is_err());
    }

    #[test]
    fn k_prior_uniform_when_c0_zero() {
        let c = PriorConfig { c0: 0.0, k_max: 7, ..cfg() };
        for k in 0..=7 {
            assert!((log_prior_K(k, &c, 500).unwrap() + 8f64.ln()).abs() < 1e-12);
        }
        assert!(log_prior_K(8, &c, 500).is_err());
    }

    #[test]
    fn k_prior_ratio_and_normalizer() {
        let c = PriorConfig { c0: 0.01, k_max: 5, ..cfg() };
        let n = 1000usize;
        for k in 0..5 {
            let r = log_prior_K(k + 1, &c, n).unwrap() - log_prior_K(k, &c, n).unwrap();
            assert!((r - (-0.01 * 1000f64.ln())).abs() < 1e-12);
        }
        let z: f64 = (0..6).map(|j| 1000f64.powf(-0.01 * j as f64)).sum();
        assert!((log_prior_K(0, &c, n).unwrap() + z.ln()).abs() < 1e-12);
        let total: f64 = (0..=5).map(|k| log_prior_K(k, &c, n).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn subset_weights_match_product_formula() {
        let c = cfg();
        let a = 0.95;
        let raw = [
            1.0 - a / 4.0,
            (1.0 - a / 9.0) * (a / 4.0),
            (1.0 - a / 16.0) * (a / 4.0) * (a / 9.0),
        ];
        let z: f64 = raw.iter().sum();
        let w = subset_weights(&c, 3);
        for d in 0..3 {
            assert!((w[d] - raw[d] / z).abs() < 1e-15);
        }
        let lp = log_prior_subset(&[0, 1], &c, 3).unwrap();
        assert!((lp - (raw[1] / z / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn subset_weight_limits() {
        let tiny = PriorConfig { alpha_adding: 1e-9, ..cfg() };
        assert!(subset_weights(&tiny, 5)[0] > 1.0 - 1e-8);
        for p in 1..12 {
            for &(a, g) in &[(0.5, 1.0), (0.95, 2.0), (0.99, 0.3)] {
                let c = PriorConfig { alpha_adding: a, gamma_adding: g, ..cfg() };
                assert!((subset_weights(&c, p).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subset_prior_sums_to_one_over_power_set() {
        let c = cfg();
        for p in 1..=6usize {
            let mut total = 0.0;
            for mask in 1u32..(1 << p) {
                let s: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
                total += log_prior_subset(&s, &c, p).unwrap().exp();
            }
            assert!((total - 1.0).abs() < 1e-12, "p = {p}: {total}");
        }
        assert_eq!(log_prior_subset(&[0], &c, 1).unwrap(), 0.0);
        assert_eq!(
            log_prior_subset(&[0, 3], &c, 5).unwrap(),
            log_prior_subset(&[1, 2], &c, 5).unwrap()
        );
        assert!(log_prior_subset(&[], &c, 5).is_err());
    }

    #[test]
    fn sampled_sizes_match_weights() {
        let c = PriorConfig { alpha_adding: 0.99, gamma_adding: 0.5, ..cfg() };
        let p = 5;
        let w = subset_weights(&c, p);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut counts = vec![0usize; p];
        for _ in 0..draws {
            let s = sample_subset(&c, p, &mut rng);
            assert!(s.windows(2).all(|x| x[0] < x[1]) && *s.last().unwrap() < p);
            counts[s.len() - 1] += 1;
        }
        for d in 0..p {
            let freq = counts[d] as f64 / draws as f64;
            let se = (w[d] * (1.0 - w[d]) / draws as f64).sqrt();
            assert!((freq - w[d]).abs() <= 3.0 * se + 1e-12, "d={} freq {freq} w {}", d + 1, w[d]);
        }
        // monotone weights give monotone histogram ordering at this sample size
        let order_w: Vec<usize> = {
            let mut idx: Vec<usize> = (0..p).collect();
            idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
            idx
        };
        for pair in order_w.windows(2) {
            if w[pair[0]] - w[pair[1]] > 0.01 {
                assert!(counts[pair[0]] > counts[pair[1]]);
            }
        }
        assert_eq!(sample_subset(&c, 1, &mut rng), vec![0]);
    }

    #[test]
    fn numeric_prior_values() {
        let c = PriorConfig { sigma_beta2: 0.3, a_gamma: 2.0, b_gamma: 0.01, ..cfg() };
        let t = BasisTerm::new(vec![0], vec![0.4], vec![0.02], 0.0).unwrap();
        // Gamma(shape 2, scale 0.01) at 0.02: x e^{-x/s} / s^2
        let gamma_ref = (0.02 * (-2.0f64).exp() / 1e-4).ln();
        let expected = -0.5 * (2.0 * PI * 0.3).ln() + gamma_ref;
        assert!((log_prior_numeric(&t, &c) - expected).abs() < 1e-12);
        let outside = BasisTerm::new(vec![0], vec![1.2], vec![0.02], 0.0).unwrap();
        assert_eq!(log_prior_numeric(&outside, &c), f64::NEG_INFINITY);
    }

    #[test]
    fn eta_prior_density() {
        let c = PriorConfig { v: 3.0, ..cfg() };
        // IG(1.5, 1.5) at 1: 1.5^1.5 / Gamma(1.5) * e^{-1.5}
        let reference = (1.5f64.powf(1.5) / (0.5 * PI.sqrt()) * (-1.5f64).exp()).ln();
        assert!((log_prior_eta(1.0, &c).unwrap() - reference).abs() < 1e-12);
        assert!(log_prior_eta(0.0, &c).is_err());

        // mode at scale / (shape + 1)
        let mode = 1.5 / 2.5;
        let at = |x: f64| log_prior_eta(x, &c).unwrap();
        assert!(at(mode) > at(mode * 1.01) && at(mode) > at(mode * 0.99));

        // trapezoid on a log grid: substitute x = e^t
        let (lo, hi, steps) = (-12.0f64, 16.0f64, 200_000);
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for i in 0..=steps {
            let t = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            total += w * (at(t.exp()) + t).exp() * h;
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn lambda_calibration_hits_target_quantile() {
        for &(v, q, s) in &[(3.0, 0.9, 0.7), (3.0, 0.99, 2.0), (10.0, 0.75, 0.01)] {
            let lambda = calibrate_lambda(v, q, s).unwrap();
            assert!((inv_gamma_cdf(s, v, lambda) - q).abs() < 1e-10);
        }
    }

    #[test]
    fn inv_gamma_cdf_matches_quadrature() {
        let (v, lambda, s) = (3.0, 0.8, 1.3);
        let steps = 400_000;
        let h = s / steps as f64;
        let mut total = 0.0;
        for i in 1..=steps {
            let x = (i as f64 - 0.5) * h;
            total += log_inv_gamma_density(x, v / 2.0, v * lambda / 2.0).exp() * h;
        }
        assert!((inv_gamma_cdf(s, v, lambda) - total).abs() < 1e-7);
    }

    #[test]
    fn ols_variance_of_exact_linear_model_plus_known_noise() {
        let x: Vec<f64> = (0..6).map(|i| i as f64 / 5.0).collect();
        let noise = [0.1, -0.1, 0.1, -0.1, 0.1, -0.1];
        let y: Vec<f64> = x.iter().zip(noise).map(|(xi, e)| 1.0 + 2.0 * xi + e).collect();
        // oracle: explicit normal equations for simple regression
        let n = 6.0;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let icpt = my - slope * mx;
        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
        let v = ols_residual_variance(&[x], &y).unwrap();
        assert!((v - rss / 4.0).abs() < 1e-12);
    }

    #[test]
    fn state_prior_is_additive() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let terms: Vec<BasisTerm> = (0..3)
            .map(|_| {
                let s = sample_subset(&c, 4, &mut rng);
                sample_term(s, &c, &mut rng)
            })
            .collect();
        let state = ModelState { terms: terms.clone(), eta: 0.7 };
        let mut expected = log_prior_K(3, &c, 50).unwrap() + log_prior_eta(0.7, &c).unwrap();
        for t in &terms {
            expected += log_prior_subset(&t.vars, &c, 4).unwrap() + log_prior_numeric(t, &c);
        }
        let got = log_prior_state(&state, &c, 4, 50, Family::Gaussian).unwrap();
        assert!((got - expected).abs() < 1e-10);
        let bern = log_prior_state(&ModelState { terms, eta: 1.0 }, &c, 4, 50, Family::Bernoulli).unwrap();
        assert!((bern - (expected - log_prior_eta(0.7, &c).unwrap())).abs() < 1e-10);
    }

    #[test]
    fn config_json_round_trip() {
        let c = cfg();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"C0\"") && s.contains("\"K_max\"") && s.contains("\"M\""));
        let back: PriorConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
