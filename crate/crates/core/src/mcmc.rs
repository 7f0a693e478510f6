//! Reversible-jump MCMC over additive TPNN models.
//!
//! One sweep updates the number of terms (birth/death), then for every term
//! its variable set (adding/deleting/changing a variable) followed by a
//! Langevin step on its knots, bandwidths and coefficient, and finally the
//! gaussian noise variance by Gibbs sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::basis::{factor_from_mean, factor_gradient, BasisTerm, CoordStats};
use crate::data::{Dataset, Marginal, MarginalKind};
use crate::error::{Error, Result};
use crate::likelihood::{log_density_unchecked, score_unchecked, Family, ModelState};
use crate::prior::{self, PriorConfig};

/// Accepted moves between full recomputations of the cached fit.
const REFRESH_EVERY: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sigma2Update {
    /// `IG((n + v) / 2, (RSS + v lambda) / 2)`.
    #[default]
    Conjugate,
    /// `IG(v / 2, (RSS / n + v lambda) / 2)`, kept for comparison only.
    ScaledResidual,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub iterations: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub n_chains: usize,
    #[serde(default)]
    pub marginal_kind: MarginalKind,
    #[serde(default)]
    pub sigma2_update: Sigma2Update,
    /// Number of prior-drawn terms in the starting state.
    #[serde(default)]
    pub init_k: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            burn_in: 1000,
            iterations: 1000,
            thin: 1,
            seed: 0,
            n_chains: 1,
            marginal_kind: MarginalKind::Empirical,
            sigma2_update: Sigma2Update::Conjugate,
            init_k: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin < 1 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.n_chains < 1 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub proposed: u64,
    pub accepted: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub birth: Counter,
    pub death: Counter,
    pub adding: Counter,
    pub deleting: Counter,
    pub changing: Counter,
    pub langevin: Counter,
}

impl MoveStats {
    pub fn merge(&mut self, other: &MoveStats) {
        for (a, b) in self.counters_mut().into_iter().zip(other.counters()) {
            a.proposed += b.proposed;
            a.accepted += b.accepted;
        }
    }

    fn counters(&self) -> [&Counter; 6] {
        [&self.birth, &self.death, &self.adding, &self.deleting, &self.changing, &self.langevin]
    }

    fn counters_mut(&mut self) -> [&mut Counter; 6] {
        [
            &mut self.birth,
            &mut self.death,
            &mut self.adding,
            &mut self.deleting,
            &mut self.changing,
            &mut self.langevin,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetMove {
    Adding,
    Deleting,
    Changing,
}

/// Move probabilities at subset size `d`, renormalized over the feasible
/// moves (deleting needs `d > 1`; adding and changing need `d < p`).
pub fn move_probs(cfg: &PriorConfig, d: usize, p: usize) -> [f64; 3] {
    let add = if d < p { cfg.q_add } else { 0.0 };
    let del = if d > 1 { cfg.q_delete } else { 0.0 };
    let chg = if d < p { cfg.q_change } else { 0.0 };
    let total = add + del + chg;
    if total > 0.0 {
        [add / total, del / total, chg / total]
    } else {
        [0.0; 3]
    }
}

fn complement_weight(omega: &[f64], s: &[usize]) -> f64 {
    omega
        .iter()
        .enumerate()
        .filter(|(j, _)| !s.contains(j))
        .map(|(_, w)| w)
        .sum()
}

/// Log acceptance factor (prior times proposal) for adding `j_add` to `s_old`.
pub fn log_adding_ratio(cfg: &PriorConfig, p: usize, omega: &[f64], s_old: &[usize], j_add: usize) -> f64 {
    let d_new = (s_old.len() + 1) as f64;
    let (a, g) = (cfg.alpha_adding, cfg.gamma_adding);
    let pa_new = a * d_new.powf(-g);
    let pa_next = a * (1.0 + d_new).powf(-g);
    let q_add = move_probs(cfg, s_old.len(), p)[0];
    let q_del = move_probs(cfg, s_old.len() + 1, p)[1];
    pa_new.ln() + (1.0 - pa_next).ln() - (1.0 - pa_new).ln() - (p as f64 - d_new + 1.0).ln() + q_del.ln()
        - q_add.ln()
        + complement_weight(omega, s_old).ln()
        - omega[j_add].ln()
}

/// Log acceptance factor for deleting `j_del` from `s_old`.
pub fn log_deleting_ratio(cfg: &PriorConfig, p: usize, omega: &[f64], s_old: &[usize], j_del: usize) -> f64 {
    let d_old = s_old.len() as f64;
    let (a, g) = (cfg.alpha_adding, cfg.gamma_adding);
    let pa_old = a * d_old.powf(-g);
    let pa_next = a * (1.0 + d_old).powf(-g);
    let q_del = move_probs(cfg, s_old.len(), p)[1];
    let q_add = move_probs(cfg, s_old.len() - 1, p)[0];
    let s_new: Vec<usize> = s_old.iter().copied().filter(|&j| j != j_del).collect();
    (1.0 - pa_old).ln() - pa_old.ln() - (1.0 - pa_next).ln() + (p as f64 - d_old + 1.0).ln() + q_add.ln()
        - q_del.ln()
        + omega[j_del].ln()
        - complement_weight(omega, &s_new).ln()
}

/// Log acceptance factor for replacing `j_change` in `s_old` by `j_new`.
pub fn log_changing_ratio(omega: &[f64], s_old: &[usize], j_change: usize, j_new: usize) -> f64 {
    let s_new: Vec<usize> = s_old
        .iter()
        .map(|&j| if j == j_change { j_new } else { j })
        .collect();
    omega[j_change].ln() + complement_weight(omega, s_old).ln()
        - omega[j_new].ln()
        - complement_weight(omega, &s_new).ln()
}

/// Draws from `omega` restricted to the complement of `s`.
fn draw_outside<R: Rng + ?Sized>(omega: &[f64], s: &[usize], rng: &mut R) -> usize {
    let restricted: Vec<f64> = omega
        .iter()
        .enumerate()
        .map(|(j, &w)| if s.contains(&j) { 0.0 } else { w })
        .collect();
    prior::sample_index(&restricted, rng)
}

/// Inserts coordinate `j` with parameters into a term, keeping `vars` sorted.
fn insert_coord(term: &mut BasisTerm, j: usize, b: f64, g: f64) {
    let pos = term.vars.partition_point(|&v| v < j);
    term.vars.insert(pos, j);
    term.knots.insert(pos, b);
    term.bandwidths.insert(pos, g);
}

fn remove_coord(term: &mut BasisTerm, pos: usize) {
    term.vars.remove(pos);
    term.knots.remove(pos);
    term.bandwidths.remove(pos);
}

/// Basis values, log-likelihood and log-posterior gradient for one term.
#[derive(Debug, Clone)]
pub struct TermEval {
    pub phi: Vec<f64>,
    pub loglik: f64,
    /// Gradient in the order `(b_1..b_d, gamma_1..gamma_d, beta)`.
    pub grad: Vec<f64>,
}

/// Everything a chain needs that does not change while it runs: data,
/// marginals and the resolved prior.
#[derive(Debug, Clone)]
pub struct Target {
    family: Family,
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    marginals: Vec<Marginal>,
    cfg: PriorConfig,
    omega: Vec<f64>,
    log_subset: Vec<f64>,
    ln_n: f64,
    flat: bool,
}

impl Target {
    /// Resolves `lambda` and `omega`, centers gaussian responses and fixes
    /// the marginals used for the sum-to-zero corrections.
    pub fn new(ds: &Dataset, cfg: &PriorConfig, kind: MarginalKind) -> Result<Self> {
        cfg.validate()?;
        let p = ds.p();
        let family = ds.family();
        let y_mean = if family == Family::Gaussian {
            ds.y().iter().sum::<f64>() / ds.n() as f64
        } else {
            0.0
        };
        let y: Vec<f64> = ds.y().iter().map(|v| v - y_mean).collect();
        let mut cfg = cfg.clone();
        if family.has_dispersion() {
            let lambda = cfg.resolve_lambda(ds)?;
            cfg.lambda = Some(lambda);
            cfg.q_lambda = None;
        }
        let omega = cfg.omega_for(p)?;
        let w = prior::subset_weights(&cfg, p);
        let log_subset = (1..=p)
            .map(|d| w[d - 1].ln() - ln_binomial(p as u64, d as u64))
            .collect();
        Ok(Target {
            family,
            cols: ds.columns().to_vec(),
            y,
            y_mean,
            marginals: ds.marginals(kind),
            cfg,
            omega,
            log_subset,
            ln_n: (ds.n() as f64).ln(),
            flat: false,
        })
    }

    /// Replaces the likelihood by a constant, so the chain targets the prior.
    pub fn with_flat_likelihood(mut self, flat: bool) -> Self {
        self.flat = flat;
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }

    /// Responses as the sampler sees them (gaussian: centered).
    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    /// The prior with `lambda` resolved.
    pub fn prior(&self) -> &PriorConfig {
        &self.cfg
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    fn log_prior_subset(&self, s: &[usize]) -> f64 {
        self.log_subset[s.len() - 1]
    }

    fn log_lik_rows(&self, fitted: &[f64], eta: f64) -> f64 {
        if self.flat {
            return 0.0;
        }
        fitted
            .iter()
            .zip(&self.y)
            .map(|(&f, &y)| log_density_unchecked(self.family, f, y, eta))
            .sum()
    }

    /// Basis values of a term on every training row; `None` when a factor's
    /// sigmoid mean is degenerate.
    pub fn basis_values(&self, term: &BasisTerm) -> Option<Vec<f64>> {
        let mut phi = vec![1.0; self.n()];
        for ((&j, &b), &g) in term.vars.iter().zip(&term.knots).zip(&term.bandwidths) {
            let stats = CoordStats::compute(&self.marginals[j], b, g);
            if stats.is_degenerate() {
                return None;
            }
            let m = stats.guarded_mean();
            for (ph, &x) in phi.iter_mut().zip(&self.cols[j]) {
                *ph *= factor_from_mean(x, b, g, m);
            }
        }
        Some(phi)
    }

    /// Evaluates a term given `rest`, the fit of all other terms.
    pub fn eval_term(&self, term: &BasisTerm, rest: &[f64], eta: f64, with_grad: bool) -> Option<TermEval> {
        let d = term.order();
        let cfg = &self.cfg;
        let mut grad = vec![0.0; 2 * d + 1];
        if with_grad {
            for i in 0..d {
                grad[d + i] = (cfg.a_gamma - 1.0) / term.bandwidths[i] - 1.0 / cfg.b_gamma;
            }
            grad[2 * d] = -term.beta / cfg.sigma_beta2;
        }
        if self.flat {
            return Some(TermEval {
                phi: Vec::new(),
                loglik: 0.0,
                grad,
            });
        }
        let n = self.n();
        let mut factors = Vec::with_capacity(d);
        let mut stats = Vec::with_capacity(d);
        for i in 0..d {
            let (j, b, g) = (term.vars[i], term.knots[i], term.bandwidths[i]);
            let st = CoordStats::compute(&self.marginals[j], b, g);
            if st.is_degenerate() {
                return None;
            }
            let m = st.guarded_mean();
            factors.push(self.cols[j].iter().map(|&x| factor_from_mean(x, b, g, m)).collect::<Vec<_>>());
            stats.push(st);
        }
        let mut phi = vec![1.0; n];
        for f in &factors {
            for (ph, v) in phi.iter_mut().zip(f) {
                *ph *= v;
            }
        }
        let beta = term.beta;
        let mut loglik = 0.0;
        let mut others = vec![0.0; d];
        for r in 0..n {
            let f = rest[r] + beta * phi[r];
            let y = self.y[r];
            loglik += log_density_unchecked(self.family, f, y, eta);
            if !with_grad {
                continue;
            }
            let score = score_unchecked(self.family, f, y, eta);
            grad[2 * d] += score * phi[r];
            // products of all factors but one
            let mut prefix = 1.0;
            for i in 0..d {
                others[i] = prefix;
                prefix *= factors[i][r];
            }
            let mut suffix = 1.0;
            for i in (0..d).rev() {
                others[i] *= suffix;
                suffix *= factors[i][r];
            }
            for i in 0..d {
                let j = term.vars[i];
                let (db, dg) = factor_gradient(self.cols[j][r], term.knots[i], term.bandwidths[i], &stats[i]);
                let w = score * beta * others[i];
                grad[i] += w * db;
                grad[d + i] += w * dg;
            }
        }
        Some(TermEval { phi, loglik, grad })
    }

    /// Gradient of `log-likelihood + log-prior(b, gamma, beta)` for term `k`
    /// of `state`, computed from scratch.
    pub fn log_posterior_gradient(&self, state: &ModelState, k: usize) -> Result<Vec<f64>> {
        let rest = self.rest_fit(state, k)?;
        self.eval_term(&state.terms[k], &rest, state.eta, true)
            .map(|e| e.grad)
            .ok_or_else(|| degenerate(&state.terms[k]))
    }

    /// Fit of every term except `k`.
    fn rest_fit(&self, state: &ModelState, k: usize) -> Result<Vec<f64>> {
        let mut rest = vec![0.0; self.n()];
        for (idx, t) in state.terms.iter().enumerate() {
            if idx == k {
                continue;
            }
            let phi = self.basis_values(t).ok_or_else(|| degenerate(t))?;
            for (r, v) in rest.iter_mut().zip(phi) {
                *r += t.beta * v;
            }
        }
        Ok(rest)
    }

    /// Log-likelihood of a whole state against the sampler's responses.
    pub fn log_likelihood(&self, state: &ModelState) -> Result<f64> {
        if self.flat {
            return Ok(0.0);
        }
        let mut fitted = vec![0.0; self.n()];
        for t in &state.terms {
            let phi = self.basis_values(t).ok_or_else(|| degenerate(t))?;
            for (f, v) in fitted.iter_mut().zip(phi) {
                *f += t.beta * v;
            }
        }
        Ok(self.log_lik_rows(&fitted, state.eta))
    }

    /// Stepwise-birth probability of proposing `s` from the given terms.
    fn stepwise_density(&self, terms: &[BasisTerm], s: &[usize]) -> f64 {
        let p = self.p();
        let nonfull: Vec<&BasisTerm> = terms.iter().filter(|t| t.order() < p).collect();
        if nonfull.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for t in &nonfull {
            if t.order() + 1 != s.len() || !t.vars.iter().all(|j| s.contains(j)) {
                continue;
            }
            let j = *s.iter().find(|j| !t.vars.contains(j)).expect("one extra variable");
            total += self.omega[j] / complement_weight(&self.omega, &t.vars);
        }
        total / nonfull.len() as f64
    }

    /// Log proposal density of the variable set of a newborn term.
    pub fn log_birth_subset_density(&self, terms: &[BasisTerm], s: &[usize]) -> f64 {
        let k = terms.len() as f64;
        let p = self.p();
        let log_pi = self.log_prior_subset(s);
        if !terms.iter().any(|t| t.order() < p) {
            return log_pi;
        }
        let m = self.cfg.m;
        (m / (m + k) * log_pi.exp() + k / (m + k) * self.stepwise_density(terms, s)).ln()
    }

    fn p_birth(&self, k: usize) -> f64 {
        1.0 - k as f64 / self.cfg.k_max as f64
    }

    fn p_death(&self, k: usize) -> f64 {
        k as f64 / self.cfg.k_max as f64
    }
}

fn degenerate(t: &BasisTerm) -> Error {
    Error::Invalid(format!("term over {:?} has a degenerate sum-to-zero correction", t.vars))
}

/// One per-iteration record of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub chain: usize,
    pub iteration: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub log_likelihood: f64,
    pub sigma2: f64,
    pub birth_rate: f64,
    pub death_rate: f64,
    pub adding_rate: f64,
    pub deleting_rate: f64,
    pub changing_rate: f64,
    pub langevin_rate: f64,
}

/// A single Markov chain with its cached fit.
pub struct Chain<'t> {
    target: &'t Target,
    state: ModelState,
    /// Per-term basis values on the training rows (empty when flat).
    phi: Vec<Vec<f64>>,
    fitted: Vec<f64>,
    loglik: f64,
    rng: ChaCha8Rng,
    stats: MoveStats,
    accepted: u64,
    sigma2_update: Sigma2Update,
}

impl<'t> Chain<'t> {
    pub fn new(target: &'t Target, state: ModelState, rng: ChaCha8Rng) -> Result<Self> {
        state.validate(target.p(), target.cfg.k_max, target.family)?;
        let mut chain = Chain {
            target,
            state,
            phi: Vec::new(),
            fitted: vec![0.0; target.n()],
            loglik: 0.0,
            rng,
            stats: MoveStats::default(),
            accepted: 0,
            sigma2_update: Sigma2Update::Conjugate,
        };
        chain.refresh()?;
        Ok(chain)
    }

    /// Starting state: `init_k` prior draws and, for gaussian data, the
    /// response variance as noise level.
    pub fn initial(target: &'t Target, init_k: usize, rng: &mut ChaCha8Rng) -> ModelState {
        let cfg = &target.cfg;
        let mut terms = Vec::new();
        let mut tries = 0;
        while terms.len() < init_k.min(cfg.k_max) && tries < 100 * (init_k + 1) {
            tries += 1;
            let s = prior::sample_subset(cfg, target.p(), rng);
            let t = prior::sample_term(s, cfg, rng);
            if target.flat || target.basis_values(&t).is_some() {
                terms.push(t);
            }
        }
        let eta = if target.family.has_dispersion() {
            let n = target.n() as f64;
            let v = target.y.iter().map(|y| y * y).sum::<f64>() / n;
            if v > 0.0 { v } else { 1.0 }
        } else {
            1.0
        };
        ModelState { terms, eta }
    }

    pub fn set_sigma2_update(&mut self, mode: Sigma2Update) {
        self.sigma2_update = mode;
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn stats(&self) -> &MoveStats {
        &self.stats
    }

    pub fn log_likelihood(&self) -> f64 {
        self.loglik
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Recomputes basis values, fit and log-likelihood from scratch.
    pub fn refresh(&mut self) -> Result<()> {
        let t = self.target;
        self.fitted.iter_mut().for_each(|f| *f = 0.0);
        if t.flat {
            self.phi = vec![Vec::new(); self.state.k()];
            self.loglik = 0.0;
            return Ok(());
        }
        let mut phis = Vec::with_capacity(self.state.k());
        for term in &self.state.terms {
            let phi = t.basis_values(term).ok_or_else(|| degenerate(term))?;
            for (f, v) in self.fitted.iter_mut().zip(&phi) {
                *f += term.beta * v;
            }
            phis.push(phi);
        }
        self.phi = phis;
        self.loglik = t.log_lik_rows(&self.fitted, self.state.eta);
        Ok(())
    }

    /// Largest absolute difference between the cached and the recomputed
    /// fit, plus the log-likelihood difference.
    pub fn cache_drift(&self) -> Result<(f64, f64)> {
        let mut fresh = vec![0.0; self.target.n()];
        if !self.target.flat {
            for term in &self.state.terms {
                let phi = self.target.basis_values(term).ok_or_else(|| degenerate(term))?;
                for (f, v) in fresh.iter_mut().zip(phi) {
                    *f += term.beta * v;
                }
            }
        }
        let fit = fresh
            .iter()
            .zip(&self.fitted)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let ll = (self.target.log_lik_rows(&fresh, self.state.eta) - self.loglik).abs();
        Ok((fit, ll))
    }

    fn note_accept(&mut self) {
        self.accepted += 1;
        if self.accepted.is_multiple_of(REFRESH_EVERY) {
            self.refresh().expect("accepted states are non-degenerate");
        }
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        if log_ratio.is_nan() {
            return false;
        }
        log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio
    }

    /// Fit without term `k`.
    fn rest_without(&self, k: usize) -> Vec<f64> {
        if self.target.flat {
            return vec![0.0; self.target.n()];
        }
        let beta = self.state.terms[k].beta;
        self.fitted
            .iter()
            .zip(&self.phi[k])
            .map(|(f, p)| f - beta * p)
            .collect()
    }

    fn set_term(&mut self, k: usize, term: BasisTerm, rest: &[f64], eval: TermEval) {
        if !self.target.flat {
            for ((f, r), p) in self.fitted.iter_mut().zip(rest).zip(&eval.phi) {
                *f = r + term.beta * p;
            }
        }
        self.loglik = eval.loglik;
        self.phi[k] = eval.phi;
        self.state.terms[k] = term;
    }

    /// Birth or death of one term. Returns whether the proposal was accepted.
    pub fn update_k(&mut self) -> bool {
        let t = self.target;
        let k = self.state.k();
        if self.rng.random::<f64>() < t.p_birth(k) {
            self.birth()
        } else {
            self.death()
        }
    }

    fn birth(&mut self) -> bool {
        let t = self.target;
        let cfg = &t.cfg;
        let p = t.p();
        let k = self.state.k();
        let nonfull: Vec<usize> = (0..k).filter(|&i| self.state.terms[i].order() < p).collect();
        let random = nonfull.is_empty() || self.rng.random::<f64>() < cfg.m / (cfg.m + k as f64);
        let vars = if random {
            let w = prior::subset_weights(cfg, p);
            prior::sample_subset_with(&w, p, &mut self.rng)
        } else {
            let parent = nonfull[self.rng.random_range(0..nonfull.len())];
            let base = &self.state.terms[parent].vars;
            let j = draw_outside(&t.omega, base, &mut self.rng);
            let mut s = base.clone();
            s.insert(s.partition_point(|&v| v < j), j);
            s
        };
        let term = prior::sample_term(vars, cfg, &mut self.rng);
        let pos = self.rng.random_range(0..=k);

        let log_q = t.log_birth_subset_density(&self.state.terms, &term.vars);
        let Some(eval) = t.eval_term(&term, &self.fitted, self.state.eta, false) else {
            self.stats.birth.record(false);
            return false;
        };
        let log_ratio = eval.loglik - self.loglik - cfg.c0 * t.ln_n + t.log_prior_subset(&term.vars)
            + t.p_death(k + 1).ln()
            - t.p_birth(k).ln()
            - log_q;
        let ok = self.accept(log_ratio);
        self.stats.birth.record(ok);
        if ok {
            if !t.flat {
                for (f, v) in self.fitted.iter_mut().zip(&eval.phi) {
                    *f += term.beta * v;
                }
            }
            self.loglik = eval.loglik;
            self.phi.insert(pos, eval.phi);
            self.state.terms.insert(pos, term);
            self.note_accept();
        }
        ok
    }

    fn death(&mut self) -> bool {
        let t = self.target;
        let cfg = &t.cfg;
        let k = self.state.k();
        debug_assert!(k > 0);
        let idx = self.rng.random_range(0..k);
        let rest = self.rest_without(idx);
        let new_ll = t.log_lik_rows(&rest, self.state.eta);
        let mut remaining = self.state.terms.clone();
        let removed = remaining.remove(idx);
        let log_q = t.log_birth_subset_density(&remaining, &removed.vars);
        let log_ratio = new_ll - self.loglik + cfg.c0 * t.ln_n - t.log_prior_subset(&removed.vars)
            + t.p_birth(k - 1).ln()
            + log_q
            - t.p_death(k).ln();
        let ok = self.accept(log_ratio);
        self.stats.death.record(ok);
        if ok {
            self.fitted = rest;
            self.loglik = new_ll;
            self.phi.remove(idx);
            self.state.terms = remaining;
            self.note_accept();
        }
        ok
    }

    /// Adding, deleting or changing one variable of term `k`.
    pub fn update_subset(&mut self, k: usize) -> bool {
        let t = self.target;
        let cfg = &t.cfg;
        let p = t.p();
        let old = self.state.terms[k].clone();
        let d = old.order();
        let probs = move_probs(cfg, d, p);
        if probs.iter().all(|&q| q == 0.0) {
            return false;
        }
        let mv = match prior::sample_index(&probs, &mut self.rng) {
            0 => SubsetMove::Adding,
            1 => SubsetMove::Deleting,
            _ => SubsetMove::Changing,
        };
        let mut term = old.clone();
        let log_factor = match mv {
            SubsetMove::Adding => {
                let j = draw_outside(&t.omega, &old.vars, &mut self.rng);
                let b = self.rng.random::<f64>();
                let g = prior::sample_bandwidth(cfg, &mut self.rng);
                insert_coord(&mut term, j, b, g);
                log_adding_ratio(cfg, p, &t.omega, &old.vars, j)
            }
            SubsetMove::Deleting => {
                let pos = self.rng.random_range(0..d);
                let j = old.vars[pos];
                remove_coord(&mut term, pos);
                log_deleting_ratio(cfg, p, &t.omega, &old.vars, j)
            }
            SubsetMove::Changing => {
                let pos = self.rng.random_range(0..d);
                let j_change = old.vars[pos];
                let j_new = draw_outside(&t.omega, &old.vars, &mut self.rng);
                let b = self.rng.random::<f64>();
                let g = prior::sample_bandwidth(cfg, &mut self.rng);
                remove_coord(&mut term, pos);
                insert_coord(&mut term, j_new, b, g);
                log_changing_ratio(&t.omega, &old.vars, j_change, j_new)
            }
        };
        let rest = self.rest_without(k);
        let eval = t.eval_term(&term, &rest, self.state.eta, false);
        let ok = match eval {
            Some(ref e) => self.accept(e.loglik - self.loglik + log_factor),
            None => false,
        };
        match mv {
            SubsetMove::Adding => self.stats.adding.record(ok),
            SubsetMove::Deleting => self.stats.deleting.record(ok),
            SubsetMove::Changing => self.stats.changing.record(ok),
        }
        if ok {
            self.set_term(k, term, &rest, eval.expect("checked above"));
            self.note_accept();
        }
        ok
    }

    /// Metropolis-adjusted Langevin step on `(b, gamma, beta)` of term `k`.
    pub fn update_langevin(&mut self, k: usize) -> bool {
        let t = self.target;
        let cfg = &t.cfg;
        let eps = cfg.step_size;
        let eta = self.state.eta;
        let old = self.state.terms[k].clone();
        let d = old.order();
        let rest = self.rest_without(k);
        let cur = t
            .eval_term(&old, &rest, eta, true)
            .expect("current state is non-degenerate");
        let theta = pack(&old);
        let drift = 0.5 * eps * eps;
        let proposal: Vec<f64> = theta
            .iter()
            .zip(&cur.grad)
            .map(|(x, g)| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                x + drift * g + eps * z
            })
            .collect();
        let in_support = proposal[..d].iter().all(|b| (0.0..=1.0).contains(b))
            && proposal[d..2 * d].iter().all(|g| *g > 0.0 && g.is_finite())
            && proposal[2 * d].is_finite();
        let new_term = unpack(&old, &proposal);
        let eval = if in_support {
            t.eval_term(&new_term, &rest, eta, true)
        } else {
            None
        };
        let ok = match eval {
            Some(ref new) => {
                let log_q_fwd = gaussian_kernel(&proposal, &theta, &cur.grad, drift, eps);
                let log_q_rev = gaussian_kernel(&theta, &proposal, &new.grad, drift, eps);
                let log_ratio = new.loglik + prior::log_prior_numeric(&new_term, cfg)
                    - cur.loglik
                    - prior::log_prior_numeric(&old, cfg)
                    + log_q_rev
                    - log_q_fwd;
                self.accept(log_ratio)
            }
            None => false,
        };
        self.stats.langevin.record(ok);
        if ok {
            self.set_term(k, new_term, &rest, eval.expect("checked above"));
            self.note_accept();
        }
        ok
    }

    /// Gibbs draw of the gaussian noise variance.
    pub fn gibbs_sigma2(&mut self) -> Result<f64> {
        let t = self.target;
        if !t.family.has_dispersion() {
            return Err(Error::Invalid(format!("{} family has no noise variance", t.family)));
        }
        let cfg = &t.cfg;
        let lambda = cfg.lambda.expect("resolved in Target::new");
        let (shape, scale) = if t.flat {
            (cfg.v / 2.0, cfg.v * lambda / 2.0)
        } else {
            let n = t.n() as f64;
            let rss: f64 = self.fitted.iter().zip(&t.y).map(|(f, y)| (y - f).powi(2)).sum();
            match self.sigma2_update {
                Sigma2Update::Conjugate => ((n + cfg.v) / 2.0, (rss + cfg.v * lambda) / 2.0),
                Sigma2Update::ScaledResidual => (cfg.v / 2.0, (rss / n + cfg.v * lambda) / 2.0),
            }
        };
        let precision: f64 = Gamma::new(shape, 1.0 / scale)
            .map_err(|e| Error::Invalid(e.to_string()))?
            .sample(&mut self.rng);
        let sigma2 = 1.0 / precision;
        self.state.eta = sigma2;
        self.loglik = t.log_lik_rows(&self.fitted, sigma2);
        Ok(sigma2)
    }

    /// One full sweep.
    pub fn step(&mut self) {
        self.update_k();
        for k in 0..self.state.k() {
            self.update_subset(k);
            self.update_langevin(k);
        }
        if self.target.family.has_dispersion() {
            self.gibbs_sigma2().expect("gaussian family");
        }
    }

    fn trace_row(&self, chain: usize, iteration: usize) -> TraceRow {
        let s = &self.stats;
        TraceRow {
            chain,
            iteration,
            k: self.state.k(),
            log_likelihood: self.loglik,
            sigma2: self.state.eta,
            birth_rate: s.birth.rate(),
            death_rate: s.death.rate(),
            adding_rate: s.adding.rate(),
            deleting_rate: s.deleting.rate(),
            changing_rate: s.changing.rate(),
            langevin_rate: s.langevin.rate(),
        }
    }
}

fn pack(term: &BasisTerm) -> Vec<f64> {
    let mut v = term.knots.clone();
    v.extend_from_slice(&term.bandwidths);
    v.push(term.beta);
    v
}

fn unpack(template: &BasisTerm, theta: &[f64]) -> BasisTerm {
    let d = template.order();
    BasisTerm {
        vars: template.vars.clone(),
        knots: theta[..d].to_vec(),
        bandwidths: theta[d..2 * d].to_vec(),
        beta: theta[2 * d],
    }
}

/// `log N(to; from + drift * grad, eps^2 I)` without the shared constant.
fn gaussian_kernel(to: &[f64], from: &[f64], grad: &[f64], drift: f64, eps: f64) -> f64 {
    let ss: f64 = to
        .iter()
        .zip(from)
        .zip(grad)
        .map(|((t, f), g)| (t - f - drift * g).powi(2))
        .sum();
    -ss / (2.0 * eps * eps)
}

/// A recorded post-burn-in state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    pub iteration: usize,
    pub state: ModelState,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Draw>,
    pub trace: Vec<TraceRow>,
    pub stats: MoveStats,
}

/// Generator for chain `chain` under `seed`: independent streams of one key.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs one chain. Draws are kept every `thin` iterations after burn-in; the
/// trace has one row per post-burn-in iteration.
pub fn run_single_chain(target: &Target, cfg: &ChainConfig, chain: usize) -> Result<ChainOutput> {
    cfg.validate()?;
    let mut rng = chain_rng(cfg.seed, chain);
    let init = Chain::initial(target, cfg.init_k, &mut rng);
    let mut ch = Chain::new(target, init, rng)?;
    ch.set_sigma2_update(cfg.sigma2_update);
    let mut draws = Vec::new();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.burn_in + cfg.iterations {
        ch.step();
        if it < cfg.burn_in {
            continue;
        }
        let post = it - cfg.burn_in;
        trace.push(ch.trace_row(chain, post));
        if post.is_multiple_of(cfg.thin) {
            draws.push(Draw {
                chain,
                iteration: post,
                state: ch.state.clone(),
            });
        }
    }
    Ok(ChainOutput {
        draws,
        trace,
        stats: ch.stats.clone(),
    })
}

/// Runs `n_chains` chains in parallel and concatenates them in chain order.
pub fn run_chain(target: &Target, cfg: &ChainConfig) -> Result<ChainOutput> {
    cfg.validate()?;
    let outputs: Vec<ChainOutput> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_single_chain(target, cfg, c))
        .collect::<Result<_>>()?;
    let mut all = ChainOutput {
        draws: Vec::new(),
        trace: Vec::new(),
        stats: MoveStats::default(),
    };
    for out in outputs {
        all.draws.extend(out.draws);
        all.trace.extend(out.trace);
        all.stats.merge(&out.stats);
    }
    Ok(all)
}
