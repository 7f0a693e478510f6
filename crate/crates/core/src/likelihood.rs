//! Exponential-family response models and evaluation of the additive model
//! `f(x) = sum_k beta_k * phi_k(x)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::{sigmoid, BasisTerm, PreparedTerm};
use crate::data::{Dataset, Marginal};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
    Poisson,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
        }
    }

    /// Log-partition function `A(f)`.
    pub fn log_partition(self, f: f64) -> f64 {
        match self {
            Family::Gaussian => 0.5 * f * f,
            Family::Bernoulli => crate::basis::softplus(f),
            Family::Poisson => f.exp(),
        }
    }

    /// `A'(f)`, the mean of the response.
    pub fn mean(self, f: f64) -> f64 {
        match self {
            Family::Gaussian => f,
            Family::Bernoulli => sigmoid(f),
            Family::Poisson => f.exp(),
        }
    }

    /// `A''(f)`, the variance function.
    pub fn variance(self, f: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Bernoulli => {
                let s = sigmoid(f);
                s * (1.0 - s)
            }
            Family::Poisson => f.exp(),
        }
    }

    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::Gaussian)
    }

    pub fn in_support(self, y: f64) -> bool {
        match self {
            Family::Gaussian => y.is_finite(),
            Family::Bernoulli => y == 0.0 || y == 1.0,
            Family::Poisson => y >= 0.0 && y.is_finite() && y.fract() == 0.0,
        }
    }

    fn check(self, y: f64) -> Result<()> {
        if self.in_support(y) {
            Ok(())
        } else {
            Err(Error::Support {
                row: 0,
                value: y,
                family: self.name(),
            })
        }
    }

    /// The `S(y, eta)` base-measure term.
    fn base_measure(self, y: f64, eta: f64) -> f64 {
        match self {
            Family::Gaussian => -y * y / (2.0 * eta) - 0.5 * (2.0 * PI * eta).ln(),
            Family::Bernoulli => 0.0,
            Family::Poisson => -ln_gamma(y + 1.0),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" | "regression" => Ok(Family::Gaussian),
            "bernoulli" | "binary" | "logistic" => Ok(Family::Bernoulli),
            "poisson" | "count" => Ok(Family::Poisson),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

/// Log-density without support checking; callers guarantee `y` is valid.
#[inline]
pub(crate) fn log_density_unchecked(family: Family, f: f64, y: f64, eta: f64) -> f64 {
    (f * y - family.log_partition(f)) / eta + family.base_measure(y, eta)
}

#[inline]
pub(crate) fn score_unchecked(family: Family, f: f64, y: f64, eta: f64) -> f64 {
    (y - family.mean(f)) / eta
}

pub fn log_density(family: Family, f: f64, y: f64, eta: f64) -> Result<f64> {
    family.check(y)?;
    if !(eta > 0.0) {
        return Err(Error::Invalid(format!("dispersion {eta} must be positive")));
    }
    Ok(log_density_unchecked(family, f, y, eta))
}

/// `d/df log q_{f,eta}(y) = (y - A'(f)) / eta`.
pub fn dlog_density_df(family: Family, f: f64, y: f64, eta: f64) -> Result<f64> {
    family.check(y)?;
    if !(eta > 0.0) {
        return Err(Error::Invalid(format!("dispersion {eta} must be positive")));
    }
    Ok(score_unchecked(family, f, y, eta))
}

/// Parameter vector walked by the chain: the basis terms and the dispersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub terms: Vec<BasisTerm>,
    pub eta: f64,
}

impl ModelState {
    pub fn empty() -> Self {
        ModelState {
            terms: Vec::new(),
            eta: 1.0,
        }
    }

    pub fn k(&self) -> usize {
        self.terms.len()
    }

    pub fn validate(&self, p: usize, k_max: usize, family: Family) -> Result<()> {
        if self.terms.len() > k_max {
            return Err(Error::Invalid(format!(
                "state has {} terms, more than K_max = {k_max}",
                self.terms.len()
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Invalid(format!("dispersion {} must be positive", self.eta)));
        }
        if !family.has_dispersion() && self.eta != 1.0 {
            return Err(Error::Invalid(format!("{family} family requires eta = 1")));
        }
        for t in &self.terms {
            t.validate(p)?;
        }
        Ok(())
    }

    /// Resolves every term's sum-to-zero corrections against `marginals`.
    pub fn prepare(&self, marginals: &[Marginal]) -> Result<Vec<PreparedTerm>> {
        self.terms.iter().map(|t| PreparedTerm::new(t, marginals)).collect()
    }
}

/// `f(x) = sum_k beta_k phi_k(x)`; zero for an empty state.
pub fn model_eval(state: &ModelState, x: &[f64], marginals: &[Marginal]) -> Result<f64> {
    let mut f = 0.0;
    for term in &state.terms {
        f += term.beta * crate::basis::eval_basis(x, term, marginals)?;
    }
    Ok(f)
}

/// Evaluates prepared terms on one row.
#[inline]
pub fn eval_prepared(terms: &[PreparedTerm], x: &[f64]) -> f64 {
    terms.iter().map(|t| t.beta * t.basis(x)).sum()
}

/// Sum of log-densities given per-row fitted values.
pub fn log_likelihood_fitted(family: Family, fitted: &[f64], y: &[f64], eta: f64) -> f64 {
    fitted
        .iter()
        .zip(y)
        .map(|(&f, &yi)| log_density_unchecked(family, f, yi, eta))
        .sum()
}

pub fn log_likelihood(state: &ModelState, ds: &Dataset, marginals: &[Marginal]) -> Result<f64> {
    let prepared = state.prepare(marginals)?;
    let family = ds.family();
    let mut row = vec![0.0; ds.p()];
    let mut total = 0.0;
    for i in 0..ds.n() {
        ds.row_into(i, &mut row);
        total += log_density_unchecked(family, eval_prepared(&prepared, &row), ds.y()[i], state.eta);
    }
    Ok(total)
}
