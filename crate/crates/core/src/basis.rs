//! Sum-to-zero tensor-product basis functions.
//!
//! A basis term over the variable set `S` is the product of one-dimensional
//! factors `1 - sigma((x_j - b_j) / gamma_j) + c_j * sigma(...)`, where the
//! correction `c_j` makes each factor average to zero under the marginal
//! distribution of column `j`. Internally every factor is evaluated in the
//! equivalent form `1 - sigma(z) / m`, with `m` the marginal mean of the
//! sigmoid.

use serde::{Deserialize, Serialize};

use crate::data::Marginal;
use crate::error::{Error, Result};

/// Lower/upper guard applied to the sigmoid mean before dividing by it.
pub const MEAN_GUARD: f64 = 1e-12;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sigma(z) * (1 - sigma(z))`, the derivative of the logistic function.
#[inline]
pub fn sigmoid_slope(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Antiderivative of `t * sigma'(t)`: `t * sigma(t) - softplus(t)`.
fn slope_moment_antiderivative(t: f64) -> f64 {
    if t > 0.0 {
        -t * sigmoid(-t) - (-t).exp().ln_1p()
    } else {
        t * sigmoid(t) - t.exp().ln_1p()
    }
}

/// One TPNN unit: variable set, knots, bandwidths and output coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisTerm {
    #[serde(rename = "S")]
    pub vars: Vec<usize>,
    #[serde(rename = "b")]
    pub knots: Vec<f64>,
    #[serde(rename = "gamma")]
    pub bandwidths: Vec<f64>,
    pub beta: f64,
}

impl BasisTerm {
    pub fn new(vars: Vec<usize>, knots: Vec<f64>, bandwidths: Vec<f64>, beta: f64) -> Result<Self> {
        let term = BasisTerm {
            vars,
            knots,
            bandwidths,
            beta,
        };
        term.check_shape()?;
        Ok(term)
    }

    pub fn order(&self) -> usize {
        self.vars.len()
    }

    fn check_shape(&self) -> Result<()> {
        if self.vars.is_empty() {
            return Err(Error::Invalid("basis term with empty variable set".into()));
        }
        if self.knots.len() != self.vars.len() || self.bandwidths.len() != self.vars.len() {
            return Err(Error::Invalid(format!(
                "basis term has {} variables but {} knots and {} bandwidths",
                self.vars.len(),
                self.knots.len(),
                self.bandwidths.len()
            )));
        }
        if self.vars.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!(
                "variable set {:?} must be strictly increasing",
                self.vars
            )));
        }
        if let Some(g) = self.bandwidths.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(Error::Invalid(format!("bandwidth {g} must be positive")));
        }
        if !self.beta.is_finite() || self.knots.iter().any(|b| !b.is_finite()) {
            return Err(Error::Invalid("non-finite basis parameter".into()));
        }
        Ok(())
    }

    /// Full validity check against the input dimension.
    pub fn validate(&self, p: usize) -> Result<()> {
        self.check_shape()?;
        if let Some(&j) = self.vars.iter().find(|&&j| j >= p) {
            return Err(Error::IndexOutOfRange { index: j, p });
        }
        Ok(())
    }
}

/// Marginal integrals needed by one factor: the sigmoid mean `m` and the two
/// slope moments that appear in its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordStats {
    /// `E[sigma((u - b) / gamma)]`
    pub mean: f64,
    /// `E[sigma'((u - b) / gamma)]`
    pub slope_mean: f64,
    /// `E[(u - b) / gamma^2 * sigma'((u - b) / gamma)]`
    pub scaled_slope_mean: f64,
}

impl CoordStats {
    pub fn compute(marginal: &Marginal, b: f64, gamma: f64) -> Self {
        match marginal {
            Marginal::Empirical(values) => Self::from_values(values, b, gamma),
            Marginal::Uniform => {
                let t0 = -b / gamma;
                let t1 = (1.0 - b) / gamma;
                CoordStats {
                    mean: gamma * (softplus(t1) - softplus(t0)),
                    slope_mean: gamma * (sigmoid(t1) - sigmoid(t0)),
                    scaled_slope_mean: slope_moment_antiderivative(t1)
                        - slope_moment_antiderivative(t0),
                }
            }
        }
    }

    /// Moments under the empirical distribution of `values`.
    pub fn from_values(values: &[f64], b: f64, gamma: f64) -> Self {
        let n = values.len() as f64;
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &u in values {
            let z = (u - b) / gamma;
            let s = sigmoid(z);
            let ds = s * (1.0 - s);
            s0 += s;
            s1 += ds;
            s2 += z * ds;
        }
        CoordStats {
            mean: s0 / n,
            slope_mean: s1 / n,
            scaled_slope_mean: s2 / (n * gamma),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.mean >= MEAN_GUARD) || !self.mean.is_finite()
    }

    /// Sigmoid mean clamped into `[MEAN_GUARD, 1 - MEAN_GUARD]`.
    #[inline]
    pub fn guarded_mean(&self) -> f64 {
        self.mean.clamp(MEAN_GUARD, 1.0 - MEAN_GUARD)
    }
}

/// `E[sigma((u - b) / gamma)]` under the given marginal.
pub fn sigmoid_mean(marginal: &Marginal, b: f64, gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0);
    match marginal {
        Marginal::Empirical(values) => {
            values.iter().map(|&u| sigmoid((u - b) / gamma)).sum::<f64>() / values.len() as f64
        }
        Marginal::Uniform => gamma * (softplus((1.0 - b) / gamma) - softplus(-b / gamma)),
    }
}

/// The sum-to-zero correction `c = -(1 - m) / m`.
pub fn c_correction(marginal: &Marginal, b: f64, gamma: f64) -> Result<f64> {
    let m = sigmoid_mean(marginal, b, gamma);
    if !(m >= MEAN_GUARD) {
        return Err(Error::DegenerateBandwidth { b, gamma, mean: m });
    }
    let m = m.min(1.0 - MEAN_GUARD);
    Ok(-(1.0 - m) / m)
}

#[inline]
pub fn eval_factor(x: f64, b: f64, gamma: f64, c: f64) -> f64 {
    let s = sigmoid((x - b) / gamma);
    1.0 - s + c * s
}

/// Factor in its identity form `1 - sigma(z) / m`.
#[inline]
pub fn factor_from_mean(x: f64, b: f64, gamma: f64, m: f64) -> f64 {
    1.0 - sigmoid((x - b) / gamma) / m
}

/// Partial derivatives `(d/db, d/dgamma)` of `1 - sigma(z) / m(b, gamma)` given
/// precomputed marginal moments.
#[inline]
pub fn factor_gradient(x: f64, b: f64, gamma: f64, stats: &CoordStats) -> (f64, f64) {
    let m = stats.guarded_mean();
    let z = (x - b) / gamma;
    let s = sigmoid(z);
    let ds = s * (1.0 - s);
    let d_b = ds / (gamma * m) - s * stats.slope_mean / (gamma * m * m);
    let d_gamma = (x - b) / (gamma * gamma) * ds / m - s * stats.scaled_slope_mean / (m * m);
    (d_b, d_gamma)
}

pub fn grad_factor(x: f64, b: f64, gamma: f64, marginal: &Marginal) -> Result<(f64, f64)> {
    let stats = CoordStats::compute(marginal, b, gamma);
    if stats.is_degenerate() {
        return Err(Error::DegenerateBandwidth {
            b,
            gamma,
            mean: stats.mean,
        });
    }
    Ok(factor_gradient(x, b, gamma, &stats))
}

/// Evaluates `phi(x_S)` for one input row; the coefficient is not applied.
pub fn eval_basis(x: &[f64], term: &BasisTerm, marginals: &[Marginal]) -> Result<f64> {
    let mut prod = 1.0;
    for ((&j, &b), &g) in term.vars.iter().zip(&term.knots).zip(&term.bandwidths) {
        let xj = *x.get(j).ok_or(Error::IndexOutOfRange { index: j, p: x.len() })?;
        let marginal = marginals.get(j).ok_or(Error::IndexOutOfRange {
            index: j,
            p: marginals.len(),
        })?;
        let c = c_correction(marginal, b, g)?;
        prod *= eval_factor(xj, b, g, c);
    }
    Ok(prod)
}

/// Per-coordinate parameters of a term resolved against the marginals, so a
/// term can be evaluated on many rows without recomputing `m`.
#[derive(Debug, Clone)]
pub struct PreparedTerm {
    vars: Vec<usize>,
    knots: Vec<f64>,
    bandwidths: Vec<f64>,
    means: Vec<f64>,
    pub beta: f64,
}

impl PreparedTerm {
    pub fn new(term: &BasisTerm, marginals: &[Marginal]) -> Result<Self> {
        let mut means = Vec::with_capacity(term.order());
        for ((&j, &b), &g) in term.vars.iter().zip(&term.knots).zip(&term.bandwidths) {
            let marginal = marginals.get(j).ok_or(Error::IndexOutOfRange {
                index: j,
                p: marginals.len(),
            })?;
            let stats = CoordStats::compute(marginal, b, g);
            if stats.is_degenerate() {
                return Err(Error::DegenerateBandwidth {
                    b,
                    gamma: g,
                    mean: stats.mean,
                });
            }
            means.push(stats.guarded_mean());
        }
        Ok(PreparedTerm {
            vars: term.vars.clone(),
            knots: term.knots.clone(),
            bandwidths: term.bandwidths.clone(),
            means,
            beta: term.beta,
        })
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    /// `phi(x)` for a full input row.
    #[inline]
    pub fn basis(&self, x: &[f64]) -> f64 {
        let mut prod = 1.0;
        for i in 0..self.vars.len() {
            prod *= factor_from_mean(x[self.vars[i]], self.knots[i], self.bandwidths[i], self.means[i]);
        }
        prod
    }

    /// `phi` evaluated at values given only for the term's own coordinates.
    #[inline]
    pub fn basis_on_subset(&self, xs: &[f64]) -> f64 {
        debug_assert_eq!(xs.len(), self.vars.len());
        xs.iter()
            .zip(&self.knots)
            .zip(&self.bandwidths)
            .zip(&self.means)
            .map(|(((&x, &b), &g), &m)| factor_from_mean(x, b, g, m))
            .product()
    }
}
