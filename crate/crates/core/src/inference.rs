//! Posterior samples: JSON-lines storage, predictive distribution, component
//! estimates with credible bands, importance and stability scores.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::basis::PreparedTerm;
use crate::data::{ColumnMeta, DatasetFingerprint, Marginal, MarginalKind, Preprocessor};
use crate::error::{Error, Result};
use crate::likelihood::{log_density, Family, ModelState};
use crate::data::Dataset;
use crate::mcmc::{run_chain, ChainConfig, Draw, MoveStats, Target, TraceRow};
use crate::prior::PriorConfig;

pub const SAMPLES_FORMAT: &str = "btpnn-samples/1";
pub const RNG_NAME: &str = "ChaCha8Rng";

/// Header line of a samples file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesMeta {
    pub format: String,
    pub family: Family,
    pub p: usize,
    pub rng: String,
    pub seed: u64,
    pub n_chains: usize,
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub marginal_kind: MarginalKind,
    /// Added back to gaussian predictions; 0 otherwise.
    pub y_mean: f64,
    pub fingerprint: DatasetFingerprint,
    /// Training marginals that fix every factor's sum-to-zero correction.
    pub marginals: Vec<Marginal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessor: Option<Preprocessor>,
    pub columns: Vec<ColumnMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub meta: SamplesMeta,
    pub draws: Vec<Draw>,
}

#[derive(Serialize, Deserialize)]
struct StateLine {
    chain: usize,
    iteration: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(flatten)]
    state: ModelState,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn family(&self) -> Family {
        self.meta.family
    }

    pub fn states(&self) -> impl Iterator<Item = &ModelState> {
        self.draws.iter().map(|d| &d.state)
    }

    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let io = |e: std::io::Error| Error::io("<samples>", e);
        serde_json::to_writer(&mut w, &self.meta).map_err(|e| Error::Invalid(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
        for d in &self.draws {
            let line = StateLine {
                chain: d.chain,
                iteration: d.iteration,
                k: d.state.k(),
                state: d.state.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| Error::Invalid(e.to_string()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(f)
    }

    pub fn read_jsonl<R: std::io::Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let bad = |line: usize, message: String| Error::SamplesFormat { line, message };
        let header = lines
            .next()
            .ok_or_else(|| bad(1, "missing header".into()))?
            .map_err(|e| bad(1, e.to_string()))?;
        let meta: SamplesMeta = serde_json::from_str(&header).map_err(|e| bad(1, e.to_string()))?;
        if meta.format != SAMPLES_FORMAT {
            return Err(bad(1, format!("unsupported format '{}'", meta.format)));
        }
        if meta.marginals.len() != meta.p {
            return Err(bad(1, format!("{} marginals for p = {}", meta.marginals.len(), meta.p)));
        }
        let mut draws = Vec::new();
        for (i, line) in lines.enumerate() {
            let no = i + 2;
            let line = line.map_err(|e| bad(no, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let s: StateLine = serde_json::from_str(&line).map_err(|e| bad(no, e.to_string()))?;
            if s.k != s.state.k() {
                return Err(bad(no, format!("K = {} but {} terms", s.k, s.state.k())));
            }
            for t in &s.state.terms {
                t.validate(meta.p).map_err(|e| bad(no, e.to_string()))?;
            }
            draws.push(Draw {
                chain: s.chain,
                iteration: s.iteration,
                state: s.state,
            });
        }
        Ok(PosteriorSamples { meta, draws })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(f)
    }
}

/// Result of a fit: stored samples plus per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub samples: PosteriorSamples,
    pub trace: Vec<TraceRow>,
    pub stats: MoveStats,
}

/// Runs the sampler on `ds` and packages the draws with everything needed to
/// evaluate them later.
pub fn fit(ds: &Dataset, prior: &PriorConfig, chain: &ChainConfig) -> Result<FitOutput> {
    chain.validate()?;
    let target = Target::new(ds, prior, chain.marginal_kind)?;
    let out = run_chain(&target, chain)?;
    let meta = SamplesMeta {
        format: SAMPLES_FORMAT.to_string(),
        family: ds.family(),
        p: ds.p(),
        rng: RNG_NAME.to_string(),
        seed: chain.seed,
        n_chains: chain.n_chains,
        burn_in: chain.burn_in,
        iterations: chain.iterations,
        thin: chain.thin,
        marginal_kind: chain.marginal_kind,
        y_mean: target.y_mean(),
        fingerprint: ds.fingerprint(),
        marginals: target.marginals().to_vec(),
        preprocessor: ds.preprocessor().cloned(),
        columns: ds.column_meta().to_vec(),
    };
    Ok(FitOutput {
        samples: PosteriorSamples { meta, draws: out.draws },
        trace: out.trace,
        stats: out.stats,
    })
}

/// Posterior states resolved against the training marginals, ready for fast
/// evaluation on new rows.
pub struct Posterior {
    family: Family,
    p: usize,
    y_mean: f64,
    states: Vec<(Vec<PreparedTerm>, f64)>,
}

impl Posterior {
    pub fn new(samples: &PosteriorSamples) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        let states = samples
            .states()
            .map(|s| Ok((s.prepare(&samples.meta.marginals)?, s.eta)))
            .collect::<Result<_>>()?;
        Ok(Posterior {
            family: samples.meta.family,
            p: samples.meta.p,
            y_mean: samples.meta.y_mean,
            states,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    fn check_row(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::Schema(format!("row has {} columns, samples expect {}", x.len(), self.p)));
        }
        Ok(())
    }

    /// Natural parameter of every state at `x` (gaussian includes the
    /// response offset), with the state's dispersion.
    pub fn natural_params(&self, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        self.check_row(x)?;
        Ok(self
            .states
            .iter()
            .map(|(terms, eta)| {
                let f: f64 = terms.iter().map(|t| t.beta * t.basis(x)).sum();
                (f + self.y_mean, *eta)
            })
            .collect())
    }

    /// Posterior-averaged density of `y` at `x`.
    pub fn predictive_density(&self, x: &[f64], y: f64) -> Result<f64> {
        let params = self.natural_params(x)?;
        let mut total = 0.0;
        for (f, eta) in &params {
            total += log_density(self.family, *f, y, *eta)?.exp();
        }
        Ok(total / params.len() as f64)
    }

    /// The Bayes estimate of the response mean.
    pub fn predictive_point(&self, x: &[f64]) -> Result<f64> {
        let params = self.natural_params(x)?;
        Ok(params.iter().map(|(f, _)| self.family.mean(*f)).sum::<f64>() / params.len() as f64)
    }

    /// Quantile of the gaussian predictive mixture, by bisection on its CDF.
    pub fn predictive_quantile(&self, x: &[f64], prob: f64) -> Result<f64> {
        if self.family != Family::Gaussian {
            return Err(Error::Invalid("predictive quantiles need the gaussian family".into()));
        }
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Invalid(format!("quantile level {prob} outside (0, 1)")));
        }
        let params = self.natural_params(x)?;
        let cdf = |t: f64| {
            params
                .iter()
                .map(|(f, eta)| 0.5 * erfc(-(t - f) / (2.0 * eta).sqrt()))
                .sum::<f64>()
                / params.len() as f64
        };
        let lo_bound = params.iter().map(|(f, e)| f - 40.0 * e.sqrt()).fold(f64::INFINITY, f64::min);
        let hi_bound = params.iter().map(|(f, e)| f + 40.0 * e.sqrt()).fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (lo_bound, hi_bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < prob {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `f_S` of every state at `x`: the sum of terms whose variable set is
    /// exactly `s`.
    pub fn component_draws(&self, s: &[usize], x: &[f64]) -> Vec<f64> {
        self.states
            .iter()
            .map(|(terms, _)| {
                terms
                    .iter()
                    .filter(|t| t.vars() == s)
                    .map(|t| t.beta * t.basis(x))
                    .sum()
            })
            .collect()
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = prob * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentBand {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Posterior mean and pointwise 2.5%/97.5% band of `f_S` on the given rows.
pub fn component_estimate(post: &Posterior, s: &[usize], rows: &[Vec<f64>]) -> Result<ComponentBand> {
    if let Some(&j) = s.iter().find(|&&j| j >= post.p) {
        return Err(Error::IndexOutOfRange { index: j, p: post.p });
    }
    let mut band = ComponentBand {
        mean: Vec::with_capacity(rows.len()),
        lo: Vec::with_capacity(rows.len()),
        hi: Vec::with_capacity(rows.len()),
    };
    for x in rows {
        post.check_row(x)?;
        let mut draws = post.component_draws(s, x);
        band.mean.push(draws.iter().sum::<f64>() / draws.len() as f64);
        draws.sort_by(f64::total_cmp);
        band.lo.push(quantile_sorted(&draws, 0.025));
        band.hi.push(quantile_sorted(&draws, 0.975));
    }
    Ok(band)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceMode {
    /// Norm of the posterior-mean component.
    #[default]
    PosteriorMean,
    /// Posterior mean of the per-draw component norms.
    PerSampleMean,
}

/// States per deterministic accumulation chunk.
const CHUNK: usize = 32;

/// Per-row values of every visited component, summed over the states of one
/// chunk (or their squared norms in per-sample mode).
fn accumulate(
    states: &[(Vec<PreparedTerm>, f64)],
    rows: &[Vec<f64>],
    mode: ImportanceMode,
) -> BTreeMap<Vec<usize>, Vec<f64>> {
    let mut acc: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for (terms, _) in states {
        let mut per_state: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        for t in terms {
            let entry = per_state
                .entry(t.vars().to_vec())
                .or_insert_with(|| vec![0.0; rows.len()]);
            for (v, x) in entry.iter_mut().zip(rows) {
                *v += t.beta * t.basis(x);
            }
        }
        for (s, vals) in per_state {
            match mode {
                ImportanceMode::PosteriorMean => {
                    let entry = acc.entry(s).or_insert_with(|| vec![0.0; rows.len()]);
                    for (a, v) in entry.iter_mut().zip(vals) {
                        *a += v;
                    }
                }
                ImportanceMode::PerSampleMean => {
                    let norm = (vals.iter().map(|v| v * v).sum::<f64>() / rows.len() as f64).sqrt();
                    acc.entry(s).or_insert_with(|| vec![0.0])[0] += norm;
                }
            }
        }
    }
    acc
}

/// Importance `||f_S||_{2,n}` over `rows` for every variable set appearing in
/// any state, sorted by decreasing score.
pub fn importance_scores(
    post: &Posterior,
    rows: &[Vec<f64>],
    mode: ImportanceMode,
    normalize: bool,
) -> Result<Vec<(Vec<usize>, f64)>> {
    for x in rows {
        post.check_row(x)?;
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset("no rows for importance".into()));
    }
    let partial: Vec<BTreeMap<Vec<usize>, Vec<f64>>> = post
        .states
        .par_chunks(CHUNK)
        .map(|chunk| accumulate(chunk, rows, mode))
        .collect();
    let mut total: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for part in partial {
        for (s, vals) in part {
            let entry = total.entry(s).or_insert_with(|| vec![0.0; vals.len()]);
            for (a, v) in entry.iter_mut().zip(vals) {
                *a += v;
            }
        }
    }
    let n_states = post.len() as f64;
    let mut scores: Vec<(Vec<usize>, f64)> = total
        .into_iter()
        .map(|(s, vals)| {
            let score = match mode {
                ImportanceMode::PosteriorMean => {
                    let ss: f64 = vals.iter().map(|v| (v / n_states).powi(2)).sum();
                    (ss / rows.len() as f64).sqrt()
                }
                ImportanceMode::PerSampleMean => vals[0] / n_states,
            };
            (s, score)
        })
        .collect();
    if normalize {
        let max = scores.iter().map(|(_, v)| *v).fold(0.0, f64::max);
        if max > 0.0 {
            for (_, v) in scores.iter_mut() {
                *v /= max;
            }
        }
    }
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.len().cmp(&b.0.len())).then_with(|| a.0.cmp(&b.0)));
    Ok(scores)
}

/// Across-fold relative variance of one component evaluated on common rows.
/// Rows where every fold is zero are skipped.
pub fn stability_score(folds: &[Vec<f64>]) -> Result<f64> {
    if folds.len() < 2 {
        return Err(Error::Invalid("stability needs at least two folds".into()));
    }
    let n = folds[0].len();
    if folds.iter().any(|f| f.len() != n) {
        return Err(Error::Invalid("folds evaluated on different rows".into()));
    }
    let j = folds.len() as f64;
    let (mut total, mut used) = (0.0, 0usize);
    for i in 0..n {
        let mean = folds.iter().map(|f| f[i]).sum::<f64>() / j;
        let denom: f64 = folds.iter().map(|f| f[i] * f[i]).sum();
        if denom == 0.0 {
            continue;
        }
        let num: f64 = folds.iter().map(|f| (f[i] - mean).powi(2)).sum();
        total += num / denom;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Invalid("component is zero on every row in every fold".into()));
    }
    Ok(total / used as f64)
}

/// Average stability over components; callers pass the per-set fold values
/// for all sets up to the desired order.
pub fn stability_aggregate(per_set: &[Vec<Vec<f64>>]) -> Result<f64> {
    if per_set.is_empty() {
        return Err(Error::Invalid("no components to aggregate".into()));
    }
    let mut total = 0.0;
    for folds in per_set {
        total += stability_score(folds)?;
    }
    Ok(total / per_set.len() as f64)
}
