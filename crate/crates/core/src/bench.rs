//! Synthetic regression functions with known ANOVA structure, evaluation
//! metrics, and an end-to-end benchmark run.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{train_test_split, Dataset, RawColumn};
use crate::error::{Error, Result};
use crate::inference::{importance_scores, ImportanceMode, Posterior, PosteriorSamples};
use crate::likelihood::Family;
use crate::mcmc::{ChainConfig, MoveStats};
use crate::prior::PriorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticFn {
    F1,
    F2,
    F3,
    PoissonF0,
}

impl SyntheticFn {
    pub fn family(self) -> Family {
        match self {
            SyntheticFn::PoissonF0 => Family::Poisson,
            _ => Family::Gaussian,
        }
    }

    /// Draws one input row of length `p`.
    pub fn draw_row<R: Rng + ?Sized>(self, p: usize, rng: &mut R) -> Vec<f64> {
        (0..p)
            .map(|j| {
                let (lo, hi) = self.input_range(j);
                lo + (hi - lo) * rng.random::<f64>()
            })
            .collect()
    }

    /// Support of coordinate `j` (0-based).
    pub fn input_range(self, j: usize) -> (f64, f64) {
        match self {
            SyntheticFn::F1 => match j {
                0 | 1 | 2 | 5 | 6 | 8 => (0.0, 1.0),
                3 | 4 | 7 | 9 => (0.6, 1.0),
                _ => (-1.0, 1.0),
            },
            SyntheticFn::F2 | SyntheticFn::F3 => (-1.0, 1.0),
            SyntheticFn::PoissonF0 => (0.0, 1.0),
        }
    }

    /// The regression function; `x` has at least ten coordinates.
    pub fn eval(self, x: &[f64]) -> f64 {
        let v = |i: usize| x[i - 1];
        match self {
            SyntheticFn::F1 | SyntheticFn::PoissonF0 => {
                let a = 0.5 * v(4);
                assert!((-1.0..=1.0).contains(&a), "arcsin argument {a} outside [-1, 1]");
                PI.powf(v(1) * v(2)) * (2.0 * v(3).abs()).sqrt() - a.asin() + ((v(3) + v(5)).abs() + 1.0).ln()
                    + v(9) / (1.0 + v(10).abs()) * (v(7) / (1.0 + v(8).abs())).sqrt()
                    - v(2) * v(7)
            }
            SyntheticFn::F2 => {
                let a = 0.9 * v(10);
                assert!((-1.0..=1.0).contains(&a), "arccos argument {a} outside [-1, 1]");
                v(1) * v(2)
                    + 2f64.powf(v(3) + v(5) + v(6))
                    + 2f64.powf(v(3) + v(4) + v(5) + v(7))
                    + (v(7) * (v(8) + v(9)).sin()).sin()
                    + a.acos()
            }
            SyntheticFn::F3 => {
                (v(1) * v(2) + v(3) * v(4)).tanh() * v(5).abs().sqrt()
                    + (v(5) + v(6)).exp()
                    + ((v(6) * v(7) * v(8)).powi(2) + 1.0).ln()
                    + v(9) * v(10)
                    + 1.0 / (1.0 + v(10).abs())
            }
        }
    }

    /// Variable sets (0-based) of order at most three with a non-zero ANOVA
    /// component under the function's input distribution.
    pub fn truth(self) -> BTreeSet<Vec<usize>> {
        let mut sets: BTreeSet<Vec<usize>> = BTreeSet::new();
        // every non-empty subset of `vars` up to order three
        let all_of = |sets: &mut BTreeSet<Vec<usize>>, vars: &[usize]| {
            for d in 1..=vars.len().min(3) {
                for c in combinations(vars.len(), d) {
                    sets.insert(c.iter().map(|&i| vars[i] - 1).collect());
                }
            }
        };
        let add = |sets: &mut BTreeSet<Vec<usize>>, s: &[usize]| {
            sets.insert(s.iter().map(|j| j - 1).collect());
        };
        match self {
            SyntheticFn::F1 | SyntheticFn::PoissonF0 => {
                all_of(&mut sets, &[1, 2, 3]);
                add(&mut sets, &[4]);
                all_of(&mut sets, &[3, 5]);
                all_of(&mut sets, &[7, 8, 9, 10]);
                all_of(&mut sets, &[2, 7]);
            }
            SyntheticFn::F2 => {
                add(&mut sets, &[1, 2]);
                all_of(&mut sets, &[3, 5, 6]);
                all_of(&mut sets, &[3, 4, 5, 7]);
                for s in [&[7, 8][..], &[7, 9], &[7, 8, 9]] {
                    add(&mut sets, s);
                }
                add(&mut sets, &[10]);
            }
            SyntheticFn::F3 => {
                for s in [&[1, 2][..], &[3, 4], &[1, 2, 3], &[1, 2, 4], &[1, 3, 4], &[2, 3, 4], &[1, 2, 5], &[3, 4, 5]] {
                    add(&mut sets, s);
                }
                all_of(&mut sets, &[5, 6]);
                all_of(&mut sets, &[6, 7, 8]);
                add(&mut sets, &[9, 10]);
                add(&mut sets, &[10]);
            }
        }
        sets
    }
}

/// All `d`-subsets of `0..p` in lexicographic order.
pub fn combinations(p: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if d > p {
        return out;
    }
    let mut c: Vec<usize> = (0..d).collect();
    loop {
        out.push(c.clone());
        let Some(i) = (0..d).rev().find(|&i| c[i] != i + p - d) else {
            return out;
        };
        c[i] += 1;
        for k in i + 1..d {
            c[k] = c[k - 1] + 1;
        }
    }
}

fn default_snr() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub function: SyntheticFn,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_snr")]
    pub snr: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p < 10 {
            return Err(Error::Config(format!("synthetic functions need p >= 10, got {}", self.p)));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::Config(format!("snr must be positive, got {}", self.snr)));
        }
        if self.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        Ok(())
    }
}

/// A generated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Inputs on their original scale, row-major.
    pub raw: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    /// Gaussian noise standard deviation (0 for poisson).
    pub noise_sd: f64,
    pub truth: BTreeSet<Vec<usize>>,
}

const VARIANCE_DRAWS: usize = 100_000;

/// Monte Carlo variance of the regression function under its inputs.
pub fn function_variance(fid: SyntheticFn, p: usize, seed: u64, draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let vals: Vec<f64> = (0..draws).map(|_| fid.eval(&fid.draw_row(p, &mut rng))).collect();
    let mean = vals.iter().sum::<f64>() / draws as f64;
    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let fid = spec.function;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw: Vec<Vec<f64>> = (0..spec.n).map(|_| fid.draw_row(spec.p, &mut rng)).collect();
    let f: Vec<f64> = raw.iter().map(|x| fid.eval(x)).collect();
    let (y, noise_sd) = match fid.family() {
        Family::Poisson => {
            let y = f
                .iter()
                .map(|&fi| {
                    Poisson::new(fi.exp())
                        .map(|d| d.sample(&mut rng))
                        .map_err(|e| Error::Invalid(e.to_string()))
                })
                .collect::<Result<Vec<f64>>>()?;
            (y, 0.0)
        }
        _ => {
            let sd = (function_variance(fid, spec.p, spec.seed, VARIANCE_DRAWS) / spec.snr).sqrt();
            let y = f
                .iter()
                .map(|&fi| fi + sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (y, sd)
        }
    };
    let columns = (0..spec.p)
        .map(|j| RawColumn::Numeric {
            name: format!("x{}", j + 1),
            values: raw.iter().map(|r| r[j]).collect(),
        })
        .collect();
    let dataset = Dataset::from_raw(columns, y, fid.family(), "y")?;
    Ok(SyntheticData {
        dataset,
        raw,
        f,
        noise_sd,
        truth: fid.truth(),
    })
}

#[derive(Serialize)]
struct Sidecar<'a> {
    function: SyntheticFn,
    n: usize,
    p: usize,
    snr: f64,
    seed: u64,
    noise_sd: f64,
    target: &'a str,
    /// 1-based variable sets with a non-zero component.
    signal_sets: Vec<Vec<usize>>,
}

/// Writes `x1..xp,y` as CSV plus a `<name>.truth.json` sidecar.
pub fn export_csv(spec: &SyntheticSpec, data: &SyntheticData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut header: Vec<String> = (1..=spec.p).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header).map_err(csv_err)?;
    for (x, y) in data.raw.iter().zip(data.dataset.y()) {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let sidecar = Sidecar {
        function: spec.function,
        n: spec.n,
        p: spec.p,
        snr: spec.snr,
        seed: spec.seed,
        noise_sd: data.noise_sd,
        target: "y",
        signal_sets: data.truth.iter().map(|s| s.iter().map(|j| j + 1).collect()).collect(),
    };
    let side = path.with_extension("truth.json");
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(Error::Invalid("rmse needs equal, non-empty lengths".into()));
    }
    let ss: f64 = pred.iter().zip(actual).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Area under the ROC curve by the rank-sum statistic with midranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid("auroc needs equal lengths".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid("auroc needs both classes".into()));
    }
    let ranks = crate::data::rank_transform(scores);
    let n = scores.len() as f64;
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r * n)
        .sum();
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// AUROC of importance scores against the truth over all `d`-subsets of
/// `0..p`; sets without an importance entry score 0.
pub fn component_selection_auroc(
    importance: &BTreeMap<Vec<usize>, f64>,
    truth: &BTreeSet<Vec<usize>>,
    d: usize,
    p: usize,
) -> Result<f64> {
    let sets = combinations(p, d);
    let scores: Vec<f64> = sets.iter().map(|s| importance.get(s).copied().unwrap_or(0.0)).collect();
    let labels: Vec<bool> = sets.iter().map(|s| truth.contains(s)).collect();
    if !labels.iter().any(|&l| l) {
        return Err(Error::Invalid(format!("no signal sets of order {d}")));
    }
    auroc(&scores, &labels)
}

/// Negative mean log predictive density over the rows of `ds`.
pub fn nll(post: &Posterior, ds: &Dataset) -> Result<f64> {
    let mut row = vec![0.0; ds.p()];
    let mut total = 0.0;
    for i in 0..ds.n() {
        ds.row_into(i, &mut row);
        total += post.predictive_density(&row, ds.y()[i])?.ln();
    }
    Ok(-total / ds.n() as f64)
}

/// `E|Z - y| - E|Z - Z'| / 2` from draws, with the pairwise term as a
/// U-statistic computed from sorted draws.
pub fn crps_from_draws(draws: &[f64], y: f64) -> Result<f64> {
    let m = draws.len();
    if m < 2 {
        return Err(Error::Invalid("crps needs at least two draws".into()));
    }
    let mut z = draws.to_vec();
    z.sort_by(f64::total_cmp);
    let abs_err = z.iter().map(|v| (v - y).abs()).sum::<f64>() / m as f64;
    // sum_{i<j} (z_j - z_i) = sum_i (2i - m + 1) z_i for 0-based sorted i
    let pair_sum: f64 = z
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * i as f64 - m as f64 + 1.0) * v)
        .sum();
    let mean_pair = 2.0 * pair_sum / (m * (m - 1)) as f64;
    Ok((abs_err - 0.5 * mean_pair).max(0.0))
}

/// CRPS of the gaussian predictive at `x`: draw `n_draws` values from the
/// mixture, cycling through posterior states.
pub fn crps<R: Rng + ?Sized>(post: &Posterior, x: &[f64], y: f64, n_draws: usize, rng: &mut R) -> Result<f64> {
    if post.family() != Family::Gaussian {
        return Err(Error::Invalid("crps is defined here for the gaussian family".into()));
    }
    if post.len() < 2 {
        return Err(Error::Invalid("crps needs at least two posterior draws".into()));
    }
    let params = post.natural_params(x)?;
    let draws: Vec<f64> = (0..n_draws)
        .map(|i| {
            let (f, eta) = params[i % params.len()];
            f + eta.sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    crps_from_draws(&draws, y)
}

/// Expected calibration error of binary probabilities `P(y = 1)`, binning
/// the max-class confidence into `n_bins` equal-width bins.
pub fn ece(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<f64> {
    if n_bins < 1 {
        return Err(Error::Invalid("ece needs at least one bin".into()));
    }
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Invalid("ece needs equal, non-empty lengths".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Invalid(format!("probability {p} outside [0, 1]")));
    }
    let mut count = vec![0usize; n_bins];
    let mut correct = vec![0.0; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    for (&p, &l) in probs.iter().zip(labels) {
        let (conf, pred) = if p >= 0.5 { (p, true) } else { (1.0 - p, false) };
        let b = ((conf * n_bins as f64).floor() as usize).min(n_bins - 1);
        count[b] += 1;
        correct[b] += (pred == l) as u8 as f64;
        conf_sum[b] += conf;
    }
    let n = probs.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            c / n * (correct[b] / c - conf_sum[b] / c).abs()
        })
        .sum())
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_crps_draws() -> usize {
    1000
}

/// Everything needed for a reproducible benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    #[serde(flatten)]
    pub synthetic: SyntheticSpec,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default = "default_crps_draws")]
    pub crps_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub function: SyntheticFn,
    pub n: usize,
    pub p: usize,
    pub snr: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_sd: f64,
    /// Component-selection AUROC keyed by interaction order.
    pub auroc: BTreeMap<usize, Option<f64>>,
    /// Against observed test responses.
    pub rmse: f64,
    /// Against the noiseless mean function on test rows.
    pub rmse_true: f64,
    pub nll: f64,
    pub crps: Option<f64>,
    pub mean_k: f64,
    /// Top components, 1-based variable sets.
    pub top_components: Vec<(Vec<usize>, f64)>,
    pub move_stats: MoveStats,
}

/// Generate, split, fit, and evaluate.
pub fn run_benchmark(spec: &BenchSpec) -> Result<(BenchReport, PosteriorSamples)> {
    let data = generate(&spec.synthetic)?;
    let (train, test) = train_test_split(&data.dataset, spec.test_fraction, spec.synthetic.seed)?;
    let samples = crate::fit(&train, &spec.prior, &spec.chain)?;
    let post = Posterior::new(&samples.samples)?;

    let family = spec.synthetic.function.family();
    let test_rows = test.rows();
    let pred = test_rows
        .iter()
        .map(|x| post.predictive_point(x))
        .collect::<Result<Vec<_>>>()?;
    // same permutation as the split, to line up the noiseless mean
    let (train_idx, test_idx) = crate::data::split_indices(data.dataset.n(), spec.test_fraction, spec.synthetic.seed);
    debug_assert_eq!(train_idx.len(), train.n());
    let truth_mean: Vec<f64> = test_idx.iter().map(|&i| family.mean(data.f[i])).collect();

    let train_rows = train.rows();
    let scores = importance_scores(&post, &train_rows, ImportanceMode::PosteriorMean, false)?;
    let map: BTreeMap<Vec<usize>, f64> = scores.iter().cloned().collect();
    let p = spec.synthetic.p;
    let auroc = (1..=3)
        .map(|d| (d, component_selection_auroc(&map, &data.truth, d, p).ok()))
        .collect();

    let crps_value = if family == Family::Gaussian {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.synthetic.seed);
        rng.set_stream(7);
        let mut total = 0.0;
        for (x, &y) in test_rows.iter().zip(test.y()) {
            total += crps(&post, x, y, spec.crps_draws, &mut rng)?;
        }
        Some(total / test.n() as f64)
    } else {
        None
    };
    let mean_k = samples.samples.states().map(|s| s.k() as f64).sum::<f64>() / samples.samples.len() as f64;
    let report = BenchReport {
        function: spec.synthetic.function,
        n: spec.synthetic.n,
        p,
        snr: spec.synthetic.snr,
        seed: spec.synthetic.seed,
        n_train: train.n(),
        n_test: test.n(),
        noise_sd: data.noise_sd,
        auroc,
        rmse: rmse(&pred, test.y())?,
        rmse_true: rmse(&pred, &truth_mean)?,
        nll: nll(&post, &test)?,
        crps: crps_value,
        mean_k,
        top_components: scores
            .iter()
            .take(20)
            .map(|(s, v)| (s.iter().map(|j| j + 1).collect(), *v))
            .collect(),
        move_stats: samples.stats,
    };
    Ok((report, samples.samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
    fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    }

    /// Tensor-grid ANOVA projection of a function of the variables `vars`
    /// (1-based): returns, for every non-empty subset `S` of `vars` of order
    /// at most 3, the component `g_S` on the grid of `S`.
    struct Grid {
        nodes: Vec<Vec<f64>>,
        weights: Vec<f64>,
    }

    fn components(
        fid: SyntheticFn,
        vars: &[usize],
        g: &dyn Fn(&[f64]) -> f64,
        grid: &Grid,
    ) -> BTreeMap<Vec<usize>, Vec<f64>> {
        let d = vars.len();
        let q = grid.weights.len();
        let nodes: Vec<Vec<f64>> = vars
            .iter()
            .map(|&v| {
                let (lo, hi) = fid.input_range(v - 1);
                grid.nodes[0].iter().map(|t| lo + (hi - lo) * (t + 1.0) / 2.0).collect()
            })
            .collect();
        let w: Vec<f64> = grid.weights.iter().map(|x| x / 2.0).collect();
        let total = q.pow(d as u32);
        let mut values = vec![0.0; total];
        let mut x = vec![0.0; d];
        for (idx, val) in values.iter_mut().enumerate() {
            let mut r = idx;
            for k in (0..d).rev() {
                x[k] = nodes[k][r % q];
                r /= q;
            }
            *val = g(&x);
        }
        // conditional expectation over the coordinates not in `keep`
        let cond = |keep: &[usize]| -> Vec<f64> {
            let size = q.pow(keep.len() as u32);
            let mut out = vec![0.0; size];
            for (idx, &val) in values.iter().enumerate() {
                let mut digits = vec![0; d];
                let mut r = idx;
                for k in (0..d).rev() {
                    digits[k] = r % q;
                    r /= q;
                }
                let mut weight = 1.0;
                let mut pos = 0;
                for k in 0..d {
                    if keep.contains(&k) {
                        pos = pos * q + digits[k];
                    } else {
                        weight *= w[digits[k]];
                    }
                }
                out[pos] += weight * val;
            }
            out
        };
        let mut cache: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        let mut comps = BTreeMap::new();
        for order in 1..=d.min(3) {
            for s in combinations(d, order) {
                // inclusion-exclusion over subsets T of s
                let mut comp = vec![0.0; q.pow(order as u32)];
                for mask in 0u32..(1 << order) {
                    let t: Vec<usize> = (0..order).filter(|b| mask & (1 << b) != 0).map(|b| s[b]).collect();
                    let sign = if (order - t.len()).is_multiple_of(2) { 1.0 } else { -1.0 };
                    let e = cache.entry(t.clone()).or_insert_with(|| cond(&t)).clone();
                    // broadcast E[g | x_T] onto the grid of s
                    for (pos, c) in comp.iter_mut().enumerate() {
                        let mut digits = vec![0; order];
                        let mut r = pos;
                        for k in (0..order).rev() {
                            digits[k] = r % q;
                            r /= q;
                        }
                        let mut tpos = 0;
                        for (k, &sk) in s.iter().enumerate() {
                            if t.contains(&sk) {
                                tpos = tpos * q + digits[k];
                            }
                        }
                        *c += sign * e[tpos];
                    }
                }
                comps.insert(s.iter().map(|&k| vars[k] - 1).collect::<Vec<_>>(), comp);
            }
        }
        comps
    }

    fn norms(fid: SyntheticFn, summands: &[Summand], q: usize) -> BTreeMap<Vec<usize>, f64> {
        let (nodes, weights) = gauss_legendre(q);
        let grid = Grid {
            nodes: vec![nodes],
            weights,
        };
        let mut total: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        for (vars, g) in summands {
            for (s, comp) in components(fid, vars, g.as_ref(), &grid) {
                let e = total.entry(s).or_insert_with(|| vec![0.0; comp.len()]);
                for (a, b) in e.iter_mut().zip(comp) {
                    *a += b;
                }
            }
        }
        let w: Vec<f64> = grid.weights.iter().map(|x| x / 2.0).collect();
        total
            .into_iter()
            .map(|(s, comp)| {
                let order = s.len();
                let mut ss = 0.0;
                for (pos, v) in comp.iter().enumerate() {
                    let mut r = pos;
                    let mut weight = 1.0;
                    for _ in 0..order {
                        weight *= w[r % q];
                        r /= q;
                    }
                    ss += weight * v * v;
                }
                (s, ss.sqrt())
            })
            .collect()
    }

    type Summand = (Vec<usize>, Box<dyn Fn(&[f64]) -> f64>);

    fn summands(fid: SyntheticFn) -> Vec<Summand> {
        match fid {
            SyntheticFn::F1 | SyntheticFn::PoissonF0 => vec![
                (vec![1, 2, 3], Box::new(|x: &[f64]| PI.powf(x[0] * x[1]) * (2.0 * x[2].abs()).sqrt())),
                (vec![4], Box::new(|x: &[f64]| -(0.5 * x[0]).asin())),
                (vec![3, 5], Box::new(|x: &[f64]| ((x[0] + x[1]).abs() + 1.0).ln())),
                (
                    vec![7, 8, 9, 10],
                    Box::new(|x: &[f64]| x[2] / (1.0 + x[3].abs()) * (x[0] / (1.0 + x[1].abs())).sqrt()),
                ),
                (vec![2, 7], Box::new(|x: &[f64]| -x[0] * x[1])),
            ],
            SyntheticFn::F2 => vec![
                (vec![1, 2], Box::new(|x: &[f64]| x[0] * x[1])),
                (vec![3, 5, 6], Box::new(|x: &[f64]| 2f64.powf(x[0] + x[1] + x[2]))),
                (vec![3, 4, 5, 7], Box::new(|x: &[f64]| 2f64.powf(x[0] + x[1] + x[2] + x[3]))),
                (vec![7, 8, 9], Box::new(|x: &[f64]| (x[0] * (x[1] + x[2]).sin()).sin())),
                (vec![10], Box::new(|x: &[f64]| (0.9 * x[0]).acos())),
            ],
            SyntheticFn::F3 => vec![
                (
                    vec![1, 2, 3, 4, 5],
                    Box::new(|x: &[f64]| (x[0] * x[1] + x[2] * x[3]).tanh() * x[4].abs().sqrt()),
                ),
                (vec![5, 6], Box::new(|x: &[f64]| (x[0] + x[1]).exp())),
                (vec![6, 7, 8], Box::new(|x: &[f64]| ((x[0] * x[1] * x[2]).powi(2) + 1.0).ln())),
                (vec![9, 10], Box::new(|x: &[f64]| x[0] * x[1])),
                (vec![10], Box::new(|x: &[f64]| 1.0 / (1.0 + x[0].abs()))),
            ],
        }
    }

    #[test]
    fn summands_reassemble_the_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for fid in [SyntheticFn::F1, SyntheticFn::F2, SyntheticFn::F3, SyntheticFn::PoissonF0] {
            let parts = summands(fid);
            for _ in 0..200 {
                let x = fid.draw_row(12, &mut rng);
                let sum: f64 = parts
                    .iter()
                    .map(|(vars, g)| g(&vars.iter().map(|&v| x[v - 1]).collect::<Vec<_>>()))
                    .sum();
                assert!((sum - fid.eval(&x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truth_matches_numeric_anova_projection() {
        for (fid, q) in [(SyntheticFn::F1, 20), (SyntheticFn::F2, 20), (SyntheticFn::F3, 16), (SyntheticFn::PoissonF0, 20)] {
            let norms = norms(fid, &summands(fid), q);
            let truth = fid.truth();
            for s in &truth {
                let v = norms.get(s).copied().unwrap_or(0.0);
                assert!(v > 1e-4, "{fid:?} {s:?} labelled signal but norm {v}");
            }
            for (s, v) in &norms {
                if !truth.contains(s) {
                    assert!(*v < 1e-6, "{fid:?} {s:?} labelled null but norm {v}");
                }
            }
            // every order-1..3 set outside the summands' variable sets is null by construction
            for d in 1..=3 {
                for s in combinations(10, d) {
                    if truth.contains(&s) {
                        assert!(norms.contains_key(&s));
                    }
                }
            }
        }
    }

    #[test]
    fn explicit_truth_listing() {
        let one_based = |fid: SyntheticFn, d: usize| -> Vec<Vec<usize>> {
            fid.truth()
                .into_iter()
                .filter(|s| s.len() == d)
                .map(|s| s.iter().map(|j| j + 1).collect())
                .collect()
        };
        assert_eq!(
            one_based(SyntheticFn::F2, 1),
            vec![vec![3], vec![4], vec![5], vec![6], vec![7], vec![10]]
        );
        assert_eq!(
            one_based(SyntheticFn::F2, 2),
            vec![
                vec![1, 2],
                vec![3, 4],
                vec![3, 5],
                vec![3, 6],
                vec![3, 7],
                vec![4, 5],
                vec![4, 7],
                vec![5, 6],
                vec![5, 7],
                vec![7, 8],
                vec![7, 9]
            ]
        );
        assert!(one_based(SyntheticFn::F2, 3).contains(&vec![3, 5, 6]));
        assert_eq!(one_based(SyntheticFn::F1, 1).len(), 9);
        assert!(!one_based(SyntheticFn::F1, 1).contains(&vec![6]));
        assert_eq!(one_based(SyntheticFn::F3, 1), vec![vec![5], vec![6], vec![7], vec![8], vec![10]]);
    }

    #[test]
    fn f3_at_origin() {
        assert!((SyntheticFn::F3.eval(&[0.0; 10]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn noise_level_matches_snr() {
        let spec = SyntheticSpec {
            function: SyntheticFn::F2,
            n: 100_000,
            p: 10,
            snr: 5.0,
            seed: 4,
        };
        let data = generate(&spec).unwrap();
        let resid: Vec<f64> = data.dataset.y().iter().zip(&data.f).map(|(y, f)| y - f).collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let ratio = var(&resid) / var(&data.f);
        assert!((ratio * 5.0 - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn generation_is_reproducible_and_validated() {
        let spec = SyntheticSpec {
            function: SyntheticFn::F1,
            n: 50,
            p: 12,
            snr: 5.0,
            seed: 9,
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.dataset.y(), b.dataset.y());
        assert_eq!(a.raw, b.raw);
        assert!(generate(&SyntheticSpec { p: 9, ..spec.clone() }).is_err());
        assert!(generate(&SyntheticSpec { snr: 0.0, ..spec.clone() }).is_err());
        let pois = generate(&SyntheticSpec {
            function: SyntheticFn::PoissonF0,
            ..spec
        })
        .unwrap();
        assert!(pois.dataset.y().iter().all(|y| y.fract() == 0.0 && *y >= 0.0));
    }

    #[test]
    fn combinations_enumerate() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(10, 3).len(), 120);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert!(combinations(2, 3).is_empty());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.0; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
        // brute force pair counting with ties as one half
        let s = [0.3, 0.1, 0.3, 0.9, 0.5, 0.1];
        let l = [true, false, false, true, false, true];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..6 {
            for k in 0..6 {
                if l[i] && !l[k] {
                    pairs += 1.0;
                    wins += if s[i] > s[k] { 1.0 } else if s[i] == s[k] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((auroc(&s, &l).unwrap() - wins / pairs).abs() < 1e-15);
        let squashed: Vec<f64> = s.iter().map(|v| (3.0 * v).exp()).collect();
        assert_eq!(auroc(&squashed, &l).unwrap(), auroc(&s, &l).unwrap());
    }

    #[test]
    fn auroc_of_unrelated_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20_000;
        let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let l: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        assert!((auroc(&s, &l).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn selection_auroc() {
        let truth: BTreeSet<Vec<usize>> = [vec![0, 1], vec![2, 3]].into_iter().collect();
        let perfect: BTreeMap<Vec<usize>, f64> = truth.iter().map(|s| (s.clone(), 1.0)).collect();
        assert_eq!(component_selection_auroc(&perfect, &truth, 2, 5).unwrap(), 1.0);
        assert_eq!(component_selection_auroc(&BTreeMap::new(), &truth, 2, 5).unwrap(), 0.5);
        assert!(component_selection_auroc(&perfect, &truth, 1, 5).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[]).is_err());
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0; 5], &[false; 5], 15).unwrap(), 1.0);
        // two bins, each perfectly calibrated
        let probs = [0.75, 0.75, 0.75, 0.75, 0.0, 0.0];
        let labels = [true, true, true, false, false, false];
        assert!(ece(&probs, &labels, 2).unwrap().abs() < 1e-15);
        assert!(ece(&[0.5], &[true], 0).is_err());

        // hand-filled 15-bin toy
        let probs = [0.55, 0.58, 0.9, 0.1, 0.97, 0.3];
        let labels = [true, false, true, true, true, false];
        // confidences: .55 .58 .9 .9 .97 .7 -> bins 8, 8, 13, 13, 14, 10
        let bins: [(f64, f64, f64); 4] = [
            (2.0, 0.5, (0.55 + 0.58) / 2.0),
            (2.0, 0.5, 0.9),
            (1.0, 1.0, 0.97),
            (1.0, 1.0, 0.7),
        ];
        let oracle: f64 = bins.iter().map(|(c, acc, conf)| c / 6.0 * (acc - conf).abs()).sum();
        assert!((ece(&probs, &labels, 15).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps_from_draws(&[2.0, 2.0, 2.0], 2.0).unwrap(), 0.0);
        // standard normal at 0: sigma * (sqrt(2) - 1) / sqrt(pi)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let closed = (2f64.sqrt() - 1.0) / PI.sqrt();
        assert!((crps_from_draws(&z, 0.0).unwrap() - closed).abs() < 1e-2);
        // pairwise term agrees with a direct double loop
        let small: [f64; 5] = [0.3, -1.2, 2.5, 0.0, 0.7];
        let mut pair = 0.0;
        for a in &small {
            for b in &small {
                pair += (a - b).abs();
            }
        }
        let direct = small.iter().map(|v| (v - 0.4f64).abs()).sum::<f64>() / 5.0 - 0.5 * pair / 20.0;
        assert!((crps_from_draws(&small, 0.4).unwrap() - direct).abs() < 1e-14);
        assert!(crps_from_draws(&[1.0], 0.0).is_err());
    }

    #[test]
    fn export_writes_csv_and_truth() {
        let spec = SyntheticSpec {
            function: SyntheticFn::F2,
            n: 20,
            p: 10,
            snr: 5.0,
            seed: 1,
        };
        let data = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f2.csv");
        export_csv(&spec, &data, &path).unwrap();
        let back = crate::data::load_csv(&path, "y", Family::Gaussian).unwrap();
        assert_eq!(back.n(), 20);
        assert_eq!(back.y(), data.dataset.y());
        assert_eq!(back.columns(), data.dataset.columns());
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("f2.truth.json")).unwrap()).unwrap();
        assert!(side["signal_sets"].as_array().unwrap().iter().any(|s| s == &serde_json::json!([3, 5, 6])));
    }
}
