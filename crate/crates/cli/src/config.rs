//! Flat JSON run configuration and variable-weight files.

use std::path::Path;

use btpnn::likelihood::Family;
use btpnn::mcmc::ChainConfig;
use btpnn::prior::PriorConfig;
use serde_json::{Map, Value};

use crate::error::{invalid, Result};

const PRIOR_KEYS: &[&str] = &[
    "C0",
    "K_max",
    "alpha_adding",
    "gamma_adding",
    "sigma_beta2",
    "a_gamma",
    "b_gamma",
    "v",
    "lambda",
    "q_lambda",
    "q_add",
    "q_delete",
    "q_change",
    "M",
    "step_size",
    "omega",
];

const CHAIN_KEYS: &[&str] = &[
    "burn_in",
    "iterations",
    "thin",
    "seed",
    "n_chains",
    "marginal_kind",
    "sigma2_update",
    "init_k",
];

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub target: Option<String>,
    pub family: Option<Family>,
    pub prior: PriorConfig,
    pub chain: ChainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        let Value::Object(map) = value else {
            return Err(invalid("config must be a JSON object"));
        };
        Self::from_map(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn from_map(map: Map<String, Value>) -> Result<Self> {
        let mut prior = to_map(&PriorConfig::default());
        let mut chain = to_map(&ChainConfig::default());
        let mut cfg = RunConfig::default();
        for (key, value) in map {
            match key.as_str() {
                "target" => {
                    cfg.target = Some(
                        value
                            .as_str()
                            .ok_or_else(|| invalid("config: target must be a string"))?
                            .to_string(),
                    )
                }
                "family" => {
                    let name = value.as_str().ok_or_else(|| invalid("config: family must be a string"))?;
                    cfg.family = Some(name.parse().map_err(|e: btpnn::Error| invalid(e.to_string()))?);
                }
                k if PRIOR_KEYS.contains(&k) => {
                    // the two ways of fixing lambda exclude each other
                    match k {
                        "lambda" => prior.remove("q_lambda"),
                        "q_lambda" => prior.remove("lambda"),
                        _ => None,
                    };
                    prior.insert(key, value);
                }
                k if CHAIN_KEYS.contains(&k) => {
                    chain.insert(key, value);
                }
                other => return Err(invalid(format!("config: unknown key '{other}'"))),
            }
        }
        cfg.prior = serde_json::from_value(Value::Object(prior)).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.chain = serde_json::from_value(Value::Object(chain)).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.prior.validate()?;
        cfg.chain.validate()?;
        Ok(cfg)
    }

    /// The flat JSON form, as accepted by [`RunConfig::from_json`].
    pub fn to_json(&self) -> Value {
        let mut map = to_map(&self.prior);
        map.extend(to_map(&self.chain));
        if let Some(t) = &self.target {
            map.insert("target".into(), Value::String(t.clone()));
        }
        if let Some(f) = self.family {
            map.insert("family".into(), Value::String(f.name().into()));
        }
        Value::Object(map)
    }
}

fn to_map<T: serde::Serialize>(v: &T) -> Map<String, Value> {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config structs serialize to objects"),
    }
}

/// Reads `index,weight` rows (1-based indices, optional header) into a
/// weight vector of length `p`. Every variable must be listed once with a
/// positive weight.
pub fn read_weights(path: &Path, p: usize) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut weights = vec![0.0; p];
    let mut seen = vec![false; p];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if rec.len() != 2 {
            return Err(invalid(format!("{}: row {} needs index,weight", path.display(), i + 1)));
        }
        let (Ok(index), Ok(weight)) = (rec[0].parse::<usize>(), rec[1].parse::<f64>()) else {
            if i == 0 {
                continue;
            }
            return Err(invalid(format!("{}: row {}: cannot parse '{},{}'", path.display(), i + 1, &rec[0], &rec[1])));
        };
        if index < 1 || index > p {
            return Err(invalid(format!("{}: index {index} outside 1..={p}", path.display())));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(invalid(format!("{}: weight for {index} must be positive", path.display())));
        }
        if std::mem::replace(&mut seen[index - 1], true) {
            return Err(invalid(format!("{}: index {index} listed twice", path.display())));
        }
        weights[index - 1] = weight;
    }
    if let Some(j) = seen.iter().position(|&s| !s) {
        return Err(invalid(format!("{}: no weight for variable {}", path.display(), j + 1)));
    }
    Ok(weights)
}

/// Parses a 1-based variable list like `3,5` into sorted 0-based indices.
pub fn parse_set(text: &str, p: usize) -> Result<Vec<usize>> {
    let mut s = text
        .split(',')
        .map(|t| {
            let j: usize = t.trim().parse().map_err(|_| invalid(format!("bad variable index '{t}'")))?;
            if j < 1 || j > p {
                return Err(invalid(format!("variable index {j} outside 1..={p}")));
            }
            Ok(j - 1)
        })
        .collect::<Result<Vec<_>>>()?;
    s.sort_unstable();
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid(format!("repeated variable in '{text}'")));
    }
    Ok(s)
}

/// 1-based display of a variable set, `3;5`.
pub fn format_set(s: &[usize]) -> String {
    s.iter().map(|j| (j + 1).to_string()).collect::<Vec<_>>().join(";")
}
