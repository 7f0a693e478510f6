//! Tabular input: CSV loading, rank preprocessing into the unit cube,
//! marginal distributions and train/test splits.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::likelihood::Family;

/// Distribution of one preprocessed column used by the sum-to-zero correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "lowercase")]
pub enum Marginal {
    /// Empirical distribution of a sorted sample.
    Empirical(Vec<f64>),
    Uniform,
}

impl Marginal {
    pub fn empirical(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Marginal::Empirical(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalKind {
    #[default]
    Empirical,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "kebab-case")]
pub enum ColumnOrigin {
    ContinuousRanked,
    OneHotLevel { source: String, level: String },
    /// Column supplied already in `[0, 1]` without preprocessing.
    Given,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    #[serde(flatten)]
    pub origin: ColumnOrigin,
}

/// One raw input column before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Numeric { name: String, values: Vec<f64> },
    Categorical { name: String, values: Vec<String> },
}

impl RawColumn {
    pub fn name(&self) -> &str {
        match self {
            RawColumn::Numeric { name, .. } | RawColumn::Categorical { name, .. } => name,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn len(&self) -> usize {
        match self {
            RawColumn::Numeric { values, .. } => values.len(),
            RawColumn::Categorical { values, .. } => values.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> RawColumn {
        match self {
            RawColumn::Numeric { name, values } => RawColumn::Numeric {
                name: name.clone(),
                values: rows.iter().map(|&i| values[i]).collect(),
            },
            RawColumn::Categorical { name, values } => RawColumn::Categorical {
                name: name.clone(),
                values: rows.iter().map(|&i| values[i].clone()).collect(),
            },
        }
    }
}

/// Fitted feature map from raw columns to `[0, 1]^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub target: String,
    pub features: Vec<FeatureTransform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureTransform {
    /// Rank transform; new values go through the empirical CDF of `reference`.
    Continuous { name: String, reference: Vec<f64> },
    Categorical { name: String, levels: Vec<String> },
}

impl FeatureTransform {
    pub fn name(&self) -> &str {
        match self {
            FeatureTransform::Continuous { name, .. } | FeatureTransform::Categorical { name, .. } => name,
        }
    }
}

impl Preprocessor {
    /// Fits on `raw`. Categorical levels may be fixed in advance so that a
    /// subset of rows keeps the full level set.
    fn fit(target: &str, raw: &[RawColumn], fixed_levels: Option<&[FeatureTransform]>) -> Self {
        let features = raw
            .iter()
            .enumerate()
            .map(|(idx, col)| match col {
                RawColumn::Numeric { name, values } => {
                    let mut reference = values.clone();
                    reference.sort_by(f64::total_cmp);
                    FeatureTransform::Continuous {
                        name: name.clone(),
                        reference,
                    }
                }
                RawColumn::Categorical { name, values } => {
                    let levels = match fixed_levels.map(|f| &f[idx]) {
                        Some(FeatureTransform::Categorical { levels, .. }) => levels.clone(),
                        _ => values.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
                    };
                    FeatureTransform::Categorical {
                        name: name.clone(),
                        levels,
                    }
                }
            })
            .collect();
        Preprocessor {
            target: target.to_string(),
            features,
        }
    }

    pub fn column_meta(&self) -> Vec<ColumnMeta> {
        let mut out = Vec::new();
        for f in &self.features {
            match f {
                FeatureTransform::Continuous { name, .. } => out.push(ColumnMeta {
                    name: name.clone(),
                    origin: ColumnOrigin::ContinuousRanked,
                }),
                FeatureTransform::Categorical { name, levels } => {
                    for level in levels {
                        out.push(ColumnMeta {
                            name: format!("{name}={level}"),
                            origin: ColumnOrigin::OneHotLevel {
                                source: name.clone(),
                                level: level.clone(),
                            },
                        });
                    }
                }
            }
        }
        out
    }

    pub fn output_dim(&self) -> usize {
        self.features
            .iter()
            .map(|f| match f {
                FeatureTransform::Continuous { .. } => 1,
                FeatureTransform::Categorical { levels, .. } => levels.len(),
            })
            .sum()
    }

    /// Transforms the rows the preprocessor was fitted on (average ranks).
    fn transform_fitted(&self, raw: &[RawColumn]) -> Result<Vec<Vec<f64>>> {
        self.transform_with(raw, |values, _| rank_transform(values))
    }

    /// Transforms the feature columns of a new table, found by name and typed
    /// as at fit time. Other columns (such as the target) are ignored.
    pub fn transform_table(&self, table: &RawTable) -> Result<Vec<Vec<f64>>> {
        let raw = self
            .features
            .iter()
            .map(|f| {
                let j = table
                    .column_index(f.name())
                    .ok_or_else(|| Error::Schema(format!("missing feature column '{}'", f.name())))?;
                Ok(match f {
                    FeatureTransform::Continuous { name, .. } => RawColumn::Numeric {
                        name: name.clone(),
                        values: table.parse_numeric(j)?,
                    },
                    FeatureTransform::Categorical { name, .. } => RawColumn::Categorical {
                        name: name.clone(),
                        values: table.records.iter().map(|r| r[j].clone()).collect(),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.transform(&raw)
    }

    /// Transforms new rows through the fitted empirical CDFs.
    pub fn transform(&self, raw: &[RawColumn]) -> Result<Vec<Vec<f64>>> {
        self.transform_with(raw, |values, reference| {
            values.iter().map(|&v| ecdf(reference, v)).collect()
        })
    }

    fn transform_with(
        &self,
        raw: &[RawColumn],
        continuous: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    ) -> Result<Vec<Vec<f64>>> {
        if raw.len() != self.features.len() {
            return Err(Error::Schema(format!(
                "expected {} feature columns, found {}",
                self.features.len(),
                raw.len()
            )));
        }
        let mut cols = Vec::with_capacity(self.output_dim());
        for (feature, col) in self.features.iter().zip(raw) {
            if feature.name() != col.name() {
                return Err(Error::Schema(format!(
                    "expected column '{}', found '{}'",
                    feature.name(),
                    col.name()
                )));
            }
            match (feature, col) {
                (FeatureTransform::Continuous { reference, .. }, RawColumn::Numeric { values, .. }) => {
                    cols.push(continuous(values, reference));
                }
                (FeatureTransform::Categorical { name, levels }, RawColumn::Categorical { values, .. }) => {
                    let mut group = vec![vec![0.0; values.len()]; levels.len()];
                    for (i, v) in values.iter().enumerate() {
                        let pos = levels.iter().position(|l| l == v).ok_or_else(|| {
                            Error::Schema(format!("row {}: unknown level '{v}' in column '{name}'", i + 1))
                        })?;
                        group[pos][i] = 1.0;
                    }
                    cols.extend(group);
                }
                (FeatureTransform::Continuous { name, .. }, RawColumn::Categorical { .. }) => {
                    return Err(Error::Schema(format!("column '{name}' was numeric at fit time")));
                }
                (FeatureTransform::Categorical { name, .. }, RawColumn::Numeric { values, .. }) => {
                    // numeric-looking levels are re-read as strings
                    let as_text = RawColumn::Categorical {
                        name: name.clone(),
                        values: values.iter().map(|v| v.to_string()).collect(),
                    };
                    let sub = Preprocessor {
                        target: self.target.clone(),
                        features: vec![feature.clone()],
                    };
                    cols.extend(sub.transform(&[as_text])?);
                }
            }
        }
        Ok(cols)
    }
}

/// Fraction of `sorted_reference` that is `<= v`.
pub fn ecdf(sorted_reference: &[f64], v: f64) -> f64 {
    let count = sorted_reference.partition_point(|&r| r <= v);
    count as f64 / sorted_reference.len() as f64
}

/// Average rank of each value divided by the column length; ties share the
/// mean of the ranks they span.
pub fn rank_transform(raw: &[f64]) -> Vec<f64> {
    let n = raw.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && raw[order[end]] == raw[order[start]] {
            end += 1;
        }
        // ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            out[idx] = avg / n as f64;
        }
        start = end;
    }
    out
}

/// A parsed CSV: header plus string cells.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Csv {
                path: origin.to_path_buf(),
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::EmptyDataset("missing header row".into()));
        }
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv {
                path: origin.to_path_buf(),
                message: e.to_string(),
            })?;
            if rec.len() != headers.len() {
                return Err(Error::RowWidth {
                    row: i + 1,
                    expected: headers.len(),
                    found: rec.len(),
                });
            }
            records.push(rec.iter().map(str::to_string).collect());
        }
        Ok(RawTable { headers, records })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn parse_numeric(&self, col: usize) -> Result<Vec<f64>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let cell = &rec[col];
                if cell.is_empty() {
                    return Err(Error::MissingValue {
                        row: i + 1,
                        column: self.headers[col].clone(),
                    });
                }
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::BadCell {
                        row: i + 1,
                        column: self.headers[col].clone(),
                        value: cell.clone(),
                    })
            })
            .collect()
    }

    /// Splits the table into typed feature columns and the target column.
    ///
    /// A feature column is numeric when more than half of its cells parse as
    /// numbers; otherwise it is categorical. Numeric columns must parse in
    /// every row.
    pub fn typed_features(&self, target: &str) -> Result<(Vec<RawColumn>, Option<Vec<f64>>)> {
        let target_idx = self.column_index(target);
        let mut features = Vec::new();
        for (j, name) in self.headers.iter().enumerate() {
            if Some(j) == target_idx {
                continue;
            }
            for (i, rec) in self.records.iter().enumerate() {
                if rec[j].is_empty() {
                    return Err(Error::MissingValue {
                        row: i + 1,
                        column: name.clone(),
                    });
                }
            }
            let numeric = self
                .records
                .iter()
                .filter(|r| r[j].parse::<f64>().is_ok())
                .count();
            if 2 * numeric > self.records.len() {
                features.push(RawColumn::Numeric {
                    name: name.clone(),
                    values: self.parse_numeric(j)?,
                });
            } else {
                features.push(RawColumn::Categorical {
                    name: name.clone(),
                    values: self.records.iter().map(|r| r[j].clone()).collect(),
                });
            }
        }
        let y = target_idx.map(|t| self.parse_numeric(t)).transpose()?;
        Ok((features, y))
    }
}

#[derive(Debug, Clone)]
struct Source {
    raw: Vec<RawColumn>,
    preprocessor: Preprocessor,
}

/// Preprocessed design matrix in `[0, 1]^p` with responses.
///
/// Columns are stored contiguously; `x(i, j)` is row `i`, column `j`.
#[derive(Debug, Clone)]
pub struct Dataset {
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    family: Family,
    columns: Vec<ColumnMeta>,
    source: Option<Source>,
}

impl Dataset {
    /// Builds a dataset from columns that are already in `[0, 1]`.
    pub fn from_columns(cols: Vec<Vec<f64>>, y: Vec<f64>, family: Family) -> Result<Self> {
        let columns = (0..cols.len())
            .map(|j| ColumnMeta {
                name: format!("x{}", j + 1),
                origin: ColumnOrigin::Given,
            })
            .collect();
        Self::assemble(cols, y, family, columns, None)
    }

    /// Rank-preprocesses raw columns and builds a dataset that remembers its
    /// raw inputs, so splits can refit the preprocessing.
    pub fn from_raw(raw: Vec<RawColumn>, y: Vec<f64>, family: Family, target: &str) -> Result<Self> {
        let preprocessor = Preprocessor::fit(target, &raw, None);
        let cols = preprocessor.transform_fitted(&raw)?;
        let columns = preprocessor.column_meta();
        Self::assemble(cols, y, family, columns, Some(Source { raw, preprocessor }))
    }

    fn assemble(
        cols: Vec<Vec<f64>>,
        y: Vec<f64>,
        family: Family,
        columns: Vec<ColumnMeta>,
        source: Option<Source>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::EmptyDataset(format!("need at least 2 rows, found {n}")));
        }
        if cols.is_empty() {
            return Err(Error::EmptyDataset("no feature columns".into()));
        }
        for (j, c) in cols.iter().enumerate() {
            if c.len() != n {
                return Err(Error::Schema(format!("column {j} has {} rows, expected {n}", c.len())));
            }
            if let Some(i) = c.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Invalid(format!(
                    "row {}, column {}: value {} outside [0, 1]",
                    i + 1,
                    j + 1,
                    c[i]
                )));
            }
        }
        if let Some(i) = y.iter().position(|&v| !family.in_support(v)) {
            return Err(Error::Support {
                row: i + 1,
                value: y[i],
                family: family.name(),
            });
        }
        Ok(Dataset {
            cols,
            y,
            family,
            columns,
            source,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.cols
    }

    pub fn column_meta(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn preprocessor(&self) -> Option<&Preprocessor> {
        self.source.as_ref().map(|s| &s.preprocessor)
    }

    #[inline]
    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.cols[j][i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[i]).collect()
    }

    pub fn row_into(&self, i: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.cols) {
            *o = c[i];
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.row(i)).collect()
    }

    pub fn marginals(&self, kind: MarginalKind) -> Vec<Marginal> {
        match kind {
            MarginalKind::Empirical => self.cols.iter().map(|c| Marginal::empirical(c.clone())).collect(),
            MarginalKind::Uniform => vec![Marginal::Uniform; self.p()],
        }
    }

    /// Copies of the given rows with the preprocessing left as is.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            cols: self.cols.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            family: self.family,
            columns: self.columns.clone(),
            source: self.source.as_ref().map(|s| Source {
                raw: s.raw.iter().map(|c| c.select(rows)).collect(),
                preprocessor: s.preprocessor.clone(),
            }),
        }
    }

    /// Replaces the responses (same length, same family support).
    pub fn with_y(&self, y: Vec<f64>) -> Result<Dataset> {
        if y.len() != self.n() {
            return Err(Error::Schema(format!("expected {} responses, got {}", self.n(), y.len())));
        }
        Self::assemble(self.cols.clone(), y, self.family, self.columns.clone(), self.source.clone())
    }

    /// Row/column counts plus a SHA-256 of the design and responses.
    pub fn fingerprint(&self) -> DatasetFingerprint {
        let mut hasher = Sha256::new();
        hasher.update((self.n() as u64).to_le_bytes());
        hasher.update((self.p() as u64).to_le_bytes());
        for c in &self.cols {
            for v in c {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        for v in &self.y {
            hasher.update(v.to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        DatasetFingerprint {
            n: self.n(),
            p: self.p(),
            hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub n: usize,
    pub p: usize,
    pub hash: String,
}

/// Reads a CSV with a header row, one-hot encodes categorical columns and
/// rank-transforms numeric ones.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str, family: Family) -> Result<Dataset> {
    let table = RawTable::read(path)?;
    dataset_from_table(&table, target_column, family)
}

pub fn dataset_from_table(table: &RawTable, target_column: &str, family: Family) -> Result<Dataset> {
    if table.column_index(target_column).is_none() {
        return Err(Error::UnknownTarget(target_column.to_string()));
    }
    if table.records.is_empty() {
        return Err(Error::EmptyDataset("no data rows".into()));
    }
    if table.headers.len() < 2 {
        return Err(Error::EmptyDataset("no feature columns besides the target".into()));
    }
    let (raw, y) = table.typed_features(target_column)?;
    let y = y.expect("target column located above");
    Dataset::from_raw(raw, y, family, target_column)
}

/// Random partition into training and test rows.
///
/// The test part gets `floor(n * test_fraction)` rows. When the dataset
/// remembers its raw inputs, the rank transform is refitted on the training
/// rows and test rows are mapped through the training empirical CDF.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} must lie in (0, 1)")));
    }
    let n = ds.n();
    let n_test = (n as f64 * test_fraction + 1e-9).floor() as usize;
    let n_train = n - n_test;
    if n_test == 0 || n_train == 0 {
        return Err(Error::Config(format!(
            "split of {n} rows at fraction {test_fraction} leaves an empty part"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_idx = perm[..n_test].to_vec();
    let mut train_idx = perm[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let (Some(src), true) = (&ds.source, n_train >= 2 && n_test >= 2) else {
        return Ok((select_checked(ds, &train_idx)?, select_checked(ds, &test_idx)?));
    };
    let train_raw: Vec<RawColumn> = src.raw.iter().map(|c| c.select(&train_idx)).collect();
    let test_raw: Vec<RawColumn> = src.raw.iter().map(|c| c.select(&test_idx)).collect();
    let pre = Preprocessor::fit(&src.preprocessor.target, &train_raw, Some(&src.preprocessor.features));
    let train_cols = pre.transform_fitted(&train_raw)?;
    let test_cols = pre.transform(&test_raw)?;
    let y_of = |idx: &[usize]| idx.iter().map(|&i| ds.y[i]).collect::<Vec<_>>();
    let columns = pre.column_meta();
    let train = Dataset::assemble(
        train_cols,
        y_of(&train_idx),
        ds.family,
        columns.clone(),
        Some(Source {
            raw: train_raw,
            preprocessor: pre.clone(),
        }),
    )?;
    let test = Dataset::assemble(
        test_cols,
        y_of(&test_idx),
        ds.family,
        columns,
        Some(Source {
            raw: test_raw,
            preprocessor: pre,
        }),
    )?;
    Ok((train, test))
}

fn select_checked(ds: &Dataset, rows: &[usize]) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset("empty split".into()));
    }
    Ok(ds.select_rows(rows))
}

/// Index sets of a split, exposed for callers that need the row mapping.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_test = (n as f64 * test_fraction + 1e-9).floor() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_idx = perm[..n_test.min(n)].to_vec();
    let mut train_idx = perm[n_test.min(n)..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    (train_idx, test_idx)
}
