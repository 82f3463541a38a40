//! Tabular data ingestion: schema parsing, CSV loading, preprocessing and
//! train/validation/test splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{Matrix, RngStream};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema is missing key `{0}`")]
    MissingKey(&'static str),
    #[error("unknown task `{0}` (expected binclass, multiclass or regression)")]
    UnknownTask(String),
    #[error("column `{0}` is listed more than once")]
    OverlappingColumns(String),
    #[error("target column `{0}` is also listed as a feature")]
    TargetIsFeature(String),
    #[error("schema declares no feature columns")]
    NoFeatures,
    #[error("csv has no header row")]
    MissingHeader,
    #[error("csv is missing column `{0}`")]
    MissingColumn(String),
    #[error("cannot parse `{value}` as a number (row {row}, column `{column}`)")]
    UnparsableNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("preprocessor used before fit")]
    NotFitted,
    #[error("label `{0}` was not seen in the training split")]
    UnknownLabel(String),
    #[error("dataset has no target values")]
    MissingTargets,
    #[error("split fractions {0:?} must be three non-negative values summing to 1")]
    BadFractions(Vec<f64>),
    #[error("split indices are invalid: {0}")]
    BadSplit(String),
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq, Debug)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Binclass,
    Multiclass,
    Regression,
}

impl TaskType {
    pub fn is_classification(self) -> bool {
        !matches!(self, TaskType::Regression)
    }
}

impl std::str::FromStr for TaskType {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binclass" => Ok(TaskType::Binclass),
            "multiclass" => Ok(TaskType::Multiclass),
            "regression" => Ok(TaskType::Regression),
            other => Err(DataError::UnknownTask(other.to_string())),
        }
    }
}

/// Column roles of a table.
#[derive(Serialize, Deserialize, Clone, PartialEq, Debug)]
pub struct FeatureSchema {
    #[serde(rename = "target")]
    pub target_column: String,
    pub task: TaskType,
    pub numerical: Vec<String>,
    pub categorical: Vec<String>,
}

impl FeatureSchema {
    pub fn new(
        target_column: impl Into<String>,
        task: TaskType,
        numerical: Vec<String>,
        categorical: Vec<String>,
    ) -> Result<Self, DataError> {
        let schema = Self {
            target_column: target_column.into(),
            task,
            numerical,
            categorical,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_str(text: &str) -> Result<Self, DataError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let get = |key: &'static str| value.get(key).ok_or(DataError::MissingKey(key));
        let target = get("target")?
            .as_str()
            .ok_or(DataError::MissingKey("target"))?
            .to_string();
        let task: TaskType = get("task")?
            .as_str()
            .ok_or(DataError::MissingKey("task"))?
            .parse()?;
        let names = |key: &'static str| -> Result<Vec<String>, DataError> {
            get(key)?
                .as_array()
                .ok_or(DataError::MissingKey(key))?
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or(DataError::MissingKey(key)))
                .collect()
        };
        Self::new(target, task, names("numerical")?, names("categorical")?)
    }

    fn validate(&self) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        for name in self.numerical.iter().chain(&self.categorical) {
            if !seen.insert(name.as_str()) {
                return Err(DataError::OverlappingColumns(name.clone()));
            }
        }
        if seen.contains(self.target_column.as_str()) {
            return Err(DataError::TargetIsFeature(self.target_column.clone()));
        }
        if seen.is_empty() {
            return Err(DataError::NoFeatures);
        }
        Ok(())
    }

    pub fn n_numerical(&self) -> usize {
        self.numerical.len()
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical.len()
    }

    pub fn n_features(&self) -> usize {
        self.numerical.len() + self.categorical.len()
    }

    /// Feature names in token order: numerical first, then categorical.
    pub fn feature_names(&self) -> Vec<String> {
        self.numerical.iter().chain(&self.categorical).cloned().collect()
    }
}

pub fn parse_schema(path: impl AsRef<Path>) -> Result<FeatureSchema, DataError> {
    let text = std::fs::read_to_string(path)?;
    FeatureSchema::from_json_str(&text)
}

/// Target column before preprocessing.
#[derive(Clone, PartialEq, Debug)]
pub enum RawTargets {
    Real(Vec<f64>),
    Labels(Vec<String>),
}

impl RawTargets {
    fn select(&self, idx: &[usize]) -> Self {
        match self {
            RawTargets::Real(v) => RawTargets::Real(idx.iter().map(|&i| v[i]).collect()),
            RawTargets::Labels(v) => RawTargets::Labels(idx.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

/// Rows as read from CSV: numerical cells parsed (missing = NaN),
/// categorical cells kept as strings.
#[derive(Clone, PartialEq, Debug)]
pub struct RawDataset {
    pub n_rows: usize,
    pub numerical: Vec<f64>,
    pub categorical: Vec<String>,
    pub targets: Option<RawTargets>,
    n_num: usize,
    n_cat: usize,
}

impl RawDataset {
    pub fn from_columns(
        numerical: Vec<Vec<f64>>,
        categorical: Vec<Vec<String>>,
        targets: Option<RawTargets>,
    ) -> Result<Self, DataError> {
        let n_rows = numerical
            .first()
            .map(Vec::len)
            .or_else(|| categorical.first().map(Vec::len))
            .ok_or(DataError::EmptyDataset)?;
        let bad = |what: &str| DataError::BadSplit(format!("ragged {what} columns"));
        if numerical.iter().any(|c| c.len() != n_rows) {
            return Err(bad("numerical"));
        }
        if categorical.iter().any(|c| c.len() != n_rows) {
            return Err(bad("categorical"));
        }
        let n_num = numerical.len();
        let n_cat = categorical.len();
        let mut num = Vec::with_capacity(n_rows * n_num);
        let mut cat = Vec::with_capacity(n_rows * n_cat);
        for r in 0..n_rows {
            num.extend(numerical.iter().map(|c| c[r]));
            cat.extend(categorical.iter().map(|c| c[r].clone()));
        }
        Ok(Self {
            n_rows,
            numerical: num,
            categorical: cat,
            targets,
            n_num,
            n_cat,
        })
    }

    pub fn n_numerical(&self) -> usize {
        self.n_num
    }

    pub fn n_categorical(&self) -> usize {
        self.n_cat
    }

    pub fn n_features(&self) -> usize {
        self.n_num + self.n_cat
    }

    pub fn num_row(&self, r: usize) -> &[f64] {
        &self.numerical[r * self.n_num..(r + 1) * self.n_num]
    }

    pub fn cat_row(&self, r: usize) -> &[String] {
        &self.categorical[r * self.n_cat..(r + 1) * self.n_cat]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut numerical = Vec::with_capacity(idx.len() * self.n_num);
        let mut categorical = Vec::with_capacity(idx.len() * self.n_cat);
        for &i in idx {
            numerical.extend_from_slice(self.num_row(i));
            categorical.extend_from_slice(self.cat_row(i));
        }
        Self {
            n_rows: idx.len(),
            numerical,
            categorical,
            targets: self.targets.as_ref().map(|t| t.select(idx)),
            n_num: self.n_num,
            n_cat: self.n_cat,
        }
    }

    /// Class labels used for stratification, when the target is categorical.
    pub fn labels(&self) -> Option<&[String]> {
        match &self.targets {
            Some(RawTargets::Labels(l)) => Some(l),
            _ => None,
        }
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "?" | "null")
}

/// Reads a headered CSV. When `require_target` is false a missing target
/// column yields a dataset without targets.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    require_target: bool,
) -> Result<RawDataset, DataError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    load_csv_str(&text, schema, require_target)
}

pub fn load_csv_str(
    text: &str,
    schema: &FeatureSchema,
    require_target: bool,
) -> Result<RawDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(DataError::MissingHeader);
    }
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let find = |name: &String| {
        position
            .get(name.as_str())
            .copied()
            .ok_or_else(|| DataError::MissingColumn(name.clone()))
    };
    let num_idx = schema.numerical.iter().map(find).collect::<Result<Vec<_>, _>>()?;
    let cat_idx = schema.categorical.iter().map(find).collect::<Result<Vec<_>, _>>()?;
    let target_idx = match find(&schema.target_column) {
        Ok(i) => Some(i),
        Err(e) if require_target => return Err(e),
        Err(_) => None,
    };

    let mut n_rows = 0;
    let mut numerical = Vec::new();
    let mut categorical = Vec::new();
    let mut real_targets = Vec::new();
    let mut label_targets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        for (&i, name) in num_idx.iter().zip(&schema.numerical) {
            numerical.push(parse_real(cell(i), row, name)?);
        }
        for &i in &cat_idx {
            categorical.push(cell(i).to_string());
        }
        if let Some(t) = target_idx {
            if schema.task.is_classification() {
                label_targets.push(cell(t).to_string());
            } else {
                let v = cell(t);
                let y = v.parse::<f64>().map_err(|_| DataError::UnparsableNumeric {
                    row,
                    column: schema.target_column.clone(),
                    value: v.to_string(),
                })?;
                real_targets.push(y);
            }
        }
        n_rows += 1;
    }
    let targets = target_idx.map(|_| {
        if schema.task.is_classification() {
            RawTargets::Labels(label_targets)
        } else {
            RawTargets::Real(real_targets)
        }
    });
    Ok(RawDataset {
        n_rows,
        numerical,
        categorical,
        targets,
        n_num: schema.n_numerical(),
        n_cat: schema.n_categorical(),
    })
}

fn parse_real(cell: &str, row: usize, column: &str) -> Result<f64, DataError> {
    if is_missing(cell) {
        return Ok(f64::NAN);
    }
    cell.trim()
        .parse::<f64>()
        .map_err(|_| DataError::UnparsableNumeric {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        })
}

/// Model-ready table: standardized numerical block, vocabulary-indexed
/// categorical block (0 = unknown) and optional encoded targets.
#[derive(Clone, PartialEq, Debug)]
pub struct Dataset {
    pub x_num: Matrix<f32>,
    /// Row-major `N × F2` category indices.
    pub x_cat: Vec<u32>,
    /// Class index (classification) or standardized value (regression).
    pub y: Option<Vec<f64>>,
    n_cat: usize,
}

impl Dataset {
    pub fn new(x_num: Matrix<f32>, x_cat: Vec<u32>, n_cat: usize, y: Option<Vec<f64>>) -> Self {
        debug_assert_eq!(x_cat.len(), x_num.rows() * n_cat);
        Self {
            x_num,
            x_cat,
            y,
            n_cat,
        }
    }

    pub fn len(&self) -> usize {
        self.x_num.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_numerical(&self) -> usize {
        self.x_num.cols()
    }

    pub fn n_categorical(&self) -> usize {
        self.n_cat
    }

    pub fn n_features(&self) -> usize {
        self.n_numerical() + self.n_cat
    }

    pub fn cat_row(&self, r: usize) -> &[u32] {
        &self.x_cat[r * self.n_cat..(r + 1) * self.n_cat]
    }

    pub fn targets(&self) -> Result<&[f64], DataError> {
        self.y.as_deref().ok_or(DataError::MissingTargets)
    }

    /// Class indices of a classification dataset.
    pub fn class_labels(&self) -> Result<Vec<usize>, DataError> {
        Ok(self.targets()?.iter().map(|&y| y as usize).collect())
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut x_cat = Vec::with_capacity(idx.len() * self.n_cat);
        for &i in idx {
            x_cat.extend_from_slice(self.cat_row(i));
        }
        Self {
            x_num: self.x_num.select_rows(idx),
            x_cat,
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            n_cat: self.n_cat,
        }
    }

    /// `N × F` matrix seen by the tree model: standardized numerical values
    /// followed by category indices as ordinal codes.
    pub fn tree_features(&self) -> Matrix<f32> {
        let f1 = self.n_numerical();
        Matrix::from_fn(self.len(), self.n_features(), |r, c| {
            if c < f1 {
                self.x_num.get(r, c)
            } else {
                self.x_cat[r * self.n_cat + (c - f1)] as f32
            }
        })
    }
}

/// Training-split summary of one raw column, used for analysis exports.
#[derive(Serialize, Deserialize, Clone, PartialEq, Debug)]
pub struct ColumnSummary {
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

/// Fitted preprocessing state. Frozen after [`Preprocessor::fit`].
#[derive(Serialize, Deserialize, Clone, PartialEq, Debug, Default)]
pub struct Preprocessor {
    fitted: bool,
    pub num_mean: Vec<f64>,
    pub num_std: Vec<f64>,
    pub num_summary: Vec<ColumnSummary>,
    /// Known categories per column; category `vocab[j][i]` maps to index `i + 1`.
    pub cat_vocab: Vec<Vec<String>>,
    pub cat_mode: Vec<String>,
    /// Class labels in index order (classification only).
    pub classes: Vec<String>,
    pub target_mean: f64,
    pub target_std: f64,
    pub task: Option<TaskType>,
}

impl Preprocessor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    /// Number of embedding rows per categorical column, including UNK.
    pub fn cat_cardinalities(&self) -> Vec<usize> {
        self.cat_vocab.iter().map(|v| v.len() + 1).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn fit(&mut self, train: &RawDataset, task: TaskType) -> Result<(), DataError> {
        if train.n_rows == 0 {
            return Err(DataError::EmptyDataset);
        }
        let n = train.n_rows;
        self.num_mean.clear();
        self.num_std.clear();
        self.num_summary.clear();
        for j in 0..train.n_num {
            let mut values: Vec<f64> = (0..n)
                .map(|r| train.num_row(r)[j])
                .filter(|v| !v.is_nan())
                .collect();
            let (mean, std) = if values.is_empty() {
                (0.0, 1.0)
            } else {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
                let std = var.sqrt();
                (mean, if std > 0.0 { std } else { 1.0 })
            };
            values.sort_by(f64::total_cmp);
            let summary = if values.is_empty() {
                ColumnSummary {
                    min: 0.0,
                    max: 0.0,
                    median: 0.0,
                }
            } else {
                let m = values.len();
                let median = if m % 2 == 1 {
                    values[m / 2]
                } else {
                    0.5 * (values[m / 2 - 1] + values[m / 2])
                };
                ColumnSummary {
                    min: values[0],
                    max: values[m - 1],
                    median,
                }
            };
            self.num_mean.push(mean);
            self.num_std.push(std);
            self.num_summary.push(summary);
        }

        self.cat_vocab.clear();
        self.cat_mode.clear();
        for j in 0..train.n_cat {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for r in 0..n {
                *counts.entry(train.cat_row(r)[j].as_str()).or_default() += 1;
            }
            let mode = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(k, _)| k.to_string())
                .unwrap_or_default();
            self.cat_vocab.push(counts.keys().map(|k| k.to_string()).collect());
            self.cat_mode.push(mode);
        }

        self.classes.clear();
        self.target_mean = 0.0;
        self.target_std = 1.0;
        match &train.targets {
            Some(RawTargets::Labels(labels)) => {
                let unique: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
                let mut classes: Vec<String> = unique.into_iter().map(str::to_string).collect();
                if classes.iter().all(|c| c.parse::<f64>().is_ok()) {
                    classes.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
                }
                self.classes = classes;
            }
            Some(RawTargets::Real(y)) => {
                let mean = y.iter().sum::<f64>() / n as f64;
                let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
                self.target_mean = mean;
                self.target_std = if std > 0.0 { std } else { 1.0 };
            }
            None => return Err(DataError::MissingTargets),
        }
        self.task = Some(task);
        self.fitted = true;
        Ok(())
    }

    pub fn transform(&self, raw: &RawDataset) -> Result<Dataset, DataError> {
        if !self.fitted {
            return Err(DataError::NotFitted);
        }
        let n = raw.n_rows;
        let f1 = self.num_mean.len();
        let f2 = self.cat_vocab.len();
        let x_num = Matrix::from_fn(n, f1, |r, j| {
            let v = raw.num_row(r)[j];
            let v = if v.is_nan() { self.num_mean[j] } else { v };
            ((v - self.num_mean[j]) / self.num_std[j]) as f32
        });
        let lookups: Vec<HashMap<&str, u32>> = self
            .cat_vocab
            .iter()
            .map(|v| v.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32 + 1)).collect())
            .collect();
        let mut x_cat = Vec::with_capacity(n * f2);
        for r in 0..n {
            for (j, cell) in raw.cat_row(r).iter().enumerate() {
                x_cat.push(lookups[j].get(cell.as_str()).copied().unwrap_or(0));
            }
        }
        let y = match &raw.targets {
            None => None,
            Some(RawTargets::Real(y)) => Some(y.iter().map(|&v| self.standardize_target(v)).collect()),
            Some(RawTargets::Labels(labels)) => {
                let index: HashMap<&str, usize> =
                    self.classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
                Some(
                    labels
                        .iter()
                        .map(|l| {
                            index
                                .get(l.as_str())
                                .map(|&i| i as f64)
                                .ok_or_else(|| DataError::UnknownLabel(l.clone()))
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
        };
        Ok(Dataset::new(x_num, x_cat, f2, y))
    }

    pub fn fit_transform(
        train: &RawDataset,
        task: TaskType,
    ) -> Result<(Preprocessor, Dataset), DataError> {
        let mut prep = Preprocessor::new();
        prep.fit(train, task)?;
        let ds = prep.transform(train)?;
        Ok((prep, ds))
    }

    pub fn standardize_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn destandardize_target(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }
}

/// Row indices of the three splits.
#[derive(Serialize, Deserialize, Clone, PartialEq, Eq, Debug)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn load(path: impl AsRef<Path>, n_rows: usize) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        let split: SplitIndices = serde_json::from_str(&text)?;
        split.validate(n_rows)?;
        Ok(split)
    }

    pub fn validate(&self, n_rows: usize) -> Result<(), DataError> {
        let mut seen = vec![false; n_rows];
        for &i in self.train.iter().chain(&self.valid).chain(&self.test) {
            if i >= n_rows {
                return Err(DataError::BadSplit(format!("index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(DataError::BadSplit(format!("index {i} appears twice")));
            }
        }
        if self.train.is_empty() {
            return Err(DataError::BadSplit("empty training split".into()));
        }
        Ok(())
    }
}

const SPLIT_STREAM: u64 = 0x5011;

/// Seeded random split; stratified by class when `labels` is given.
pub fn split(
    n_rows: usize,
    labels: Option<&[String]>,
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitIndices, DataError> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f) || f.is_nan())
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6
    {
        return Err(DataError::BadFractions(fractions.to_vec()));
    }
    if n_rows == 0 {
        return Err(DataError::EmptyDataset);
    }
    let mut rng = RngStream::new(seed, SPLIT_STREAM);
    let groups: Vec<Vec<usize>> = match labels {
        Some(labels) => {
            let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, l) in labels.iter().enumerate().take(n_rows) {
                by_class.entry(l.as_str()).or_default().push(i);
            }
            by_class.into_values().collect()
        }
        None => vec![(0..n_rows).collect()],
    };
    let mut out = SplitIndices {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for mut group in groups {
        rng.shuffle(&mut group);
        let m = group.len() as f64;
        let n_train = (fractions[0] * m).round() as usize;
        let n_valid = ((fractions[1] * m).round() as usize).min(group.len() - n_train);
        out.train.extend_from_slice(&group[..n_train]);
        out.valid.extend_from_slice(&group[n_train..n_train + n_valid]);
        out.test.extend_from_slice(&group[n_train + n_valid..]);
    }
    out.train.sort_unstable();
    out.valid.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(num: &[&str], cat: &[&str], task: TaskType) -> FeatureSchema {
        FeatureSchema::new(
            "y",
            task,
            num.iter().map(|s| s.to_string()).collect(),
            cat.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn minimal_schema() {
        let s = FeatureSchema::from_json_str(
            r#"{"target":"y","task":"regression","numerical":["a"],"categorical":[]}"#,
        )
        .unwrap();
        assert_eq!((s.n_numerical(), s.n_categorical()), (1, 0));
        assert_eq!(s.task, TaskType::Regression);
    }

    #[test]
    fn schema_errors() {
        let overlap = r#"{"target":"y","task":"regression","numerical":["a"],"categorical":["a"]}"#;
        assert!(matches!(
            FeatureSchema::from_json_str(overlap),
            Err(DataError::OverlappingColumns(c)) if c == "a"
        ));
        let missing = r#"{"target":"y","numerical":["a"],"categorical":[]}"#;
        assert!(matches!(
            FeatureSchema::from_json_str(missing),
            Err(DataError::MissingKey("task"))
        ));
        let unknown = r#"{"target":"y","task":"ranking","numerical":["a"],"categorical":[]}"#;
        assert!(matches!(
            FeatureSchema::from_json_str(unknown),
            Err(DataError::UnknownTask(_))
        ));
    }

    #[test]
    fn adult_style_schema_has_fourteen_features() {
        let text = r#"{"target":"income","task":"binclass",
            "numerical":["age","fnlwgt","education-num","capital-gain","capital-loss","hours-per-week"],
            "categorical":["workclass","education","marital-status","occupation","relationship","race","sex","native-country"]}"#;
        assert_eq!(FeatureSchema::from_json_str(text).unwrap().n_features(), 14);
    }

    #[test]
    fn empty_csv_has_no_header() {
        let s = schema(&["a"], &[], TaskType::Regression);
        assert!(matches!(load_csv_str("", &s, true), Err(DataError::MissingHeader)));
    }

    #[test]
    fn four_row_csv_matches_hand_parse() {
        let s = schema(&["a", "b"], &["c"], TaskType::Binclass);
        let text = "b,c,y,a\n1.5,red,0,-2\n2,blue,1,0.25\n,red,1,3e2\n-7,green,0,1\n";
        let raw = load_csv_str(text, &s, true).unwrap();
        assert_eq!(raw.n_rows, 4);
        assert_eq!(raw.n_features(), 3);
        assert_eq!(raw.num_row(0), &[-2.0, 1.5]);
        assert_eq!(raw.num_row(1), &[0.25, 2.0]);
        assert!(raw.num_row(2)[1].is_nan());
        assert_eq!(raw.num_row(2)[0], 300.0);
        assert_eq!(raw.num_row(3), &[1.0, -7.0]);
        assert_eq!(raw.cat_row(3), &["green".to_string()]);
        assert_eq!(
            raw.targets,
            Some(RawTargets::Labels(vec!["0".into(), "1".into(), "1".into(), "0".into()]))
        );
    }

    #[test]
    fn unparsable_numeric_cell() {
        let s = schema(&["a"], &[], TaskType::Regression);
        let err = load_csv_str("a,y\n1,2\nabc,3\n", &s, true).unwrap_err();
        assert!(matches!(err, DataError::UnparsableNumeric { row: 1, .. }));
        assert!(matches!(
            load_csv_str("b,y\n1,2\n", &s, true),
            Err(DataError::MissingColumn(c)) if c == "a"
        ));
    }

    fn raw_num(values: &[f64]) -> RawDataset {
        RawDataset::from_columns(
            vec![values.to_vec()],
            vec![],
            Some(RawTargets::Real(values.to_vec())),
        )
        .unwrap()
    }

    #[test]
    fn two_point_standardization() {
        let (_, ds) = Preprocessor::fit_transform(&raw_num(&[2.0, 4.0]), TaskType::Regression).unwrap();
        assert_eq!(ds.x_num.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column_gets_unit_std() {
        let (prep, ds) = Preprocessor::fit_transform(&raw_num(&[5.0; 4]), TaskType::Regression).unwrap();
        assert_eq!(prep.num_std, vec![1.0]);
        assert!(ds.x_num.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unseen_category_maps_to_unk() {
        let cats = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let train = RawDataset::from_columns(
            vec![vec![0.0, 1.0, 2.0]],
            vec![cats(&["a", "b", "a"])],
            Some(RawTargets::Labels(cats(&["0", "1", "0"]))),
        )
        .unwrap();
        let (prep, ds) = Preprocessor::fit_transform(&train, TaskType::Binclass).unwrap();
        assert_eq!(ds.x_cat, vec![1, 2, 1]);
        let test = RawDataset::from_columns(vec![vec![f64::NAN]], vec![cats(&["zz"])], None).unwrap();
        let before = prep.clone();
        let out = prep.transform(&test).unwrap();
        assert_eq!(out.x_cat, vec![0]);
        // missing numerical cell imputed with the train mean → 0 after scaling
        assert_eq!(out.x_num.as_slice(), &[0.0]);
        assert_eq!(prep, before);
    }

    #[test]
    fn transform_before_fit() {
        let prep = Preprocessor::new();
        assert!(matches!(prep.transform(&raw_num(&[1.0])), Err(DataError::NotFitted)));
    }

    #[test]
    fn target_round_trip() {
        let y = [3.5, -1.25, 1e4, 0.0, 7.0];
        let mut prep = Preprocessor::new();
        prep.fit(&raw_num(&y), TaskType::Regression).unwrap();
        for &v in &y {
            let back = prep.destandardize_target(prep.standardize_target(v));
            assert!((back - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let a = split(100, None, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (80, 10, 10));
        a.validate(100).unwrap();
        assert_eq!(a, split(100, None, [0.8, 0.1, 0.1], 7).unwrap());
        assert_ne!(a, split(100, None, [0.8, 0.1, 0.1], 8).unwrap());
        assert!(matches!(
            split(100, None, [0.8, 0.3, 0.1], 7),
            Err(DataError::BadFractions(_))
        ));
    }

    #[test]
    fn stratified_split_keeps_ratio() {
        // 37 positives out of 101: count per split must be within one of f·37.
        let labels: Vec<String> = (0..101).map(|i| if i % 11 < 4 { "1" } else { "0" }.to_string()).collect();
        let positives = labels.iter().filter(|l| *l == "1").count();
        let fractions = [0.7, 0.15, 0.15];
        let s = split(101, Some(&labels), fractions, 3).unwrap();
        s.validate(101).unwrap();
        for (part, f) in [(&s.train, fractions[0]), (&s.valid, fractions[1]), (&s.test, fractions[2])] {
            let count = part.iter().filter(|&&i| labels[i] == "1").count() as f64;
            assert!((count - f * positives as f64).abs() <= 1.0, "{count}");
        }
    }

    #[test]
    fn split_file_validation() {
        let bad = SplitIndices {
            train: vec![0, 1],
            valid: vec![1],
            test: vec![],
        };
        assert!(bad.validate(3).is_err());
    }
}
