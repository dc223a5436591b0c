//! Tabular smart-meter data: CSV ingestion, a synthetic generator, missing
//! value imputation, z-score normalization and the train/test split.
//!
//! A [`Dataset`] is an `N x d` matrix of consumption readings (row-major), one
//! binary label per row (1 = theft) and a mask of cells that were absent in
//! the source. Missing cells hold `0.0` until [`impute_missing`] fills them.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format_real;
use crate::rng::{stream, Purpose};

/// Name of the label column in the CSV schema.
pub const LABEL_COLUMN: &str = "label";

/// Standard deviations below this are treated as zero variance.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no column named `label` in header")]
    MissingLabelColumn,
    #[error("row {row}, column `{column}`: non-numeric value {value:?}")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("row {row}: label {value:?} is not 0 or 1")]
    BadLabel { row: usize, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("no data rows")]
    NoRows,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("feature `{feature}` has no observed values")]
    NoObservedValues { feature: String },
    #[error("degenerate split: {train} train rows, {test} test rows")]
    DegenerateSplit { train: usize, test: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    missing: Vec<bool>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row-major features. Missing cells are forced to
    /// the `0.0` placeholder.
    pub fn new(
        mut features: Vec<f64>,
        labels: Vec<u8>,
        missing: Vec<bool>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        let d = feature_names.len();
        if features.len() != n * d || missing.len() != n * d {
            return Err(DataError::Shape(format!(
                "{n} labels and {d} feature names need {} cells, got {} features and {} mask entries",
                n * d,
                features.len(),
                missing.len()
            )));
        }
        if let Some(row) = labels.iter().position(|&y| y > 1) {
            return Err(DataError::BadLabel { row: row + 1, value: labels[row].to_string() });
        }
        for (x, &m) in features.iter_mut().zip(&missing) {
            if m {
                *x = 0.0;
            }
        }
        Ok(Self { features, labels, missing, feature_names })
    }

    /// Fully observed dataset with generated feature names `f0..f{d-1}`.
    pub fn from_rows(features: Vec<f64>, labels: Vec<u8>, d: usize) -> Result<Self> {
        let missing = vec![false; features.len()];
        Self::new(features, labels, missing, default_feature_names(d))
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.features[row * self.n_features() + col]
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[row * self.n_features() + col]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// `[count of label 0, count of label 1]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        [self.n_rows() - pos, pos]
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let d = self.n_features();
        let mut features = Vec::with_capacity(rows.len() * d);
        let mut missing = Vec::with_capacity(rows.len() * d);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            missing.extend_from_slice(&self.missing[r * d..(r + 1) * d]);
            labels.push(self.labels[r]);
        }
        Dataset { features, labels, missing, feature_names: self.feature_names.clone() }
    }

    /// Copies the feature rows listed in `rows` into `out` (row-major).
    pub fn gather_rows(&self, rows: &[usize], out: &mut Vec<f64>) {
        out.clear();
        for &r in rows {
            out.extend_from_slice(self.row(r));
        }
    }
}

fn default_feature_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

fn parse_label(raw: &str, row: usize) -> Result<u8> {
    match raw.trim().parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(DataError::BadLabel { row, value: raw.to_string() }),
    }
}

/// Reads a dataset in the CSV schema: header row, one column named `label`
/// holding 0/1, every other column a decimal real or empty (missing).
/// Reported row numbers count data rows from 1.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_col = header.iter().position(|h| h == LABEL_COLUMN).ok_or(DataError::MissingLabelColumn)?;
    let feature_names: Vec<String> =
        header.iter().enumerate().filter(|&(j, _)| j != label_col).map(|(_, h)| h.clone()).collect();

    let mut features = Vec::new();
    let mut missing = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow { row, expected: header.len(), found: record.len() });
        }
        for (j, field) in record.iter().enumerate() {
            if j == label_col {
                labels.push(parse_label(field, row)?);
                continue;
            }
            let field = field.trim();
            if field.is_empty() {
                features.push(0.0);
                missing.push(true);
            } else {
                let v = field.parse::<f64>().map_err(|_| DataError::NonNumeric {
                    row,
                    column: header[j].clone(),
                    value: field.to_string(),
                })?;
                features.push(v);
                missing.push(false);
            }
        }
    }
    if labels.is_empty() {
        return Err(DataError::NoRows);
    }
    Dataset::new(features, labels, missing, feature_names)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    read_csv(std::io::BufReader::new(file))
}

/// Writes features in column order followed by the `label` column. Missing
/// cells are written empty, reals with 17 significant digits.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.push(LABEL_COLUMN);
    wtr.write_record(&header)?;
    let d = data.n_features();
    let mut record = Vec::with_capacity(d + 1);
    for i in 0..data.n_rows() {
        record.clear();
        for j in 0..d {
            if data.is_missing(i, j) {
                record.push(String::new());
            } else {
                record.push(format_real(data.value(i, j)));
            }
        }
        record.push(data.labels[i].to_string());
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|source| DataError::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    write_csv(data, std::io::BufWriter::new(file))
}

/// Parameters of the synthetic consumption generator.
///
/// Every customer gets a base level (log-normal around 10 units) modulated
/// by a yearly sinusoid with a small per-customer phase jitter, plus
/// multiplicative day-to-day noise. Theft customers follow the same profile
/// but one contiguous window of their record, covering a fifth to a half of
/// the days, is scaled by a factor drawn uniformly from `[0.1, 0.5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub rows: usize,
    pub features: usize,
    pub theft_rate: f64,
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// 31,740 customers over 1,035 days with 9% thieves.
    fn default() -> Self {
        Self { rows: 31_740, features: 1035, theft_rate: 0.09, missing_rate: 0.01, seed: 0 }
    }
}

const SEASON_DAYS: f64 = 365.0;
const SEASON_AMPLITUDE: f64 = 0.3;
const LEVEL_LOG_SD: f64 = 0.15;
const DAILY_NOISE_SD: f64 = 0.15;

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theft_rate > 0.0 && self.theft_rate < 1.0) {
            return Err(DataError::InvalidParameter(format!("theft rate {} not in (0, 1)", self.theft_rate)));
        }
        if !(self.missing_rate >= 0.0 && self.missing_rate < 1.0) {
            return Err(DataError::InvalidParameter(format!("missing rate {} not in [0, 1)", self.missing_rate)));
        }
        if self.rows < 10 {
            return Err(DataError::InvalidParameter(format!("rows {} < 10", self.rows)));
        }
        if self.features < 2 {
            return Err(DataError::InvalidParameter(format!("features {} < 2", self.features)));
        }
        Ok(())
    }

    pub fn theft_count(&self) -> usize {
        (self.rows as f64 * self.theft_rate).round() as usize
    }

    pub fn missing_cells(&self) -> usize {
        (self.rows as f64 * self.features as f64 * self.missing_rate).round() as usize
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let (n, d) = (self.rows, self.features);
        let mut rng = stream(self.seed, Purpose::Generate, 0, 0);

        let mut labels = vec![0u8; n];
        for i in sample(&mut rng, n, self.theft_count()) {
            labels[i] = 1;
        }

        let level_dist = Normal::new(0.0, LEVEL_LOG_SD).expect("finite sd");
        let noise_dist = Normal::new(0.0, DAILY_NOISE_SD).expect("finite sd");
        let mut features = Vec::with_capacity(n * d);
        let min_window = (d / 5).max(1);
        let max_window = (d / 2).max(min_window);
        for &label in &labels {
            let level = 10.0 * level_dist.sample(&mut rng).exp();
            let phase = rng.gen_range(-0.3..0.3);
            let start = features.len();
            for t in 0..d {
                let season = 1.0 + SEASON_AMPLITUDE * (2.0 * PI * t as f64 / SEASON_DAYS + phase).sin();
                let noise = 1.0 + noise_dist.sample(&mut rng);
                features.push((level * season * noise).max(0.0));
            }
            if label == 1 {
                let len = rng.gen_range(min_window..=max_window);
                let offset = rng.gen_range(0..=d - len);
                let factor = rng.gen_range(0.1..=0.5);
                for x in &mut features[start + offset..start + offset + len] {
                    *x *= factor;
                }
            }
        }

        let mut missing = vec![false; n * d];
        for cell in sample(&mut rng, n * d, self.missing_cells()) {
            missing[cell] = true;
        }
        Dataset::new(features, labels, missing, default_feature_names(d))
    }
}

pub fn generate_synthetic(n: usize, d: usize, theft_rate: f64, missing_rate: f64, seed: u64) -> Result<Dataset> {
    SyntheticConfig { rows: n, features: d, theft_rate, missing_rate, seed }.generate()
}

/// Per-feature mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if self.n_features() != data.n_features() {
            return Err(DataError::DimensionMismatch { expected: self.n_features(), found: data.n_features() });
        }
        Ok(())
    }
}

/// Mean and population standard deviation of every feature over its observed
/// cells. A feature whose standard deviation is below [`MIN_STD`] gets
/// `std = 1`, so it normalizes to a constant zero rather than failing.
pub fn fit_norm_stats(data: &Dataset) -> Result<NormStats> {
    let (n, d) = (data.n_rows(), data.n_features());
    if n < 2 {
        return Err(DataError::InvalidParameter(format!("need at least 2 rows to fit statistics, got {n}")));
    }
    let mut count = vec![0usize; d];
    let mut sum = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            if !data.is_missing(i, j) {
                count[j] += 1;
                sum[j] += data.value(i, j);
            }
        }
    }
    if let Some(j) = count.iter().position(|&c| c == 0) {
        return Err(DataError::NoObservedValues { feature: data.feature_names[j].clone() });
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    // Two-pass variance.
    let mut sq = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            if !data.is_missing(i, j) {
                let dev = data.value(i, j) - mean[j];
                sq[j] += dev * dev;
            }
        }
    }
    let std = sq
        .iter()
        .zip(&count)
        .map(|(s, &c)| {
            let sd = (s / c as f64).sqrt();
            if sd < MIN_STD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(NormStats { mean, std })
}

/// Replaces every missing cell with the mean of its feature and clears the
/// mask.
pub fn impute_missing(data: &Dataset, stats: &NormStats) -> Result<Dataset> {
    stats.check(data)?;
    let d = data.n_features();
    let mut out = data.clone();
    for (idx, m) in out.missing.iter_mut().enumerate() {
        if *m {
            out.features[idx] = stats.mean[idx % d];
            *m = false;
        }
    }
    Ok(out)
}

/// `x' = (x - mean) / std` on every cell. Expects imputed data; any cell
/// still flagged missing is transformed from its placeholder like the rest.
pub fn apply_zscore(data: &Dataset, stats: &NormStats) -> Result<Dataset> {
    stats.check(data)?;
    let d = data.n_features();
    let mut out = data.clone();
    for row in out.features.chunks_exact_mut(d) {
        for ((x, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *x = (*x - m) / s;
        }
    }
    Ok(out)
}

/// Row indices of a seeded split: a uniform permutation whose first
/// `ceil(N * (1 - test_fraction))` entries go to training.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidParameter(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    // The epsilon keeps 10 * 0.8 at 8 instead of 8.000000000000002 -> 9.
    let n_train = ((n as f64) * (1.0 - test_fraction) - 1e-9).ceil().max(0.0) as usize;
    let n_train = n_train.min(n);
    if n_train == 0 || n_train == n {
        return Err(DataError::DegenerateSplit { train: n_train, test: n - n_train });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Split, 0, 0));
    let test = order.split_off(n_train);
    Ok((order, test))
}

pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data.n_rows(), test_fraction, seed)?;
    Ok((data.select_rows(&train), data.select_rows(&test)))
}
