//! Preprocessing chain shared by the CLI and the browser demo: split, impute,
//! standardize.

use serde::{Deserialize, Serialize};

use crate::dataio::{apply_zscore, fit_norm_stats, impute_missing, split_indices, Dataset, NormStats, Result};

/// Fraction of rows held out for evaluation (80:20 split).
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepOptions {
    pub test_fraction: f64,
    /// Fit imputation and normalization statistics on the full dataset before
    /// splitting instead of on the training rows only. This leaks test-set
    /// moments into training and exists to reproduce that ordering.
    pub normalize_before_split: bool,
    pub seed: u64,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self { test_fraction: DEFAULT_TEST_FRACTION, normalize_before_split: false, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    /// Statistics the z-score transform used.
    pub stats: NormStats,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Missing cells are filled with the observed-cell mean; the z-score
/// statistics are then refitted on the imputed rows so the standardized
/// training features have exactly zero mean and unit variance.
fn fit_transform(fit_on: &Dataset) -> Result<(NormStats, NormStats)> {
    let observed = fit_norm_stats(fit_on)?;
    let imputed = impute_missing(fit_on, &observed)?;
    let scale = fit_norm_stats(&imputed)?;
    Ok((observed, scale))
}

pub fn prepare(data: &Dataset, opts: &PrepOptions) -> Result<Prepared> {
    let (train_rows, test_rows) = split_indices(data.n_rows(), opts.test_fraction, opts.seed)?;
    let (train_raw, test_raw) = (data.select_rows(&train_rows), data.select_rows(&test_rows));
    let (observed, scale) = if opts.normalize_before_split { fit_transform(data)? } else { fit_transform(&train_raw)? };
    let train = apply_zscore(&impute_missing(&train_raw, &observed)?, &scale)?;
    let test = apply_zscore(&impute_missing(&test_raw, &observed)?, &scale)?;
    Ok(Prepared { train, test, stats: scale, train_rows, test_rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::generate_synthetic;

    fn moments(data: &Dataset, j: usize) -> (f64, f64) {
        let n = data.n_rows() as f64;
        let mean = (0..data.n_rows()).map(|i| data.value(i, j)).sum::<f64>() / n;
        let var = (0..data.n_rows()).map(|i| (data.value(i, j) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn training_split_is_standardized() {
        let data = generate_synthetic(300, 8, 0.1, 0.05, 2).unwrap();
        let prep = prepare(&data, &PrepOptions::default()).unwrap();
        assert_eq!(prep.train.missing_count(), 0);
        assert_eq!(prep.test.missing_count(), 0);
        assert_eq!((prep.train.n_rows(), prep.test.n_rows()), (240, 60));
        for j in 0..8 {
            let (m, s) = moments(&prep.train, j);
            assert!(m.abs() <= 1e-9 && (s - 1.0).abs() <= 1e-9, "feature {j}: {m} {s}");
        }
    }

    #[test]
    fn literal_order_uses_full_dataset() {
        let data = generate_synthetic(300, 4, 0.1, 0.0, 3).unwrap();
        let opts = PrepOptions { normalize_before_split: true, ..Default::default() };
        let prep = prepare(&data, &opts).unwrap();
        assert_eq!(prep.stats, fit_norm_stats(&data).unwrap());
    }
}
