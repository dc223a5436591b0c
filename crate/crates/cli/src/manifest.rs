use std::collections::BTreeMap;
use std::path::Path;

use gridfed::cost::CostReport;
use gridfed::dataio::SyntheticConfig;
use gridfed::fed::FedConfig;
use gridfed::metrics::Metrics;
use gridfed::partition::PartitionReport;
use gridfed::pipeline::PrepOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

/// Where the rows came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: String, sha256: String },
    Synthetic(SyntheticConfig),
}

/// Every input that affects a run's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub config: FedConfig,
    pub data: DataSource,
    pub preprocessing: PrepOptions,
}

impl RunSpec {
    /// First 12 hex digits of the SHA-256 of the spec's JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex(&Sha256::digest(&json))[..12].to_string()
    }

    pub fn default_output_dir(&self) -> String {
        format!("runs/seed{}-{}", self.config.seed, self.hash())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub spec: RunSpec,
    /// Client-task parallelism. Does not affect results.
    pub threads: u64,
    pub output_dir: String,
    /// SHA-256 of every other output file, by file name.
    pub artifacts: BTreeMap<String, String>,
    pub created_unix_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub features: usize,
    pub missing_cells: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_label_counts: [usize; 2],
    pub test_label_counts: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsPercent {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_weighted: f64,
    pub auc: f64,
}

impl From<&Metrics> for MetricsPercent {
    fn from(m: &Metrics) -> Self {
        Self {
            accuracy: 100.0 * m.accuracy,
            precision: 100.0 * m.precision,
            recall: 100.0 * m.recall,
            f1_weighted: 100.0 * m.f1_weighted,
            auc: 100.0 * m.auc,
        }
    }
}

/// Cost of the run under 32-bit and 64-bit parameter encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub float32: CostReport,
    pub float64: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(flatten)]
    pub spec: RunSpec,
    pub dataset: DatasetSummary,
    pub partition_mode: String,
    pub partition: PartitionReport,
    pub rounds_completed: usize,
    pub final_test_loss: f64,
    pub final_metrics: Metrics,
    pub final_metrics_percent: MetricsPercent,
    pub cost: CostSummary,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> RunSpec {
        RunSpec {
            config: FedConfig::default(),
            data: DataSource::Synthetic(SyntheticConfig::default()),
            preprocessing: PrepOptions::default(),
        }
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = spec();
        assert_eq!(a.hash(), spec().hash());
        assert_eq!(a.hash().len(), 12);
        let mut b = spec();
        b.config.noise_std = 0.1;
        assert_ne!(a.hash(), b.hash());
        let mut c = spec();
        c.preprocessing.normalize_before_split = true;
        assert_ne!(a.hash(), c.hash());
        assert!(a.default_output_dir().starts_with("runs/seed0-"));
    }

    #[test]
    fn manifest_json_round_trip() {
        let m = RunManifest {
            tool: "gridfed".into(),
            version: "0.1.0".into(),
            spec: RunSpec { data: DataSource::Csv { path: "x.csv".into(), sha256: "00".into() }, ..spec() },
            threads: 2,
            output_dir: "out".into(),
            artifacts: BTreeMap::from([("rounds.csv".to_string(), "ab".to_string())]),
            created_unix_secs: 1,
        };
        let json = serde_json::to_string_pretty(&m).unwrap();
        assert!(json.contains("\"kind\": \"csv\""));
        assert!(json.contains("\"partition_mode\": \"iid\""));
        assert_eq!(serde_json::from_str::<RunManifest>(&json).unwrap(), m);
    }
}
