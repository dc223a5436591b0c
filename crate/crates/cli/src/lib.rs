//! Experiment runner for the `gridfed` simulator.
//!
//! `run` writes one directory per experiment:
//!
//! | file            | content                                                  |
//! |-----------------|----------------------------------------------------------|
//! | `rounds.csv`    | per-round lr, client losses, test loss, metrics, bytes   |
//! | `roc.csv`       | final-model ROC curve (`fpr,tpr,threshold`)              |
//! | `preds.csv`     | final-model test predictions                             |
//! | `partition.csv` | per-client label composition                             |
//! | `summary.json`  | resolved config, final metrics, cost report              |
//! | `model.fmlp`    | final parameters in the checkpoint format                |
//! | `manifest.json` | everything needed to replay the run, plus checksums      |
//!
//! Only `manifest.json` carries a timestamp; every other file is a pure
//! function of the manifest.

pub mod args;
pub mod manifest;
pub mod run;

use thiserror::Error;

pub use manifest::{DataSource, RunManifest, RunSpec, Summary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("data: {0}")]
    Data(#[from] gridfed::DataError),
    #[error("training: {0}")]
    Fed(#[from] gridfed::FedError),
    #[error("cost: {0}")]
    Cost(#[from] gridfed::CostError),
    #[error("evaluation: {0}")]
    Metrics(#[from] gridfed::MetricsError),
    #[error("model: {0}")]
    Nn(#[from] gridfed::NnError),
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("output directory {0} exists and is not empty (use --force)")]
    OutputExists(String),
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error("non-finite result: {0}")]
    NonFinite(String),
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.as_ref().display().to_string();
        move |source| CliError::Io { path, source }
    }

    /// Short category name for the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Data(_) => "data",
            CliError::Fed(_) => "training",
            CliError::Cost(_) => "cost",
            CliError::Metrics(_) => "evaluation",
            CliError::Nn(_) => "model",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
            CliError::OutputExists(_) => "output_exists",
            CliError::Usage(_) => "usage",
            CliError::Replay(_) => "replay",
            CliError::NonFinite(_) => "non_finite",
        }
    }

    /// `error kind=<kind>: <message>` on a single line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error kind={}: {msg}", self.kind())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
