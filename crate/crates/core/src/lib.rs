//! Federated training simulator for energy-theft detection on smart-meter
//! consumption data.
//!
//! The pipeline is: tabular data ([`dataio`]) is split and normalized, the
//! training rows are distributed over simulated clients ([`partition`]), each
//! client trains a three-layer perceptron ([`nn`]) locally, and the server
//! averages the client parameters, optionally perturbed with Gaussian noise
//! ([`fed`]). Every round is evaluated with the classification metrics in
//! [`metrics`] and charged against the communication model in [`cost`].
//!
//! All randomness is derived from a single run seed through [`rng`], so a run
//! is bit-reproducible regardless of how client work is scheduled.

pub mod cost;
pub mod dataio;
pub mod fed;
pub mod metrics;
pub mod nn;
pub mod partition;
pub mod pipeline;
pub mod rng;

pub use cost::{CostError, CostReport};
pub use dataio::{DataError, Dataset, NormStats};
pub use fed::{FedConfig, FedError, PartitionMode, RoundLog};
pub use metrics::{ConfusionCounts, Metrics, MetricsError};
pub use nn::{MlpParams, NnError};
pub use partition::{ClientShard, PartitionError, PartitionReport};

/// Formats a real with 17 significant digits, the width every CSV and report
/// in this crate uses. Non-finite values are written as `NaN`, `inf`, `-inf`.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}
