//! Communication cost of federated training versus shipping raw data.
//!
//! ```text
//! fl_bytes          = 2 * R * K * P * B
//! centralized_bytes = sum_k |D_k| * d * B
//! reduction         = 1 - fl_bytes / centralized_bytes
//! ```
//!
//! The factor 2 counts the download of the global model and the upload of
//! each local model per round. All byte counts are exact `u64`; overflow is
//! an error, never a wrap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::param_count;

/// Bytes per parameter when parameters are shipped as 32-bit floats.
pub const BYTES_F32: u64 = 4;
/// Bytes per parameter of this crate's 64-bit checkpoints.
pub const BYTES_F64: u64 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("{name} must be at least 1")]
    Zero { name: &'static str },
    #[error("byte count overflows 64 bits")]
    Overflow,
    #[error("centralized cost is zero")]
    ZeroCentralized,
    #[error("no client sizes given")]
    NoClients,
}

fn positive(name: &'static str, v: u64) -> Result<u64, CostError> {
    if v == 0 {
        Err(CostError::Zero { name })
    } else {
        Ok(v)
    }
}

fn product(factors: &[u64]) -> Result<u64, CostError> {
    factors.iter().try_fold(1u64, |acc, &f| acc.checked_mul(f).ok_or(CostError::Overflow))
}

pub fn fl_cost(rounds: u64, clients: u64, params: u64, bytes_per_param: u64) -> Result<u64, CostError> {
    product(&[
        2,
        positive("rounds", rounds)?,
        positive("clients", clients)?,
        positive("params", params)?,
        positive("bytes_per_param", bytes_per_param)?,
    ])
}

pub fn centralized_cost(shard_sizes: &[u64], features: u64, bytes_per_param: u64) -> Result<u64, CostError> {
    if shard_sizes.is_empty() {
        return Err(CostError::NoClients);
    }
    let per_row = product(&[positive("features", features)?, positive("bytes_per_param", bytes_per_param)?])?;
    shard_sizes
        .iter()
        .try_fold(0u64, |acc, &n| n.checked_mul(per_row).and_then(|b| acc.checked_add(b)).ok_or(CostError::Overflow))
}

/// `1 - fl / centralized`, negative when federation moves more bytes.
pub fn bandwidth_reduction(fl_bytes: u64, centralized_bytes: u64) -> Result<f64, CostError> {
    if centralized_bytes == 0 {
        return Err(CostError::ZeroCentralized);
    }
    Ok(1.0 - fl_bytes as f64 / centralized_bytes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rounds: u64,
    pub clients: u64,
    pub features: u64,
    pub params: u64,
    pub bytes_per_param: u64,
    pub fl_bytes: u64,
    pub fl_mb: f64,
    pub fl_mib: f64,
    /// Absent when no client sizes were supplied.
    pub centralized_bytes: Option<u64>,
    pub centralized_mb: Option<f64>,
    pub centralized_mib: Option<f64>,
    pub bandwidth_reduction: Option<f64>,
}

const MB: f64 = 1e6;
const MIB: f64 = 1_048_576.0;

impl CostReport {
    /// Report for the network with `features` inputs. `shard_sizes` feeds the
    /// centralized comparison; pass an empty slice to skip it.
    pub fn new(
        rounds: u64,
        clients: u64,
        features: u64,
        bytes_per_param: u64,
        shard_sizes: &[u64],
    ) -> Result<Self, CostError> {
        positive("features", features)?;
        let params = param_count(features as usize) as u64;
        let fl_bytes = fl_cost(rounds, clients, params, bytes_per_param)?;
        let centralized_bytes =
            if shard_sizes.is_empty() { None } else { Some(centralized_cost(shard_sizes, features, bytes_per_param)?) };
        let bandwidth_reduction = centralized_bytes.map(|c| bandwidth_reduction(fl_bytes, c)).transpose()?;
        Ok(Self {
            rounds,
            clients,
            features,
            params,
            bytes_per_param,
            fl_bytes,
            fl_mb: fl_bytes as f64 / MB,
            fl_mib: fl_bytes as f64 / MIB,
            centralized_bytes,
            centralized_mb: centralized_bytes.map(|c| c as f64 / MB),
            centralized_mib: centralized_bytes.map(|c| c as f64 / MIB),
            bandwidth_reduction,
        })
    }
}

impl std::fmt::Display for CostReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "rounds {}  clients {}  features {}  params {}  bytes/param {}",
            self.rounds, self.clients, self.features, self.params, self.bytes_per_param
        )?;
        writeln!(f, "fl_bytes           {:>16}  ({:.2} MB, {:.2} MiB)", self.fl_bytes, self.fl_mb, self.fl_mib)?;
        if let (Some(c), Some(mb), Some(mib)) = (self.centralized_bytes, self.centralized_mb, self.centralized_mib) {
            writeln!(f, "centralized_bytes  {c:>16}  ({mb:.2} MB, {mib:.2} MiB)")?;
        }
        if let Some(r) = self.bandwidth_reduction {
            writeln!(f, "bandwidth_reduction {r:.6}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_case() {
        assert_eq!(fl_cost(1, 1, 1, 1), Ok(2));
    }

    #[test]
    fn full_scale_values() {
        let p = param_count(1035) as u64;
        assert_eq!(fl_cost(80, 2, p, 4), Ok(180_472_320));
        assert_eq!(centralized_cost(&[12696, 12696], 1035, 4), Ok(105_122_880));
    }

    #[test]
    fn client_ratios() {
        for p in [1u64, 8642, 140_994, 100_008] {
            let base = fl_cost(80, 2, p, 4).unwrap();
            assert_eq!(2 * fl_cost(80, 3, p, 4).unwrap(), 3 * base);
            assert_eq!(2 * fl_cost(80, 5, p, 4).unwrap(), 5 * base);
        }
    }

    #[test]
    fn zero_and_overflow() {
        assert_eq!(fl_cost(0, 1, 1, 1), Err(CostError::Zero { name: "rounds" }));
        assert_eq!(fl_cost(1, 0, 1, 1), Err(CostError::Zero { name: "clients" }));
        assert_eq!(fl_cost(u64::MAX, 1, 1, 1), Err(CostError::Overflow));
        assert_eq!(centralized_cost(&[u64::MAX, 1], 1, 1), Err(CostError::Overflow));
        assert_eq!(centralized_cost(&[], 1, 1), Err(CostError::NoClients));
    }

    #[test]
    fn centralized_additivity() {
        assert_eq!(centralized_cost(&[10], 5, 4), Ok(200));
        assert_eq!(centralized_cost(&[3, 7], 5, 4), Ok(200));
    }

    #[test]
    fn reduction_regimes() {
        assert_eq!(bandwidth_reduction(100, 100), Ok(0.0));
        assert_eq!(bandwidth_reduction(0, 100), Ok(1.0));
        assert_eq!(bandwidth_reduction(200, 100), Ok(-1.0));
        assert_eq!(bandwidth_reduction(1, 0), Err(CostError::ZeroCentralized));
    }

    #[test]
    fn report_invariants() {
        let r = CostReport::new(80, 2, 1035, 4, &[12696, 12696]).unwrap();
        assert_eq!(r.params, 140_994);
        assert_eq!(r.fl_bytes, 2 * 80 * 2 * 140_994 * 4);
        assert_eq!(r.bandwidth_reduction, Some(1.0 - 180_472_320.0 / 105_122_880.0));
        assert!(r.to_string().contains("180472320"));
        assert!(CostReport::new(80, 2, 1035, 4, &[]).unwrap().centralized_bytes.is_none());
    }
}
