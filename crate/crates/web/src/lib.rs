//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string: the result on success, or
//! `{"error": "..."}` on failure. Training runs on the calling thread.

use gridfed::cost::CostReport;
use gridfed::dataio::generate_synthetic;
use gridfed::fed::{FedConfig, Federation, PartitionMode};
use gridfed::metrics::RocPoint;
use gridfed::partition::{partition_report, PartitionReport};
use gridfed::pipeline::{prepare, PrepOptions};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    let value = result.and_then(|v| serde_json::to_value(v).map_err(|e| e.to_string()));
    match value {
        Ok(v) => v.to_string(),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Communication cost of a run. `train_rows` of 0 skips the centralized
/// comparison.
#[wasm_bindgen]
pub fn cost_report(rounds: u32, clients: u32, features: u32, bytes_per_param: u32, train_rows: u32) -> String {
    let sizes: Vec<u64> = if train_rows == 0 { Vec::new() } else { vec![u64::from(train_rows)] };
    respond(
        CostReport::new(u64::from(rounds), u64::from(clients), u64::from(features), u64::from(bytes_per_param), &sizes)
            .map_err(err),
    )
}

/// Label composition of each client for a synthetic label vector.
#[wasm_bindgen]
pub fn partition_preview(
    rows: u32,
    clients: u32,
    mode: &str,
    shards_per_client: u32,
    theft_rate: f64,
    seed: u32,
) -> String {
    respond(preview(rows as usize, clients as usize, mode, shards_per_client as usize, theft_rate, u64::from(seed)))
}

fn preview(
    rows: usize,
    k: usize,
    mode: &str,
    spc: usize,
    theft_rate: f64,
    seed: u64,
) -> Result<PartitionReport, String> {
    let data = generate_synthetic(rows, 2, theft_rate, 0.0, seed).map_err(err)?;
    let cfg = FedConfig {
        k_clients: k,
        partition_mode: mode.parse::<PartitionMode>()?,
        shards_per_client: spc,
        seed,
        ..Default::default()
    };
    cfg.validate().map_err(err)?;
    let shards = cfg.partition(data.labels()).map_err(err)?;
    partition_report(&shards, data.labels()).map_err(err)
}

#[derive(Debug, Serialize)]
struct RoundPoint {
    round: usize,
    accuracy: f64,
    auc: f64,
    test_loss: f64,
}

#[derive(Debug, Serialize)]
struct Simulation {
    rounds: Vec<RoundPoint>,
    roc: Vec<RocPoint>,
    partition: PartitionReport,
    cost: CostReport,
}

/// Trains on a freshly generated synthetic dataset and returns the per-round
/// series, the final ROC curve, the partition and the cost report.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    rows: u32,
    features: u32,
    clients: u32,
    rounds: u32,
    epochs: u32,
    lr: f64,
    noise_std: f64,
    mode: &str,
    seed: u32,
) -> String {
    let cfg = mode.parse::<PartitionMode>().map(|partition_mode| FedConfig {
        k_clients: clients as usize,
        rounds: rounds as usize,
        local_epochs: epochs as usize,
        lr0: lr,
        noise_std,
        partition_mode,
        seed: u64::from(seed),
        ..Default::default()
    });
    respond(cfg.and_then(|cfg| run(rows as usize, features as usize, cfg)))
}

fn run(rows: usize, features: usize, cfg: FedConfig) -> Result<Simulation, String> {
    cfg.validate().map_err(err)?;
    let data = generate_synthetic(rows, features, 0.09, 0.01, cfg.seed).map_err(err)?;
    let prep = prepare(&data, &PrepOptions { seed: cfg.seed, ..Default::default() }).map_err(err)?;
    let out = Federation::new(cfg.clone(), &prep.train, &prep.test).run().map_err(err)?;
    let sizes: Vec<u64> = out.shards.iter().map(|s| s.len() as u64).collect();
    let cost = CostReport::new(cfg.rounds as u64, cfg.k_clients as u64, features as u64, 4, &sizes).map_err(err)?;
    let roc = out.logs.last().map(|l| l.metrics.roc_points.clone()).unwrap_or_default();
    let rounds = out
        .logs
        .iter()
        .map(|l| RoundPoint {
            round: l.round,
            accuracy: l.metrics.accuracy,
            auc: l.metrics.auc,
            test_loss: l.test_loss,
        })
        .collect();
    Ok(Simulation { rounds, roc, partition: out.partition, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    /// The core crate pins the same fold. This crate's test build does not
    /// pull in the core's dev-dependencies, so it sees the math backend the
    /// browser build gets.
    #[test]
    fn noise_matches_native_build() {
        use gridfed::rng::{stream, Purpose};
        let mut fold = 0u64;
        for round in 1..=10 {
            for client in 0..3 {
                let mut rng = stream(1, Purpose::Noise, round, client);
                let p = gridfed::fed::add_gaussian_noise(&gridfed::MlpParams::zeros(100), 0.5, &mut rng).unwrap();
                fold = p.values().fold(fold, |h, x| h.rotate_left(5) ^ x.to_bits());
            }
        }
        assert_eq!(fold, 0xfbe1203233969cb7);
    }

    #[test]
    fn cost_matches_reference_sizes() {
        let v = parse(&cost_report(80, 2, 1035, 4, 25392));
        assert_eq!(v["fl_bytes"], 180_472_320u64);
        assert_eq!(v["centralized_bytes"], 105_122_880u64);
        let v = parse(&cost_report(80, 2, 1035, 4, 0));
        assert!(v["centralized_bytes"].is_null());
        assert!(parse(&cost_report(0, 2, 1035, 4, 0))["error"].is_string());
    }

    #[test]
    fn preview_covers_every_row() {
        for mode in ["iid", "noniid_shards", "noniid_proportional"] {
            let v = parse(&partition_preview(1000, 4, mode, 2, 0.09, 3));
            let clients = v["clients"].as_array().unwrap();
            assert_eq!(clients.len(), 4, "{mode}");
            let total: u64 = clients.iter().map(|c| c["total"].as_u64().unwrap()).sum();
            assert_eq!(total, 1000);
        }
        assert!(parse(&partition_preview(1000, 4, "random", 2, 0.09, 3))["error"].is_string());
    }

    #[test]
    fn simulation_reports_every_round() {
        let json = simulate(400, 20, 2, 4, 1, 0.01, 0.0, "iid", 1);
        let v = parse(&json);
        let rounds = v["rounds"].as_array().unwrap();
        assert_eq!(rounds.len(), 4);
        assert!(rounds.iter().all(|r| r["test_loss"].as_f64().unwrap().is_finite()));
        let roc = v["roc"].as_array().unwrap();
        assert_eq!(roc.last().unwrap()["tpr"], 1.0);
        // The starting point's infinite threshold has no JSON number form.
        assert!(roc[0]["threshold"].is_null());
        assert_eq!(v["partition"]["clients"].as_array().unwrap().len(), 2);
        assert_eq!(json, simulate(400, 20, 2, 4, 1, 0.01, 0.0, "iid", 1));
    }
}
