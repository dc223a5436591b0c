//! Distribution of training rows over simulated clients.
//!
//! Three schemes are available:
//!
//! * IID: a seeded shuffle cut into contiguous chunks whose sizes differ by at
//!   most one, larger chunks going to the lowest client ids.
//! * Label-skewed shards: rows sorted by label (shuffled within a label), cut
//!   into `k * shards_per_client` contiguous shards, and each client draws
//!   `shards_per_client` of them without replacement.
//! * Proportional: a stratified equal split that deals every label round-robin
//!   over the clients, so each client sees nearly the same label counts.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Purpose};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("need at least one client")]
    NoClients,
    #[error("cannot give {clients} clients a row each out of {rows}")]
    TooFewRows { rows: usize, clients: usize },
    #[error("cannot cut {rows} rows into {shards} shards")]
    TooFewRowsForShards { rows: usize, shards: usize },
    #[error("shards_per_client must be at least 1")]
    NoShards,
    #[error("client {client}: row index {index} out of range for {rows} labels")]
    IndexOutOfRange { client: usize, index: usize, rows: usize },
    #[error("label {label} at row {row} is not 0 or 1")]
    BadLabel { row: usize, label: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub row_indices: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.row_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_indices.is_empty()
    }
}

fn check_clients(n_rows: usize, k: usize) -> Result<(), PartitionError> {
    if k == 0 {
        return Err(PartitionError::NoClients);
    }
    if n_rows < k {
        return Err(PartitionError::TooFewRows { rows: n_rows, clients: k });
    }
    Ok(())
}

/// Cuts `rows` into `k` contiguous chunks of sizes `ceil(n/k)` for the first
/// `n % k` chunks and `floor(n/k)` after.
fn contiguous_chunks(rows: &[usize], k: usize) -> Vec<Vec<usize>> {
    let (base, extra) = (rows.len() / k, rows.len() % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for c in 0..k {
        let size = base + usize::from(c < extra);
        out.push(rows[start..start + size].to_vec());
        start += size;
    }
    out
}

pub fn partition_iid(n_rows: usize, k: usize, seed: u64) -> Result<Vec<ClientShard>, PartitionError> {
    check_clients(n_rows, k)?;
    let mut rows: Vec<usize> = (0..n_rows).collect();
    rows.shuffle(&mut stream(seed, Purpose::Partition, 0, 0));
    Ok(contiguous_chunks(&rows, k)
        .into_iter()
        .enumerate()
        .map(|(client_id, row_indices)| ClientShard { client_id, row_indices })
        .collect())
}

/// Row indices grouped by ascending label, each group in seeded random order.
fn label_sorted_rows(labels: &[u8], seed: u64) -> Result<Vec<usize>, PartitionError> {
    let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (row, &label) in labels.iter().enumerate() {
        match label {
            0 | 1 => groups[label as usize].push(row),
            _ => return Err(PartitionError::BadLabel { row, label }),
        }
    }
    let mut rng = stream(seed, Purpose::Partition, 1, 0);
    for group in &mut groups {
        group.shuffle(&mut rng);
    }
    let [mut zeros, ones] = groups;
    zeros.extend(ones);
    Ok(zeros)
}

pub fn partition_noniid(
    labels: &[u8],
    k: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<Vec<ClientShard>, PartitionError> {
    if k == 0 {
        return Err(PartitionError::NoClients);
    }
    if shards_per_client == 0 {
        return Err(PartitionError::NoShards);
    }
    let n_shards = k * shards_per_client;
    if labels.len() < n_shards {
        return Err(PartitionError::TooFewRowsForShards { rows: labels.len(), shards: n_shards });
    }
    let sorted = label_sorted_rows(labels, seed)?;
    let shards = contiguous_chunks(&sorted, n_shards);
    let mut order: Vec<usize> = (0..n_shards).collect();
    order.shuffle(&mut stream(seed, Purpose::Partition, 2, 0));
    Ok(order
        .chunks(shards_per_client)
        .enumerate()
        .map(|(client_id, picks)| ClientShard {
            client_id,
            row_indices: picks.iter().flat_map(|&s| shards[s].iter().copied()).collect(),
        })
        .collect())
}

/// Stratified equal split: label-sorted rows dealt round-robin, so client
/// sizes and per-label counts each differ by at most one.
pub fn partition_proportional(labels: &[u8], k: usize, seed: u64) -> Result<Vec<ClientShard>, PartitionError> {
    check_clients(labels.len(), k)?;
    let sorted = label_sorted_rows(labels, seed)?;
    let mut shards: Vec<ClientShard> =
        (0..k).map(|client_id| ClientShard { client_id, row_indices: Vec::new() }).collect();
    for (i, row) in sorted.into_iter().enumerate() {
        shards[i % k].row_indices.push(row);
    }
    Ok(shards)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientComposition {
    pub client: usize,
    pub total: usize,
    pub label0: usize,
    pub label1: usize,
}

/// Per-client label composition of a partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub clients: Vec<ClientComposition>,
}

pub fn partition_report(shards: &[ClientShard], labels: &[u8]) -> Result<PartitionReport, PartitionError> {
    let mut clients = Vec::with_capacity(shards.len());
    for shard in shards {
        let mut counts = [0usize; 2];
        for &index in &shard.row_indices {
            let label = *labels.get(index).ok_or(PartitionError::IndexOutOfRange {
                client: shard.client_id,
                index,
                rows: labels.len(),
            })?;
            if label > 1 {
                return Err(PartitionError::BadLabel { row: index, label });
            }
            counts[label as usize] += 1;
        }
        clients.push(ClientComposition {
            client: shard.client_id,
            total: shard.len(),
            label0: counts[0],
            label1: counts[1],
        });
    }
    Ok(PartitionReport { clients })
}

impl PartitionReport {
    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.total).collect()
    }

    /// Column sums `(total, label0, label1)`.
    pub fn totals(&self) -> (usize, usize, usize) {
        self.clients.iter().fold((0, 0, 0), |(t, a, b), c| (t + c.total, a + c.label0, b + c.label1))
    }

    /// `client,total,label0,label1`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "client,total,label0,label1")?;
        for c in &self.clients {
            writeln!(w, "{},{},{},{}", c.client, c.total, c.label0, c.label1)?;
        }
        Ok(())
    }
}

impl fmt::Display for PartitionReport {
    /// Aligned table, one line per client, e.g.
    /// `Client 0  12696 (Label 0: 11643, Label 1: 1053)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id_w = self.clients.iter().map(|c| c.client.to_string().len()).max().unwrap_or(1);
        let tot_w = self.clients.iter().map(|c| c.total.to_string().len()).max().unwrap_or(1);
        let l0_w = self.clients.iter().map(|c| c.label0.to_string().len()).max().unwrap_or(1);
        let l1_w = self.clients.iter().map(|c| c.label1.to_string().len()).max().unwrap_or(1);
        for c in &self.clients {
            writeln!(
                f,
                "Client {:<id_w$}  {:>tot_w$} (Label 0: {:>l0_w$}, Label 1: {:>l1_w$})",
                c.client, c.total, c.label0, c.label1
            )?;
        }
        Ok(())
    }
}
