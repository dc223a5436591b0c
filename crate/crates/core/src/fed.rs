//! Federated training rounds: local SGD on every client, optional Gaussian
//! perturbation of the local models, server-side averaging, evaluation.
//!
//! Each round `r = 1..=R` trains at `lr0 * gamma^(r-1)`, so the first round
//! uses exactly `lr0`. Client `k` in round `r` draws its minibatch order from
//! `stream(seed, Train, r, k)` and its noise from `stream(seed, Noise, r, k)`,
//! and client results are averaged in client-id order. Together these make a
//! run bit-identical however the clients are scheduled.

use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{fl_cost, CostError, BYTES_F64};
use crate::dataio::{DataError, Dataset};
use crate::format_real;
use crate::metrics::{evaluate, Metrics, MetricsError};
use crate::nn::{backward, forward, init_params, MlpParams, NnError};
use crate::partition::{
    partition_iid, partition_noniid, partition_proportional, partition_report, ClientShard, PartitionError,
    PartitionReport,
};
use crate::rng::{stream, Purpose, Stream};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("partition: {0}")]
    Partition(#[from] PartitionError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Nn(#[from] NnError),
    #[error("evaluation: {0}")]
    Metrics(#[from] MetricsError),
    #[error("cost: {0}")]
    Cost(#[from] CostError),
    #[error("client {client} has no rows to train on")]
    EmptyShard { client: usize },
    #[error("parameters became non-finite in round {round}")]
    Diverged { round: usize },
    #[error("aggregation: {0}")]
    Aggregation(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, FedError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    #[default]
    Iid,
    /// Sort-by-label shards, `shards_per_client` per client.
    NoniidShards,
    /// Stratified equal split: every client gets nearly equal label counts.
    NoniidProportional,
}

impl PartitionMode {
    pub const ALL: [PartitionMode; 3] = [Self::Iid, Self::NoniidShards, Self::NoniidProportional];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Iid => "iid",
            Self::NoniidShards => "noniid_shards",
            Self::NoniidProportional => "noniid_proportional",
        }
    }
}

impl std::fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PartitionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown partition mode {s:?} (expected iid, noniid_shards or noniid_proportional)"))
    }
}

/// Hyperparameters of a federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub k_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub noise_std: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub partition_mode: PartitionMode,
    pub shards_per_client: usize,
    pub weighted_avg: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            k_clients: 3,
            rounds: 80,
            local_epochs: 3,
            lr0: 0.01,
            lr_decay: 0.99,
            noise_std: 0.0,
            batch_size: 64,
            seed: 0,
            partition_mode: PartitionMode::Iid,
            shards_per_client: 2,
            weighted_avg: false,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(FedError::Config(msg));
        if self.k_clients == 0 {
            return fail("k_clients must be at least 1".into());
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("lr_decay {} not in (0, 1]", self.lr_decay));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std {} must be a nonnegative real", self.noise_std));
        }
        if self.shards_per_client == 0 {
            return fail("shards_per_client must be at least 1".into());
        }
        Ok(())
    }

    /// Client shards over the rows of a training set with these labels.
    pub fn partition(&self, labels: &[u8]) -> Result<Vec<ClientShard>> {
        Ok(match self.partition_mode {
            PartitionMode::Iid => partition_iid(labels.len(), self.k_clients, self.seed)?,
            PartitionMode::NoniidShards => partition_noniid(labels, self.k_clients, self.shards_per_client, self.seed)?,
            PartitionMode::NoniidProportional => partition_proportional(labels, self.k_clients, self.seed)?,
        })
    }
}

/// `lr0 * gamma^r`; `r = 0` is the first round.
pub fn lr_schedule(lr0: f64, gamma: f64, r: usize) -> f64 {
    lr0 * gamma.powi(r as i32)
}

/// Runs `epochs` passes of minibatch SGD over the shard rows, reshuffled each
/// pass. The final short batch is kept. Returns the trained parameters and
/// the mean batch loss of the last epoch, NaN when `epochs == 0`.
pub fn local_train(
    start: &MlpParams,
    rows: &[usize],
    train: &Dataset,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut Stream,
) -> Result<(MlpParams, f64)> {
    if epochs == 0 {
        return Ok((start.clone(), f64::NAN));
    }
    if rows.is_empty() {
        return Err(FedError::EmptyShard { client: usize::MAX });
    }
    if batch_size == 0 {
        return Err(FedError::Config("batch_size must be at least 1".into()));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= train.n_rows()) {
        return Err(FedError::Config(format!("row {bad} out of range for {} training rows", train.n_rows())));
    }
    let mut params = start.clone();
    let mut order = rows.to_vec();
    let mut inputs = Vec::with_capacity(batch_size * train.n_features());
    let mut labels = Vec::with_capacity(batch_size);
    let mut epoch_loss = 0.0;
    for _ in 0..epochs {
        order.shuffle(rng);
        epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(batch_size) {
            train.gather_rows(batch, &mut inputs);
            labels.clear();
            labels.extend(batch.iter().map(|&r| train.labels()[r]));
            let out = forward(&params, &inputs)?;
            epoch_loss += out.loss(&labels)?;
            let grads = backward(&params, &out, &labels)?;
            params.descend(&grads, lr);
            batches += 1;
        }
        epoch_loss /= batches as f64;
    }
    Ok((params, epoch_loss))
}

/// Adds i.i.d. `N(0, sigma^2)` to every parameter, in flatten order. With
/// `sigma == 0` the input is returned unchanged and `rng` is not touched.
pub fn add_gaussian_noise(params: &MlpParams, sigma: f64, rng: &mut Stream) -> Result<MlpParams> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(FedError::Config(format!("noise standard deviation {sigma} must be a nonnegative real")));
    }
    let mut out = params.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    for x in out.values_mut() {
        *x += normal.sample(rng);
    }
    Ok(out)
}

/// Elementwise mean of the client models, unweighted unless `weights` is
/// given. Computed as `first + sum_k w_k (theta_k - first) / sum_k w_k`, which
/// is the plain mean up to rounding and returns identical inputs exactly.
/// Clients are summed in slice order.
pub fn fedavg(client_params: &[MlpParams], weights: Option<&[f64]>) -> Result<MlpParams> {
    let first = client_params.first().ok_or_else(|| FedError::Aggregation("no client models".into()))?;
    for p in &client_params[1..] {
        first.check_congruent(p)?;
    }
    let weights: Vec<f64> = match weights {
        None => vec![1.0; client_params.len()],
        Some(w) => {
            if w.len() != client_params.len() {
                return Err(FedError::Aggregation(format!(
                    "{} weights for {} client models",
                    w.len(),
                    client_params.len()
                )));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().all(|&x| x == 0.0) {
                return Err(FedError::Aggregation("weights must be nonnegative, finite and not all zero".into()));
            }
            w.to_vec()
        }
    };
    let total: f64 = weights.iter().sum();
    let mut out = first.clone();
    let mut sums: Vec<Vec<f64>> = first.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for (p, &w) in client_params.iter().zip(&weights) {
        for ((acc, t), base) in sums.iter_mut().zip(p.tensors()).zip(first.tensors()) {
            for ((a, x), b) in acc.iter_mut().zip(t).zip(base) {
                *a += w * (x - b);
            }
        }
    }
    for (o, acc) in out.tensors_mut().into_iter().zip(&sums) {
        for (x, a) in o.iter_mut().zip(acc) {
            *x += a / total;
        }
    }
    Ok(out)
}

/// Per-round record of a federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub lr: f64,
    /// Mean last-epoch batch loss of each client, by client id.
    pub client_losses: Vec<f64>,
    pub test_loss: f64,
    pub metrics: Metrics,
    /// Bytes exchanged through this round at 8 bytes per parameter.
    pub cumulative_comm_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub final_params: MlpParams,
    pub logs: Vec<RoundLog>,
    pub shards: Vec<ClientShard>,
    pub partition: PartitionReport,
}

/// Order in which sequentially executed clients are visited. Only useful for
/// demonstrating that the result does not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClientOrder {
    #[default]
    Ascending,
    Descending,
}

/// A configured federated run.
///
/// ```no_run
/// # use gridfed::fed::{FedConfig, Federation};
/// # fn demo(train: &gridfed::Dataset, test: &gridfed::Dataset) -> gridfed::fed::Result<()> {
/// let outcome = Federation::new(FedConfig::default(), train, test).threads(4).run()?;
/// println!("final AUC {}", outcome.logs.last().unwrap().metrics.auc);
/// # Ok(()) }
/// ```
pub struct Federation<'a> {
    config: FedConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    shards: Option<Vec<ClientShard>>,
    shared_streams: bool,
    threads: usize,
    order: ClientOrder,
}

impl<'a> Federation<'a> {
    pub fn new(config: FedConfig, train: &'a Dataset, test: &'a Dataset) -> Self {
        Self { config, train, test, shards: None, shared_streams: false, threads: 1, order: ClientOrder::Ascending }
    }

    /// Uses these shards instead of partitioning per the config. Shards must
    /// be numbered `0..k_clients`.
    pub fn with_shards(mut self, shards: Vec<ClientShard>) -> Self {
        self.shards = Some(shards);
        self
    }

    /// Gives every client the streams of client 0, so clients holding the
    /// same rows train identically.
    pub fn shared_client_streams(mut self) -> Self {
        self.shared_streams = true;
        self
    }

    /// Upper bound on concurrently trained clients; 1 runs them in sequence.
    pub fn threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn client_order(mut self, order: ClientOrder) -> Self {
        self.order = order;
        self
    }

    pub fn run(self) -> Result<FedOutcome> {
        self.run_with(|_| {})
    }

    /// Runs all rounds, handing each round's log to `observe` as it completes.
    pub fn run_with(self, mut observe: impl FnMut(&RoundLog)) -> Result<FedOutcome> {
        let cfg = &self.config;
        cfg.validate()?;
        if self.train.n_features() != self.test.n_features() {
            return Err(FedError::Data(DataError::DimensionMismatch {
                expected: self.train.n_features(),
                found: self.test.n_features(),
            }));
        }
        let shards = match &self.shards {
            Some(s) => s.clone(),
            None => cfg.partition(self.train.labels())?,
        };
        if shards.len() != cfg.k_clients || shards.iter().enumerate().any(|(i, s)| s.client_id != i) {
            return Err(FedError::Config(format!("expected shards numbered 0..{}", cfg.k_clients)));
        }
        let partition = partition_report(&shards, self.train.labels())?;
        if cfg.local_epochs > 0 {
            if let Some(s) = shards.iter().find(|s| s.is_empty()) {
                return Err(FedError::EmptyShard { client: s.client_id });
            }
        }
        let weights: Option<Vec<f64>> = cfg.weighted_avg.then(|| shards.iter().map(|s| s.len() as f64).collect());
        let params_per_model = init_params(self.train.n_features(), cfg.seed);
        let param_count = params_per_model.param_count() as u64;
        let pool = self.thread_pool()?;

        let mut global = params_per_model;
        let mut logs = Vec::with_capacity(cfg.rounds);
        for round in 1..=cfg.rounds {
            let lr = lr_schedule(cfg.lr0, cfg.lr_decay, round - 1);
            let results = self.train_clients(&pool, &shards, &global, round, lr)?;
            let (models, client_losses): (Vec<MlpParams>, Vec<f64>) = results.into_iter().unzip();
            global = fedavg(&models, weights.as_deref())?;
            if !global.is_finite() {
                return Err(FedError::Diverged { round });
            }
            let (metrics, test_loss) = evaluate(&global, self.test)?;
            let log = RoundLog {
                round,
                lr,
                client_losses,
                test_loss,
                metrics,
                cumulative_comm_bytes: fl_cost(round as u64, cfg.k_clients as u64, param_count, BYTES_F64)?,
            };
            observe(&log);
            logs.push(log);
        }
        Ok(FedOutcome { final_params: global, logs, shards, partition })
    }

    fn client_task(&self, shard: &ClientShard, global: &MlpParams, round: usize, lr: f64) -> Result<(MlpParams, f64)> {
        let cfg = &self.config;
        let key = if self.shared_streams { 0 } else { shard.client_id as u64 };
        let mut train_rng = stream(cfg.seed, Purpose::Train, round as u64, key);
        let (local, loss) =
            local_train(global, &shard.row_indices, self.train, cfg.local_epochs, lr, cfg.batch_size, &mut train_rng)
                .map_err(|e| match e {
                FedError::EmptyShard { .. } => FedError::EmptyShard { client: shard.client_id },
                other => other,
            })?;
        let mut noise_rng = stream(cfg.seed, Purpose::Noise, round as u64, key);
        Ok((add_gaussian_noise(&local, cfg.noise_std, &mut noise_rng)?, loss))
    }

    #[cfg(feature = "parallel")]
    fn thread_pool(&self) -> Result<Option<rayon::ThreadPool>> {
        if self.threads <= 1 {
            return Ok(None);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map(Some)
            .map_err(|e| FedError::ThreadPool(e.to_string()))
    }

    #[cfg(not(feature = "parallel"))]
    fn thread_pool(&self) -> Result<Option<()>> {
        Ok(None)
    }

    #[cfg(feature = "parallel")]
    fn train_clients(
        &self,
        pool: &Option<rayon::ThreadPool>,
        shards: &[ClientShard],
        global: &MlpParams,
        round: usize,
        lr: f64,
    ) -> Result<Vec<(MlpParams, f64)>> {
        use rayon::prelude::*;
        match pool {
            Some(pool) => pool.install(|| {
                shards.par_iter().map(|s| self.client_task(s, global, round, lr)).collect::<Result<Vec<_>>>()
            }),
            None => self.train_sequential(shards, global, round, lr),
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn train_clients(
        &self,
        _pool: &Option<()>,
        shards: &[ClientShard],
        global: &MlpParams,
        round: usize,
        lr: f64,
    ) -> Result<Vec<(MlpParams, f64)>> {
        self.train_sequential(shards, global, round, lr)
    }

    fn train_sequential(
        &self,
        shards: &[ClientShard],
        global: &MlpParams,
        round: usize,
        lr: f64,
    ) -> Result<Vec<(MlpParams, f64)>> {
        let mut slots: Vec<Option<(MlpParams, f64)>> = vec![None; shards.len()];
        let visit: Box<dyn Iterator<Item = usize>> = match self.order {
            ClientOrder::Ascending => Box::new(0..shards.len()),
            ClientOrder::Descending => Box::new((0..shards.len()).rev()),
        };
        for i in visit {
            slots[i] = Some(self.client_task(&shards[i], global, round, lr)?);
        }
        Ok(slots.into_iter().map(|s| s.expect("every client visited")).collect())
    }
}

pub fn run_federated(config: &FedConfig, train: &Dataset, test: &Dataset) -> Result<FedOutcome> {
    Federation::new(config.clone(), train, test).run()
}

/// Header of `rounds.csv` for `k` clients.
pub fn rounds_csv_header(k: usize) -> String {
    let mut cols = vec!["round".to_string(), "lr".to_string()];
    cols.extend((0..k).map(|c| format!("loss_client_{c}")));
    cols.extend(
        ["test_loss", "accuracy", "precision", "recall", "f1_weighted", "auc", "cum_comm_bytes"].map(String::from),
    );
    cols.join(",")
}

pub fn write_rounds_csv<W: Write>(logs: &[RoundLog], mut w: W) -> std::io::Result<()> {
    let k = logs.first().map_or(0, |l| l.client_losses.len());
    writeln!(w, "{}", rounds_csv_header(k))?;
    for log in logs {
        let mut fields = vec![log.round.to_string(), format_real(log.lr)];
        fields.extend(log.client_losses.iter().map(|&l| format_real(l)));
        let m = &log.metrics;
        fields.extend([log.test_loss, m.accuracy, m.precision, m.recall, m.f1_weighted, m.auc].map(format_real));
        fields.push(log.cumulative_comm_bytes.to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// One parsed line of `rounds.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub lr: f64,
    pub client_losses: Vec<f64>,
    pub test_loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_weighted: f64,
    pub auc: f64,
    pub cum_comm_bytes: u64,
}

pub fn read_rounds_csv<R: BufRead>(r: R) -> std::result::Result<Vec<RoundRow>, String> {
    let mut lines = r.lines();
    let header = lines.next().ok_or("empty rounds file")?.map_err(|e| e.to_string())?;
    let n_cols = header.split(',').count();
    if n_cols < 9 || header != rounds_csv_header(n_cols - 9) {
        return Err(format!("unexpected header {header:?}"));
    }
    let k = n_cols - 9;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let f: Vec<&str> = line.split(',').collect();
        let err = |e: &dyn std::fmt::Display| format!("line {}: {e}", i + 2);
        if f.len() != n_cols {
            return Err(err(&format!("{} fields, expected {n_cols}", f.len())));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|e| err(&e));
        rows.push(RoundRow {
            round: f[0].parse().map_err(|e| err(&e))?,
            lr: real(f[1])?,
            client_losses: f[2..2 + k].iter().map(|s| real(s)).collect::<std::result::Result<_, _>>()?,
            test_loss: real(f[2 + k])?,
            accuracy: real(f[3 + k])?,
            precision: real(f[4 + k])?,
            recall: real(f[5 + k])?,
            f1_weighted: real(f[6 + k])?,
            auc: real(f[7 + k])?,
            cum_comm_bytes: f[8 + k].parse().map_err(|e| err(&e))?,
        });
    }
    Ok(rows)
}
