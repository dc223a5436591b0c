use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gridfed::dataio::SyntheticConfig;
use gridfed::fed::{FedConfig, PartitionMode};

#[derive(Debug, Parser)]
#[command(name = "gridfed", version, about = "Federated energy-theft detection simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Preprocess data, train federated, and write logs, reports and the model.
    Run(RunArgs),
    /// Print the communication cost report without training.
    Cost(CostArgs),
    /// Write a synthetic consumption dataset as CSV.
    Gen(GenArgs),
    /// Re-run an experiment from its manifest.json and check the outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    /// Customers (rows).
    #[arg(long, default_value_t = SyntheticConfig::default().rows)]
    pub rows: usize,
    /// Days of readings per customer (feature columns).
    #[arg(long, default_value_t = SyntheticConfig::default().features)]
    pub features: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().theft_rate)]
    pub theft_rate: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().missing_rate)]
    pub missing_rate: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// CSV file with a `label` column.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use the synthetic generator (the default when --data is absent).
    #[arg(long)]
    pub synthetic: bool,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, default_value_t = FedConfig::default().k_clients as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub clients: u64,
    #[arg(long, default_value_t = FedConfig::default().rounds as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub rounds: u64,
    #[arg(long, default_value_t = FedConfig::default().local_epochs)]
    pub epochs: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = FedConfig::default().lr0)]
    pub lr: f64,
    /// Per-round learning rate decay factor.
    #[arg(long, default_value_t = FedConfig::default().lr_decay)]
    pub lr_decay: f64,
    /// Standard deviation of the Gaussian noise added to local models (0 = off).
    #[arg(long, default_value_t = FedConfig::default().noise_std)]
    pub noise_std: f64,
    #[arg(long, default_value_t = FedConfig::default().batch_size as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = PartitionMode::Iid)]
    pub partition: PartitionMode,
    #[arg(long, default_value_t = FedConfig::default().shards_per_client)]
    pub shards_per_client: usize,
    /// Weight client models by shard size when averaging.
    #[arg(long)]
    pub weighted_avg: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum number of clients trained concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: u64,
    /// Output directory [default: runs/seed<seed>-<config hash>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Allow writing into an existing non-empty directory.
    #[arg(long)]
    pub force: bool,
    /// Fit imputation and normalization on all rows before the train/test split.
    #[arg(long)]
    pub normalize_before_split: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    #[arg(short = 'R', long, value_parser = clap::value_parser!(u64).range(1..))]
    pub rounds: u64,
    #[arg(short = 'K', long, value_parser = clap::value_parser!(u64).range(1..))]
    pub clients: u64,
    /// Input features d.
    #[arg(short = 'd', long, value_parser = clap::value_parser!(u64).range(1..))]
    pub features: u64,
    #[arg(short = 'B', long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub bytes_per_param: u64,
    /// Training rows across all clients, for the centralized comparison.
    #[arg(long)]
    pub train_rows: Option<u64>,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Path to a manifest.json written by `run`.
    pub manifest: PathBuf,
    /// Output directory [default: <original output>-replay].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

impl GeneratorArgs {
    pub fn synthetic_config(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            rows: self.rows,
            features: self.features,
            theft_rate: self.theft_rate,
            missing_rate: self.missing_rate,
            seed,
        }
    }
}

impl RunArgs {
    pub fn fed_config(&self) -> FedConfig {
        FedConfig {
            k_clients: self.clients as usize,
            rounds: self.rounds as usize,
            local_epochs: self.epochs,
            lr0: self.lr,
            lr_decay: self.lr_decay,
            noise_std: self.noise_std,
            batch_size: self.batch_size as usize,
            seed: self.seed,
            partition_mode: self.partition,
            shards_per_client: self.shards_per_client,
            weighted_avg: self.weighted_avg,
        }
    }
}
