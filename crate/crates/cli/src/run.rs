use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gridfed::cost::{CostReport, BYTES_F32, BYTES_F64};
use gridfed::dataio::{load_csv, save_csv, Dataset};
use gridfed::fed::{write_rounds_csv, Federation};
use gridfed::metrics::{predict, write_predictions_csv, write_roc_csv};
use gridfed::nn::write_checkpoint;
use gridfed::pipeline::{prepare, PrepOptions};

use crate::args::{CostArgs, GenArgs, ReplayArgs, RunArgs};
use crate::manifest::{
    read_manifest, sha256_file, CostSummary, DataSource, DatasetSummary, MetricsPercent, RunManifest, RunSpec, Summary,
};
use crate::{CliError, Result};

pub const ARTIFACTS: [&str; 6] = ["rounds.csv", "roc.csv", "preds.csv", "partition.csv", "summary.json", "model.fmlp"];

pub fn spec_from_args(args: &RunArgs) -> Result<RunSpec> {
    let data = match &args.data {
        Some(path) => DataSource::Csv { path: path.display().to_string(), sha256: sha256_file(path)? },
        None => DataSource::Synthetic(args.generator.synthetic_config(args.seed)),
    };
    Ok(RunSpec {
        config: args.fed_config(),
        data,
        preprocessing: PrepOptions {
            normalize_before_split: args.normalize_before_split,
            seed: args.seed,
            ..Default::default()
        },
    })
}

fn load(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic(cfg) => Ok(cfg.generate()?),
        DataSource::Csv { path, sha256 } => {
            let actual = sha256_file(Path::new(path))?;
            if &actual != sha256 {
                return Err(CliError::Replay(format!("{path} has checksum {actual}, manifest expects {sha256}")));
            }
            Ok(load_csv(path)?)
        }
    }
}

fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir).map_err(CliError::io(dir))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::OutputExists(dir.display().to_string()));
        }
    }
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(CliError::io(path))?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(CliError::io(path))
}

/// Runs the full pipeline for `spec` and writes every output into `out`.
pub fn execute(spec: &RunSpec, threads: u64, out: &Path, force: bool, quiet: bool) -> Result<RunManifest> {
    spec.config.validate()?;
    prepare_output_dir(out, force)?;
    let data = load(&spec.data)?;
    let prep = prepare(&data, &spec.preprocessing)?;
    let cfg = &spec.config;

    let federation = Federation::new(cfg.clone(), &prep.train, &prep.test).threads(threads as usize);
    let outcome = federation.run_with(|log| {
        if !quiet {
            println!(
                "round {:>3}  lr {:.6}  test_loss {:.5}  acc {:.4}  auc {:.4}",
                log.round, log.lr, log.test_loss, log.metrics.accuracy, log.metrics.auc
            );
        }
    })?;
    let last = outcome.logs.last().expect("at least one round");
    if !last.test_loss.is_finite() || !outcome.final_params.is_finite() {
        return Err(CliError::NonFinite(format!("final test loss {}", last.test_loss)));
    }

    write_with(&out.join("rounds.csv"), |w| write_rounds_csv(&outcome.logs, w))?;
    write_with(&out.join("roc.csv"), |w| write_roc_csv(&last.metrics.roc_points, w))?;
    let predictions = predict(&outcome.final_params, &prep.test)?;
    write_with(&out.join("preds.csv"), |w| write_predictions_csv(&predictions, w))?;
    write_with(&out.join("partition.csv"), |w| outcome.partition.write_csv(w))?;
    {
        let path = out.join("model.fmlp");
        write_checkpoint(&outcome.final_params, create(&path)?)?;
    }

    let shard_sizes: Vec<u64> = outcome.shards.iter().map(|s| s.len() as u64).collect();
    let d = prep.train.n_features() as u64;
    let (r, k) = (cfg.rounds as u64, cfg.k_clients as u64);
    let summary = Summary {
        spec: spec.clone(),
        dataset: DatasetSummary {
            rows: data.n_rows(),
            features: data.n_features(),
            missing_cells: data.missing_count(),
            train_rows: prep.train.n_rows(),
            test_rows: prep.test.n_rows(),
            train_label_counts: prep.train.class_counts(),
            test_label_counts: prep.test.class_counts(),
        },
        partition_mode: cfg.partition_mode.to_string(),
        partition: outcome.partition.clone(),
        rounds_completed: outcome.logs.len(),
        final_test_loss: last.test_loss,
        final_metrics: last.metrics.clone(),
        final_metrics_percent: MetricsPercent::from(&last.metrics),
        cost: CostSummary {
            float32: CostReport::new(r, k, d, BYTES_F32, &shard_sizes)?,
            float64: CostReport::new(r, k, d, BYTES_F64, &shard_sizes)?,
        },
    };
    write_with(&out.join("summary.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;

    let mut artifacts = BTreeMap::new();
    for name in ARTIFACTS {
        artifacts.insert(name.to_string(), sha256_file(&out.join(name))?);
    }
    let manifest = RunManifest {
        tool: "gridfed".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        spec: spec.clone(),
        threads,
        output_dir: out.display().to_string(),
        artifacts,
        created_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    write_with(&out.join("manifest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)
    })?;

    if !quiet {
        print!("\n{}", outcome.partition);
        print!("\n{}", summary.cost.float32);
        println!("\nwrote {}", out.display());
    }
    Ok(manifest)
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let spec = spec_from_args(args)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(spec.default_output_dir()));
    execute(&spec, args.threads, &out, args.force, false)?;
    Ok(())
}

pub fn cmd_cost(args: &CostArgs) -> Result<()> {
    let sizes = match args.train_rows {
        // Any split across clients gives the same centralized total.
        Some(rows) => vec![rows],
        None => Vec::new(),
    };
    let report = CostReport::new(args.rounds, args.clients, args.features, args.bytes_per_param, &sizes)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(())
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let data = args.generator.synthetic_config(args.seed).generate()?;
    save_csv(&data, &args.out)?;
    println!("wrote {} rows x {} features to {}", data.n_rows(), data.n_features(), args.out.display());
    Ok(())
}

/// Re-runs a manifest and compares every artifact checksum.
pub fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    let original = read_manifest(&args.manifest)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}-replay", original.output_dir)));
    let replayed = execute(&original.spec, original.threads, &out, args.force, true)?;
    let mismatched: Vec<&String> = original
        .artifacts
        .iter()
        .filter(|(name, sum)| replayed.artifacts.get(*name) != Some(sum))
        .map(|(name, _)| name)
        .collect();
    if !mismatched.is_empty() {
        return Err(CliError::Replay(format!("outputs differ: {mismatched:?}")));
    }
    println!(
        "replay of {} reproduced {} artifacts in {}",
        args.manifest.display(),
        replayed.artifacts.len(),
        out.display()
    );
    Ok(())
}
