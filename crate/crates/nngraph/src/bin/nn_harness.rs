//! Experiment CLI: dataset generation, batch runs, scaling sweeps,
//! re-aggregation, and dataset validation.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 learner
//! failures beyond the configured failure budget.

use clap::{Parser, Subcommand};
use nngraph::bounds::ConfidencePolicy;
use nngraph::harness::{
    aggregate, build_dataset, run_experiment, run_sweep, summary_csv, sweep_csv, DatasetSpec,
    ExperimentConfig, HarnessError, SweepConfig, TrialRecord,
};
use nngraph::metric::{quasi_metric_constant, true_nn_graph, Dataset};
use nngraph::oracles::check_cluster_condition;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Environment variable overriding the output directory; everything
/// else must live in the config so the manifest stays complete.
const OUT_ENV: &str = "NN_HARNESS_OUT";

#[derive(Parser)]
#[command(name = "nn-harness", about = "Nearest-neighbor-graph learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file from a generator spec (JSON).
    Generate {
        /// Path to a dataset spec JSON document.
        #[arg(long)]
        spec: PathBuf,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Failure budget used by separation-aware generators.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
    /// Run a batch experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: results/<name>; NN_HARNESS_OUT
        /// overrides).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a size sweep and fit scaling exponents.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute aggregates from a persisted trial stream.
    Analyze {
        /// Directory holding manifest.json and trials.ndjson.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Check a dataset file: metric or quasi-metric structure and,
    /// when labels are present, the cluster-separation condition.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
}

fn out_dir(cli_choice: Option<PathBuf>, default_name: &str) -> PathBuf {
    if let Ok(dir) = std::env::var(OUT_ENV) {
        return PathBuf::from(dir);
    }
    cli_choice.unwrap_or_else(|| Path::new("results").join(default_name))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let raw = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&raw)?)
}

fn generate(spec: &Path, out: &Path, seed: u64, delta: f64) -> Result<(), HarnessError> {
    let spec: DatasetSpec = read_json(spec)?;
    // Generators that need a policy only use its one-sample radius; n is
    // not known before generation, so derive it from the spec shape.
    let n_hint = match &spec {
        DatasetSpec::SeparatedClusters { clusters, points_per_cluster, .. } => {
            clusters * points_per_cluster
        }
        DatasetSpec::Hierarchical { levels, leaf_size, .. } => (1usize << levels) * leaf_size,
        _ => 2,
    };
    let policy = ConfidencePolicy::hoeffding(delta, n_hint.max(2));
    let dataset = build_dataset(&spec, &policy, seed)?;
    std::fs::write(out, serde_json::to_string_pretty(&dataset.to_json())?)?;
    println!("wrote {} ({} points)", out.display(), dataset.n());
    Ok(())
}

fn run(config_path: &Path, out: Option<PathBuf>) -> Result<bool, HarnessError> {
    let config: ExperimentConfig = read_json(config_path)?;
    let dir = out_dir(out, &config.name);
    let summary = run_experiment(&config, &dir)?;
    for alg in &summary.per_algorithm {
        println!(
            "{:?}: wrong-trial fraction {:.3}, mean total queries {:.0}, failures {}",
            alg.algorithm, alg.wrong_trial_fraction, alg.mean_total_queries, alg.failures
        );
    }
    println!("results in {}", dir.display());
    Ok(summary.failure_budget_exceeded)
}

fn sweep(config_path: &Path, out: Option<PathBuf>) -> Result<(), HarnessError> {
    let config: SweepConfig = read_json(config_path)?;
    let dir = out_dir(out, &config.name);
    let summary = run_sweep(&config)?;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&summary)?)?;
    std::fs::write(dir.join("sweep.csv"), sweep_csv(&summary))?;
    for f in &summary.fits {
        println!(
            "{:?}: slope {:.3} [{:.3}, {:.3}]; log-adjusted {:.3}",
            f.algorithm, f.fit.slope, f.fit.slope_lo95, f.fit.slope_hi95, f.log_adjusted.slope
        );
    }
    println!("results in {}", dir.display());
    Ok(())
}

fn analyze(dir: &Path) -> Result<bool, HarnessError> {
    let manifest: serde_json::Value = read_json(&dir.join("manifest.json"))?;
    let config: ExperimentConfig = serde_json::from_value(manifest["config"].clone())?;
    let n = manifest["dataset"]["n"]
        .as_u64()
        .ok_or_else(|| HarnessError::Config("manifest lacks dataset.n".into()))?
        as usize;
    let raw = std::fs::read_to_string(dir.join("trials.ndjson"))?;
    let records: Vec<TrialRecord> = raw
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let summary = aggregate(&config.name, n, config.delta, config.trials, &records);
    std::fs::write(dir.join("errors.csv"), summary_csv(&summary))?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    for alg in &summary.per_algorithm {
        println!(
            "{:?}: wrong-trial fraction {:.3}, failures {}",
            alg.algorithm, alg.wrong_trial_fraction, alg.failures
        );
        for stat in &alg.curve {
            println!(
                "  budget {:>8}: error {:.4} [{:.4}, {:.4}]",
                stat.budget, stat.mean_error, stat.lo95, stat.hi95
            );
        }
    }
    Ok(summary.failure_budget_exceeded)
}

fn validate(path: &Path, delta: f64) -> Result<(), HarnessError> {
    let raw: serde_json::Value = read_json(path)?;
    // Strict parse first; fall back to the quasi-metric reading.
    let (dataset, metric) = match Dataset::from_json(raw.clone(), true) {
        Ok(ds) => (ds, true),
        Err(_) => (Dataset::from_json(raw, false)?, false),
    };
    let n = dataset.n();
    println!("{} points, triangle inequality {}", n, if metric { "holds" } else { "violated" });
    match quasi_metric_constant(&dataset) {
        Ok(c) => println!("quasi-metric constant {c:.4}"),
        Err(e) => println!("quasi-metric constant unavailable: {e}"),
    }
    match true_nn_graph(&dataset) {
        Ok(_) => println!("nearest neighbors are unique"),
        Err(e) => println!("warning: {e}"),
    }
    if let Some(labels) = dataset.labels() {
        let policy = ConfidencePolicy::hoeffding(delta, n);
        let check = check_cluster_condition(&dataset, labels, &policy);
        if check.pass {
            println!("cluster-separation condition holds at delta={delta}");
        } else {
            println!(
                "cluster-separation condition fails ({} witnesses, first {:?})",
                check.failures.len(),
                check.failures.first()
            );
        }
    }
    if !metric {
        return Err(HarnessError::Config("dataset violates the triangle inequality".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<bool, HarnessError> = match cli.command {
        Command::Generate { spec, out, seed, delta } => {
            generate(&spec, &out, seed, delta).map(|_| false)
        }
        Command::Run { config, out } => run(&config, out),
        Command::Sweep { config, out } => sweep(&config, out).map(|_| false),
        Command::Analyze { dir } => analyze(&dir),
        Command::Validate { dataset, delta } => validate(&dataset, delta).map(|_| false),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("error: learner failures exceeded the failure budget");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
