//! Batch experiment runner: seeded multi-trial execution, error-rate
//! traces, scaling fits, and result persistence.

use crate::algorithms::{
    ann_baseline, anneasy, anntri, random_baseline, triangulation_baseline, Algorithm,
    NoopObserver, RunConfig, RunError, RunReport,
};
use crate::bounds::ConfidencePolicy;
use crate::metric::{gap_profile, Dataset, MetricError};
use crate::oracles::{
    generate_circle_clusters, generate_circulant, generate_hierarchical,
    generate_separated_clusters, generate_twin_clusters, synth_triplet_probs, GaussianOracle,
    OracleError, TripletOracle,
    TripletTable,
};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    CircleClusters { clusters: usize, points_per_cluster: usize, separation_frac: f64 },
    SeparatedClusters { clusters: usize, points_per_cluster: usize, margin: f64 },
    Hierarchical { levels: u32, leaf_size: usize, margin: f64 },
    Circulant { nu: usize, alpha: f64, r: f64 },
    File { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleSpec {
    Gaussian {
        sigma: f64,
    },
    /// Binary judgments over random triples; distances are induced, not
    /// measured. `table` optionally overrides individual triple
    /// probabilities from a JSON file.
    Triplet {
        sharpness: f64,
        #[serde(default)]
        table: Option<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    Hoeffding,
    Lil { eps: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub oracle: OracleSpec,
    pub algorithms: Vec<Algorithm>,
    pub delta: f64,
    pub policy: PolicySpec,
    pub trials: u64,
    /// Strictly increasing per-point query budgets at which error is
    /// traced.
    pub budgets: Vec<u64>,
    pub round_cap: u64,
    pub base_seed: u64,
    /// Optional hard stop (per point) on every adaptive run; defaults to
    /// the largest budget when a budget grid is present.
    #[serde(default)]
    pub total_cap_per_point: Option<u64>,
    #[serde(default)]
    pub include_counts: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials < 1 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(HarnessError::Config(format!("delta {} outside (0, 1)", self.delta)));
        }
        if self.round_cap == 0 {
            return Err(HarnessError::Config("round_cap must be positive".into()));
        }
        if !self.budgets.windows(2).all(|w| w[0] < w[1]) {
            return Err(HarnessError::Config("budget grid must be strictly increasing".into()));
        }
        if self.algorithms.is_empty() {
            return Err(HarnessError::Config("at least one algorithm required".into()));
        }
        if self.algorithms.contains(&Algorithm::Triangulation)
            && !matches!(self.oracle, OracleSpec::Gaussian { .. })
        {
            return Err(HarnessError::Config(
                "triangulation requires a Euclidean-backed Gaussian oracle".into(),
            ));
        }
        Ok(())
    }

    pub fn policy_for(&self, n: usize) -> ConfidencePolicy {
        match self.policy {
            PolicySpec::Hoeffding => ConfidencePolicy::hoeffding(self.delta, n),
            PolicySpec::Lil { eps } => ConfidencePolicy::lil(self.delta, n, eps),
        }
    }
}

/// Builds the configured dataset; generator seeds derive from the base
/// seed so the whole experiment is a pure function of its config.
pub fn build_dataset(
    spec: &DatasetSpec,
    policy: &ConfidencePolicy,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    match spec {
        DatasetSpec::CircleClusters { clusters, points_per_cluster, separation_frac } => {
            Ok(generate_circle_clusters(*clusters, *points_per_cluster, *separation_frac, seed)?)
        }
        DatasetSpec::SeparatedClusters { clusters, points_per_cluster, margin } => Ok(
            generate_separated_clusters(*clusters, *points_per_cluster, *margin, policy, seed)?,
        ),
        DatasetSpec::Hierarchical { levels, leaf_size, margin } => {
            Ok(generate_hierarchical(*levels, *leaf_size, *margin, policy, seed)?)
        }
        DatasetSpec::Circulant { nu, alpha, r } => Ok(generate_circulant(*nu, *alpha, *r)?),
        DatasetSpec::File { path } => {
            let raw = std::fs::read_to_string(path)?;
            Ok(Dataset::from_json(serde_json::from_str(&raw)?, true)?)
        }
    }
}

/// Fraction of points whose estimate is not a true nearest neighbor.
/// Estimates tied with the true nearest distance count as correct;
/// missing estimates count as errors.
pub fn error_rate(estimate: &[Option<usize>], truth: &Dataset) -> f64 {
    let n = truth.n();
    let mut wrong = 0usize;
    for i in 0..n {
        match estimate[i] {
            None => wrong += 1,
            Some(a) => {
                let best = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| truth.distance(i, j))
                    .fold(f64::INFINITY, f64::min);
                let d = truth.distance(i, a);
                if d > best + 1e-12 * best.max(1.0) {
                    wrong += 1;
                }
            }
        }
    }
    wrong as f64 / n as f64
}

/// Error at a per-point budget, read from the report's snapshot grid.
pub fn snapshot_error(report: &RunReport, budget: u64, truth: &Dataset) -> Option<f64> {
    report
        .snapshots
        .iter()
        .find(|s| s.budget == budget)
        .map(|s| error_rate(&s.nn, truth))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetError {
    pub budget: u64,
    pub error: f64,
}

/// One (algorithm, trial) record as persisted to the ndjson stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub algorithm: Algorithm,
    pub trial: u64,
    pub seed: u64,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_msg: Option<String>,
    pub total_queries: u64,
    pub truncated_rounds: usize,
    pub hit_total_cap: bool,
    /// Per-point-budget error trace (budgets are per point here).
    pub errors: Vec<BudgetError>,
    pub final_error: f64,
    /// True when any edge of the final graph is wrong.
    pub wrong: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetStat {
    pub budget: u64,
    pub mean_error: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub curve: Vec<BudgetStat>,
    pub trials: u64,
    pub failures: u64,
    pub wrong_trial_fraction: f64,
    pub mean_total_queries: f64,
    pub mean_final_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub n: usize,
    pub per_algorithm: Vec<AlgorithmSummary>,
    /// True when learner failures exceeded `delta * trials` plus
    /// three-sigma slack.
    pub failure_budget_exceeded: bool,
}

/// Mean and normal-approximation 95% band across trials, clamped to
/// [0, 1] (the mean always lies inside the clamped band).
fn mean_band(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1.0);
    let half = 1.96 * (var / n).sqrt();
    (mean, (mean - half).max(0.0), (mean + half).min(1.0))
}

/// Pure fold from per-trial records to aggregated curves; `analyze` uses
/// it to reproduce the aggregates from the persisted stream.
pub fn aggregate(
    name: &str,
    n: usize,
    delta: f64,
    trials_per_algorithm: u64,
    records: &[TrialRecord],
) -> ExperimentSummary {
    let mut algorithms: Vec<Algorithm> = Vec::new();
    for r in records {
        if !algorithms.contains(&r.algorithm) {
            algorithms.push(r.algorithm);
        }
    }
    let mut total_failures = 0u64;
    let per_algorithm = algorithms
        .into_iter()
        .map(|algo| {
            let rows: Vec<&TrialRecord> =
                records.iter().filter(|r| r.algorithm == algo).collect();
            let failures = rows.iter().filter(|r| r.status != "ok").count() as u64;
            total_failures += failures;
            let budgets: Vec<u64> = rows
                .first()
                .map(|r| r.errors.iter().map(|b| b.budget).collect())
                .unwrap_or_default();
            let curve = budgets
                .iter()
                .map(|&b| {
                    let vals: Vec<f64> = rows
                        .iter()
                        .map(|r| {
                            r.errors
                                .iter()
                                .find(|e| e.budget == b)
                                .map(|e| e.error)
                                .unwrap_or(1.0)
                        })
                        .collect();
                    let (mean, lo, hi) = mean_band(&vals);
                    BudgetStat { budget: b, mean_error: mean, lo95: lo, hi95: hi }
                })
                .collect();
            let finals: Vec<f64> = rows.iter().map(|r| r.final_error).collect();
            AlgorithmSummary {
                algorithm: algo,
                curve,
                trials: rows.len() as u64,
                failures,
                wrong_trial_fraction: rows.iter().filter(|r| r.wrong).count() as f64
                    / rows.len().max(1) as f64,
                mean_total_queries: rows.iter().map(|r| r.total_queries as f64).sum::<f64>()
                    / rows.len().max(1) as f64,
                mean_final_error: finals.iter().sum::<f64>() / finals.len().max(1) as f64,
            }
        })
        .collect();
    let allowance = delta * trials_per_algorithm as f64;
    ExperimentSummary {
        name: name.to_string(),
        n,
        per_algorithm,
        failure_budget_exceeded: (total_failures as f64) > allowance + 3.0 * allowance.sqrt(),
    }
}

fn run_one_trial(
    config: &ExperimentConfig,
    dataset: &Dataset,
    truth: &Dataset,
    policy: &ConfidencePolicy,
    algo: Algorithm,
    trial: u64,
) -> TrialRecord {
    let n = dataset.n() as u64;
    let seed = config.base_seed + 1 + trial;
    let max_budget = config.budgets.last().copied();
    let total_cap = config.total_cap_per_point.map(|b| b * n);
    let run_config = RunConfig {
        delta: config.delta,
        policy: policy.clone(),
        round_cap: config.round_cap,
        seed,
        algorithm: algo,
        total_cap: match algo {
            Algorithm::Anntri | Algorithm::Anneasy | Algorithm::Ann => total_cap,
            _ => None,
        },
        budgets: config.budgets.clone(),
    };
    let result: Result<RunReport, RunError> = (|| match algo {
        Algorithm::Anntri | Algorithm::Anneasy | Algorithm::Ann => {
            let run = match algo {
                Algorithm::Anntri => anntri,
                Algorithm::Anneasy => anneasy,
                _ => ann_baseline,
            };
            match &config.oracle {
                OracleSpec::Gaussian { sigma } => {
                    let mut oracle = GaussianOracle::new(dataset.clone(), *sigma, seed);
                    run(&mut oracle, &run_config, &mut NoopObserver)
                }
                OracleSpec::Triplet { sharpness, table } => {
                    let mut probs = synth_triplet_probs(dataset, *sharpness)
                        .map_err(|e| RunError::Domain(e.to_string()))?;
                    if let Some(path) = table {
                        let raw = std::fs::read_to_string(path)
                            .map_err(|e| RunError::Domain(e.to_string()))?;
                        let table: TripletTable = serde_json::from_str(&raw)
                            .map_err(|e| RunError::Domain(e.to_string()))?;
                        probs = probs
                            .with_overrides(&table)
                            .map_err(|e| RunError::Domain(e.to_string()))?;
                    }
                    let mut oracle = TripletOracle::new(probs, seed);
                    run(&mut oracle, &run_config, &mut NoopObserver)
                }
            }
        }
        Algorithm::Random => {
            let budget = config
                .total_cap_per_point
                .or(max_budget)
                .ok_or_else(|| RunError::Domain("random baseline needs a budget".into()))?;
            match &config.oracle {
                OracleSpec::Gaussian { sigma } => {
                    let mut oracle = GaussianOracle::new(dataset.clone(), *sigma, seed);
                    random_baseline(&mut oracle, policy, budget, &run_config.budgets)
                }
                OracleSpec::Triplet { sharpness, .. } => {
                    let probs = synth_triplet_probs(dataset, *sharpness)
                        .map_err(|e| RunError::Domain(e.to_string()))?;
                    let mut oracle = TripletOracle::new(probs, seed);
                    random_baseline(&mut oracle, policy, budget, &run_config.budgets)
                }
            }
        }
        Algorithm::Triangulation => {
            let d = dataset
                .coords()
                .and_then(|c| c.first().map(|p| p.len()))
                .ok_or_else(|| RunError::Domain("triangulation needs coordinates".into()))?;
            let budget = config
                .total_cap_per_point
                .or(max_budget)
                .ok_or_else(|| RunError::Domain("triangulation needs a budget".into()))?;
            let OracleSpec::Gaussian { sigma } = &config.oracle else {
                return Err(RunError::Domain("triangulation needs a Gaussian oracle".into()));
            };
            let mut oracle = GaussianOracle::new(dataset.clone(), *sigma, seed);
            triangulation_baseline(&mut oracle, d, budget, &run_config.budgets)
        }
    })();
    match result {
        Ok(report) => {
            let errors = config
                .budgets
                .iter()
                .map(|&b| BudgetError {
                    budget: b,
                    error: snapshot_error(&report, b, truth).unwrap_or(1.0),
                })
                .collect();
            let final_error = error_rate(&report.nn, truth);
            TrialRecord {
                algorithm: algo,
                trial,
                seed,
                status: "ok".into(),
                error_msg: None,
                total_queries: report.total_queries,
                truncated_rounds: report.truncated_rounds.len(),
                hit_total_cap: report.hit_total_cap,
                errors,
                final_error,
                wrong: final_error > 0.0,
            }
        }
        Err(e) => TrialRecord {
            algorithm: algo,
            trial,
            seed,
            status: "error".into(),
            error_msg: Some(e.to_string()),
            total_queries: 0,
            truncated_rounds: 0,
            hit_total_cap: false,
            errors: config.budgets.iter().map(|&b| BudgetError { budget: b, error: 1.0 }).collect(),
            final_error: 1.0,
            wrong: true,
        },
    }
}

/// Runs the whole experiment in memory. Deterministic: every seed
/// derives from the config.
pub fn run_experiment_in_memory(
    config: &ExperimentConfig,
) -> Result<(ExperimentSummary, Vec<TrialRecord>, Dataset), HarnessError> {
    config.validate()?;
    // The policy depends on n, which may itself come from a file, so
    // build the dataset with a provisional policy when possible.
    let dataset = match &config.dataset {
        DatasetSpec::SeparatedClusters { clusters, points_per_cluster, .. } => {
            let n = clusters * points_per_cluster;
            build_dataset(&config.dataset, &config.policy_for(n), config.base_seed)?
        }
        DatasetSpec::Hierarchical { levels, leaf_size, .. } => {
            let n = (1usize << levels) * leaf_size;
            build_dataset(&config.dataset, &config.policy_for(n), config.base_seed)?
        }
        other => {
            // Generators above are the only policy-dependent ones.
            let placeholder = ConfidencePolicy::hoeffding(config.delta, 2);
            build_dataset(other, &placeholder, config.base_seed)?
        }
    };
    let n = dataset.n();
    let policy = config.policy_for(n);
    // Ground truth for error measurement: induced distances for the
    // triplet oracle, the dataset itself otherwise.
    let truth = match &config.oracle {
        OracleSpec::Gaussian { .. } => dataset.clone(),
        OracleSpec::Triplet { sharpness, table } => {
            let mut probs = synth_triplet_probs(&dataset, *sharpness)?;
            if let Some(path) = table {
                let raw = std::fs::read_to_string(path)?;
                probs = probs.with_overrides(&serde_json::from_str(&raw)?)?;
            }
            probs.induced_dataset(dataset.generator().clone())?
        }
    };
    let mut records = Vec::new();
    for &algo in &config.algorithms {
        for trial in 0..config.trials {
            records.push(run_one_trial(config, &dataset, &truth, &policy, algo, trial));
        }
    }
    let summary = aggregate(&config.name, n, config.delta, config.trials, &records);
    Ok((summary, records, dataset))
}

/// Runs the experiment and persists manifest, per-trial stream,
/// aggregated CSV, and summary under `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentSummary, HarnessError> {
    let (summary, records, dataset) = run_experiment_in_memory(config)?;
    std::fs::create_dir_all(out_dir)?;
    let manifest = serde_json::json!({
        "config": config,
        "dataset": { "n": dataset.n(), "generator": dataset.generator() },
        "version": env!("CARGO_PKG_VERSION"),
    });
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let mut ndjson = std::fs::File::create(out_dir.join("trials.ndjson"))?;
    for r in &records {
        writeln!(ndjson, "{}", serde_json::to_string(r)?)?;
    }
    std::fs::write(out_dir.join("errors.csv"), summary_csv(&summary))?;
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Flat plotting table: budget (queries per point), algorithm, mean
/// error, 95% band.
pub fn summary_csv(summary: &ExperimentSummary) -> String {
    let mut out = String::from("budget,algorithm,mean_error,lo95,hi95\n");
    for alg in &summary.per_algorithm {
        let name = serde_json::to_value(alg.algorithm).unwrap();
        let name = name.as_str().unwrap().to_string();
        for stat in &alg.curve {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6}\n",
                stat.budget, name, stat.mean_error, stat.lo95, stat.hi95
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_lo95: f64,
    pub slope_hi95: f64,
}

/// Two-sided 95% Student-t quantile for small residual degrees of
/// freedom; 1.96 beyond the table.
fn t_quantile_95(df: usize) -> f64 {
    const TABLE: [f64; 10] =
        [12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228];
    if df == 0 {
        f64::INFINITY
    } else if df <= TABLE.len() {
        TABLE[df - 1]
    } else {
        1.96
    }
}

fn ols(xs: &[f64], ys: &[f64]) -> Result<SlopeFit, HarnessError> {
    let n = xs.len();
    if n < 3 || n != ys.len() {
        return Err(HarnessError::Config(format!("need at least 3 paired points, got {n}")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Config("x values are all identical".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let df = n - 2;
    let se = if df > 0 { (ss_res / df as f64 / sxx).sqrt() } else { f64::INFINITY };
    let t = t_quantile_95(df);
    Ok(SlopeFit {
        slope,
        intercept,
        slope_lo95: slope - t * se,
        slope_hi95: slope + t * se,
    })
}

/// OLS of log(total) against log(n): the exponent of a power-law query
/// count.
pub fn scaling_fit(sizes: &[f64], totals: &[f64]) -> Result<SlopeFit, HarnessError> {
    let xs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = totals.iter().map(|t| t.ln()).collect();
    ols(&xs, &ys)
}

/// OLS of log(total / log n) against log(n): a slope near 1 indicates an
/// n log n law.
pub fn scaling_fit_log_adjusted(sizes: &[f64], totals: &[f64]) -> Result<SlopeFit, HarnessError> {
    let xs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = totals.iter().zip(sizes).map(|(t, s)| (t / s.ln()).ln()).collect();
    ols(&xs, &ys)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityPrediction {
    /// Sum of per-pair difficulty terms with triangle-eliminable pairs
    /// removed; an order-of-magnitude prediction, up to constants.
    pub triangle_aware: f64,
    /// Pairwise worst-direction sum when triangle information is unused;
    /// also up to constants.
    pub no_triangle: f64,
}

/// Per-ordered-pair sampling indicator: `false` at `(j, k)` when an
/// earlier point `i < j` eliminates `k` from `j`'s round with a single
/// sample. That needs the separation condition `6 c1 <= d(i,k) - 2
/// d(i,j)` and that neither `j` nor `k` was itself triangle-eliminated
/// from round `i` by a yet earlier point (so the pairs were actually
/// sampled). `c1` is the one-sample confidence radius.
pub fn triangle_indicator(dataset: &Dataset, c1: f64) -> Vec<Vec<bool>> {
    let n = dataset.n();
    let survives = |i: usize, x: usize| -> bool {
        !(0..i).any(|m| 2.0 * dataset.distance(m, i) < dataset.distance(m, x))
    };
    let mut indicator = vec![vec![true; n]; n];
    for j in 0..n {
        for k in 0..n {
            if k == j {
                continue;
            }
            let eliminable = (0..j).any(|i| {
                i != k
                    && 6.0 * c1 <= dataset.distance(i, k) - 2.0 * dataset.distance(i, j)
                    && survives(i, j)
                    && survives(i, k)
            });
            indicator[j][k] = !eliminable;
        }
    }
    indicator
}

/// Order-of-magnitude query-count predictions from the dataset's gap
/// structure. A pair `(j, k)` contributes nothing to the triangle-aware
/// sum when an earlier point `i < j` can eliminate `k` in `j`'s round
/// with a single sample: the cluster-separation condition
/// `6 C(1) <= d(i,k) - 2 d(i,j)` holds and neither `j` nor `k` was
/// triangle-eliminated from `i`'s own round by a yet earlier point.
pub fn predict_complexity(
    dataset: &Dataset,
    delta: f64,
    policy: &ConfidencePolicy,
) -> Result<ComplexityPrediction, HarnessError> {
    let n = dataset.n();
    let gaps = gap_profile(dataset)?;
    let c1 = policy.radius(1);
    // A pair with an infinite gap (only possible at n = 2) can never be
    // confused and contributes nothing.
    let h = |j: usize, k: usize| -> Result<f64, HarnessError> {
        let gap = gaps.gap(j, k);
        if gap.is_infinite() {
            return Ok(0.0);
        }
        Ok(crate::metric::complexity_term(n, delta, gap)?)
    };
    let indicator = triangle_indicator(dataset, c1);
    let mut triangle_aware = 0.0;
    for j in 0..n {
        for k in (j + 1)..n {
            if indicator[j][k] {
                triangle_aware += h(j, k)?;
            }
        }
        for k in 0..j {
            if indicator[j][k] {
                let reused = if indicator[k][j] { h(k, j)? } else { 0.0 };
                triangle_aware += (h(j, k)? - reused).max(0.0);
            }
        }
    }
    let mut no_triangle = 0.0;
    for j in 0..n {
        for k in (j + 1)..n {
            no_triangle += h(j, k)?.max(h(k, j)?);
        }
    }
    Ok(ComplexityPrediction { triangle_aware, no_triangle })
}


#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SweepKind {
    /// Perfect-square sizes n split into sqrt(n) clusters of sqrt(n)
    /// points each.
    SqrtClusters { margin: f64 },
    /// Balanced binary hierarchies; `sizes` holds the level counts and
    /// the leaf size is the self-consistent ceil(ln n).
    Hierarchical { margin: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub name: String,
    pub kind: SweepKind,
    pub sizes: Vec<usize>,
    pub sigma: f64,
    pub algorithms: Vec<Algorithm>,
    pub delta: f64,
    pub policy: PolicySpec,
    pub trials: u64,
    pub round_cap: u64,
    pub base_seed: u64,
    /// Per-point budget ceiling for the uniform baseline's
    /// queries-to-zero-error search (probed on a doubling grid).
    #[serde(default = "default_random_cap")]
    pub random_budget_cap: u64,
}

fn default_random_cap() -> u64 {
    4096
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub algorithm: Algorithm,
    /// Mean total queries; for the uniform baseline, mean queries until
    /// the error trace reaches and stays at zero.
    pub mean_total: f64,
    pub mean_final_error: f64,
    /// True when the uniform baseline never reached zero error within
    /// its budget ceiling.
    pub saturated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepFit {
    pub algorithm: Algorithm,
    pub fit: SlopeFit,
    pub log_adjusted: SlopeFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub name: String,
    pub points: Vec<SweepPoint>,
    pub fits: Vec<SweepFit>,
}

/// Self-consistent hierarchical shape for a level count: leaf size
/// ceil(ln n) with n = 2^levels * leaf.
fn hierarchical_shape(levels: u32) -> (usize, usize) {
    let mut leaf = 2usize;
    loop {
        let n = (1usize << levels) * leaf;
        let want = (n as f64).ln().ceil() as usize;
        if want == leaf {
            return (leaf, n);
        }
        leaf = want;
    }
}

fn sweep_dataset(
    kind: &SweepKind,
    size: usize,
    policy: &ConfidencePolicy,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    match kind {
        SweepKind::SqrtClusters { margin } => {
            let c = (size as f64).sqrt().round() as usize;
            if c * c != size {
                return Err(HarnessError::Config(format!("size {size} is not a perfect square")));
            }
            // Twin clusters keep the hardest suboptimality gap constant
            // across n, so the fitted exponents measure scaling rather
            // than gap drift.
            Ok(generate_twin_clusters(c, c, *margin, policy, seed)?)
        }
        SweepKind::Hierarchical { margin } => {
            let levels = size as u32;
            let (leaf, _) = hierarchical_shape(levels);
            Ok(generate_hierarchical(levels, leaf, *margin, policy, seed)?)
        }
    }
}

/// Runs the size sweep and fits scaling exponents per algorithm.
/// Adaptive learners run to completion (round cap aside) and report
/// their total query counts; the uniform baseline reports the queries
/// needed for its error trace to reach zero, probed on a doubling
/// budget grid.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepSummary, HarnessError> {
    if config.sizes.len() < 3 {
        return Err(HarnessError::Config("sweep needs at least 3 sizes".into()));
    }
    if config.trials < 1 {
        return Err(HarnessError::Config("trials must be at least 1".into()));
    }
    let mut points = Vec::new();
    for (size_idx, &size) in config.sizes.iter().enumerate() {
        // Policy depends on n; resolve the actual n first.
        let n_for_policy = match &config.kind {
            SweepKind::SqrtClusters { .. } => size,
            SweepKind::Hierarchical { .. } => hierarchical_shape(size as u32).1,
        };
        let policy = match config.policy {
            PolicySpec::Hoeffding => ConfidencePolicy::hoeffding(config.delta, n_for_policy),
            PolicySpec::Lil { eps } => ConfidencePolicy::lil(config.delta, n_for_policy, eps),
        };
        let dataset = sweep_dataset(
            &config.kind,
            size,
            &policy,
            config.base_seed + 1000 * size_idx as u64,
        )?;
        let n = dataset.n();
        for &algo in &config.algorithms {
            let mut totals = Vec::new();
            let mut finals = Vec::new();
            let mut saturated = false;
            for trial in 0..config.trials {
                let seed = config.base_seed + 1 + trial;
                match algo {
                    Algorithm::Anntri | Algorithm::Anneasy | Algorithm::Ann => {
                        let run = match algo {
                            Algorithm::Anntri => anntri,
                            Algorithm::Anneasy => anneasy,
                            _ => ann_baseline,
                        };
                        let run_config = RunConfig {
                            delta: config.delta,
                            policy: policy.clone(),
                            round_cap: config.round_cap,
                            seed,
                            algorithm: algo,
                            total_cap: None,
                            budgets: Vec::new(),
                        };
                        let mut oracle = GaussianOracle::new(dataset.clone(), config.sigma, seed);
                        let report = run(&mut oracle, &run_config, &mut NoopObserver)?;
                        totals.push(report.total_queries as f64);
                        finals.push(error_rate(&report.nn, &dataset));
                    }
                    Algorithm::Random => {
                        // Geometric per-point budget grid (ratio ~1.25 so
                        // grid quantization stays small against the fitted
                        // slope) up to the ceiling.
                        let mut grid = Vec::new();
                        let mut b = 1u64;
                        while b <= config.random_budget_cap {
                            grid.push(b);
                            b = (b + 1).max(b * 5 / 4);
                        }
                        let mut oracle = GaussianOracle::new(dataset.clone(), config.sigma, seed);
                        let report =
                            random_baseline(&mut oracle, &policy, *grid.last().unwrap(), &grid)?;
                        // Smallest per-point budget from which the error
                        // stays zero; recorded as total queries.
                        let mut threshold = *grid.last().unwrap();
                        let mut sat = true;
                        for snap in report.snapshots.iter().rev() {
                            if error_rate(&snap.nn, &dataset) > 0.0 {
                                break;
                            }
                            threshold = snap.budget;
                            sat = false;
                        }
                        saturated |= sat;
                        totals.push((threshold * n as u64) as f64);
                        finals.push(error_rate(&report.nn, &dataset));
                    }
                    Algorithm::Triangulation => {
                        return Err(HarnessError::Config(
                            "triangulation has no total-query sweep semantics".into(),
                        ));
                    }
                }
            }
            points.push(SweepPoint {
                n,
                algorithm: algo,
                mean_total: totals.iter().sum::<f64>() / totals.len() as f64,
                mean_final_error: finals.iter().sum::<f64>() / finals.len() as f64,
                saturated,
            });
        }
    }
    let mut fits = Vec::new();
    for &algo in &config.algorithms {
        let rows: Vec<&SweepPoint> = points.iter().filter(|p| p.algorithm == algo).collect();
        let ns: Vec<f64> = rows.iter().map(|p| p.n as f64).collect();
        let totals: Vec<f64> = rows.iter().map(|p| p.mean_total).collect();
        fits.push(SweepFit {
            algorithm: algo,
            fit: scaling_fit(&ns, &totals)?,
            log_adjusted: scaling_fit_log_adjusted(&ns, &totals)?,
        });
    }
    Ok(SweepSummary { name: config.name.clone(), points, fits })
}

/// Flat table of sweep points for external plotting.
pub fn sweep_csv(summary: &SweepSummary) -> String {
    let mut out = String::from("n,algorithm,mean_total,mean_final_error,saturated\n");
    for p in &summary.points {
        let name = serde_json::to_value(p.algorithm).unwrap();
        out.push_str(&format!(
            "{},{},{:.3},{:.6},{}\n",
            p.n,
            name.as_str().unwrap(),
            p.mean_total,
            p.mean_final_error,
            p.saturated
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{dataset_from_line, GeneratorInfo};

    fn line(coords: &[f64]) -> Dataset {
        dataset_from_line(coords, GeneratorInfo::named("test")).unwrap()
    }

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            dataset: DatasetSpec::Circulant { nu: 3, alpha: 1.0, r: 1.0 },
            oracle: OracleSpec::Gaussian { sigma: 0.0 },
            algorithms: vec![Algorithm::Anntri, Algorithm::Random],
            delta: 0.1,
            policy: PolicySpec::Hoeffding,
            trials: 2,
            budgets: vec![5, 3000],
            round_cap: 100_000,
            base_seed: 7,
            total_cap_per_point: None,
            include_counts: false,
        }
    }

    #[test]
    fn error_rate_edges() {
        let ds = line(&[0.0, 1.0, 3.0, 7.0]);
        let exact = vec![Some(1), Some(0), Some(1), Some(2)];
        assert_eq!(error_rate(&exact, &ds), 0.0);
        assert_eq!(error_rate(&[None, None, None, None], &ds), 1.0);
        let half = vec![Some(1), Some(0), Some(3), Some(0)];
        assert_eq!(error_rate(&half, &ds), 0.5);
    }

    #[test]
    fn error_rate_accepts_ties() {
        // Points 0 and 2 are both at distance 1 from point 1.
        let ds = line(&[0.0, 1.0, 2.0, 10.0]);
        assert_eq!(error_rate(&[Some(1), Some(0), Some(1), Some(2)], &ds), 0.0);
        assert_eq!(error_rate(&[Some(1), Some(2), Some(1), Some(2)], &ds), 0.0);
    }

    #[test]
    fn scaling_fit_recovers_exact_power_laws() {
        let sizes = [16.0, 36.0, 64.0, 100.0, 144.0];
        let quad: Vec<f64> = sizes.iter().map(|n| 3.0 * n * n).collect();
        let fit = scaling_fit(&sizes, &quad).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-9);
        let sesqui: Vec<f64> = sizes.iter().map(|n| 5.0 * n.powf(1.5)).collect();
        let fit = scaling_fit(&sizes, &sesqui).unwrap();
        assert!((fit.slope - 1.5).abs() < 1e-9);
        // Exact fits pin the CI to the slope.
        assert!(fit.slope_hi95 - fit.slope_lo95 < 1e-6);
    }

    #[test]
    fn log_adjusted_fit_recovers_nlogn() {
        let sizes = [16.0, 64.0, 256.0, 1024.0];
        let nlogn: Vec<f64> = sizes.iter().map(|&n: &f64| 2.0 * n * n.ln()).collect();
        let fit = scaling_fit_log_adjusted(&sizes, &nlogn).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        assert!(scaling_fit(&[4.0, 4.0, 4.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(scaling_fit(&[4.0, 8.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn predict_complexity_small_cases() {
        // Two points: the single pair has an infinite gap, so both
        // predictions degenerate to zero.
        let ds = line(&[0.0, 1.0]);
        let policy = ConfidencePolicy::hoeffding(0.1, 2);
        let p = predict_complexity(&ds, 0.1, &policy).unwrap();
        assert_eq!(p.triangle_aware, 0.0);
        assert_eq!(p.no_triangle, 0.0);
        // Three close points: no single-sample elimination is possible,
        // and the reuse discount turns the ordered sum into exactly the
        // pairwise-max sum.
        let ds = line(&[0.0, 1.0, 3.0]);
        let policy = ConfidencePolicy::hoeffding(0.1, 3);
        let p = predict_complexity(&ds, 0.1, &policy).unwrap();
        assert!(p.triangle_aware > 0.0);
        assert!((p.triangle_aware - p.no_triangle).abs() < 1e-9);
    }

    #[test]
    fn cross_cluster_pairs_lose_their_indicator() {
        // Two well-separated clusters of four: after the first visit to
        // each cluster, every cross-cluster pair is eliminable with a
        // single earlier sample, so its indicator drops.
        let policy = ConfidencePolicy::hoeffding(0.1, 8);
        let ds = crate::oracles::generate_separated_clusters(2, 4, 2.0, &policy, 3).unwrap();
        let labels = ds.labels().unwrap().to_vec();
        let ind = triangle_indicator(&ds, policy.radius(1));
        for j in 0..8 {
            for k in 0..8 {
                if k == j || labels[j] == labels[k] {
                    continue;
                }
                let first_visit = j == 0 || j == 4;
                assert_eq!(ind[j][k], first_visit, "j={j} k={k}");
            }
        }
        let p = predict_complexity(&ds, 0.1, &policy).unwrap();
        assert!(p.triangle_aware <= p.no_triangle + 1e-9);
    }

    #[test]
    fn experiment_zero_noise_errors_vanish() {
        let cfg = tiny_config();
        let (summary, records, _) = run_experiment_in_memory(&cfg).unwrap();
        assert!(!summary.failure_budget_exceeded);
        let anntri = summary
            .per_algorithm
            .iter()
            .find(|a| a.algorithm == Algorithm::Anntri)
            .unwrap();
        assert_eq!(anntri.mean_final_error, 0.0);
        // With zero noise the largest budget covers every pair many
        // times over and drives the random baseline to zero too.
        let random = summary
            .per_algorithm
            .iter()
            .find(|a| a.algorithm == Algorithm::Random)
            .unwrap();
        assert_eq!(random.curve.last().unwrap().mean_error, 0.0);
        assert_eq!(records.len(), 4);
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = tiny_config();
        let a = run_experiment_in_memory(&cfg).unwrap();
        let b = run_experiment_in_memory(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a.1).unwrap(), serde_json::to_string(&b.1).unwrap());
        assert_eq!(
            serde_json::to_string(&a.0).unwrap(),
            serde_json::to_string(&b.0).unwrap()
        );
    }

    #[test]
    fn experiment_persists_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let summary = run_experiment(&cfg, dir.path()).unwrap();
        for f in ["manifest.json", "trials.ndjson", "errors.csv", "summary.json"] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
        // Aggregation is a pure fold: reproduce the summary from the
        // persisted stream.
        let raw = std::fs::read_to_string(dir.path().join("trials.ndjson")).unwrap();
        let records: Vec<TrialRecord> =
            raw.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let again = aggregate(&cfg.name, summary.n, cfg.delta, cfg.trials, &records);
        assert_eq!(
            serde_json::to_string(&summary).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
        let csv = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
        assert!(csv.starts_with("budget,algorithm,mean_error,lo95,hi95\n"));
        assert!(csv.contains("anntri"));
    }

    #[test]
    fn config_validation_rejects_bad_grids() {
        let mut cfg = tiny_config();
        cfg.budgets = vec![50, 5];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.algorithms = vec![Algorithm::Triangulation];
        cfg.oracle = OracleSpec::Triplet { sharpness: 5.0, table: None };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn band_contains_mean_and_shrinks() {
        let (m, lo, hi) = mean_band(&[0.1, 0.3, 0.2, 0.4]);
        assert!(lo <= m && m <= hi);
        let few = mean_band(&[0.1, 0.3, 0.2, 0.4]);
        let many: Vec<f64> = std::iter::repeat([0.1, 0.3, 0.2, 0.4]).take(25).flatten().collect();
        let lots = mean_band(&many);
        assert!((lots.2 - lots.1) < (few.2 - few.1) / 4.0);
    }

    #[test]
    fn hierarchical_shape_is_self_consistent() {
        for levels in 1..6u32 {
            let (leaf, n) = hierarchical_shape(levels);
            assert_eq!(n, (1usize << levels) * leaf);
            assert_eq!(leaf, (n as f64).ln().ceil() as usize);
        }
    }

    #[test]
    fn sweep_zero_noise_small() {
        let cfg = SweepConfig {
            name: "mini".into(),
            kind: SweepKind::SqrtClusters { margin: 1.5 },
            // Twin clusters need an even number of points per cluster,
            // so stick to perfect squares with even roots.
            sizes: vec![4, 16, 36],
            sigma: 0.0,
            algorithms: vec![Algorithm::Anneasy, Algorithm::Random],
            delta: 0.1,
            policy: PolicySpec::Hoeffding,
            trials: 1,
            round_cap: 100_000,
            base_seed: 11,
            random_budget_cap: 512,
        };
        let summary = run_sweep(&cfg).unwrap();
        assert_eq!(summary.points.len(), 6);
        for p in &summary.points {
            assert_eq!(p.mean_final_error, 0.0, "{:?} at n={}", p.algorithm, p.n);
            assert!(!p.saturated);
        }
        assert_eq!(summary.fits.len(), 2);
        for f in &summary.fits {
            assert!(f.fit.slope.is_finite());
        }
        let csv = sweep_csv(&summary);
        assert!(csv.lines().count() == 7);
    }
}
