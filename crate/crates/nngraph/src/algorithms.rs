//! Nearest-neighbor learners: adaptive elimination with and without
//! triangle-bound propagation, plus uniform-sampling and triangulation
//! baselines.

use crate::bounds::{
    active_set, active_set_easy, propagate_triangle_bounds, BoundState, ConfidencePolicy,
};
use crate::matrix::SymmetricMatrix;
use crate::oracles::{DistanceOracle, GaussianOracle};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    /// Every candidate was eliminated, which can only happen when some
    /// confidence bound missed its distance. Surfaced rather than
    /// repaired: widening bounds silently would void the failure budget.
    #[error("active set for round {round} became empty (violated bounds)")]
    EmptyActiveSet { round: usize },
    #[error("anchor distance matrix is numerically singular")]
    SingularAnchor,
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Anntri,
    Anneasy,
    Ann,
    Random,
    Triangulation,
}

/// One learner run. `delta` is the overall failure budget; the per-round
/// confidence is always `delta / n`, derived inside the policy rather
/// than configured separately.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub delta: f64,
    pub policy: ConfidencePolicy,
    /// Maximum queries spent in a single round before falling back to
    /// the empirical argmin.
    pub round_cap: u64,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Optional hard stop on total queries across the whole run;
    /// undecided points fall back to empirical estimates.
    #[serde(default)]
    pub total_cap: Option<u64>,
    /// Per-point query budgets at which to freeze each point's estimate.
    /// A point's clock is the number of queries spent in its own round,
    /// so error curves compare points at the same per-point spend.
    #[serde(default)]
    pub budgets: Vec<u64>,
}

/// One loop-head observation inside a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTraceEntry {
    pub queries: u64,
    pub estimate: Option<usize>,
    pub active: usize,
}

/// Per-point neighbor estimates frozen when each point's own clock
/// crossed `budget` queries. A point decided below the budget keeps its
/// final answer; a point whose round never ran falls back to the
/// empirical argmin over whatever its row has absorbed through reuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub budget: u64,
    pub nn: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub n: usize,
    /// Per-point neighbor estimate; `None` marks a point with no usable
    /// information (possible only under tiny budgets).
    pub nn: Vec<Option<usize>>,
    /// Final per-pair query counts.
    pub queries: SymmetricMatrix,
    pub total_queries: u64,
    pub per_round_trace: Vec<Vec<RoundTraceEntry>>,
    /// Rounds that hit `round_cap` and fell back to the empirical argmin.
    pub truncated_rounds: Vec<usize>,
    /// True when `total_cap` stopped the run before all rounds finished.
    pub hit_total_cap: bool,
    pub snapshots: Vec<Snapshot>,
}

impl RunReport {
    /// JSON form; the full count matrix is large and only included on
    /// request.
    pub fn to_json(&self, include_counts: bool) -> serde_json::Value {
        let mut v = serde_json::json!({
            "n": self.n,
            "nn": self.nn,
            "total_queries": self.total_queries,
            "truncated_rounds": self.truncated_rounds,
            "hit_total_cap": self.hit_total_cap,
            "snapshots": self.snapshots,
        });
        if include_counts {
            v["queries"] = serde_json::json!(self.queries.lower_triangle());
        }
        v
    }
}

/// Hooks into a learner run, used by audit and verification suites.
/// Every method has an empty default.
pub trait RunObserver {
    fn on_round_start(&mut self, _j: usize, _state: &BoundState) {}
    /// After the triangle sweep for the round (triangle mode only).
    fn on_propagate(&mut self, _j: usize, _state: &BoundState) {}
    fn on_loop_head(&mut self, _j: usize, _active: &[usize], _state: &BoundState) {}
    fn on_sample(&mut self, _i: usize, _j: usize, _value: f64, _state: &BoundState) {}
    fn on_round_end(&mut self, _j: usize, _survivor: usize, _state: &BoundState) {}
}

pub struct NoopObserver;
impl RunObserver for NoopObserver {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Full algorithm: triangle sweep each round, combined bounds.
    Tri,
    /// Concentration bounds with the doubled-upper candidate filter; no
    /// triangle matrices.
    Easy,
    /// Triangle matrices pinned at their no-information values.
    NoTri,
}

/// Empirical argmin for `j` over sampled pairs; ties to the lowest index.
fn argmin_dhat(j: usize, state: &BoundState) -> Option<usize> {
    let n = state.n();
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for a in 0..n {
        if a != j && state.count(a, j) > 0 && state.dhat.get(a, j) < best_d {
            best_d = state.dhat.get(a, j);
            best = Some(a);
        }
    }
    best
}

fn estimate_nn(state: &BoundState, decided: &[Option<usize>]) -> Vec<Option<usize>> {
    decided
        .iter()
        .enumerate()
        .map(|(j, d)| d.or_else(|| argmin_dhat(j, state)))
        .collect()
}

/// Collects per-point estimates against each point's own round clock.
/// Rounds fill their point's row lazily: crossings are recorded at loop
/// heads (so a crossing inside a sampling batch takes the estimate at
/// the next head), and a finished round stamps its answer on every
/// remaining threshold.
struct PerPointTracker {
    budgets: Vec<u64>,
    /// `nn[b][j]`: estimate for point `j` at its `budgets[b]`-th query.
    nn: Vec<Vec<Option<usize>>>,
}

impl PerPointTracker {
    fn new(budgets: &[u64], n: usize) -> Self {
        let mut budgets = budgets.to_vec();
        budgets.sort_unstable();
        budgets.dedup();
        let nn = vec![vec![None; n]; budgets.len()];
        PerPointTracker { budgets, nn }
    }

    /// `next` is the round-local cursor into the sorted thresholds.
    fn at_loop_head(&mut self, j: usize, spent: u64, next: &mut usize, estimate: Option<usize>) {
        while *next < self.budgets.len() && spent >= self.budgets[*next] {
            self.nn[*next][j] = estimate;
            *next += 1;
        }
    }

    fn finish_round(&mut self, j: usize, next: usize, survivor: usize) {
        for row in &mut self.nn[next..] {
            row[j] = Some(survivor);
        }
    }

    /// Fills rows for points whose round never ran (total-cap stop) with
    /// their empirical argmin, then emits the snapshots.
    fn finish(mut self, state: &BoundState, decided: &[Option<usize>]) -> Vec<Snapshot> {
        for (j, d) in decided.iter().enumerate() {
            if d.is_none() {
                let fallback = argmin_dhat(j, state);
                for row in &mut self.nn {
                    row[j] = fallback;
                }
            }
        }
        self.budgets
            .iter()
            .zip(self.nn)
            .map(|(&budget, nn)| Snapshot { budget, nn })
            .collect()
    }
}

/// Count, for every candidate `b`, of witnesses `k` with
/// `L(b, k) > 2 U(j, k)`; a candidate is compatible only at zero. Kept
/// incrementally because only row `j` of `U` changes within round `j`.
fn init_violations(j: usize, state: &BoundState) -> Vec<u32> {
    let n = state.n();
    let mut viol = vec![0u32; n];
    for b in 0..n {
        if b == j {
            continue;
        }
        for k in 0..n {
            if state.l.get(b, k) > 2.0 * state.u.get(j, k) {
                viol[b] += 1;
            }
        }
    }
    viol
}

fn active_from_violations(j: usize, state: &BoundState, viol: &[u32]) -> Vec<usize> {
    let n = state.n();
    let mut min_u = f64::INFINITY;
    for k in 0..n {
        if k != j {
            min_u = min_u.min(state.u.get(j, k));
        }
    }
    (0..n)
        .filter(|&b| b != j && viol[b] == 0 && state.l.get(b, j) < min_u)
        .collect()
}

#[derive(Debug)]
struct RoundOutcome {
    survivor: usize,
    truncated: bool,
    trace: Vec<RoundTraceEntry>,
    hit_total_cap: bool,
}

/// One elimination round for point `j`: repeatedly query the active
/// candidates holding the fewest samples (ascending index on ties) until
/// a single candidate survives or a cap is reached. On a cap the
/// empirical argmin among the surviving candidates is returned and the
/// round is marked truncated.
fn eliminate_round(
    j: usize,
    mode: Mode,
    state: &mut BoundState,
    oracle: &mut dyn DistanceOracle,
    config: &RunConfig,
    tracker: &mut PerPointTracker,
    observer: &mut dyn RunObserver,
) -> Result<RoundOutcome, RunError> {
    let mut viol = if mode == Mode::Easy { init_violations(j, state) } else { Vec::new() };
    let mut round_queries = 0u64;
    let mut next_budget = 0usize;
    let mut trace = Vec::new();
    loop {
        let active = match mode {
            Mode::Tri | Mode::NoTri => active_set(j, state),
            Mode::Easy => {
                let a = active_from_violations(j, state, &viol);
                // Cross-check the incremental bookkeeping against the
                // from-scratch rule on small instances.
                if cfg!(debug_assertions) && state.n() <= 24 {
                    debug_assert_eq!(a, active_set_easy(j, state));
                }
                a
            }
        };
        observer.on_loop_head(j, &active, state);
        trace.push(RoundTraceEntry {
            queries: round_queries,
            estimate: argmin_dhat(j, state),
            active: active.len(),
        });
        if active.is_empty() {
            return Err(RunError::EmptyActiveSet { round: j });
        }
        tracker.at_loop_head(
            j,
            round_queries,
            &mut next_budget,
            Some(cap_fallback(j, state, &active)),
        );
        if active.len() == 1 {
            observer.on_round_end(j, active[0], state);
            tracker.finish_round(j, next_budget, active[0]);
            return Ok(RoundOutcome {
                survivor: active[0],
                truncated: false,
                trace,
                hit_total_cap: false,
            });
        }
        if round_queries >= config.round_cap {
            let survivor = cap_fallback(j, state, &active);
            observer.on_round_end(j, survivor, state);
            tracker.finish_round(j, next_budget, survivor);
            return Ok(RoundOutcome { survivor, truncated: true, trace, hit_total_cap: false });
        }
        let min_count = active.iter().map(|&a| state.count(a, j)).min().unwrap();
        for &a in &active {
            if state.count(a, j) != min_count {
                continue;
            }
            if round_queries >= config.round_cap {
                break;
            }
            if config.total_cap.is_some_and(|cap| oracle.total_calls() >= cap) {
                let survivor = cap_fallback(j, state, &active);
                observer.on_round_end(j, survivor, state);
                tracker.finish_round(j, next_budget, survivor);
                return Ok(RoundOutcome { survivor, truncated: true, trace, hit_total_cap: true });
            }
            let u_old = state.u.get(j, a);
            let value = oracle.query(a, j);
            state.record_sample(a, j, value);
            if mode == Mode::Easy {
                // Only U(j, a) moved; refresh each candidate's witness
                // count for k = a.
                let u_new = state.u.get(j, a);
                for b in 0..state.n() {
                    if b == j {
                        continue;
                    }
                    let lba = state.l.get(b, a);
                    let was = lba > 2.0 * u_old;
                    let is = lba > 2.0 * u_new;
                    match (was, is) {
                        (false, true) => viol[b] += 1,
                        (true, false) => viol[b] -= 1,
                        _ => {}
                    }
                }
            }
            observer.on_sample(a, j, value, state);
            round_queries += 1;
        }
    }
}

/// Empirical argmin among the remaining candidates (sampled pairs first,
/// ties and the no-sample case to the lowest index).
fn cap_fallback(j: usize, state: &BoundState, active: &[usize]) -> usize {
    let mut best = active[0];
    let mut best_d = f64::INFINITY;
    let mut any = false;
    for &a in active {
        if state.count(a, j) > 0 && state.dhat.get(a, j) < best_d {
            best_d = state.dhat.get(a, j);
            best = a;
            any = true;
        }
    }
    if any {
        best
    } else {
        active[0]
    }
}

fn run_active(
    oracle: &mut dyn DistanceOracle,
    config: &RunConfig,
    mode: Mode,
    observer: &mut dyn RunObserver,
) -> Result<RunReport, RunError> {
    let n = oracle.n();
    if n < 2 {
        return Err(RunError::Domain("need at least 2 points".into()));
    }
    let mut state = BoundState::new(n, config.policy.clone());
    let mut decided: Vec<Option<usize>> = vec![None; n];
    let mut per_round_trace: Vec<Vec<RoundTraceEntry>> = vec![Vec::new(); n];
    let mut truncated_rounds = Vec::new();
    let mut tracker = PerPointTracker::new(&config.budgets, n);
    let mut hit_total_cap = false;
    for j in 0..n {
        observer.on_round_start(j, &state);
        if mode == Mode::Tri {
            propagate_triangle_bounds(&mut state);
            observer.on_propagate(j, &state);
        }
        let outcome =
            eliminate_round(j, mode, &mut state, oracle, config, &mut tracker, observer)?;
        decided[j] = Some(outcome.survivor);
        per_round_trace[j] = outcome.trace;
        if outcome.truncated {
            truncated_rounds.push(j);
        }
        if outcome.hit_total_cap {
            hit_total_cap = true;
            break;
        }
    }
    let nn = estimate_nn(&state, &decided);
    let snapshots = tracker.finish(&state, &decided);
    Ok(RunReport {
        n,
        nn,
        queries: state.t.clone(),
        total_queries: oracle.total_calls(),
        per_round_trace,
        truncated_rounds,
        hit_total_cap,
        snapshots,
    })
}

/// Full algorithm: per-round triangle sweep plus adaptive elimination.
pub fn anntri(
    oracle: &mut dyn DistanceOracle,
    config: &RunConfig,
    observer: &mut dyn RunObserver,
) -> Result<RunReport, RunError> {
    run_active(oracle, config, Mode::Tri, observer)
}

/// Simplified variant: no triangle matrices, candidate filter based on
/// doubled upper bounds.
pub fn anneasy(
    oracle: &mut dyn DistanceOracle,
    config: &RunConfig,
    observer: &mut dyn RunObserver,
) -> Result<RunReport, RunError> {
    run_active(oracle, config, Mode::Easy, observer)
}

/// Adaptive elimination with triangle information disabled entirely;
/// symmetry reuse of samples still applies.
pub fn ann_baseline(
    oracle: &mut dyn DistanceOracle,
    config: &RunConfig,
    observer: &mut dyn RunObserver,
) -> Result<RunReport, RunError> {
    run_active(oracle, config, Mode::NoTri, observer)
}

/// Uniform baseline: round-robin over unordered pairs up to
/// `budget_per_point * n` total queries; estimates are per-point
/// empirical argmins. `budgets` are per-point thresholds: the snapshot
/// for budget `b` is taken once `b * n` total queries have been spent,
/// matching the per-point clocks of the adaptive learners.
pub fn random_baseline(
    oracle: &mut dyn DistanceOracle,
    policy: &ConfidencePolicy,
    budget_per_point: u64,
    budgets: &[u64],
) -> Result<RunReport, RunError> {
    let n = oracle.n();
    if n < 2 {
        return Err(RunError::Domain("need at least 2 points".into()));
    }
    let mut state = BoundState::new(n, policy.clone());
    let decided = vec![None; n];
    let mut budget_grid: Vec<u64> = budgets.to_vec();
    budget_grid.sort_unstable();
    budget_grid.dedup();
    let mut next_budget = 0usize;
    let mut snapshots = Vec::new();
    let total_budget = budget_per_point * n as u64;
    let mut spent = 0u64;
    'outer: loop {
        if spent >= total_budget {
            break;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if spent >= total_budget {
                    break 'outer;
                }
                let value = oracle.query(i, j);
                state.record_sample(i, j, value);
                spent += 1;
                while next_budget < budget_grid.len()
                    && spent >= budget_grid[next_budget] * n as u64
                {
                    snapshots.push(Snapshot {
                        budget: budget_grid[next_budget],
                        nn: estimate_nn(&state, &decided),
                    });
                    next_budget += 1;
                }
            }
        }
    }
    let nn = estimate_nn(&state, &decided);
    while next_budget < budget_grid.len() {
        snapshots.push(Snapshot { budget: budget_grid[next_budget], nn: nn.clone() });
        next_budget += 1;
    }
    Ok(RunReport {
        n,
        nn,
        queries: state.t.clone(),
        total_queries: oracle.total_calls(),
        per_round_trace: vec![Vec::new(); n],
        truncated_rounds: Vec::new(),
        hit_total_cap: false,
        snapshots,
    })
}

/// Euclidean triangulation baseline. The first `d + 2` points are
/// anchors whose pairwise squared distances are supplied exactly; the
/// budget is spent round-robin on point-to-anchor queries, each sample
/// squared to estimate the point-to-anchor squared distances `L`. The
/// full squared-distance matrix is reconstructed as `L A^-1 L^T` (a rank
/// identity of Euclidean distance matrices) and neighbors are read off by
/// row argmin. `budget_per_point` and the `budgets` snapshot thresholds
/// are per-point spends, each worth `n` total queries.
pub fn triangulation_baseline(
    oracle: &mut GaussianOracle,
    d: usize,
    budget_per_point: u64,
    budgets: &[u64],
) -> Result<RunReport, RunError> {
    let n = oracle.n();
    let m = d + 2;
    if n <= m {
        return Err(RunError::Domain(format!(
            "need more than {m} points for {d}-dimensional triangulation"
        )));
    }
    // Exact anchor-anchor squared distances.
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let dist = oracle.dataset().distance(i, j);
            a[(i, j)] = dist * dist;
        }
    }
    let a_inv = a.clone().try_inverse().ok_or(RunError::SingularAnchor)?;

    // Running means of squared point-to-anchor samples.
    let mut sums = vec![vec![0.0f64; m]; n];
    let mut counts = vec![vec![0u64; m]; n];
    let mut query_counts = SymmetricMatrix::new(n, 0.0);
    let mut budget_grid: Vec<u64> = budgets.to_vec();
    budget_grid.sort_unstable();
    budget_grid.dedup();
    let mut next_budget = 0usize;
    let mut snapshots = Vec::new();
    let total_budget = budget_per_point * n as u64;
    let mut spent = 0u64;

    let reconstruct = |sums: &Vec<Vec<f64>>, counts: &Vec<Vec<u64>>| -> Vec<Option<usize>> {
        let mut l = DMatrix::zeros(n, m);
        let mut known = vec![true; n];
        for i in 0..n {
            for j in 0..m {
                if i < m {
                    l[(i, j)] = a[(i, j)];
                } else if counts[i][j] > 0 {
                    l[(i, j)] = sums[i][j] / counts[i][j] as f64;
                } else {
                    known[i] = false;
                }
            }
        }
        let dhat = &l * &a_inv * l.transpose();
        (0..n)
            .map(|i| {
                if !known[i] {
                    return None;
                }
                let mut best = None;
                let mut best_d = f64::INFINITY;
                for j in 0..n {
                    if j != i && known[j] && dhat[(i, j)] < best_d {
                        best_d = dhat[(i, j)];
                        best = Some(j);
                    }
                }
                best
            })
            .collect()
    };

    'outer: loop {
        if spent >= total_budget {
            break;
        }
        for i in m..n {
            for j in 0..m {
                if spent >= total_budget {
                    break 'outer;
                }
                let v = oracle.query(i, j);
                sums[i][j] += v * v;
                counts[i][j] += 1;
                query_counts.set(i, j, query_counts.get(i, j) + 1.0);
                spent += 1;
                while next_budget < budget_grid.len()
                    && spent >= budget_grid[next_budget] * n as u64
                {
                    snapshots.push(Snapshot {
                        budget: budget_grid[next_budget],
                        nn: reconstruct(&sums, &counts),
                    });
                    next_budget += 1;
                }
            }
        }
    }
    let nn = reconstruct(&sums, &counts);
    while next_budget < budget_grid.len() {
        snapshots.push(Snapshot { budget: budget_grid[next_budget], nn: nn.clone() });
        next_budget += 1;
    }
    Ok(RunReport {
        n,
        nn,
        queries: query_counts,
        total_queries: oracle.total_calls(),
        per_round_trace: vec![Vec::new(); n],
        truncated_rounds: Vec::new(),
        hit_total_cap: false,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{
        dataset_from_line, dataset_from_points, true_nn_graph, Dataset, GeneratorInfo,
    };
    use crate::oracles::generate_circle_clusters;

    fn config(delta: f64, n: usize) -> RunConfig {
        RunConfig {
            delta,
            policy: ConfidencePolicy::hoeffding(delta, n),
            round_cap: 1_000_000,
            seed: 0,
            algorithm: Algorithm::Anntri,
            total_cap: None,
            budgets: Vec::new(),
        }
    }

    fn line_dataset(coords: &[f64]) -> Dataset {
        dataset_from_line(coords, GeneratorInfo::named("test")).unwrap()
    }

    #[test]
    fn two_points_zero_queries() {
        let ds = line_dataset(&[0.0, 1.0]);
        let mut oracle = GaussianOracle::new(ds, 1.0, 1);
        let report = anntri(&mut oracle, &config(0.1, 2), &mut NoopObserver).unwrap();
        assert_eq!(report.nn, vec![Some(1), Some(0)]);
        assert_eq!(report.total_queries, 0);
    }

    #[test]
    fn zero_noise_collinear_all_modes() {
        let ds = line_dataset(&[0.0, 1.0, 3.0, 7.0]);
        let expect = vec![Some(1), Some(0), Some(1), Some(2)];
        let cfg = config(0.1, 4);
        for run in [anntri, anneasy, ann_baseline] {
            let mut oracle = GaussianOracle::noiseless(ds.clone(), 1);
            let report = run(&mut oracle, &cfg, &mut NoopObserver).unwrap();
            assert_eq!(report.nn, expect);
            assert!(report.truncated_rounds.is_empty());
        }
    }

    #[test]
    fn zero_noise_matches_brute_force_small() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..30 {
            let n = rng.gen_range(3..=12);
            let points: Vec<Vec<f64>> =
                (0..n).map(|_| vec![rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0]).collect();
            let ds =
                dataset_from_points(&points, None, GeneratorInfo::named("test")).unwrap();
            let truth: Vec<Option<usize>> =
                true_nn_graph(&ds).unwrap().into_iter().map(Some).collect();
            let cfg = config(0.1, n);
            for run in [anntri, anneasy, ann_baseline] {
                let mut oracle = GaussianOracle::noiseless(ds.clone(), trial);
                let report = run(&mut oracle, &cfg, &mut NoopObserver).unwrap();
                assert_eq!(report.nn, truth, "trial {trial}, n {n}");
            }
        }
    }

    #[test]
    fn query_accounting_consistent() {
        let ds = generate_circle_clusters(2, 4, 0.5, 3).unwrap();
        let mut oracle = GaussianOracle::new(ds, 0.3, 7);
        let report = anntri(&mut oracle, &config(0.1, 8), &mut NoopObserver).unwrap();
        let mut sum = 0.0;
        for i in 0..8 {
            for j in 0..i {
                sum += report.queries.get(i, j);
                assert_eq!(report.queries.get(i, j), oracle.calls().get(i, j));
            }
        }
        assert_eq!(sum as u64, report.total_queries);
        assert_eq!(report.total_queries, oracle.total_calls());
    }

    /// Every sample between two loop heads must go to a pair holding the
    /// minimum count observed at the head.
    struct MinCountAudit {
        head_min: u64,
        violations: usize,
    }
    impl RunObserver for MinCountAudit {
        fn on_loop_head(&mut self, j: usize, active: &[usize], state: &BoundState) {
            self.head_min = active.iter().map(|&a| state.count(a, j)).min().unwrap_or(0);
        }
        fn on_sample(&mut self, i: usize, j: usize, _v: f64, state: &BoundState) {
            // The count already includes this sample.
            if state.count(i, j) != self.head_min + 1 {
                self.violations += 1;
            }
        }
    }

    #[test]
    fn samples_go_to_min_count_pairs() {
        let ds = generate_circle_clusters(2, 5, 0.3, 11).unwrap();
        let mut oracle = GaussianOracle::new(ds, 0.5, 13);
        let mut audit = MinCountAudit { head_min: 0, violations: 0 };
        let mut cfg = config(0.1, 10);
        cfg.round_cap = 20_000;
        anntri(&mut oracle, &cfg, &mut audit).unwrap();
        assert_eq!(audit.violations, 0);
    }

    /// With zero noise no candidate ever re-enters an active set, so
    /// loop-head counts among active pairs stay within one of each other
    /// in a fresh round.
    struct HeadBalanceAudit {
        violations: usize,
    }
    impl RunObserver for HeadBalanceAudit {
        fn on_loop_head(&mut self, j: usize, active: &[usize], state: &BoundState) {
            if j != 0 || active.len() < 2 {
                return;
            }
            let counts: Vec<u64> = active.iter().map(|&a| state.count(a, j)).collect();
            if counts.iter().max().unwrap() - counts.iter().min().unwrap() > 1 {
                self.violations += 1;
            }
        }
    }

    #[test]
    fn min_count_rule_balances_fresh_noiseless_round() {
        let ds = generate_circle_clusters(2, 5, 0.3, 11).unwrap();
        let mut oracle = GaussianOracle::noiseless(ds, 13);
        let mut audit = HeadBalanceAudit { violations: 0 };
        anntri(&mut oracle, &config(0.1, 10), &mut audit).unwrap();
        assert_eq!(audit.violations, 0);
    }

    #[test]
    fn reuse_skips_warm_pairs() {
        // After round 0, pair (0, 1) holds samples; round 1 must not
        // query it again before other pairs catch up to the active
        // minimum — guaranteed by the min-count rule, checked via counts.
        struct ReuseAudit {
            baseline: Option<u64>,
            early_requery: bool,
        }
        impl RunObserver for ReuseAudit {
            fn on_round_start(&mut self, j: usize, state: &BoundState) {
                if j == 1 {
                    self.baseline = Some(state.count(0, 1));
                }
            }
            fn on_sample(&mut self, i: usize, j: usize, _v: f64, state: &BoundState) {
                if j == 1 && i == 0 {
                    if let Some(base) = self.baseline {
                        // A re-query is only legal once every other active
                        // pair has at least `base` samples; the cheapest
                        // proxy: the new count must exceed the baseline
                        // only after some other pair reached it.
                        let others_caught_up = (2..state.n()).any(|a| state.count(a, 1) >= base);
                        if state.count(0, 1) > base && !others_caught_up {
                            self.early_requery = true;
                        }
                    }
                }
            }
        }
        let ds = generate_circle_clusters(2, 4, 0.3, 19).unwrap();
        let mut oracle = GaussianOracle::new(ds, 0.5, 23);
        let mut audit = ReuseAudit { baseline: None, early_requery: false };
        let mut cfg = config(0.1, 8);
        cfg.round_cap = 20_000;
        anntri(&mut oracle, &cfg, &mut audit).unwrap();
        assert!(!audit.early_requery);
    }

    #[test]
    fn deterministic_reports() {
        let ds = generate_circle_clusters(2, 4, 0.3, 2).unwrap();
        let cfg = config(0.1, 8);
        let run = |seed| {
            let mut oracle = GaussianOracle::new(ds.clone(), 0.4, seed);
            anntri(&mut oracle, &cfg, &mut NoopObserver).unwrap()
        };
        assert_eq!(run(42), run(42));
        // Sanity: a different noise stream actually changes the report.
        assert_ne!(run(42).total_queries, run(43).total_queries);
    }

    #[test]
    fn round_cap_truncates_and_falls_back() {
        let ds = line_dataset(&[0.0, 1.0, 1.2, 5.0]);
        let mut oracle = GaussianOracle::new(ds, 2.0, 3);
        let mut cfg = config(0.1, 4);
        cfg.round_cap = 5;
        let report = anntri(&mut oracle, &cfg, &mut NoopObserver).unwrap();
        assert!(!report.truncated_rounds.is_empty());
        // Every point still gets an estimate.
        assert!(report.nn.iter().all(|x| x.is_some()));
    }

    #[test]
    fn total_cap_stops_run() {
        let ds = generate_circle_clusters(2, 4, 0.3, 5).unwrap();
        let mut oracle = GaussianOracle::new(ds, 1.0, 5);
        let mut cfg = config(0.1, 8);
        cfg.total_cap = Some(50);
        let report = anntri(&mut oracle, &cfg, &mut NoopObserver).unwrap();
        assert!(report.hit_total_cap);
        assert!(report.total_queries <= 50 + 1);
    }

    #[test]
    fn snapshots_at_budgets() {
        let ds = generate_circle_clusters(2, 4, 0.3, 5).unwrap();
        let mut oracle = GaussianOracle::new(ds, 0.5, 5);
        let mut cfg = config(0.1, 8);
        cfg.budgets = vec![10, 100, 100_000_000];
        let report = anntri(&mut oracle, &cfg, &mut NoopObserver).unwrap();
        assert_eq!(report.snapshots.len(), 3);
        assert_eq!(report.snapshots[0].budget, 10);
        // The unreachable budget is padded with the final estimate.
        assert_eq!(report.snapshots[2].nn, report.nn);
    }

    #[test]
    fn random_budget_zero_flags_unknowns() {
        let ds = line_dataset(&[0.0, 1.0, 3.0]);
        let mut oracle = GaussianOracle::new(ds, 1.0, 1);
        let policy = ConfidencePolicy::hoeffding(0.1, 3);
        let report = random_baseline(&mut oracle, &policy, 0, &[]).unwrap();
        assert!(report.nn.iter().all(|x| x.is_none()));
    }

    #[test]
    fn random_zero_noise_exact_after_one_sweep() {
        let ds = line_dataset(&[0.0, 1.0, 3.0, 7.0]);
        let mut oracle = GaussianOracle::noiseless(ds, 1);
        let policy = ConfidencePolicy::hoeffding(0.1, 4);
        // One sample per unordered pair is 6 queries, under 2 per point.
        let report = random_baseline(&mut oracle, &policy, 2, &[]).unwrap();
        assert_eq!(report.nn, vec![Some(1), Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn triangulation_zero_noise_exact() {
        // Anchors {0, 1, 5} with targets {2.9, 7.5} on the line.
        let points: Vec<Vec<f64>> =
            [0.0, 1.0, 5.0, 2.9, 7.5].iter().map(|&x| vec![x]).collect();
        let ds = dataset_from_points(&points, None, GeneratorInfo::named("test")).unwrap();
        let truth: Vec<Option<usize>> = true_nn_graph(&ds).unwrap().into_iter().map(Some).collect();
        let mut oracle = GaussianOracle::noiseless(ds, 1);
        // 2 queries per point cover the 6 target-to-anchor pairs.
        let report = triangulation_baseline(&mut oracle, 1, 2, &[]).unwrap();
        assert_eq!(report.nn, truth);
    }

    #[test]
    fn triangulation_zero_noise_exact_2d() {
        let ds = generate_circle_clusters(3, 4, 0.5, 7).unwrap();
        let truth: Vec<Option<usize>> = true_nn_graph(&ds).unwrap().into_iter().map(Some).collect();
        let mut oracle = GaussianOracle::noiseless(ds, 1);
        // 4 queries per point (48 total) cover the 32 target-anchor pairs.
        let report = triangulation_baseline(&mut oracle, 2, 4, &[]).unwrap();
        assert_eq!(report.nn, truth);
    }

    #[test]
    fn triangulation_rejects_degenerate_anchors() {
        // Three collinear anchors in 2-D give a singular anchor matrix
        // only in degenerate cases; duplicate-free but affinely dependent
        // anchors with identical distances do. Use four coincident-row
        // construction: anchors forming a perfect square centered at the
        // origin yield an invertible matrix, so instead force singularity
        // with repeated anchor geometry via a 1-D set read as 2-D.
        let points = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![3.0, 0.0],
            vec![4.0, 0.0],
            vec![5.5, 0.0],
        ];
        let ds = dataset_from_points(&points, None, GeneratorInfo::named("test")).unwrap();
        let mut oracle = GaussianOracle::noiseless(ds, 1);
        let r = triangulation_baseline(&mut oracle, 2, 10, &[]);
        assert!(matches!(r, Err(RunError::SingularAnchor)), "{r:?}");
    }

    #[test]
    fn empty_active_set_is_surfaced() {
        // Forced bound violation: a poisoned oracle returning wildly
        // inconsistent values with a tiny radius via huge sample counts
        // is hard to stage; instead exercise the error path directly
        // through a state whose bounds exclude everyone.
        let ds = line_dataset(&[0.0, 1.0, 3.0]);
        let mut state = BoundState::new(3, ConfidencePolicy::hoeffding(0.1, 3));
        // Crossed intervals, as produced when concentration and triangle
        // information disagree under a missed bound.
        state.install_concentration(0, 1, 12.0, 11.0);
        state.install_concentration(0, 2, 12.0, 11.0);
        // Candidate lower bounds (12) are not below the best upper (11)…
        assert!(active_set(0, &state).is_empty());
        // …and the driver converts that into the round error.
        let mut oracle = GaussianOracle::noiseless(ds, 1);
        let mut cfg = config(0.1, 3);
        cfg.round_cap = 0;
        // round_cap 0 cannot mask the empty set: the check precedes it.
        let err = eliminate_round(
            0,
            Mode::NoTri,
            &mut state,
            &mut oracle,
            &cfg,
            &mut PerPointTracker::new(&[], 3),
            &mut NoopObserver,
        )
        .unwrap_err();
        assert!(matches!(err, RunError::EmptyActiveSet { round: 0 }));
    }

    #[test]
    fn report_json_shape() {
        let ds = line_dataset(&[0.0, 1.0, 3.0]);
        let mut oracle = GaussianOracle::noiseless(ds, 1);
        let report = anntri(&mut oracle, &config(0.1, 3), &mut NoopObserver).unwrap();
        let slim = report.to_json(false);
        assert!(slim.get("queries").is_none());
        let full = report.to_json(true);
        assert_eq!(full["queries"].as_array().unwrap().len(), 3);
        assert_eq!(full["nn"].as_array().unwrap().len(), 3);
    }
}
