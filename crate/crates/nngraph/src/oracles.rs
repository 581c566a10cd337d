//! Stochastic distance oracles and ground-truth dataset generators.

use crate::bounds::ConfidencePolicy;
use crate::matrix::SymmetricMatrix;
use crate::metric::{
    dataset_from_points, true_nn_graph, Dataset, GeneratorInfo, MetricError,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("generator gave up after {attempts} resampling attempts: {reason}")]
    Generation { attempts: usize, reason: String },
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// One noisy unbiased sample of a pairwise distance per call. Implementors
/// count calls per pair; `query(i, j)` and `query(j, i)` follow the same
/// law.
pub trait DistanceOracle {
    fn n(&self) -> usize;
    fn query(&mut self, i: usize, j: usize) -> f64;
    fn calls(&self) -> &SymmetricMatrix;
    fn total_calls(&self) -> u64;
}

/// True distance plus `N(0, sigma^2)` noise.
pub struct GaussianOracle {
    dataset: Dataset,
    sigma: f64,
    rng: ChaCha8Rng,
    calls: SymmetricMatrix,
    total: u64,
}

impl GaussianOracle {
    pub fn new(dataset: Dataset, sigma: f64, seed: u64) -> Self {
        let n = dataset.n();
        GaussianOracle {
            dataset,
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
            calls: SymmetricMatrix::new(n, 0.0),
            total: 0,
        }
    }

    /// Noise-free oracle; every query returns the exact distance.
    pub fn noiseless(dataset: Dataset, seed: u64) -> Self {
        Self::new(dataset, 0.0, seed)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
}

impl DistanceOracle for GaussianOracle {
    fn n(&self) -> usize {
        self.dataset.n()
    }

    fn query(&mut self, i: usize, j: usize) -> f64 {
        debug_assert_ne!(i, j);
        self.calls.set(i, j, self.calls.get(i, j) + 1.0);
        self.total += 1;
        let d = self.dataset.distance(i, j);
        if self.sigma == 0.0 {
            d
        } else {
            let noise: f64 = Normal::new(0.0, self.sigma).unwrap().sample(&mut self.rng);
            d + noise
        }
    }

    fn calls(&self) -> &SymmetricMatrix {
        &self.calls
    }

    fn total_calls(&self) -> u64 {
        self.total
    }
}

/// Per-triple judgment probabilities: `p(i, j, k)` is the chance that the
/// pair `(i, j)` is *not* judged the closest pair of the triple
/// `{i, j, k}`. The induced distance between `i` and `j` is the mean of
/// `p(i, j, k)` over third points `k`, so similar pairs come out close.
#[derive(Debug, Clone)]
pub struct TripletProbs {
    n: usize,
    probs: Vec<f64>,
    induced: SymmetricMatrix,
}

/// On-disk triplet-probability table; entries override the synthetic
/// link, missing triples keep it.
#[derive(Debug, Serialize, Deserialize)]
pub struct TripletTable {
    pub n: usize,
    pub probs: Vec<TripletEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TripletEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub p: f64,
}

impl TripletProbs {
    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn p(&self, i: usize, j: usize, k: usize) -> f64 {
        self.probs[self.idx(i, j, k)]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Induced pairwise distances (means over third points). These form a
    /// quasi-metric in general; callers should report its constant rather
    /// than assume the triangle inequality.
    pub fn induced_distances(&self) -> &SymmetricMatrix {
        &self.induced
    }

    pub fn induced_dataset(&self, generator: GeneratorInfo) -> Result<Dataset, MetricError> {
        Dataset::new_quasi(self.induced.clone(), None, generator)
    }

    /// Applies table overrides (symmetrically in `i, j`) and recomputes
    /// the induced distances.
    pub fn with_overrides(mut self, table: &TripletTable) -> Result<Self, OracleError> {
        if table.n != self.n {
            return Err(OracleError::Domain(format!(
                "table n={} does not match dataset n={}",
                table.n, self.n
            )));
        }
        for e in &table.probs {
            if e.i >= self.n || e.j >= self.n || e.k >= self.n {
                return Err(OracleError::Domain(format!(
                    "triple ({}, {}, {}) out of range",
                    e.i, e.j, e.k
                )));
            }
            if !(0.0..=1.0).contains(&e.p) {
                return Err(OracleError::Domain(format!("probability {} outside [0, 1]", e.p)));
            }
            let a = self.idx(e.i, e.j, e.k);
            self.probs[a] = e.p;
            let b = self.idx(e.j, e.i, e.k);
            self.probs[b] = e.p;
        }
        self.recompute_induced();
        Ok(self)
    }

    fn recompute_induced(&mut self) {
        let n = self.n;
        let mut induced = SymmetricMatrix::new(n, 0.0);
        for i in 0..n {
            for j in 0..i {
                let mut acc = 0.0;
                for k in 0..n {
                    if k != i && k != j {
                        acc += self.p(i, j, k);
                    }
                }
                induced.set(i, j, acc / (n - 2) as f64);
            }
        }
        self.induced = induced;
    }
}

/// Builds triplet probabilities from true geometry: the closest pair of
/// each triple is picked under a softmax with the given sharpness over
/// the three pairwise distances, and `p` is the complement of the pair's
/// win probability. As sharpness grows, `p(i, j, k)` tends to the
/// indicator that `(i, j)` is not the truly closest pair, so the induced
/// distances stay ordinally consistent with the geometry.
pub fn synth_triplet_probs(dataset: &Dataset, sharpness: f64) -> Result<TripletProbs, OracleError> {
    if !(sharpness > 0.0) {
        return Err(OracleError::Domain(format!("sharpness {sharpness} must be positive")));
    }
    let n = dataset.n();
    if n < 3 {
        return Err(OracleError::Domain(format!("need at least 3 points, got {n}")));
    }
    let mut tp = TripletProbs {
        n,
        probs: vec![0.0; n * n * n],
        induced: SymmetricMatrix::new(n, 0.0),
    };
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            for k in 0..n {
                if k == i || k == j {
                    continue;
                }
                let dij = dataset.distance(i, j);
                let dik = dataset.distance(i, k);
                let djk = dataset.distance(j, k);
                // Shift by the minimum before exponentiating for stability.
                let m = dij.min(dik).min(djk);
                let wij = (-sharpness * (dij - m)).exp();
                let wik = (-sharpness * (dik - m)).exp();
                let wjk = (-sharpness * (djk - m)).exp();
                let win = wij / (wij + wik + wjk);
                let a = tp.idx(i, j, k);
                tp.probs[a] = 1.0 - win;
            }
        }
    }
    tp.recompute_induced();
    Ok(tp)
}

/// Bernoulli triplet oracle: a query for `(i, j)` draws a uniform third
/// point and flips a coin, giving an unbiased `{0, 1}` sample of the
/// induced distance.
pub struct TripletOracle {
    probs: TripletProbs,
    rng: ChaCha8Rng,
    calls: SymmetricMatrix,
    total: u64,
}

impl TripletOracle {
    pub fn new(probs: TripletProbs, seed: u64) -> Self {
        let n = probs.n();
        TripletOracle {
            probs,
            rng: ChaCha8Rng::seed_from_u64(seed),
            calls: SymmetricMatrix::new(n, 0.0),
            total: 0,
        }
    }

    pub fn probs(&self) -> &TripletProbs {
        &self.probs
    }
}

impl DistanceOracle for TripletOracle {
    fn n(&self) -> usize {
        self.probs.n()
    }

    fn query(&mut self, i: usize, j: usize) -> f64 {
        debug_assert_ne!(i, j);
        self.calls.set(i, j, self.calls.get(i, j) + 1.0);
        self.total += 1;
        let n = self.probs.n();
        // Uniform third point among the other n - 2.
        let mut k = self.rng.gen_range(0..n - 2);
        if k >= i.min(j) {
            k += 1;
        }
        if k >= i.max(j) {
            k += 1;
        }
        let p = self.probs.p(i, j, k);
        if self.rng.gen::<f64>() < p {
            1.0
        } else {
            0.0
        }
    }

    fn calls(&self) -> &SymmetricMatrix {
        &self.calls
    }

    fn total_calls(&self) -> u64 {
        self.total
    }
}

const MAX_RESAMPLE_ATTEMPTS: usize = 100;

/// `c` clusters of `m` points each, centers evenly spaced on a circle and
/// points uniform in unit disks, scaled so clusters are separated by at
/// least `separation_frac` of the cluster diameter. Coordinates and
/// cluster labels are retained.
pub fn generate_circle_clusters(
    c: usize,
    m: usize,
    separation_frac: f64,
    seed: u64,
) -> Result<Dataset, OracleError> {
    if c * m < 2 {
        return Err(OracleError::Domain("need at least 2 points".into()));
    }
    if !(separation_frac > 0.0) {
        return Err(OracleError::Domain("separation_frac must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Unit-disk clusters (diameter 2); ring radius keeps adjacent disks at
    // least separation_frac * diameter apart.
    let ring = if c > 1 {
        (1.0 + separation_frac) / (std::f64::consts::PI / c as f64).sin()
    } else {
        0.0
    };
    for attempt in 0..MAX_RESAMPLE_ATTEMPTS {
        let mut points = Vec::with_capacity(c * m);
        let mut labels = Vec::with_capacity(c * m);
        for cluster in 0..c {
            let angle = 2.0 * std::f64::consts::PI * cluster as f64 / c as f64;
            let (cx, cy) = (ring * angle.cos(), ring * angle.sin());
            for _ in 0..m {
                let r = rng.gen::<f64>().sqrt();
                let a = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
                points.push(vec![cx + r * a.cos(), cy + r * a.sin()]);
                labels.push(cluster);
            }
        }
        let info = GeneratorInfo {
            name: "circle_clusters".into(),
            params: serde_json::json!({
                "clusters": c, "points_per_cluster": m,
                "separation_frac": separation_frac, "attempt": attempt,
            }),
            seed: Some(seed),
        };
        let ds = dataset_from_points(&points, Some(labels), info)?;
        if true_nn_graph(&ds).is_ok() {
            return Ok(ds);
        }
    }
    Err(OracleError::Generation {
        attempts: MAX_RESAMPLE_ATTEMPTS,
        reason: "could not achieve a positive minimum gap".into(),
    })
}

/// Draws one cluster of `m` points on a line with spacings in `[4, 8]`,
/// rejecting layouts whose minimum suboptimality gap is below 0.5.
fn draw_line_cluster(m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, OracleError> {
    const TRIES: usize = 1000;
    'outer: for _ in 0..TRIES {
        let mut pos = vec![0.0];
        for _ in 1..m {
            let gap = 4.0 + 4.0 * rng.gen::<f64>();
            pos.push(pos.last().unwrap() + gap);
        }
        if m >= 3 {
            // Interior points: the two adjacent gaps must differ by >= 0.5
            // so no argmin comes close to a tie.
            for w in pos.windows(3) {
                let left = w[1] - w[0];
                let right = w[2] - w[1];
                if (left - right).abs() < 0.5 {
                    continue 'outer;
                }
            }
        }
        return Ok(pos);
    }
    Err(OracleError::Generation { attempts: TRIES, reason: "line cluster gap rejection".into() })
}

/// `c` well-separated clusters of `m` points on a line. Inter-cluster
/// gaps are `margin * (6 * radius(1) + 2 * max cluster diameter)` so the
/// single-sample elimination condition holds for the supplied policy.
pub fn generate_separated_clusters(
    c: usize,
    m: usize,
    margin: f64,
    policy: &ConfidencePolicy,
    seed: u64,
) -> Result<Dataset, OracleError> {
    if c < 1 || m < 2 {
        return Err(OracleError::Domain("need c >= 1 clusters of m >= 2 points".into()));
    }
    if !(margin > 1.0) {
        return Err(OracleError::Domain("margin must exceed 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters: Vec<Vec<f64>> =
        (0..c).map(|_| draw_line_cluster(m, &mut rng)).collect::<Result<_, _>>()?;
    let max_diam = clusters
        .iter()
        .map(|p| p.last().unwrap() - p[0])
        .fold(0.0f64, f64::max);
    let r1 = policy.radius(1);
    let gap = margin * (6.0 * r1 + 2.0 * max_diam);
    let mut points = Vec::with_capacity(c * m);
    let mut labels = Vec::with_capacity(c * m);
    let mut offset = 0.0;
    for (idx, cluster) in clusters.iter().enumerate() {
        for &p in cluster {
            points.push(vec![offset + p]);
            labels.push(idx);
        }
        offset += (cluster.last().unwrap() - cluster[0]) + gap;
    }
    let info = GeneratorInfo {
        name: "separated_clusters".into(),
        params: serde_json::json!({
            "clusters": c, "points_per_cluster": m, "margin": margin,
            "radius_one": r1,
        }),
        seed: Some(seed),
    };
    let ds = dataset_from_points(&points, Some(labels), info)?;
    if !points.is_empty() && !points.iter().all(|p| p[0].is_finite()) {
        return Err(OracleError::Generation { attempts: 1, reason: "coordinates overflowed".into() });
    }
    let check = check_cluster_condition(&ds, ds.labels().unwrap(), policy);
    if !check.pass {
        return Err(OracleError::Generation {
            attempts: 1,
            reason: format!("cluster condition failed: {:?}", check.failures.first()),
        });
    }
    Ok(ds)
}

/// `c` well-separated clusters of `m` points (m even) whose
/// intra-cluster geometry is difficulty-controlled: points pair up as
/// twins at distance in `[6, 6.3]` while every other intra-cluster
/// distance is drawn from `[9.3, 12]`. All intra distances therefore lie
/// in `[D/2, D]` with `D = 12` — automatically metric — every point's
/// nearest neighbor is its twin, and the smallest suboptimality gap is a
/// size-independent `3`, so scaling sweeps over `n` are not confounded by
/// gap drift. Clusters sit on a line with gaps of
/// `margin * (6 * radius(1) + 2 * D)`, so the single-sample elimination
/// condition holds for the supplied policy.
pub fn generate_twin_clusters(
    c: usize,
    m: usize,
    margin: f64,
    policy: &ConfidencePolicy,
    seed: u64,
) -> Result<Dataset, OracleError> {
    const D: f64 = 12.0;
    if c < 1 || m < 2 || m % 2 != 0 {
        return Err(OracleError::Domain("need c >= 1 clusters of even m >= 2 points".into()));
    }
    if !(margin > 1.0) {
        return Err(OracleError::Domain("margin must exceed 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r1 = policy.radius(1);
    let gap = margin * (6.0 * r1 + 2.0 * D);
    let n = c * m;
    let mut dist = SymmetricMatrix::new(n, 0.0);
    let mut labels = Vec::with_capacity(n);
    for cluster in 0..c {
        let base = cluster * m;
        labels.extend(std::iter::repeat(cluster).take(m));
        for i in 0..m {
            for k in (i + 1)..m {
                let d = if k == i + 1 && i % 2 == 0 {
                    // Twin pair (base+2t, base+2t+1).
                    6.0 + 0.3 * rng.gen::<f64>()
                } else {
                    9.3 + 2.7 * rng.gen::<f64>()
                };
                dist.set(base + i, base + k, d);
            }
        }
    }
    for i in 0..n {
        for k in (i + 1)..n {
            let (ci, ck) = (labels[i], labels[k]);
            if ci != ck {
                dist.set(i, k, gap * (ck - ci) as f64);
            }
        }
    }
    let info = GeneratorInfo {
        name: "twin_clusters".into(),
        params: serde_json::json!({
            "clusters": c, "points_per_cluster": m, "margin": margin,
            "radius_one": r1,
        }),
        seed: Some(seed),
    };
    let ds = Dataset::new_metric(dist, Some(labels), info)?;
    let check = check_cluster_condition(&ds, ds.labels().unwrap(), policy);
    if !check.pass {
        return Err(OracleError::Generation {
            attempts: 1,
            reason: format!("cluster condition failed: {:?}", check.failures.first()),
        });
    }
    Ok(ds)
}

/// Balanced binary hierarchy of clusters on a line: `2^levels` leaves of
/// `leaf_size` points, with every cluster at every level satisfying the
/// single-sample elimination condition for the supplied policy (with the
/// given margin above the minimum separation). Labels are leaf indices.
pub fn generate_hierarchical(
    levels: u32,
    leaf_size: usize,
    margin: f64,
    policy: &ConfidencePolicy,
    seed: u64,
) -> Result<Dataset, OracleError> {
    if levels < 1 {
        return Err(OracleError::Domain("levels must be at least 1".into()));
    }
    if leaf_size < 2 {
        return Err(OracleError::Domain("leaf_size must be at least 2".into()));
    }
    if !(margin > 1.0) {
        return Err(OracleError::Domain("margin must exceed 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r1 = policy.radius(1);
    let leaves = 1usize << levels;
    // blocks[i] holds point positions of the i-th block, merged pairwise
    // level by level.
    let mut blocks: Vec<Vec<f64>> =
        (0..leaves).map(|_| draw_line_cluster(leaf_size, &mut rng)).collect::<Result<_, _>>()?;
    while blocks.len() > 1 {
        let widest = blocks
            .iter()
            .map(|b| b.last().unwrap() - b[0])
            .fold(0.0f64, f64::max);
        let gap = margin * (6.0 * r1 + 2.0 * widest);
        let mut merged = Vec::with_capacity(blocks.len() / 2);
        for pair in blocks.chunks(2) {
            let left = &pair[0];
            let right = &pair[1];
            let shift = (left.last().unwrap() - left[0]) + gap - right[0];
            let mut block = left.clone();
            block.extend(right.iter().map(|&p| p + shift));
            merged.push(block);
        }
        blocks = merged;
    }
    let positions = blocks.pop().unwrap();
    if !positions.iter().all(|p| p.is_finite()) {
        return Err(OracleError::Generation {
            attempts: 1,
            reason: format!("coordinates overflowed at {levels} levels"),
        });
    }
    let points: Vec<Vec<f64>> = positions.iter().map(|&p| vec![p]).collect();
    let labels: Vec<usize> = (0..leaves).flat_map(|l| std::iter::repeat(l).take(leaf_size)).collect();
    let info = GeneratorInfo {
        name: "hierarchical".into(),
        params: serde_json::json!({
            "levels": levels, "leaf_size": leaf_size, "margin": margin,
            "radius_one": r1,
        }),
        seed: Some(seed),
    };
    let ds = dataset_from_points(&points, Some(labels), info)?;
    // The condition must hold at every level of the tree.
    for level in 1..=levels {
        let level_labels: Vec<usize> =
            ds.labels().unwrap().iter().map(|&leaf| leaf >> (levels - level)).collect();
        let check = check_cluster_condition(&ds, &level_labels, policy);
        if !check.pass {
            return Err(OracleError::Generation {
                attempts: 1,
                reason: format!(
                    "cluster condition failed at level {level}: {:?}",
                    check.failures.first()
                ),
            });
        }
    }
    Ok(ds)
}

/// Circulant dataset of `2 * nu` points whose first row descends from
/// `2r` to `r` with profile exponent `alpha` and mirrors back up; every
/// point sees the same multiset of distances and gaps.
pub fn generate_circulant(nu: usize, alpha: f64, r: f64) -> Result<Dataset, OracleError> {
    if nu < 2 {
        return Err(OracleError::Domain(format!("nu {nu} must be at least 2")));
    }
    if !(alpha > 0.0) || !(r > 0.0) {
        return Err(OracleError::Domain("alpha and r must be positive".into()));
    }
    let n = 2 * nu;
    let mut first_row = vec![0.0; n];
    for s in 1..=nu {
        let v = r * (2.0 - (((s - 1) as f64) / ((nu - 1) as f64)).powf(alpha));
        first_row[s] = v;
        first_row[(2 * nu - s) % n] = v;
    }
    let mut m = SymmetricMatrix::new(n, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            m.set(i, j, first_row[(j - i) % n]);
        }
    }
    let info = GeneratorInfo {
        name: "circulant".into(),
        params: serde_json::json!({ "nu": nu, "alpha": alpha, "r": r }),
        seed: None,
    };
    Ok(Dataset::new_metric(m, None, info)?)
}

/// Result of checking the single-sample elimination condition on a
/// labeled partition.
#[derive(Debug, Clone)]
pub struct ClusterCheck {
    pub pass: bool,
    /// Violating `(cluster, i, j, k)` witnesses.
    pub failures: Vec<(usize, usize, usize, usize)>,
}

/// For every cluster `C` and every `i, j` in `C`, all points within
/// `6 * radius(1) + 2 * d(i, j)` of `i` must themselves lie in `C`.
pub fn check_cluster_condition(
    dataset: &Dataset,
    labels: &[usize],
    policy: &ConfidencePolicy,
) -> ClusterCheck {
    let n = dataset.n();
    let r1 = policy.radius(1);
    let mut failures = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if labels[j] != labels[i] || j == i {
                continue;
            }
            let reach = 6.0 * r1 + 2.0 * dataset.distance(i, j);
            for k in 0..n {
                if k != i && labels[k] != labels[i] && dataset.distance(i, k) < reach {
                    failures.push((labels[i], i, j, k));
                }
            }
        }
    }
    ClusterCheck { pass: failures.is_empty(), failures }
}
