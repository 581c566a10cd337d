//! Ground-truth datasets, metric validation and gap / complexity
//! computations.

use crate::matrix::SymmetricMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("point {point} has an exactly tied minimum over {tied:?}")]
    Tie { point: usize, tied: Vec<usize> },
    #[error("negative distance {value} at ({i}, {j})")]
    NegativeDistance { i: usize, j: usize, value: f64 },
    #[error("nonzero diagonal {value} at {i}")]
    NonzeroDiagonal { i: usize, value: f64 },
    #[error("triangle inequality violated on ({i}, {j}, {k}): {lhs} > {rhs}")]
    TriangleViolation { i: usize, j: usize, k: usize, lhs: f64, rhs: f64 },
    #[error("{0}")]
    Domain(String),
    #[error("dataset needs at least {need} points, got {got}")]
    TooSmall { need: usize, got: usize },
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
}

/// Provenance record for a dataset: generator name, parameters, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GeneratorInfo {
    pub fn named(name: &str) -> Self {
        GeneratorInfo { name: name.to_string(), params: serde_json::Value::Null, seed: None }
    }
}

/// Ground-truth distance matrix with optional cluster labels and embedding
/// coordinates. Used for oracle construction and evaluation only; learners
/// never read the true distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    distances: SymmetricMatrix,
    labels: Option<Vec<usize>>,
    coords: Option<Vec<Vec<f64>>>,
    generator: GeneratorInfo,
}

impl Dataset {
    /// Builds a dataset and validates the full set of metric axioms,
    /// including the triangle inequality over all triples.
    pub fn new_metric(
        distances: SymmetricMatrix,
        labels: Option<Vec<usize>>,
        generator: GeneratorInfo,
    ) -> Result<Self, MetricError> {
        let ds = Self::new_quasi(distances, labels, generator)?;
        ds.check_triangle()?;
        Ok(ds)
    }

    /// Builds a dataset without the triangle-inequality check. Symmetry,
    /// nonnegativity and a zero diagonal are still enforced.
    pub fn new_quasi(
        distances: SymmetricMatrix,
        labels: Option<Vec<usize>>,
        generator: GeneratorInfo,
    ) -> Result<Self, MetricError> {
        let n = distances.n();
        for i in 0..n {
            let d = distances.get(i, i);
            if d != 0.0 {
                return Err(MetricError::NonzeroDiagonal { i, value: d });
            }
            for j in 0..i {
                let v = distances.get(i, j);
                if !(v >= 0.0) {
                    return Err(MetricError::NegativeDistance { i, j, value: v });
                }
            }
        }
        if let Some(ref l) = labels {
            if l.len() != n {
                return Err(MetricError::Domain(format!(
                    "labels length {} does not match n={}",
                    l.len(),
                    n
                )));
            }
        }
        Ok(Dataset { distances, labels, coords: None, generator })
    }

    pub fn with_coords(mut self, coords: Vec<Vec<f64>>) -> Self {
        self.coords = Some(coords);
        self
    }

    fn check_triangle(&self) -> Result<(), MetricError> {
        let n = self.n();
        for i in 0..n {
            for j in (i + 1)..n {
                let dij = self.distance(i, j);
                for k in 0..n {
                    if k == i || k == j {
                        continue;
                    }
                    let rhs = self.distance(i, k) + self.distance(k, j);
                    if dij > rhs + 1e-12 * (1.0 + rhs.abs()) {
                        return Err(MetricError::TriangleViolation { i, j, k, lhs: dij, rhs });
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.distances.n()
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances.get(i, j)
    }

    pub fn distances(&self) -> &SymmetricMatrix {
        &self.distances
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn coords(&self) -> Option<&[Vec<f64>]> {
        self.coords.as_deref()
    }

    pub fn generator(&self) -> &GeneratorInfo {
        &self.generator
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(DatasetFile {
            n: self.n(),
            distances: self.distances.lower_triangle(),
            labels: self.labels.clone(),
            coords: self.coords.clone(),
            generator: self.generator.clone(),
        })
        .expect("dataset serialization cannot fail")
    }

    /// Parses the on-disk format. The triangle inequality is checked when
    /// `strict` is set; quasi-metric files must use `strict = false`.
    pub fn from_json(value: serde_json::Value, strict: bool) -> Result<Self, MetricError> {
        let file: DatasetFile = serde_json::from_value(value)
            .map_err(|e| MetricError::Domain(format!("malformed dataset file: {e}")))?;
        let m = SymmetricMatrix::from_lower_triangle(file.n, &file.distances, 0.0)?;
        let ds = if strict {
            Dataset::new_metric(m, file.labels, file.generator)?
        } else {
            Dataset::new_quasi(m, file.labels, file.generator)?
        };
        Ok(match file.coords {
            Some(c) => ds.with_coords(c),
            None => ds,
        })
    }
}

/// On-disk dataset schema: strict lower triangle, row by row, so an
/// asymmetric matrix is unrepresentable.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    n: usize,
    distances: Vec<f64>,
    #[serde(default)]
    labels: Option<Vec<usize>>,
    #[serde(default)]
    coords: Option<Vec<Vec<f64>>>,
    generator: GeneratorInfo,
}

/// Suboptimality gaps for every ordered pair: `gap(j, k)` is
/// `d(j, k) - d(j, nn[j])` for `k` outside `{j, nn[j]}`, and the smallest
/// such gap for `k = nn[j]` itself.
#[derive(Debug, Clone)]
pub struct GapProfile {
    n: usize,
    nn: Vec<usize>,
    gaps: Vec<f64>,
}

impl GapProfile {
    #[inline]
    pub fn gap(&self, j: usize, k: usize) -> f64 {
        self.gaps[j * self.n + k]
    }

    pub fn nn(&self) -> &[usize] {
        &self.nn
    }

    pub fn min_gap(&self) -> f64 {
        let mut m = f64::INFINITY;
        for j in 0..self.n {
            for k in 0..self.n {
                if k != j {
                    m = m.min(self.gap(j, k));
                }
            }
        }
        m
    }
}

/// Exact nearest-neighbor graph by argmin over the true distance rows.
/// An exact tie for a row minimum is an error; the tied set is reported.
pub fn true_nn_graph(dataset: &Dataset) -> Result<Vec<usize>, MetricError> {
    let n = dataset.n();
    if n < 2 {
        return Err(MetricError::TooSmall { need: 2, got: n });
    }
    let mut nn = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = f64::INFINITY;
        let mut tied = Vec::new();
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = dataset.distance(i, j);
            if d < best {
                best = d;
                tied.clear();
                tied.push(j);
            } else if d == best {
                tied.push(j);
            }
        }
        if tied.len() > 1 {
            return Err(MetricError::Tie { point: i, tied });
        }
        nn.push(tied[0]);
    }
    Ok(nn)
}

/// Full gap profile; requires unique nearest neighbors.
pub fn gap_profile(dataset: &Dataset) -> Result<GapProfile, MetricError> {
    let n = dataset.n();
    let nn = true_nn_graph(dataset)?;
    let mut gaps = vec![f64::NAN; n * n];
    for j in 0..n {
        let d_star = dataset.distance(j, nn[j]);
        let mut min_other = f64::INFINITY;
        for k in 0..n {
            if k == j || k == nn[j] {
                continue;
            }
            let g = dataset.distance(j, k) - d_star;
            gaps[j * n + k] = g;
            min_other = min_other.min(g);
        }
        gaps[j * n + nn[j]] = min_other;
    }
    Ok(GapProfile { n, nn, gaps })
}

/// Per-pair sample complexity term `ln(n^2 / (delta * gap)) / gap^2`.
pub fn complexity_term(n: usize, delta: f64, gap: f64) -> Result<f64, MetricError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MetricError::Domain(format!("delta {delta} must lie in (0, 1)")));
    }
    if !(gap > 0.0) {
        return Err(MetricError::Domain(format!("gap {gap} must be positive")));
    }
    let n2 = (n as f64) * (n as f64);
    Ok((n2 / (delta * gap)).ln() / (gap * gap))
}

/// Smallest `c` with `d(i, j) <= c * (d(i, k) + d(j, k))` over all distinct
/// triples, i.e. the largest ratio `d(i, j) / (d(i, k) + d(j, k))`.
pub fn quasi_metric_constant(dataset: &Dataset) -> Result<f64, MetricError> {
    let n = dataset.n();
    if n < 3 {
        return Err(MetricError::TooSmall { need: 3, got: n });
    }
    for i in 0..n {
        for j in 0..i {
            if dataset.distance(i, j) == 0.0 {
                return Err(MetricError::Domain(format!(
                    "off-diagonal distance ({i}, {j}) is zero"
                )));
            }
        }
    }
    let mut c: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let dij = dataset.distance(i, j);
            for k in 0..n {
                if k == i || k == j {
                    continue;
                }
                let denom = dataset.distance(i, k) + dataset.distance(j, k);
                c = c.max(dij / denom);
            }
        }
    }
    Ok(c)
}

/// Builds a dataset from explicit embedding coordinates under the
/// Euclidean metric. Used by generators and tests.
pub fn dataset_from_points(
    points: &[Vec<f64>],
    labels: Option<Vec<usize>>,
    generator: GeneratorInfo,
) -> Result<Dataset, MetricError> {
    let n = points.len();
    let mut m = SymmetricMatrix::with_diagonal(n, 0.0, 0.0);
    for i in 0..n {
        for j in 0..i {
            let d2: f64 = points[i]
                .iter()
                .zip(points[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            m.set(i, j, d2.sqrt());
        }
    }
    Ok(Dataset::new_quasi(m, labels, generator)?.with_coords(points.to_vec()))
}

/// One-dimensional helper: absolute-difference metric over coordinates.
pub fn dataset_from_line(coords: &[f64], generator: GeneratorInfo) -> Result<Dataset, MetricError> {
    let points: Vec<Vec<f64>> = coords.iter().map(|&x| vec![x]).collect();
    dataset_from_points(&points, None, generator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn collinear() -> Dataset {
        dataset_from_line(&[0.0, 1.0, 3.0, 7.0], GeneratorInfo::named("test")).unwrap()
    }

    #[test]
    fn nn_graph_collinear() {
        assert_eq!(true_nn_graph(&collinear()).unwrap(), vec![1, 0, 1, 2]);
    }

    #[test]
    fn nn_graph_two_points() {
        let ds = dataset_from_line(&[0.0, 4.2], GeneratorInfo::named("test")).unwrap();
        assert_eq!(true_nn_graph(&ds).unwrap(), vec![1, 0]);
    }

    #[test]
    fn nn_graph_equilateral_ties() {
        let m = SymmetricMatrix::from_lower_triangle(3, &[1.0, 1.0, 1.0], 0.0).unwrap();
        let ds = Dataset::new_metric(m, None, GeneratorInfo::named("test")).unwrap();
        match true_nn_graph(&ds) {
            Err(MetricError::Tie { point: 0, tied }) => assert_eq!(tied, vec![1, 2]),
            other => panic!("expected tie, got {other:?}"),
        }
    }

    #[test]
    fn gap_profile_collinear() {
        let gp = gap_profile(&collinear()).unwrap();
        assert_eq!(gp.gap(0, 2), 2.0);
        assert_eq!(gp.gap(0, 3), 6.0);
        // Gap assigned to the nearest neighbor itself is the smallest other gap.
        assert_eq!(gp.gap(0, 1), 2.0);
    }

    #[test]
    fn gap_profile_two_clusters() {
        // Two pairs at mutual distance 10, intra-distance 1: cross gaps are 9.
        let ds = dataset_from_line(&[0.0, 1.0, 10.0, 11.0], GeneratorInfo::named("test")).unwrap();
        let gp = gap_profile(&ds).unwrap();
        assert_eq!(gp.gap(0, 2), 9.0);
        assert_eq!(gp.gap(1, 2), 8.0);
    }

    #[test]
    fn gap_profile_min_matches_nn_entry() {
        let ds = dataset_from_line(&[0.0, 1.3, 3.1, 7.9, 12.0], GeneratorInfo::named("test"))
            .unwrap();
        let gp = gap_profile(&ds).unwrap();
        let nn = gp.nn().to_vec();
        for j in 0..5 {
            let min_other = (0..5)
                .filter(|&k| k != j && k != nn[j])
                .map(|k| gp.gap(j, k))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(gp.gap(j, nn[j]), min_other);
        }
    }

    #[test]
    fn complexity_term_examples() {
        // ln(2000) / 0.25
        let h = complexity_term(10, 0.1, 0.5).unwrap();
        assert!((h - 2000f64.ln() / 0.25).abs() < 1e-12);
        assert!((h - 30.4036).abs() < 1e-3);
        // gap 1 with n^2/delta = e gives exactly 1.
        let delta = 1.0 / std::f64::consts::E;
        assert!((complexity_term(1, delta, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complexity_term_monotone_decreasing_in_gap() {
        // Strictly decreasing on (0, n^2/(delta e^2)].
        let n = 10;
        let delta = 0.1;
        let cap = (n as f64) * (n as f64) / (delta * std::f64::consts::E.powi(2));
        let mut prev = f64::INFINITY;
        let steps = 200;
        for s in 1..=steps {
            let gap = cap * s as f64 / steps as f64;
            let h = complexity_term(n, delta, gap).unwrap();
            assert!(h < prev, "not decreasing at gap={gap}");
            assert!(h >= 0.0);
            prev = h;
        }
    }

    #[test]
    fn complexity_term_domain_errors() {
        assert!(complexity_term(10, 0.1, 0.0).is_err());
        assert!(complexity_term(10, 0.1, -1.0).is_err());
        assert!(complexity_term(10, 0.0, 1.0).is_err());
        assert!(complexity_term(10, 1.0, 1.0).is_err());
    }

    #[test]
    fn quasi_metric_constant_collinear() {
        let ds = dataset_from_line(&[0.0, 1.0, 2.0], GeneratorInfo::named("test")).unwrap();
        assert!((quasi_metric_constant(&ds).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quasi_metric_constant_zero_denominator() {
        // Zero off-diagonal distance is rejected.
        let m = SymmetricMatrix::from_lower_triangle(3, &[0.0, 1.0, 1.0], 0.0).unwrap();
        let ds = Dataset::new_quasi(m, None, GeneratorInfo::named("test")).unwrap();
        assert!(quasi_metric_constant(&ds).is_err());
    }

    #[test]
    fn dataset_json_round_trip() {
        let ds = collinear();
        let v = ds.to_json();
        let back = Dataset::from_json(v, true).unwrap();
        assert_eq!(back.distances(), ds.distances());
        assert_eq!(back.coords(), ds.coords());
    }

    #[test]
    fn triangle_violation_detected() {
        let m = SymmetricMatrix::from_lower_triangle(3, &[1.0, 10.0, 1.0], 0.0).unwrap();
        assert!(Dataset::new_metric(m, None, GeneratorInfo::named("test")).is_err());
    }

    proptest! {
        /// Brute-force argmin agrees with true_nn_graph on random metric
        /// datasets (1-D embeddings are always metric).
        #[test]
        fn nn_graph_matches_brute_force(coords in proptest::collection::vec(-50.0f64..50.0, 2..12)) {
            let ds = match dataset_from_line(&coords, GeneratorInfo::named("prop")) {
                Ok(d) => d,
                Err(_) => return Ok(()),
            };
            let got = match true_nn_graph(&ds) {
                Ok(g) => g,
                Err(MetricError::Tie { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            };
            for i in 0..coords.len() {
                let mut best = usize::MAX;
                let mut best_d = f64::INFINITY;
                for j in 0..coords.len() {
                    if j != i && ds.distance(i, j) < best_d {
                        best_d = ds.distance(i, j);
                        best = j;
                    }
                }
                prop_assert_eq!(got[i], best);
            }
        }

        /// Quasi-metric constant of any metric dataset is at most 1.
        #[test]
        fn metric_implies_constant_le_one(coords in proptest::collection::vec(0.1f64..50.0, 3..10)) {
            let mut c = coords.clone();
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            c.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
            if c.len() < 3 { return Ok(()); }
            let ds = dataset_from_line(&c, GeneratorInfo::named("prop")).unwrap();
            prop_assert!(quasi_metric_constant(&ds).unwrap() <= 1.0 + 1e-12);
        }
    }
}
