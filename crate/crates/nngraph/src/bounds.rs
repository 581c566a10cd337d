//! Confidence-radius policies, the shared bound state, triangle-inequality
//! bound propagation and active-set computation.

use crate::matrix::SymmetricMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("confidence radius undefined for T = 0")]
    ZeroSamples,
    #[error("{0}")]
    Domain(String),
}

/// Confidence-interval half-width policy.
///
/// `HoeffdingUnion` is the time-uniform Hoeffding bound with the union
/// over rounds already folded in, so `radius` consumes the total failure
/// budget directly. `Lil` is a finite-time law-of-the-iterated-logarithm
/// bound evaluated at the per-round budget `delta_total / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConfidencePolicy {
    HoeffdingUnion { delta_total: f64, n: usize },
    Lil { delta_total: f64, n: usize, eps: f64 },
}

impl ConfidencePolicy {
    pub fn hoeffding(delta_total: f64, n: usize) -> Self {
        ConfidencePolicy::HoeffdingUnion { delta_total, n }
    }

    pub fn lil(delta_total: f64, n: usize, eps: f64) -> Self {
        ConfidencePolicy::Lil { delta_total, n, eps }
    }

    /// Half-width after `t >= 1` samples. Unsampled pairs carry infinite
    /// sentinel bounds and must never reach this.
    pub fn radius(&self, t: u64) -> f64 {
        debug_assert!(t >= 1, "radius queried at T = 0");
        match *self {
            ConfidencePolicy::HoeffdingUnion { delta_total, n } => {
                hoeffding_radius(t, delta_total, n).expect("policy parameters validated upstream")
            }
            ConfidencePolicy::Lil { delta_total, n, eps } => {
                lil_radius(t, eps, delta_total / n as f64)
                    .expect("policy parameters validated upstream")
            }
        }
    }
}

/// Time-uniform Hoeffding half-width `sqrt(2 ln(4 n^2 T^2 / delta) / T)`.
pub fn hoeffding_radius(t: u64, delta_total: f64, n: usize) -> Result<f64, BoundError> {
    if t == 0 {
        return Err(BoundError::ZeroSamples);
    }
    if !(delta_total > 0.0 && delta_total < 1.0) {
        return Err(BoundError::Domain(format!("delta {delta_total} must lie in (0, 1)")));
    }
    if n < 2 {
        return Err(BoundError::Domain(format!("n {n} must be at least 2")));
    }
    let tf = t as f64;
    let nf = n as f64;
    Ok((2.0 * (4.0 * nf * nf * tf * tf / delta_total).ln() / tf).sqrt())
}

/// Finite-time LIL half-width
/// `(1 + sqrt(eps)) * sqrt((2 (1 + eps) / T) * ln(log2(2T) (1 + eps) / delta))`.
pub fn lil_radius(t: u64, eps: f64, delta_round: f64) -> Result<f64, BoundError> {
    if t == 0 {
        return Err(BoundError::ZeroSamples);
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(BoundError::Domain(format!("eps {eps} must lie in (0, 1)")));
    }
    if !(delta_round > 0.0 && delta_round < 1.0) {
        return Err(BoundError::Domain(format!("delta {delta_round} must lie in (0, 1)")));
    }
    let tf = t as f64;
    let log_term = ((2.0 * tf).log2() * (1.0 + eps) / delta_round).ln();
    Ok((1.0 + eps.sqrt()) * ((2.0 * (1.0 + eps) / tf) * log_term).sqrt())
}

/// The six matrices shared across rounds: empirical means, sample counts,
/// concentration bounds and triangle bounds, plus the radius policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundState {
    pub dhat: SymmetricMatrix,
    pub t: SymmetricMatrix,
    pub u: SymmetricMatrix,
    pub l: SymmetricMatrix,
    pub utri: SymmetricMatrix,
    pub ltri: SymmetricMatrix,
    pub policy: ConfidencePolicy,
}

impl BoundState {
    pub fn new(n: usize, policy: ConfidencePolicy) -> Self {
        BoundState {
            dhat: SymmetricMatrix::new(n, 0.0),
            t: SymmetricMatrix::new(n, 0.0),
            u: SymmetricMatrix::new(n, f64::INFINITY),
            l: SymmetricMatrix::new(n, f64::NEG_INFINITY),
            utri: SymmetricMatrix::new(n, f64::INFINITY),
            ltri: SymmetricMatrix::new(n, f64::NEG_INFINITY),
            policy,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.dhat.n()
    }

    #[inline]
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.t.get(i, j) as u64
    }

    /// Folds one oracle sample into the running mean and refreshes the
    /// concentration bounds for the pair. All writes are symmetric.
    pub fn record_sample(&mut self, i: usize, j: usize, value: f64) {
        debug_assert_ne!(i, j);
        let t_old = self.t.get(i, j);
        let t_new = t_old + 1.0;
        let mean = (self.dhat.get(i, j) * t_old + value) / t_new;
        self.dhat.set(i, j, mean);
        self.t.set(i, j, t_new);
        let r = self.policy.radius(t_new as u64);
        self.u.set(i, j, mean + r);
        self.l.set(i, j, mean - r);
    }

    /// Installs concentration bounds directly, bypassing sampling. Used by
    /// verification tooling that replays arbitrary bound configurations.
    pub fn install_concentration(&mut self, i: usize, j: usize, lower: f64, upper: f64) {
        self.l.set(i, j, lower);
        self.u.set(i, j, upper);
    }

    /// Tightest known upper bound for a pair (concentration or triangle).
    #[inline]
    pub fn upper(&self, i: usize, j: usize) -> f64 {
        self.u.get(i, j).min(self.utri.get(i, j))
    }

    /// Tightest known lower bound for a pair (concentration or triangle).
    #[inline]
    pub fn lower(&self, i: usize, j: usize) -> f64 {
        self.l.get(i, j).max(self.ltri.get(i, j))
    }

    /// JSON snapshot of the six matrices (lower triangles) and the policy.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n(),
            "policy": self.policy,
            "dhat": self.dhat.lower_triangle(),
            "t": self.t.lower_triangle(),
            "u": self.u.lower_triangle(),
            "l": self.l.lower_triangle(),
            "utri": self.utri.lower_triangle(),
            "ltri": self.ltri.lower_triangle(),
        })
    }

    /// First pair whose concentration interval misses the true distance,
    /// if any. Audit helper for coverage experiments.
    pub fn first_concentration_violation(
        &self,
        truth: &crate::metric::Dataset,
    ) -> Option<(usize, usize)> {
        let n = self.n();
        for i in 0..n {
            for j in 0..i {
                if self.count(i, j) >= 1 {
                    let d = truth.distance(i, j);
                    if d < self.l.get(i, j) || d > self.u.get(i, j) {
                        return Some((i, j));
                    }
                }
            }
        }
        None
    }

    /// First pair whose finite triangle bounds miss the true distance.
    pub fn first_triangle_violation(
        &self,
        truth: &crate::metric::Dataset,
    ) -> Option<(usize, usize)> {
        let n = self.n();
        for i in 0..n {
            for j in 0..i {
                let d = truth.distance(i, j);
                let ut = self.utri.get(i, j);
                let lt = self.ltri.get(i, j);
                if (ut.is_finite() && d > ut + 1e-9) || (lt.is_finite() && d < lt - 1e-9) {
                    return Some((i, j));
                }
            }
        }
        None
    }
}

/// Upper bound on `d(j, k)` routed through intermediary `i`:
/// `min{U, Utri}(i, j) + min{U, Utri}(i, k)`, or `+inf` if either side is
/// unknown.
pub fn triangle_upper_via(i: usize, j: usize, k: usize, state: &BoundState) -> f64 {
    debug_assert!(i != j && i != k && j != k);
    let a = state.upper(i, j);
    let b = state.upper(i, k);
    if a.is_infinite() || b.is_infinite() {
        f64::INFINITY
    } else {
        a + b
    }
}

/// Lower bound on `d(j, k)` routed through intermediary `i`:
/// `(max of the four lower bounds - min of the four upper bounds)+`,
/// or `-inf` when no finite lower-bound input exists.
pub fn triangle_lower_via(i: usize, j: usize, k: usize, state: &BoundState) -> f64 {
    debug_assert!(i != j && i != k && j != k);
    let max_low = state.lower(i, j).max(state.lower(i, k));
    if max_low == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let min_up = state.upper(i, j).min(state.upper(i, k));
    (max_low - min_up).max(0.0)
}

/// Sweeps all intermediaries for every pair, tightening `Utri` / `Ltri`
/// in place, and repeats until a full pass changes nothing (at most `n`
/// passes). Entries only ever tighten, so bounds stay monotone across
/// calls.
pub fn propagate_triangle_bounds(state: &mut BoundState) {
    let n = state.n();
    for _pass in 0..n {
        let mut changed = false;
        for j in 0..n {
            for k in (j + 1)..n {
                let mut best_u = state.utri.get(j, k);
                let mut best_l = state.ltri.get(j, k);
                for i in 0..n {
                    if i == j || i == k {
                        continue;
                    }
                    let cu = triangle_upper_via(i, j, k, state);
                    if cu < best_u {
                        best_u = cu;
                    }
                    let cl = triangle_lower_via(i, j, k, state);
                    if cl > best_l {
                        best_l = cl;
                    }
                }
                if best_u < state.utri.get(j, k) {
                    state.utri.set(j, k, best_u);
                    changed = true;
                }
                if best_l > state.ltri.get(j, k) {
                    state.ltri.set(j, k, best_l);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Candidates not yet ruled out as `j`'s nearest neighbor, using both
/// concentration and triangle bounds: `a` is active when its tightest
/// lower bound is strictly below the smallest tightest upper bound over
/// all `k != j`.
pub fn active_set(j: usize, state: &BoundState) -> Vec<usize> {
    let n = state.n();
    let mut threshold = f64::INFINITY;
    for k in 0..n {
        if k != j {
            threshold = threshold.min(state.upper(j, k));
        }
    }
    (0..n)
        .filter(|&a| a != j && state.lower(a, j) < threshold)
        .collect()
}

/// Active set using concentration bounds only: `a` survives when
/// `L(a, k) <= 2 U(j, k)` for every `k` and `L(a, j) < min_k U(j, k)`.
pub fn active_set_easy(j: usize, state: &BoundState) -> Vec<usize> {
    let n = state.n();
    let mut min_u = f64::INFINITY;
    for k in 0..n {
        if k != j {
            min_u = min_u.min(state.u.get(j, k));
        }
    }
    let mut out = Vec::new();
    'cands: for a in 0..n {
        if a == j || state.l.get(a, j) >= min_u {
            continue;
        }
        for k in 0..n {
            if state.l.get(a, k) > 2.0 * state.u.get(j, k) {
                continue 'cands;
            }
        }
        out.push(a);
    }
    out
}
