//! Brute-force reference routes used to verify the main implementation.
//!
//! Everything here is deliberately written along a different algorithmic
//! path than the production code: Jacobi (snapshot-based) fixpoint
//! iteration instead of in-place sweeps, and direct exhaustive argmin
//! scans. Verification suites compare the two routes entry by entry.

use crate::bounds::BoundState;
use crate::metric::Dataset;

/// Tightest combined bounds `(lower, upper)` per pair, computed by
/// snapshot-based fixpoint iteration over the triangle recursion.
///
/// Uppers satisfy `ub(j,k) = min(U(j,k), min_l ub(l,j) + ub(l,k))` — the
/// metric closure of the concentration uppers. Lowers then satisfy
/// `lb(j,k) = max(L(j,k), max_l (max(lb(l,j), lb(l,k)) - min(ub(l,j),
/// ub(l,k)))+)` with the no-information conventions of the production
/// rules.
pub fn brute_force_tightest_bounds(state: &BoundState) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = state.n();
    let mut ub = vec![vec![f64::INFINITY; n]; n];
    let mut lb = vec![vec![f64::NEG_INFINITY; n]; n];
    for j in 0..n {
        for k in 0..n {
            if j != k {
                ub[j][k] = state.u.get(j, k);
                lb[j][k] = state.l.get(j, k);
            }
        }
    }
    // Jacobi iteration for the uppers.
    loop {
        let mut next = ub.clone();
        let mut changed = false;
        for j in 0..n {
            for k in (j + 1)..n {
                for l in 0..n {
                    if l == j || l == k {
                        continue;
                    }
                    let cand = ub[l][j] + ub[l][k];
                    if cand < next[j][k] {
                        next[j][k] = cand;
                        next[k][j] = cand;
                        changed = true;
                    }
                }
            }
        }
        ub = next;
        if !changed {
            break;
        }
    }
    // Jacobi iteration for the lowers, against the converged uppers.
    loop {
        let mut next = lb.clone();
        let mut changed = false;
        for j in 0..n {
            for k in (j + 1)..n {
                for l in 0..n {
                    if l == j || l == k {
                        continue;
                    }
                    let max_low = lb[l][j].max(lb[l][k]);
                    if max_low == f64::NEG_INFINITY {
                        continue;
                    }
                    let min_up = ub[l][j].min(ub[l][k]);
                    let cand = (max_low - min_up).max(0.0);
                    if cand > next[j][k] {
                        next[j][k] = cand;
                        next[k][j] = cand;
                        changed = true;
                    }
                }
            }
        }
        lb = next;
        if !changed {
            break;
        }
    }
    (lb, ub)
}

/// Exhaustive argmin nearest-neighbor scan; `None` on an exact tie.
pub fn brute_force_nn(dataset: &Dataset) -> Option<Vec<usize>> {
    let n = dataset.n();
    let mut nn = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        let mut tie = false;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = dataset.distance(i, j);
            if d < best_d {
                best_d = d;
                best = j;
                tie = false;
            } else if d == best_d {
                tie = true;
            }
        }
        if tie {
            return None;
        }
        nn.push(best);
    }
    Some(nn)
}

/// Gap of ordered pair `(j, k)` evaluated straight from the definition.
pub fn brute_force_gap(dataset: &Dataset, j: usize, k: usize) -> Option<f64> {
    let nn = brute_force_nn(dataset)?;
    let d_star = dataset.distance(j, nn[j]);
    if k != nn[j] {
        Some(dataset.distance(j, k) - d_star)
    } else {
        let n = dataset.n();
        (0..n)
            .filter(|&m| m != j && m != nn[j])
            .map(|m| dataset.distance(j, m) - d_star)
            .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))))
    }
}
