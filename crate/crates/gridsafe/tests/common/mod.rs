//! Independent oracles for the acceptance suite.
//!
//! Everything here recomputes results from first principles through a
//! different algorithm than the library uses: linear systems are solved by
//! dense Gaussian elimination instead of conjugate gradient, cost totals are
//! replayed from recorded positions instead of episode state, masks are
//! enumerated by breadth-first search, and the toy constrained MDP is solved
//! by exhaustive grid enumeration. The acceptance tests compare library
//! output against these references and never the other way around.

#![allow(dead_code)] // each acceptance test exercises a subset

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;

use gridsafe::constraint::ConstraintSpec;
use gridsafe::grid::{EntityKind, GridMap, Observation, Pos, WINDOW};

// ---------------------------------------------------------------------------
// Dense linear algebra
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            assert_eq!(row.len(), n);
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-12, "singular system in dense solve");
        for row in col + 1..n {
            let f = m[row][col] / p;
            if f != 0.0 {
                for k in col..=n {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = m[row][n];
        for k in row + 1..n {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    x
}

/// Random symmetric positive-definite matrix `A^T A + boost * I`.
pub fn random_spd<R: Rng>(rng: &mut R, dim: usize, boost: f64) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut m = vec![vec![0.0; dim]; dim];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..dim).map(|k| a[k][i] * a[k][j]).sum();
            if i == j {
                *v += boost;
            }
        }
    }
    m
}

/// Random vector with entries in `[lo, hi)` and norm at least 0.1.
pub fn random_unit_bounded<R: Rng>(rng: &mut R, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(lo..hi)).collect();
        if dot(&v, &v) > 0.01 {
            return v;
        }
    }
}

// ---------------------------------------------------------------------------
// Trust-region and projection references
// ---------------------------------------------------------------------------

/// Maximizer of `g . x` subject to `0.5 x^T F x <= delta`:
/// `sqrt(2 delta / (g^T F^-1 g)) F^-1 g`, with the solve done densely.
pub fn trpo_oracle(f: &[Vec<f64>], g: &[f64], delta: f64) -> Vec<f64> {
    let x = solve_dense(f, g);
    let quad = dot(g, &x);
    assert!(quad > 0.0, "non-positive curvature in oracle");
    let scale = (2.0 * delta / quad).sqrt();
    x.iter().map(|v| scale * v).collect()
}

/// Metric projection of `step` onto the half-space `a . x + b <= 0`:
/// the KKT solution of `min (x-step)^T L (x-step) / 2` subject to the
/// constraint. `l_inv_a` must be `L^-1 a` (identity metric: `a` itself).
pub fn project_oracle(step: &[f64], a: &[f64], b: f64, l_inv_a: &[f64]) -> Vec<f64> {
    let violation = dot(a, step) + b;
    if violation <= 0.0 {
        return step.to_vec();
    }
    let denom = dot(a, l_inv_a);
    assert!(denom > 1e-12, "degenerate constraint in oracle");
    let coef = violation / denom;
    let out: Vec<f64> = step
        .iter()
        .zip(l_inv_a)
        .map(|(s, l)| s - coef * l)
        .collect();
    // KKT stationarity: the active constraint holds with equality.
    assert!((dot(a, &out) + b).abs() < 1e-8 * (1.0 + b.abs()));
    out
}

/// Composition of two half-space corrections, each computed against the
/// *uncorrected* step (the three-step schedule applies them additively).
pub fn three_step_oracle(
    step: &[f64],
    a1: &[f64],
    b1: f64,
    l_inv_a1: &[f64],
    a2: &[f64],
    b2: f64,
    l_inv_a2: &[f64],
) -> Vec<f64> {
    let coef = |a: &[f64], b: f64, l_inv: &[f64]| {
        let violation = dot(a, step) + b;
        if violation <= 0.0 {
            0.0
        } else {
            let denom = dot(a, l_inv);
            assert!(denom > 1e-12);
            violation / denom
        }
    };
    let c1 = coef(a1, b1, l_inv_a1);
    let c2 = coef(a2, b2, l_inv_a2);
    step.iter()
        .zip(l_inv_a1.iter().zip(l_inv_a2))
        .map(|(s, (l1, l2))| s - c1 * l1 - c2 * l2)
        .collect()
}

// ---------------------------------------------------------------------------
// Cost replay
// ---------------------------------------------------------------------------

/// Recomputes per-step constraint costs for a recorded trajectory from the
/// definitions alone. `positions[0]` is the start cell; each later entry is
/// the agent's cell after one action (unchanged when a wall blocked it).
///
/// The *original* map is authoritative throughout: cost entities never move
/// or disappear, and collected rewards only ever turn reward cells empty,
/// which no cost-entity comparison can confuse.
pub fn replay_costs(map: &GridMap, positions: &[Pos], spec: &ConstraintSpec) -> Vec<f64> {
    let mut visited: BTreeSet<EntityKind> = BTreeSet::new();
    visited.insert(map.get(positions[0]));
    let mut out = Vec::with_capacity(positions.len().saturating_sub(1));
    for w in positions.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        let moved = prev != cur;
        let cost = match *spec {
            ConstraintSpec::Budgetary { entity, .. } => {
                if moved && map.get(cur) == entity {
                    1.0
                } else {
                    0.0
                }
            }
            ConstraintSpec::Relational {
                entity, distance, ..
            } => {
                let near = map.positions_of(entity).iter().any(|&(r, c)| {
                    (r.abs_diff(cur.0) + c.abs_diff(cur.1)) as u32 <= distance
                });
                if near {
                    1.0
                } else {
                    0.0
                }
            }
            ConstraintSpec::Sequential {
                trigger, forbidden, ..
            } => {
                if visited.contains(&trigger) && moved && map.get(cur) == forbidden {
                    1.0
                } else {
                    0.0
                }
            }
        };
        visited.insert(map.get(cur));
        out.push(cost);
    }
    out
}

/// Index of the first position (0 = start) whose cell kind is `trigger`,
/// or `None` if the trajectory never touches it.
pub fn first_trigger_index(map: &GridMap, positions: &[Pos], trigger: EntityKind) -> Option<usize> {
    positions.iter().position(|&p| map.get(p) == trigger)
}

// ---------------------------------------------------------------------------
// Mask enumeration
// ---------------------------------------------------------------------------

/// Window cells forbidden under `spec`, enumerated from the definitions.
/// The relational zone is grown by breadth-first expansion on the 4-neighbor
/// lattice (Manhattan distance ignores walls, so the unobstructed BFS ball is
/// exactly the right set).
pub fn mask_oracle(
    obs: &Observation,
    spec: &ConstraintSpec,
    visited: &BTreeSet<EntityKind>,
) -> [bool; WINDOW * WINDOW] {
    let mut out = [false; WINDOW * WINDOW];
    match *spec {
        ConstraintSpec::Budgetary { entity, .. } => {
            for r in 0..WINDOW {
                for c in 0..WINDOW {
                    out[r * WINDOW + c] = obs.get(r, c) == entity;
                }
            }
        }
        ConstraintSpec::Relational {
            entity, distance, ..
        } => {
            let mut dist = [u32::MAX; WINDOW * WINDOW];
            let mut queue = VecDeque::new();
            for r in 0..WINDOW {
                for c in 0..WINDOW {
                    if obs.get(r, c) == entity {
                        dist[r * WINDOW + c] = 0;
                        queue.push_back((r, c));
                    }
                }
            }
            while let Some((r, c)) = queue.pop_front() {
                let d = dist[r * WINDOW + c];
                if d >= distance {
                    continue;
                }
                let mut neighbors = Vec::with_capacity(4);
                if r > 0 {
                    neighbors.push((r - 1, c));
                }
                if r + 1 < WINDOW {
                    neighbors.push((r + 1, c));
                }
                if c > 0 {
                    neighbors.push((r, c - 1));
                }
                if c + 1 < WINDOW {
                    neighbors.push((r, c + 1));
                }
                for (nr, nc) in neighbors {
                    if dist[nr * WINDOW + nc] == u32::MAX {
                        dist[nr * WINDOW + nc] = d + 1;
                        queue.push_back((nr, nc));
                    }
                }
            }
            for i in 0..WINDOW * WINDOW {
                out[i] = dist[i] <= distance;
            }
        }
        ConstraintSpec::Sequential {
            trigger, forbidden, ..
        } => {
            if visited.contains(&trigger) {
                for r in 0..WINDOW {
                    for c in 0..WINDOW {
                        out[r * WINDOW + c] = obs.get(r, c) == forbidden;
                    }
                }
            }
        }
    }
    out
}

/// Expected budget overlay: cumulative cost minus threshold at masked cells,
/// zero elsewhere.
pub fn budget_overlay_oracle(
    mask: &[bool; WINDOW * WINDOW],
    cumulative: f64,
    threshold: f64,
) -> [f64; WINDOW * WINDOW] {
    let mut out = [0.0; WINDOW * WINDOW];
    for (o, &m) in out.iter_mut().zip(mask) {
        if m {
            *o = cumulative - threshold;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Two-state constrained MDP
// ---------------------------------------------------------------------------

/// Exact `(J_R, J_C)` of the stationary policy that takes the risky action
/// with probability `p0` in state 0 and `p1` in state 1, on the two-state
/// chain (risky from state 0: reward 2, cost 1, moves to state 1; risky from
/// state 1: reward 1, cost 1, stays; safe action: reward 0, cost 0, moves to
/// state 0). Computed by forward rollout of the state distribution, starting
/// in state 0, over `t_max` steps.
pub fn toy_dp(p0: f64, p1: f64, t_max: usize) -> (f64, f64) {
    let (mut d0, mut d1) = (1.0f64, 0.0f64);
    let (mut j_r, mut j_c) = (0.0, 0.0);
    for _ in 0..t_max {
        j_r += d0 * p0 * 2.0 + d1 * p1 * 1.0;
        j_c += d0 * p0 + d1 * p1;
        let n0 = d0 * (1.0 - p0) + d1 * (1.0 - p1);
        let n1 = d0 * p0 + d1 * p1;
        d0 = n0;
        d1 = n1;
    }
    (j_r, j_c)
}

/// Constrained optimum of the two-state chain over the full stationary
/// policy class, by exhaustive enumeration of a 1001 x 1001 grid over
/// `(p0, p1)` with exact evaluation at every point.
pub fn toy_optimum(t_max: usize, h: f64) -> (f64, f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=1000usize {
        let p0 = i as f64 / 1000.0;
        for j in 0..=1000usize {
            let p1 = j as f64 / 1000.0;
            let (j_r, j_c) = toy_dp(p0, p1, t_max);
            if j_c <= h + 1e-12 && j_r > best.0 {
                best = (j_r, p0, p1);
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Small statistics
// ---------------------------------------------------------------------------

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}
