//! Brute-force references: grid search for Stackelberg actions, central
//! finite differences, and gridded projections.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ddos::{best_response_set, DdosScenario};
use crate::error::{check_dim, Error, Result};
use crate::game::LeaderCost;
use crate::geometry::ConvexSet;

/// Points per dimension of a search grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidInput(format!("grid resolution {resolution} must be ≥ 2")));
        }
        Ok(Self { resolution })
    }
}

/// Lattice points of `set`: `resolution` points per coordinate of a box;
/// for a scaled simplex the first `dim − 1` coordinates step by
/// `total / (resolution − 1)` and the last one completes the sum.
pub fn grid_points(set: &ConvexSet, grid: GridSpec) -> Result<Vec<DVector<f64>>> {
    GridSpec::new(grid.resolution)?;
    let n = grid.resolution;
    match set {
        ConvexSet::Box { lower, upper } => {
            let axes: Vec<Vec<f64>> = lower
                .iter()
                .zip(upper)
                .map(|(l, u)| (0..n).map(|i| l + (u - l) * i as f64 / (n - 1) as f64).collect())
                .collect();
            Ok(cartesian(&axes))
        }
        ConvexSet::ScaledSimplex { total, dim } => {
            let step = total / (n - 1) as f64;
            let mut out = Vec::new();
            let mut idx = vec![0usize; dim - 1];
            loop {
                let used: usize = idx.iter().sum();
                if used < n {
                    let mut p: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
                    p.push((total - used as f64 * step).max(0.0));
                    out.push(DVector::from_vec(p));
                }
                // Odometer over indices with Σ idx ≤ n − 1.
                let mut pos = 0;
                loop {
                    if pos == idx.len() {
                        return Ok(out);
                    }
                    idx[pos] += 1;
                    if idx.iter().sum::<usize>() < n {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
            }
        }
        ConvexSet::Product(factors) => {
            let grids = factors.iter().map(|f| grid_points(f, grid)).collect::<Result<Vec<_>>>()?;
            let mut out = vec![Vec::new()];
            for g in &grids {
                let mut next = Vec::with_capacity(out.len() * g.len());
                for prefix in &out {
                    for p in g {
                        let mut v: Vec<f64> = prefix.clone();
                        v.extend(p.iter());
                        next.push(v);
                    }
                }
                out = next;
            }
            Ok(out.into_iter().map(DVector::from_vec).collect())
        }
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                axis.iter().map(move |&x| {
                    let mut v = prefix.clone();
                    v.push(x);
                    v
                })
            })
            .collect();
    }
    out.into_iter().map(DVector::from_vec).collect()
}

/// Result of [`grid_stackelberg`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackelbergReport {
    pub r_star: Vec<f64>,
    /// `min_r max_{a ∈ β(r)} J(r, a)` over the grid.
    pub j_star: f64,
    /// Same minimum over a grid with `2 · resolution − 1` points per
    /// dimension.
    pub j_refined: f64,
    /// Allowance `modulus · step` for the grid's coarseness.
    pub slack: f64,
    pub is_epsilon_action: bool,
    pub resolution: usize,
    pub points: usize,
}

/// Worst-case leader cost over the follower's best-response set.
pub fn worst_case_cost<F>(cost: &dyn LeaderCost, responses: &F, r: &DVector<f64>) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<Vec<DVector<f64>>>,
{
    let set = responses(r)?;
    if set.is_empty() {
        return Err(Error::InvalidInput("empty best-response set".into()));
    }
    Ok(set.iter().map(|a| cost.cost(r, a)).fold(f64::NEG_INFINITY, f64::max))
}

/// Grid search for a Stackelberg action.
///
/// `r_star` is the first grid minimizer of the worst-case cost;
/// `is_epsilon_action` holds when its worst-case cost is within
/// `epsilon + modulus · step` of the minimum over the refined grid, where
/// `modulus` bounds the change of the cost across one grid step.
pub fn grid_stackelberg<F>(
    leader_set: &ConvexSet,
    cost: &dyn LeaderCost,
    responses: F,
    grid: GridSpec,
    epsilon: f64,
    modulus: f64,
) -> Result<StackelbergReport>
where
    F: Fn(&DVector<f64>) -> Result<Vec<DVector<f64>>>,
{
    let minimize = |grid: GridSpec| -> Result<(DVector<f64>, f64, usize)> {
        let points = grid_points(leader_set, grid)?;
        let mut best: Option<(DVector<f64>, f64)> = None;
        for r in &points {
            let w = worst_case_cost(cost, &responses, r)?;
            if best.as_ref().is_none_or(|(_, b)| w < *b) {
                best = Some((r.clone(), w));
            }
        }
        let (r, j) = best.ok_or_else(|| Error::InvalidInput("empty grid".into()))?;
        Ok((r, j, points.len()))
    };
    let (r_star, j_star, points) = minimize(grid)?;
    let (_, j_refined, _) = minimize(GridSpec::new(2 * grid.resolution - 1)?)?;
    let slack = modulus * grid_step(leader_set, grid);
    Ok(StackelbergReport {
        r_star: r_star.iter().copied().collect(),
        j_star,
        j_refined,
        slack,
        is_epsilon_action: j_star <= j_refined + epsilon + slack,
        resolution: grid.resolution,
        points,
    })
}

/// [`grid_stackelberg`] for the link-flooding game, with ties in the
/// attacker's best response resolved against the router. One grid step
/// moves two coordinates by `step`, so the cost modulus is 2.
pub fn ddos_grid_stackelberg(scenario: &DdosScenario, grid: GridSpec, epsilon: f64) -> Result<StackelbergReport> {
    let cost = crate::ddos::RouterCost { c0: scenario.c0 };
    grid_stackelberg(&scenario.leader_set(), &cost, |r| best_response_set(r, scenario), grid, epsilon, 2.0)
}

/// Largest coordinate spacing of [`grid_points`].
pub fn grid_step(set: &ConvexSet, grid: GridSpec) -> f64 {
    let n = (grid.resolution.max(2) - 1) as f64;
    match set {
        ConvexSet::Box { lower, upper } => lower.iter().zip(upper).map(|(l, u)| (u - l) / n).fold(0.0, f64::max),
        ConvexSet::ScaledSimplex { total, .. } => total / n,
        ConvexSet::Product(f) => f.iter().map(|s| grid_step(s, grid)).fold(0.0, f64::max),
    }
}

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn finite_diff_gradient<F>(f: F, x: &DVector<f64>, h_fd: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if !(h_fd > 0.0) {
        return Err(Error::InvalidInput(format!("h_fd = {h_fd} must be > 0")));
    }
    let mut probe = x.clone();
    Ok(DVector::from_fn(x.len(), |i, _| {
        let base = probe[i];
        probe[i] = base + h_fd;
        let up = f(&probe);
        probe[i] = base - h_fd;
        let down = f(&probe);
        probe[i] = base;
        (up - down) / (2.0 * h_fd)
    }))
}

/// Tangent-cone projection by search over a lattice of directions.
///
/// Candidates `d` lie on a `resolution`-per-axis lattice of `[−‖v‖, ‖v‖]ⁿ`;
/// `d` counts as feasible when `x + t d ∈ set` for a step of length 1e−7.
/// Each feasible ray contributes its closest point to `v`.
pub fn brute_projection(set: &ConvexSet, x: &DVector<f64>, v: &DVector<f64>, grid: GridSpec) -> Result<DVector<f64>> {
    check_dim(set.dim(), x.len())?;
    check_dim(set.dim(), v.len())?;
    GridSpec::new(grid.resolution)?;
    let n = set.dim();
    if n > 3 {
        return Err(Error::Unsupported(format!("brute projection in dimension {n} > 3")));
    }
    let mut best = DVector::zeros(n);
    let radius = v.norm();
    if radius == 0.0 {
        return Ok(best);
    }
    let mut best_dist = radius;
    let center = (grid.resolution - 1) as f64 / 2.0;
    let spacing = 2.0 * radius / (grid.resolution - 1) as f64;
    let axis: Vec<f64> = (0..grid.resolution).map(|k| (k as f64 - center) * spacing).collect();
    for d in cartesian(&vec![axis; n]) {
        let dd = d.norm_squared();
        if dd == 0.0 {
            continue;
        }
        let probe = x + &d * (1e-7 / dd.sqrt());
        if set.distance(&probe)? > 1e-12 {
            continue;
        }
        let w = &d * (v.dot(&d) / dd).max(0.0);
        let dist = (&w - v).norm();
        if dist < best_dist {
            best_dist = dist;
            best = w;
        }
    }
    Ok(best)
}

/// Nearest grid point of `set` to `v`.
pub fn brute_point_projection(set: &ConvexSet, v: &DVector<f64>, grid: GridSpec) -> Result<DVector<f64>> {
    check_dim(set.dim(), v.len())?;
    if set.dim() > 3 {
        return Err(Error::Unsupported(format!("brute projection in dimension {} > 3", set.dim())));
    }
    grid_points(set, grid)?
        .into_iter()
        .min_by(|a, b| (a - v).norm().total_cmp(&(b - v).norm()))
        .ok_or_else(|| Error::InvalidInput("empty grid".into()))
}
