//! Link-flooding game on `L` parallel links.
//!
//! A router (leader) splits `R` units of legitimate traffic across the links
//! and an attacker (follower) floods links with `A` units of junk traffic.
//! Link `l` carries `u_l = min{r_l, max{c₀ − a_l, 0}}` legitimate units.
//! The router's cost is `J = −Σ u_l`, and the attacker's cost is
//! `Σ w_l u_l`. Unit weights make the game zero-sum.
//!
//! The router models the attacker with a piecewise-constant "quasi-RBF"
//! family: one indicator kernel per hypercube cell of the first `L − 1`
//! coordinates of `r`, and one parameter per (output link, cell) pair.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::game::{
    Follower, FollowerCost, GameDefinition, LeaderCost, ParameterizedModel, StrategySwitch, ThetaJacobian,
};
use crate::geometry::ConvexSet;

const TIE_TOL: f64 = 1e-12;

/// Parallel-link scenario descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdosScenario {
    pub links: usize,
    pub c0: f64,
    pub r_total: f64,
    pub a_total: f64,
    /// Attacker cost weights; all ones gives the zero-sum game.
    pub weights: Vec<f64>,
}

impl DdosScenario {
    pub fn new(links: usize, c0: f64, r_total: f64, a_total: f64, weights: Vec<f64>) -> Result<Self> {
        let s = Self { links, c0, r_total, a_total, weights };
        s.validate()?;
        Ok(s)
    }

    /// `R = L c₀ / 2`, `A = ⌈L c₀ / 2⌉`, unit weights.
    pub fn standard(links: usize, c0: f64) -> Result<Self> {
        let half = links as f64 * c0 / 2.0;
        Self::new(links, c0, half, half.ceil(), vec![1.0; links])
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.links, self.c0, self.r_total, self.a_total, weights)
    }

    pub fn validate(&self) -> Result<()> {
        let cap = self.links as f64 * self.c0;
        let mut problems = Vec::new();
        if self.links == 0 {
            problems.push("links must be ≥ 1".to_string());
        }
        if !(self.c0 > 0.0) || !self.c0.is_finite() {
            problems.push(format!("c0 = {} must be > 0", self.c0));
        }
        if !(self.r_total > 0.0 && self.r_total <= cap) {
            problems.push(format!("r_total = {} must lie in (0, L·c0 = {cap}]", self.r_total));
        }
        if !(self.a_total > 0.0 && self.a_total <= cap) {
            problems.push(format!("a_total = {} must lie in (0, L·c0 = {cap}]", self.a_total));
        }
        if self.weights.len() != self.links {
            problems.push(format!("expected {} weights, got {}", self.links, self.weights.len()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            problems.push("weights must be finite and > 0".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    /// `𝓡 = {r ≥ 0 : Σ r = R}`.
    pub fn leader_set(&self) -> ConvexSet {
        ConvexSet::ScaledSimplex { total: self.r_total, dim: self.links }
    }

    /// Number of links the attacker floods, `A / c₀`.
    pub fn flooded_links(&self) -> Result<usize> {
        let k = self.a_total / self.c0;
        if (k - k.round()).abs() > 1e-9 || k.round() < 0.0 || k.round() as usize > self.links {
            return Err(Error::Unsupported(format!(
                "attack budget {} is not an integral number of link capacities (A/c0 = {k})",
                self.a_total
            )));
        }
        Ok(k.round() as usize)
    }
}

/// `u_l = min{r_l, max{c₀ − a_l, 0}}` with `r_l, a_l` clamped to `[0, c₀]`.
pub fn legit_traffic(r: &DVector<f64>, a: &DVector<f64>, c0: f64) -> DVector<f64> {
    DVector::from_iterator(r.len(), r.iter().zip(a.iter()).map(|(&rl, &al)| link_traffic(rl, al, c0)))
}

#[inline]
fn link_traffic(r: f64, a: f64, c0: f64) -> f64 {
    let r = r.clamp(0.0, c0);
    let a = a.clamp(0.0, c0);
    r.min((c0 - a).max(0.0))
}

/// `J(r, a) = −Σ u_l`.
pub fn router_cost(r: &DVector<f64>, a: &DVector<f64>, scenario: &DdosScenario) -> f64 {
    -r.iter().zip(a.iter()).map(|(&rl, &al)| link_traffic(rl, al, scenario.c0)).sum::<f64>()
}

/// `H(a, r) = Σ w_l u_l`.
pub fn attacker_cost(a: &DVector<f64>, r: &DVector<f64>, scenario: &DdosScenario) -> f64 {
    r.iter().zip(a.iter()).zip(&scenario.weights).map(|((&rl, &al), w)| w * link_traffic(rl, al, scenario.c0)).sum()
}

/// `(∇_r J, ∇_a J)`.
///
/// Kinks resolve to the branch selected by `≤`:
/// `∂J/∂r_l = −1` iff `r_l < max{c₀ − a_l, 0}` and `∂J/∂a_l = 1` iff
/// `0 < c₀ − a_l ≤ r_l`.
pub fn grad_router_cost(r: &DVector<f64>, a: &DVector<f64>, c0: f64) -> (DVector<f64>, DVector<f64>) {
    let n = r.len();
    let mut gr = DVector::zeros(n);
    let mut ga = DVector::zeros(n);
    for l in 0..n {
        let rl = r[l].clamp(0.0, c0);
        let cap = c0 - a[l].clamp(0.0, c0);
        if rl < cap.max(0.0) {
            gr[l] = -1.0;
        } else if cap > 0.0 {
            ga[l] = 1.0;
        }
    }
    (gr, ga)
}

/// The attacker floods the `A / c₀` links with the largest `w_l · r_l`,
/// ties going to the lowest index.
pub fn attacker_best_response(r: &DVector<f64>, scenario: &DdosScenario) -> Result<DVector<f64>> {
    check_dim(scenario.links, r.len())?;
    let k = scenario.flooded_links()?;
    let mut order: Vec<usize> = (0..scenario.links).collect();
    let key = |l: usize| scenario.weights[l] * r[l].clamp(0.0, scenario.c0);
    // Stable sort keeps lower indices first among equal keys.
    order.sort_by(|&i, &j| key(j).total_cmp(&key(i)));
    let mut a = DVector::zeros(scenario.links);
    for &l in order.iter().take(k) {
        a[l] = scenario.c0;
    }
    Ok(a)
}

/// Every flood pattern that minimizes the attacker's cost at `r` (the full
/// best-response set over flood patterns, ties included).
pub fn best_response_set(r: &DVector<f64>, scenario: &DdosScenario) -> Result<Vec<DVector<f64>>> {
    check_dim(scenario.links, r.len())?;
    let k = scenario.flooded_links()?;
    let patterns = flood_patterns(scenario.links, k, scenario.c0);
    let costs: Vec<f64> = patterns.iter().map(|a| attacker_cost(a, r, scenario)).collect();
    let best = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * best.abs().max(1.0);
    Ok(patterns.into_iter().zip(costs).filter(|(_, c)| *c <= best + tol).map(|(a, _)| a).collect())
}

/// All `(L choose k)` vectors with `k` entries equal to `c0` and the rest 0.
pub fn flood_patterns(links: usize, k: usize, c0: f64) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    let mut chosen = Vec::with_capacity(k);
    fn rec(start: usize, links: usize, k: usize, c0: f64, chosen: &mut Vec<usize>, out: &mut Vec<DVector<f64>>) {
        if chosen.len() == k {
            let mut a = DVector::zeros(links);
            for &l in chosen.iter() {
                a[l] = c0;
            }
            out.push(a);
            return;
        }
        for l in start..links {
            chosen.push(l);
            rec(l + 1, links, k, c0, chosen, out);
            chosen.pop();
        }
    }
    rec(0, links, k, c0, &mut chosen, &mut out);
    out
}

/// `J` for the link-flooding game, with an exact line integral of `∇_a J`.
#[derive(Debug, Clone)]
pub struct RouterCost {
    pub c0: f64,
}

impl LeaderCost for RouterCost {
    fn cost(&self, r: &DVector<f64>, a: &DVector<f64>) -> f64 {
        -r.iter().zip(a.iter()).map(|(&rl, &al)| link_traffic(rl, al, self.c0)).sum::<f64>()
    }

    fn grad_r(&self, r: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        grad_router_cost(r, a, self.c0).0
    }

    fn grad_a(&self, r: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        grad_router_cost(r, a, self.c0).1
    }

    /// `∂J/∂a_l` is the indicator of `a_l ∈ [c₀ − r_l, c₀)`, so the integral
    /// along the segment is the fraction of it inside that interval.
    fn grad_a_line_integral(&self, r: &DVector<f64>, from: &DVector<f64>, to: &DVector<f64>) -> DVector<f64> {
        let c0 = self.c0;
        DVector::from_iterator(
            r.len(),
            (0..r.len()).map(|l| {
                let lo = c0 - r[l].clamp(0.0, c0);
                let hi = c0;
                let (start, d) = (from[l], to[l] - from[l]);
                if d == 0.0 {
                    return if start >= lo && start < hi { 1.0 } else { 0.0 };
                }
                let (mut p, mut q) = ((lo - start) / d, (hi - start) / d);
                if p > q {
                    std::mem::swap(&mut p, &mut q);
                }
                (q.min(1.0) - p.max(0.0)).max(0.0)
            }),
        )
    }
}

/// The attacker's actual strategy: [`attacker_best_response`].
#[derive(Debug, Clone)]
pub struct BestResponseAttacker {
    scenario: DdosScenario,
}

impl BestResponseAttacker {
    pub fn new(scenario: DdosScenario) -> Result<Self> {
        scenario.flooded_links()?;
        Ok(Self { scenario })
    }
}

impl Follower for BestResponseAttacker {
    fn respond(&self, r: &DVector<f64>) -> DVector<f64> {
        attacker_best_response(r, &self.scenario).expect("budget validated at construction")
    }
}

/// `H(a, r) = Σ w_l u_l` as a [`FollowerCost`].
#[derive(Debug, Clone)]
pub struct AttackerCost {
    scenario: DdosScenario,
}

impl AttackerCost {
    pub fn new(scenario: DdosScenario) -> Self {
        Self { scenario }
    }
}

impl FollowerCost for AttackerCost {
    fn cost(&self, a: &DVector<f64>, r: &DVector<f64>) -> f64 {
        attacker_cost(a, r, &self.scenario)
    }
}

/// Piecewise-constant follower model with indicator kernels.
///
/// Cell `j` along each of the first `L − 1` coordinates is the half-open
/// interval `(j c₀/n, (j+1) c₀/n]`; the first cell also contains 0 so that
/// the cells cover all of `[0, c₀]^(L−1)`. Parameters are stored with the
/// output link outermost: `θ[l · n^(L−1) + cell]`.
#[derive(Debug, Clone)]
pub struct QuasiRbfModel {
    links: usize,
    n_rbf: usize,
    c0: f64,
    cells: usize,
    theta_set: ConvexSet,
}

/// Builds the quasi-RBF model with `n_rbf` kernels per coordinate.
pub fn build_rbf_model(links: usize, n_rbf: usize, c0: f64) -> Result<QuasiRbfModel> {
    if links == 0 || n_rbf == 0 {
        return Err(Error::InvalidInput("links and n_rbf must be ≥ 1".into()));
    }
    if !(c0 > 0.0) {
        return Err(Error::InvalidInput(format!("c0 = {c0} must be > 0")));
    }
    let cells = n_rbf
        .checked_pow((links - 1) as u32)
        .filter(|c| c.checked_mul(links).is_some())
        .ok_or_else(|| Error::Unsupported("model too large".into()))?;
    Ok(QuasiRbfModel { links, n_rbf, c0, cells, theta_set: ConvexSet::cube(0.0, c0, links * cells)? })
}

impl QuasiRbfModel {
    pub fn links(&self) -> usize {
        self.links
    }

    pub fn n_rbf(&self) -> usize {
        self.n_rbf
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    /// Flat parameter index of `(link, cell)`.
    pub fn param_index(&self, link: usize, cell: usize) -> usize {
        link * self.cells + cell
    }

    /// Inverse of [`param_index`](Self::param_index).
    pub fn param_location(&self, index: usize) -> (usize, usize) {
        (index / self.cells, index % self.cells)
    }

    /// Cell containing the first `L − 1` coordinates of `r`, if any.
    pub fn cell_of(&self, r: &DVector<f64>) -> Option<usize> {
        let mut flat = 0;
        for i in 0..self.links - 1 {
            flat = flat * self.n_rbf + self.axis_cell(r[i])?;
        }
        Some(flat)
    }

    fn boundary(&self, j: usize) -> f64 {
        j as f64 * self.c0 / self.n_rbf as f64
    }

    fn axis_cell(&self, x: f64) -> Option<usize> {
        if !(x >= 0.0 && x <= self.c0) {
            return None;
        }
        let n = self.n_rbf;
        let mut j = ((x * n as f64 / self.c0).ceil() as usize).saturating_sub(1).min(n - 1);
        while j > 0 && x <= self.boundary(j) {
            j -= 1;
        }
        while j + 1 < n && x > self.boundary(j + 1) {
            j += 1;
        }
        Some(j)
    }

    /// Per-axis cell indices of a flat cell index.
    pub fn cell_multi_index(&self, mut cell: usize) -> Vec<usize> {
        let mut idx = vec![0; self.links - 1];
        for slot in idx.iter_mut().rev() {
            *slot = cell % self.n_rbf;
            cell /= self.n_rbf;
        }
        idx
    }

    /// Center of a cell in the first `L − 1` coordinates.
    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        self.cell_multi_index(cell)
            .into_iter()
            .map(|j| (2 * j + 1) as f64 * self.c0 / (2 * self.n_rbf) as f64)
            .collect()
    }

    /// Parameter coordinates read by a cell, one per output link.
    pub fn cell_params(&self, cell: usize) -> Vec<usize> {
        (0..self.links).map(|l| self.param_index(l, cell)).collect()
    }
}

impl ParameterizedModel for QuasiRbfModel {
    fn n_theta(&self) -> usize {
        self.links * self.cells
    }

    fn n_a(&self) -> usize {
        self.links
    }

    fn n_r(&self) -> usize {
        self.links
    }

    fn theta_set(&self) -> &ConvexSet {
        &self.theta_set
    }

    fn jac_theta(&self, r: &DVector<f64>) -> ThetaJacobian {
        let entries = match self.cell_of(r) {
            Some(cell) => (0..self.links).map(|l| (l, self.param_index(l, cell), 1.0)).collect(),
            None => Vec::new(),
        };
        ThetaJacobian::new(self.links, self.n_theta(), entries)
    }

    fn jac_r(&self, _theta: &DVector<f64>, _r: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.links, self.links)
    }

    fn eval(&self, theta: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        match self.cell_of(r) {
            Some(cell) => DVector::from_iterator(self.links, (0..self.links).map(|l| theta[self.param_index(l, cell)])),
            None => DVector::zeros(self.links),
        }
    }
}

/// Writes the attacker's best response at each cell center into that cell's
/// parameters. The last coordinate of the center completes the simplex,
/// `r_L = R − Σ_{i<L} r_i`.
pub fn ground_truth_theta(scenario: &DdosScenario, model: &QuasiRbfModel) -> Result<DVector<f64>> {
    if model.links() != scenario.links {
        return Err(Error::DimensionMismatch { expected: scenario.links, got: model.links() });
    }
    let mut theta = DVector::zeros(model.n_theta());
    for cell in 0..model.cell_count() {
        let center = model.cell_center(cell);
        let last = scenario.r_total - center.iter().sum::<f64>();
        let r = DVector::from_iterator(scenario.links, center.into_iter().chain(std::iter::once(last)));
        let a = attacker_best_response(&r, scenario)?;
        for l in 0..scenario.links {
            theta[model.param_index(l, cell)] = a[l];
        }
    }
    Ok(theta)
}

/// Link-flooding game with a best-responding attacker and the quasi-RBF
/// model. `true_theta` holds the cell-center parameters for diagnostics.
pub fn ddos_game(scenario: &DdosScenario, n_rbf: usize) -> Result<GameDefinition> {
    scenario.validate()?;
    let model = build_rbf_model(scenario.links, n_rbf, scenario.c0)?;
    let true_theta = ground_truth_theta(scenario, &model)?;
    Ok(GameDefinition {
        leader_set: scenario.leader_set(),
        cost: Arc::new(RouterCost { c0: scenario.c0 }),
        follower: Arc::new(BestResponseAttacker::new(scenario.clone())?),
        follower_cost: Some(Arc::new(AttackerCost::new(scenario.clone()))),
        model: Arc::new(model),
        true_theta: Some(true_theta),
    })
}

/// A strategy switch to a new attacker weighting at `time`.
pub fn weight_switch(scenario: &DdosScenario, n_rbf: usize, time: f64, weights: Vec<f64>) -> Result<StrategySwitch> {
    let switched = scenario.with_weights(weights)?;
    let model = build_rbf_model(scenario.links, n_rbf, scenario.c0)?;
    Ok(StrategySwitch {
        time,
        follower: Arc::new(BestResponseAttacker::new(switched.clone())?),
        follower_cost: Some(Arc::new(AttackerCost::new(switched.clone()))),
        true_theta: Some(ground_truth_theta(&switched, &model)?),
    })
}
