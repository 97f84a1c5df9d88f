//! Leader cost, follower oracle and the affine-in-θ follower model.
//!
//! Gradients are row vectors in the math but are carried as `DVector`s here.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Result};
use crate::geometry::ConvexSet;

/// Sparse `rows × cols` matrix in coordinate form.
///
/// The Jacobian `∇_θ f̂(r)` of the quasi-RBF model has one nonzero per row,
/// so every hot-path product goes through this type instead of a dense
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaJacobian {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl ThetaJacobian {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(entries.iter().all(|&(i, j, _)| i < rows && j < cols));
        Self { rows, cols, entries }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    entries.push((i, j, m[(i, j)]));
                }
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `J x`.
    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        for &(i, j, v) in &self.entries {
            out[i] += v * x[j];
        }
        out
    }

    /// `Jᵀ y` as a sparse list of `(column, value)` pairs, columns ascending.
    pub fn tr_mul_sparse(&self, y: &DVector<f64>) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self.entries.iter().map(|&(i, j, v)| (j, v * y[i])).collect();
        out.sort_by_key(|&(j, _)| j);
        out.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        out
    }

    /// `Jᵀ y` as a dense vector.
    pub fn tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.cols);
        for &(i, j, v) in &self.entries {
            out[j] += v * y[i];
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }
}

/// Parameterized follower family `f̂(θ̂, r)`, affine in `θ̂`.
pub trait ParameterizedModel: Send + Sync {
    fn n_theta(&self) -> usize;
    fn n_a(&self) -> usize;
    fn n_r(&self) -> usize;

    /// Parameter set Θ.
    fn theta_set(&self) -> &ConvexSet;

    /// `∇_θ f̂(r)`, an `n_a × n_theta` matrix independent of `θ̂`.
    fn jac_theta(&self, r: &DVector<f64>) -> ThetaJacobian;

    /// The `θ̂`-free part `b(r)` of `f̂(θ̂, r) = ∇_θ f̂(r) θ̂ + b(r)`.
    fn offset(&self, _r: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.n_a())
    }

    /// `∇_r f̂(θ̂, r)`, `n_a × n_r`.
    fn jac_r(&self, theta: &DVector<f64>, r: &DVector<f64>) -> DMatrix<f64>;

    fn eval(&self, theta: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        self.jac_theta(r).mul(theta) + self.offset(r)
    }
}

/// Leader cost `J(r, a)` with its partial gradients.
pub trait LeaderCost: Send + Sync {
    fn cost(&self, r: &DVector<f64>, a: &DVector<f64>) -> f64;
    fn grad_r(&self, r: &DVector<f64>, a: &DVector<f64>) -> DVector<f64>;
    fn grad_a(&self, r: &DVector<f64>, a: &DVector<f64>) -> DVector<f64>;

    /// `∫₀¹ ∇_a J(r, ρ·to + (1 − ρ)·from) dρ`.
    ///
    /// Defaults to 8-node Gauss–Legendre quadrature; costs that are piecewise
    /// linear in `a` should override with an exact rule.
    fn grad_a_line_integral(&self, r: &DVector<f64>, from: &DVector<f64>, to: &DVector<f64>) -> DVector<f64> {
        gauss_legendre_line_integral(|a| self.grad_a(r, a), from, to, 1)
    }
}

/// The follower's actual strategy `f(r)`.
pub trait Follower: Send + Sync {
    fn respond(&self, r: &DVector<f64>) -> DVector<f64>;
}

/// Follower cost `H(a, r)`, used only for reporting.
pub trait FollowerCost: Send + Sync {
    fn cost(&self, a: &DVector<f64>, r: &DVector<f64>) -> f64;
}

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Composite 8-node Gauss–Legendre rule for `∫₀¹ g(from + ρ(to − from)) dρ`
/// over `panels` equal sub-intervals.
pub fn gauss_legendre_line_integral<G>(g: G, from: &DVector<f64>, to: &DVector<f64>, panels: usize) -> DVector<f64>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let panels = panels.max(1);
    let width = 1.0 / panels as f64;
    let dir = to - from;
    let mut acc: Option<DVector<f64>> = None;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * width;
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            let rho = mid + 0.5 * width * x;
            let point = from + &dir * rho;
            let val = g(&point) * (0.5 * width * w);
            match acc.as_mut() {
                Some(a) => *a += val,
                None => acc = Some(val),
            }
        }
    }
    acc.expect("at least one quadrature node")
}

/// A two-player game `(𝓡, 𝓐, J, H)` together with the leader's follower
/// model.
///
/// `true_theta` is diagnostic only. Nothing in the estimator or optimizer
/// reads it.
#[derive(Clone)]
pub struct GameDefinition {
    pub leader_set: ConvexSet,
    pub cost: Arc<dyn LeaderCost>,
    pub follower: Arc<dyn Follower>,
    pub follower_cost: Option<Arc<dyn FollowerCost>>,
    pub model: Arc<dyn ParameterizedModel>,
    pub true_theta: Option<DVector<f64>>,
}

impl fmt::Debug for GameDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameDefinition")
            .field("leader_set", &self.leader_set)
            .field("n_theta", &self.model.n_theta())
            .field("n_a", &self.model.n_a())
            .field("has_true_theta", &self.true_theta.is_some())
            .finish()
    }
}

impl GameDefinition {
    /// Same game with a different follower (and its diagnostics).
    pub fn with_follower(
        &self,
        follower: Arc<dyn Follower>,
        follower_cost: Option<Arc<dyn FollowerCost>>,
        true_theta: Option<DVector<f64>>,
    ) -> Self {
        Self { follower, follower_cost, true_theta, ..self.clone() }
    }
}

/// One entry of a [`StrategySwitchSchedule`].
#[derive(Clone)]
pub struct StrategySwitch {
    pub time: f64,
    pub follower: Arc<dyn Follower>,
    pub follower_cost: Option<Arc<dyn FollowerCost>>,
    pub true_theta: Option<DVector<f64>>,
}

impl fmt::Debug for StrategySwitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrategySwitch").field("time", &self.time).finish_non_exhaustive()
    }
}

/// Follower strategy changes at fixed times, strictly increasing.
#[derive(Debug, Clone, Default)]
pub struct StrategySwitchSchedule {
    switches: Vec<StrategySwitch>,
}

impl StrategySwitchSchedule {
    pub fn new(switches: Vec<StrategySwitch>) -> Result<Self> {
        if switches.windows(2).any(|w| !(w[0].time < w[1].time)) {
            return Err(crate::Error::InvalidInput("switch times must be strictly increasing".into()));
        }
        Ok(Self { switches })
    }

    pub fn switches(&self) -> &[StrategySwitch] {
        &self.switches
    }

    pub fn is_empty(&self) -> bool {
        self.switches.is_empty()
    }
}

/// `f̂(θ̂, r)`.
pub fn predicted_response(
    model: &dyn ParameterizedModel,
    theta_hat: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim(model.n_theta(), theta_hat.len())?;
    check_dim(model.n_r(), r.len())?;
    Ok(model.eval(theta_hat, r))
}

/// `Ĵ(r, θ̂) = J(r, f̂(θ̂, r))`.
pub fn predicted_cost(game: &GameDefinition, r: &DVector<f64>, theta_hat: &DVector<f64>) -> Result<f64> {
    let a_hat = predicted_response(game.model.as_ref(), theta_hat, r)?;
    Ok(game.cost.cost(r, &a_hat))
}

/// Gradients of the predicted cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedCostGradients {
    /// `∇_r Ĵ = ∇_r J + ∇_a J · ∇_r f̂`.
    pub grad_r: DVector<f64>,
    /// `∇_θ Ĵ = ∇_a J · ∇_θ f̂`.
    pub grad_theta: DVector<f64>,
}

pub fn predicted_cost_gradients(
    game: &GameDefinition,
    r: &DVector<f64>,
    theta_hat: &DVector<f64>,
) -> Result<PredictedCostGradients> {
    let model = game.model.as_ref();
    let a_hat = predicted_response(model, theta_hat, r)?;
    let ga = game.cost.grad_a(r, &a_hat);
    let jac_r = model.jac_r(theta_hat, r);
    let grad_r = game.cost.grad_r(r, &a_hat) + jac_r.tr_mul(&ga);
    let grad_theta = model.jac_theta(r).tr_mul(&ga);
    Ok(PredictedCostGradients { grad_r, grad_theta })
}

/// `∇_r Ĵ(r, θ̂)` only; the hot path of the leader update.
pub fn predicted_grad_r(game: &GameDefinition, r: &DVector<f64>, theta_hat: &DVector<f64>) -> DVector<f64> {
    let model = game.model.as_ref();
    let a_hat = model.eval(theta_hat, r);
    let mut g = game.cost.grad_r(r, &a_hat);
    let jac_r = model.jac_r(theta_hat, r);
    if jac_r.iter().any(|&v| v != 0.0) {
        g += jac_r.tr_mul(&game.cost.grad_a(r, &a_hat));
    }
    g
}

/// Outcome of [`affinity_check_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityReport {
    pub affine: bool,
    /// Largest violation of `f̂(αθ₁+(1−α)θ₂, r) = αf̂(θ₁,r)+(1−α)f̂(θ₂,r)`.
    pub max_affinity_error: f64,
    /// Largest gap between `jac_theta(r)` and finite-difference Jacobians
    /// taken at two distinct parameter values.
    pub max_jacobian_error: f64,
}

/// Samples the affinity identity and checks that `jac_theta` agrees with the
/// model's behavior at two distinct `θ̂`.
pub fn affinity_check(model: &dyn ParameterizedModel, sample_count: usize, seed: u64) -> bool {
    affinity_check_report(model, sample_count, seed).affine
}

pub fn affinity_check_report(model: &dyn ParameterizedModel, sample_count: usize, seed: u64) -> AffinityReport {
    const AFFINE_TOL: f64 = 1e-9;
    const JAC_TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_set = model.theta_set();
    let r_set = box_hull(model.n_r());
    let mut max_aff = 0.0f64;
    let mut max_jac = 0.0f64;
    for _ in 0..sample_count.max(1) {
        let t1 = theta_set.sample(&mut rng);
        let t2 = theta_set.sample(&mut rng);
        let r = r_set.sample(&mut rng);
        let alpha: f64 = rng.random_range(0.0..=1.0);
        let mixed = &t1 * alpha + &t2 * (1.0 - alpha);
        let lhs = model.eval(&mixed, &r);
        let rhs = model.eval(&t1, &r) * alpha + model.eval(&t2, &r) * (1.0 - alpha);
        max_aff = max_aff.max((lhs - rhs).amax());

        let jac = model.jac_theta(&r).to_dense();
        for theta in [&t1, &t2] {
            let fd = fd_jacobian_theta(model, theta, &r, 1e-5);
            max_jac = max_jac.max((&fd - &jac).amax());
        }
    }
    AffinityReport {
        affine: max_aff <= AFFINE_TOL && max_jac <= JAC_TOL,
        max_affinity_error: max_aff,
        max_jacobian_error: max_jac,
    }
}

fn fd_jacobian_theta(model: &dyn ParameterizedModel, theta: &DVector<f64>, r: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(model.n_a(), model.n_theta());
    let mut probe = theta.clone();
    for j in 0..model.n_theta() {
        let base = probe[j];
        probe[j] = base + h;
        let up = model.eval(&probe, r);
        probe[j] = base - h;
        let down = model.eval(&probe, r);
        probe[j] = base;
        out.set_column(j, &((up - down) / (2.0 * h)));
    }
    out
}

// Leader actions are sampled from the unit box; models only need to be
// evaluable there for the affinity test.
fn box_hull(dim: usize) -> ConvexSet {
    ConvexSet::cube(0.0, 1.0, dim).expect("unit cube is valid")
}
