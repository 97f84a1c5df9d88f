//! Observation error, gain matrix and the hysteresis-switched projected
//! estimator, plus the mismatch bounds used when the model family does not
//! contain the follower's strategy.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::game::{GameDefinition, ThetaJacobian};
use crate::geometry::ConvexSet;

/// Thresholds and gain of the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub eps_obs: f64,
    pub eps_obs_prime: f64,
    pub lambda_theta: f64,
    /// Mutation fixture: reverses the estimator vector field.
    #[serde(default)]
    pub flip_sign: bool,
}

impl EstimatorParams {
    pub fn new(eps_obs: f64, eps_obs_prime: f64, lambda_theta: f64) -> Result<Self> {
        let p = Self { eps_obs, eps_obs_prime, lambda_theta, flip_sign: false };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_obs_prime > 0.0 && self.eps_obs > self.eps_obs_prime) {
            return Err(Error::InvalidInput(format!(
                "thresholds must satisfy eps_obs > eps_obs_prime > 0 (got {} and {})",
                self.eps_obs, self.eps_obs_prime
            )));
        }
        if !(self.lambda_theta > 0.0) || !self.lambda_theta.is_finite() {
            return Err(Error::InvalidInput(format!("lambda_theta = {} must be > 0", self.lambda_theta)));
        }
        Ok(())
    }
}

/// `θ̂` together with the current switching level `λ_e ∈ {0, λ_θ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub theta_hat: DVector<f64>,
    pub lambda_e: f64,
    pub params: EstimatorParams,
    /// `false` until the first switching update.
    pub initialized: bool,
}

impl EstimatorState {
    pub fn new(theta_hat: DVector<f64>, params: EstimatorParams, theta_set: &ConvexSet) -> Result<Self> {
        params.validate()?;
        check_dim(theta_set.dim(), theta_hat.len())?;
        let distance = theta_set.distance(&theta_hat)?;
        if distance > crate::geometry::MEMBERSHIP_TOL {
            return Err(Error::OutsideSet { distance, tolerance: crate::geometry::MEMBERSHIP_TOL });
        }
        Ok(Self { theta_hat, lambda_e: 0.0, params, initialized: false })
    }
}

/// One observation `(r, a, J(r, a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub r: DVector<f64>,
    pub a: DVector<f64>,
    pub j_obs: f64,
}

impl Observation {
    /// Plays `r` against the game's follower.
    pub fn observe(game: &GameDefinition, r: &DVector<f64>) -> Self {
        let a = game.follower.respond(r);
        let j_obs = game.cost.cost(r, &a);
        Self { r: r.clone(), a, j_obs }
    }
}

/// `e_obs = (f̂(θ̂, r) − a, Ĵ(r, θ̂) − J(r, a))`.
pub fn observation_error(game: &GameDefinition, obs: &Observation, theta_hat: &DVector<f64>) -> Result<DVector<f64>> {
    let model = game.model.as_ref();
    check_dim(model.n_theta(), theta_hat.len())?;
    check_dim(model.n_r(), obs.r.len())?;
    check_dim(model.n_a(), obs.a.len())?;
    let a_hat = model.eval(theta_hat, &obs.r);
    Ok(stack_error(game, obs, &a_hat))
}

fn stack_error(game: &GameDefinition, obs: &Observation, a_hat: &DVector<f64>) -> DVector<f64> {
    let n_a = a_hat.len();
    let mut e = DVector::zeros(n_a + 1);
    e.rows_mut(0, n_a).copy_from(&(a_hat - &obs.a));
    e[n_a] = game.cost.cost(&obs.r, a_hat) - obs.j_obs;
    e
}

/// `K = [I; gᵀ] · ∇_θ f̂(r)` with `g = ∫₀¹ ∇_a J(r, ρ f̂ + (1 − ρ) a) dρ`,
/// stored in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub jac_theta: ThetaJacobian,
    pub line_grad: DVector<f64>,
}

impl GainMatrix {
    pub fn rows(&self) -> usize {
        self.jac_theta.rows() + 1
    }

    pub fn cols(&self) -> usize {
        self.jac_theta.cols()
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let top = self.jac_theta.mul(x);
        let mut out = DVector::zeros(self.rows());
        out[top.len()] = self.line_grad.dot(&top);
        out.rows_mut(0, top.len()).copy_from(&top);
        out
    }

    /// `[I; gᵀ]ᵀ e = e_top + g e_bottom`, the vector that `∇_θ f̂ᵀ` acts on.
    pub fn fold(&self, e: &DVector<f64>) -> DVector<f64> {
        let n_a = self.jac_theta.rows();
        e.rows(0, n_a).into_owned() + &self.line_grad * e[n_a]
    }

    /// `Kᵀ e` as sparse `(column, value)` pairs.
    pub fn tr_mul_sparse(&self, e: &DVector<f64>) -> Vec<(usize, f64)> {
        self.jac_theta.tr_mul_sparse(&self.fold(e))
    }

    pub fn tr_mul(&self, e: &DVector<f64>) -> DVector<f64> {
        self.jac_theta.tr_mul(&self.fold(e))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let jac = self.jac_theta.to_dense();
        let n_a = jac.nrows();
        let mut out = DMatrix::zeros(n_a + 1, jac.ncols());
        out.rows_mut(0, n_a).copy_from(&jac);
        out.row_mut(n_a).copy_from(&(self.line_grad.transpose() * &jac));
        out
    }
}

pub fn gain_matrix(game: &GameDefinition, obs: &Observation, theta_hat: &DVector<f64>) -> Result<GainMatrix> {
    let model = game.model.as_ref();
    check_dim(model.n_theta(), theta_hat.len())?;
    let a_hat = model.eval(theta_hat, &obs.r);
    Ok(gain_at(game, obs, &a_hat))
}

fn gain_at(game: &GameDefinition, obs: &Observation, a_hat: &DVector<f64>) -> GainMatrix {
    GainMatrix {
        jac_theta: game.model.jac_theta(&obs.r),
        line_grad: game.cost.grad_a_line_integral(&obs.r, &obs.a, a_hat),
    }
}

/// Hysteresis rule for `λ_e`.
pub fn switching_update(state: &EstimatorState, e_norm: f64) -> f64 {
    let p = &state.params;
    if e_norm >= p.eps_obs {
        p.lambda_theta
    } else if e_norm <= p.eps_obs_prime {
        0.0
    } else if state.initialized {
        state.lambda_e
    } else {
        p.lambda_theta
    }
}

/// Everything one estimator step computed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub error: DVector<f64>,
    pub e_norm: f64,
    pub lambda_e: f64,
    /// `‖Kᵀ e_obs‖`.
    pub kte_norm: f64,
    /// Coordinates of `θ̂` that moved, as `(index, old, new)`.
    pub changed: Vec<(usize, f64, f64)>,
    pub gain: GainMatrix,
}

/// Switching update followed by `θ̂⁺ = Π_Θ(θ̂ − h λ_e Kᵀ e_obs)`.
pub fn estimator_step(
    game: &GameDefinition,
    state: &EstimatorState,
    obs: &Observation,
    h: f64,
) -> Result<EstimatorState> {
    let mut next = state.clone();
    estimator_step_in_place(game, &mut next, obs, h)?;
    Ok(next)
}

/// In-place [`estimator_step`]; touches only the coordinates `Kᵀ e` reaches
/// when `Θ` is a box.
pub fn estimator_step_in_place(
    game: &GameDefinition,
    state: &mut EstimatorState,
    obs: &Observation,
    h: f64,
) -> Result<StepReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step h = {h} must be > 0")));
    }
    let model = game.model.as_ref();
    check_dim(model.n_theta(), state.theta_hat.len())?;
    check_dim(model.n_r(), obs.r.len())?;
    check_dim(model.n_a(), obs.a.len())?;
    let a_hat = model.eval(&state.theta_hat, &obs.r);
    let error = stack_error(game, obs, &a_hat);
    let e_norm = error.norm();
    let lambda_e = switching_update(state, e_norm);
    state.lambda_e = lambda_e;
    state.initialized = true;

    let gain = gain_at(game, obs, &a_hat);
    let kte = gain.tr_mul_sparse(&error);
    let kte_norm = kte.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    let mut changed = Vec::new();
    if lambda_e != 0.0 && kte_norm != 0.0 {
        let sign = if state.params.flip_sign { -1.0 } else { 1.0 };
        let scale = sign * h * lambda_e;
        match model.theta_set() {
            ConvexSet::Box { lower, upper } => {
                for (j, v) in kte {
                    let old = state.theta_hat[j];
                    let new = (old - scale * v).clamp(lower[j], upper[j]);
                    if new != old {
                        state.theta_hat[j] = new;
                        changed.push((j, old, new));
                    }
                }
            }
            set => {
                let before = state.theta_hat.clone();
                for (j, v) in kte {
                    state.theta_hat[j] -= scale * v;
                }
                set.project_in_place(state.theta_hat.as_mut_slice());
                changed.extend(
                    (0..before.len())
                        .filter(|&j| before[j] != state.theta_hat[j])
                        .map(|j| (j, before[j], state.theta_hat[j])),
                );
            }
        }
    }
    Ok(StepReport { error, e_norm, lambda_e, kte_norm, changed, gain })
}

/// Pairs `(r, θ̂)` over which `κ` and mismatch bounds are sampled.
#[derive(Debug, Clone, Default)]
pub struct SampleGrid {
    pub points: Vec<(DVector<f64>, DVector<f64>)>,
    /// Free-form description of how the grid was built.
    pub resolution: String,
}

impl SampleGrid {
    /// Every `r` paired with every `θ̂`.
    pub fn cartesian(rs: &[DVector<f64>], thetas: &[DVector<f64>], resolution: impl Into<String>) -> Self {
        let points = rs.iter().flat_map(|r| thetas.iter().map(move |t| (r.clone(), t.clone()))).collect();
        Self { points, resolution: resolution.into() }
    }
}

/// Sampled lower bound on `κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaEstimate {
    pub kappa: f64,
    pub samples: usize,
    pub resolution: String,
}

/// `max ‖[I; gᵀ]‖₂` over the grid, with `g` the line integral of `∇_a J`
/// between `f(r)` and `f̂(θ̂, r)`. The spectral norm is `√(1 + ‖g‖²)`.
pub fn kappa_estimate(game: &GameDefinition, grid: &SampleGrid) -> Result<KappaEstimate> {
    if grid.points.is_empty() {
        return Err(Error::InvalidInput("empty sample grid".into()));
    }
    let mut kappa = 0.0f64;
    for (r, theta) in &grid.points {
        let a_hat = predicted(game, theta, r)?;
        let a = game.follower.respond(r);
        let g = game.cost.grad_a_line_integral(r, &a_hat, &a);
        kappa = kappa.max((1.0 + g.norm_squared()).sqrt());
    }
    Ok(KappaEstimate { kappa, samples: grid.points.len(), resolution: grid.resolution.clone() })
}

fn predicted(game: &GameDefinition, theta: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    crate::game::predicted_response(game.model.as_ref(), theta, r)
}

/// Result of [`mismatch_error_bound_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchReport {
    pub holds: bool,
    /// `κ · max ‖f̂(θ*, r) − f(r)‖` over the sampled `r`.
    pub attained: f64,
    pub kappa: f64,
    pub worst_r: DVector<f64>,
}

/// Checks `κ ‖f̂(θ*, r) − f(r)‖ ≤ ε_f` on the grid's leader actions.
pub fn mismatch_error_bound_check(
    game: &GameDefinition,
    grid: &SampleGrid,
    theta_star: &DVector<f64>,
    eps_f: f64,
) -> Result<MismatchReport> {
    let kappa = kappa_estimate(game, grid)?.kappa;
    let mut worst = 0.0f64;
    let mut worst_r = grid.points[0].0.clone();
    for (r, _) in &grid.points {
        let gap = (predicted(game, theta_star, r)? - game.follower.respond(r)).norm();
        if gap > worst {
            worst = gap;
            worst_r = r.clone();
        }
    }
    let attained = kappa * worst;
    Ok(MismatchReport { holds: attained <= eps_f, attained, kappa, worst_r })
}
