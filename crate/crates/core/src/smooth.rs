//! A small smooth game with a known mismatch level.
//!
//! Leader `r ∈ [−1, 1]²`, follower family
//! `f̂(θ, r) = (θ₁ + θ₂ r₁, θ₃ + θ₄ r₂)` with `θ ∈ [−1, 1]⁴`, and
//! `J(r, a) = ½‖r − c‖² + Σᵢ (aᵢ²/2 + aᵢ⁴/12) + r₁ a₂`.
//! The actual follower is `f̂(θ*, r) + δ d(r)` with `‖d(r)‖ ≤ 1`.

use std::sync::Arc;

use nalgebra::{dvector, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{Follower, GameDefinition, LeaderCost, ParameterizedModel, ThetaJacobian};
use crate::geometry::ConvexSet;

pub const TRUE_THETA: [f64; 4] = [0.5, -0.8, -0.3, 0.6];
pub const TARGET: [f64; 2] = [0.3, -0.2];

/// Upper bound on `√(1 + ‖g‖²)` over `r ∈ 𝓡` and `a` reachable by the
/// model: `|aᵢ| ≤ 2` gives `|gᵢ| ≤ 2 + 8/3 + 1`.
pub const KAPPA_BOUND: f64 = 8.076_027_626_390_479;

pub struct LinearModel {
    theta_set: ConvexSet,
}

impl ParameterizedModel for LinearModel {
    fn n_theta(&self) -> usize {
        4
    }
    fn n_a(&self) -> usize {
        2
    }
    fn n_r(&self) -> usize {
        2
    }
    fn theta_set(&self) -> &ConvexSet {
        &self.theta_set
    }
    fn jac_theta(&self, r: &DVector<f64>) -> ThetaJacobian {
        ThetaJacobian::new(2, 4, vec![(0, 0, 1.0), (0, 1, r[0]), (1, 2, 1.0), (1, 3, r[1])])
    }
    fn jac_r(&self, theta: &DVector<f64>, _r: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta[1], 0.0, 0.0, theta[3]])
    }
}

pub struct QuarticCost;

impl LeaderCost for QuarticCost {
    fn cost(&self, r: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let c = DVector::from_row_slice(&TARGET);
        0.5 * (r - c).norm_squared() + a.iter().map(|x| x * x / 2.0 + x.powi(4) / 12.0).sum::<f64>() + r[0] * a[1]
    }
    fn grad_r(&self, r: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        dvector![r[0] - TARGET[0] + a[1], r[1] - TARGET[1]]
    }
    fn grad_a(&self, r: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        dvector![a[0] + a[0].powi(3) / 3.0, a[1] + a[1].powi(3) / 3.0 + r[0]]
    }
}

/// `f̂(θ*, r) + δ d(r)`.
pub struct PerturbedFollower {
    pub delta: f64,
}

impl PerturbedFollower {
    pub fn perturbation(r: &DVector<f64>) -> DVector<f64> {
        dvector![(5.0 * r[0] + r[1]).sin(), (4.0 * r[1]).cos()] / 2f64.sqrt()
    }
}

impl Follower for PerturbedFollower {
    fn respond(&self, r: &DVector<f64>) -> DVector<f64> {
        let t = TRUE_THETA;
        dvector![t[0] + t[1] * r[0], t[2] + t[3] * r[1]] + Self::perturbation(r) * self.delta
    }
}

/// The game with perturbation size `delta ≥ 0`; `delta = 0` is matched.
pub fn smooth_game(delta: f64) -> Result<GameDefinition> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!("delta = {delta} must be finite and ≥ 0")));
    }
    Ok(GameDefinition {
        leader_set: ConvexSet::cube(-1.0, 1.0, 2)?,
        cost: Arc::new(QuarticCost),
        follower: Arc::new(PerturbedFollower { delta }),
        follower_cost: None,
        model: Arc::new(LinearModel { theta_set: ConvexSet::cube(-1.0, 1.0, 4)? }),
        true_theta: Some(DVector::from_row_slice(&TRUE_THETA)),
    })
}

/// Mismatch level `ε_f = κ δ` guaranteed for [`smooth_game`].
pub fn mismatch_level(delta: f64) -> f64 {
    KAPPA_BOUND * delta
}
