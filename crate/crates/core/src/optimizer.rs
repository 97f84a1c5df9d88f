//! Projected-gradient leader update and stationarity diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::game::{predicted_grad_r, GameDefinition};
use crate::geometry::ConvexSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lambda_r: f64,
    pub step: f64,
}

impl OptimizerConfig {
    pub fn new(lambda_r: f64, step: f64) -> Result<Self> {
        if !(lambda_r > 0.0 && step > 0.0) || !lambda_r.is_finite() || !step.is_finite() {
            return Err(Error::InvalidInput(format!("lambda_r = {lambda_r} and step = {step} must be > 0")));
        }
        Ok(Self { lambda_r, step })
    }
}

/// `r⁺ = Π_𝓡(r − h λ_r ∇_r Ĵ(r, θ̂)ᵀ)`.
pub fn leader_step(
    game: &GameDefinition,
    r: &DVector<f64>,
    theta_hat: &DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<DVector<f64>> {
    check_dim(game.leader_set.dim(), r.len())?;
    check_dim(game.model.n_theta(), theta_hat.len())?;
    let g = predicted_grad_r(game, r, theta_hat);
    let mut next = r - g * (cfg.step * cfg.lambda_r);
    game.leader_set.project_in_place(next.as_mut_slice());
    Ok(next)
}

/// `‖Π_{T_𝓡(r)}(−∇_r Ĵ(r, θ̂)ᵀ)‖`.
pub fn stationarity_residual(game: &GameDefinition, r: &DVector<f64>, theta_hat: &DVector<f64>) -> Result<f64> {
    check_dim(game.model.n_theta(), theta_hat.len())?;
    let g = predicted_grad_r(game, r, theta_hat);
    Ok(game.leader_set.project_tangent_cone(r, &(-g))?.norm())
}

/// Stationarity of the Clarke-type generalized gradient at `r`.
///
/// Collects `∇_r Ĵ` at `r` and at deterministic neighbors within `radius`
/// (coordinate and pairwise-exchange moves, projected back into `𝓡`) and
/// returns `min ‖Π_{T_𝓡(r)}(−g)‖` over convex combinations `g` of those
/// gradients. Equals [`stationarity_residual`] where `∇_r Ĵ` is continuous
/// near `r`, and vanishes at kinks whose one-sided gradients balance.
pub fn sampled_stationarity_residual(
    game: &GameDefinition,
    r: &DVector<f64>,
    theta_hat: &DVector<f64>,
    radius: f64,
) -> Result<f64> {
    check_dim(game.model.n_theta(), theta_hat.len())?;
    if !(radius >= 0.0) {
        return Err(Error::InvalidInput(format!("radius = {radius} must be ≥ 0")));
    }
    let set = &game.leader_set;
    let n = r.len();
    let mut grads: Vec<DVector<f64>> = Vec::new();
    let mut push = |g: DVector<f64>| {
        if !grads.iter().any(|h| *h == g) {
            grads.push(g);
        }
    };
    push(predicted_grad_r(game, r, theta_hat));
    let mut probe = |delta: DVector<f64>| -> Result<()> {
        let q = set.project_point(&(r + delta))?;
        push(predicted_grad_r(game, &q, theta_hat));
        Ok(())
    };
    for i in 0..n {
        for s in [-1.0, 1.0] {
            let mut d = DVector::zeros(n);
            d[i] = s * radius;
            probe(d)?;
        }
        for j in 0..n {
            if i != j {
                let mut d = DVector::zeros(n);
                d[i] = radius / std::f64::consts::SQRT_2;
                d[j] = -radius / std::f64::consts::SQRT_2;
                probe(d)?;
            }
        }
    }
    min_hull_residual(set, r, &grads)
}

/// `min_{w ∈ Δ} ‖Π_T(−G w)‖` by projected gradient on the weights; the
/// objective `½ dist(−Gw, N)²` is convex with gradient `−Gᵀ Π_T(−Gw)`.
fn min_hull_residual(set: &ConvexSet, r: &DVector<f64>, grads: &[DVector<f64>]) -> Result<f64> {
    let m = grads.len();
    let g = DMatrix::from_columns(grads);
    let residual = |w: &DVector<f64>| -> Result<DVector<f64>> { set.project_tangent_cone(r, &-(&g * w)) };
    if m == 1 {
        return Ok(residual(&DVector::from_element(1, 1.0))?.norm());
    }
    let lipschitz = g.norm_squared().max(f64::MIN_POSITIVE);
    let weights_set = ConvexSet::simplex(1.0, m)?;
    let mut w = DVector::from_element(m, 1.0 / m as f64);
    let mut best = residual(&w)?.norm();
    for _ in 0..2000 {
        let t = residual(&w)?;
        let step = g.transpose() * &t / lipschitz;
        w += step;
        weights_set.project_in_place(w.as_mut_slice());
        let value = residual(&w)?.norm();
        if value < best {
            best = value;
        }
        if best < 1e-14 {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddos::{ddos_game, DdosScenario};
    use nalgebra::dvector;

    fn l2() -> GameDefinition {
        ddos_game(&DdosScenario::standard(2, 1.0).unwrap(), 4).unwrap()
    }

    #[test]
    fn moves_mass_away_from_predicted_flood() {
        let game = l2();
        let mut theta_hat = DVector::zeros(8);
        // Cell 3 (r_1 ∈ (0.75, 1]) predicts a flood on link 1.
        theta_hat[3] = 1.0;
        let cfg = OptimizerConfig::new(0.002, 0.05).unwrap();
        let r = dvector![0.8, 0.2];
        let next = leader_step(&game, &r, &theta_hat, &cfg).unwrap();
        let step = &next - &r;
        assert!((step - dvector![-0.5, 0.5] * (0.05 * 0.002)).amax() < 1e-15);
    }

    #[test]
    fn equilibrium_is_stationary_in_the_sampled_sense() {
        let game = l2();
        let theta = game.true_theta.clone().unwrap();
        let r = dvector![0.5, 0.5];
        assert!(stationarity_residual(&game, &r, &theta).unwrap() > 0.5);
        assert!(sampled_stationarity_residual(&game, &r, &theta, 1e-3).unwrap() < 1e-9);
    }

    #[test]
    fn non_stationary_point_stays_non_stationary() {
        let game = l2();
        let theta = game.true_theta.clone().unwrap();
        let r = dvector![0.3, 0.7];
        let pointwise = stationarity_residual(&game, &r, &theta).unwrap();
        let sampled = sampled_stationarity_residual(&game, &r, &theta, 1e-3).unwrap();
        assert!((pointwise - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((sampled - pointwise).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(OptimizerConfig::new(0.0, 0.05).is_err());
        assert!(OptimizerConfig::new(0.002, -1.0).is_err());
    }
}
