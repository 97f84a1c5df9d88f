//! Post-hoc invariant checks on trajectory logs and the run summary.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{pe_gramian, settling_record, PEConfig, TrajectoryLog};
use crate::error::Result;
use crate::estimator::EstimatorParams;
use crate::game::GameDefinition;
use crate::geometry::ConvexSet;
use crate::optimizer::sampled_stationarity_residual;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The hypotheses of the check never held in this log.
    NotApplicable,
}

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub verdict: Verdict,
    /// Worst measured value of the checked quantity.
    pub measured: f64,
    /// Limit the measured value is compared against.
    pub limit: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, ok: bool, measured: f64, limit: f64, detail: String) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        Self { name: name.into(), verdict, measured, limit, detail }
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

/// Per-step decrease of `‖θ̂ − θ‖²`.
///
/// On steps where the model reproduces the follower exactly
/// (`f̂(θ, r) = f(r)`), `e_obs = K(θ̂ − θ)` and the projected Euler step
/// satisfies `Δ‖θ̂ − θ‖² ≤ −2hλ_e‖e‖² + h²λ_e²‖Kᵀe‖²`. Other steps are
/// skipped. `measured` is the largest excess over that bound.
pub fn lyapunov_check(log: &TrajectoryLog) -> CheckOutcome {
    let h = log.step;
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0usize;
    let mut non_decreasing = 0usize;
    let switch_records: Vec<usize> = log.switches.iter().map(|s| s.record).collect();
    for k in 0..log.len().saturating_sub(1) {
        let lambda = log.lambda_e[k];
        if lambda == 0.0 || log.matched[k] != Some(true) || switch_records.contains(&(k + 1)) {
            continue;
        }
        let (Some(e0), Some(e1)) = (log.theta_err[k], log.theta_err[k + 1]) else {
            continue;
        };
        let delta = e1 * e1 - e0 * e0;
        let e = log.e_norm[k];
        let bound = -2.0 * h * lambda * e * e + (h * lambda * log.kte_norm[k]).powi(2);
        let tol = 1e-12 + 1e-9 * e0 * e0;
        worst = worst.max(delta - bound - tol);
        if e > 0.0 && delta >= 0.0 {
            non_decreasing += 1;
        }
        checked += 1;
    }
    if checked == 0 {
        return CheckOutcome {
            name: "lyapunov".into(),
            verdict: Verdict::NotApplicable,
            measured: 0.0,
            limit: 0.0,
            detail: "no active matched steps".into(),
        };
    }
    CheckOutcome::new(
        "lyapunov",
        worst <= 0.0 && non_decreasing == 0,
        worst,
        0.0,
        format!("{checked} active matched steps, {non_decreasing} without strict decrease"),
    )
}

/// Separation of consecutive estimator activations versus
/// `(ε_obs − ε'_obs) / M̂`, with `M̂` the largest per-step change of
/// `‖e_obs‖` divided by `h`.
pub fn dwell_time_check(log: &TrajectoryLog, params: &EstimatorParams) -> CheckOutcome {
    let h = log.step;
    let m_hat = log.e_norm.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max);
    let activations: Vec<f64> =
        (1..log.len()).filter(|&k| log.lambda_e[k] != 0.0 && log.lambda_e[k - 1] == 0.0).map(|k| log.t[k]).collect();
    let bound = if m_hat > 0.0 { (params.eps_obs - params.eps_obs_prime) / m_hat } else { f64::INFINITY };
    let min_gap = activations.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if activations.len() < 2 {
        return CheckOutcome {
            name: "dwell-time".into(),
            verdict: Verdict::NotApplicable,
            measured: min_gap,
            limit: bound,
            detail: format!("{} activations", activations.len()),
        };
    }
    CheckOutcome::new(
        "dwell-time",
        min_gap >= bound * (1.0 - 1e-12),
        min_gap,
        bound,
        format!("{} activations, M̂ = {m_hat:.4e}", activations.len()),
    )
}

/// All logged values finite, `r ∈ 𝓡` and `θ̂ ∈ Θ` throughout.
pub fn boundedness_check(log: &TrajectoryLog, game: &GameDefinition) -> CheckOutcome {
    let tol = crate::geometry::MEMBERSHIP_TOL;
    let finite = [&log.e_norm, &log.j, &log.j_hat, &log.residual].iter().all(|c| c.iter().all(|v| v.is_finite()))
        && log.h.iter().flatten().all(|v| v.is_finite())
        && log.theta_err.iter().flatten().all(|v| v.is_finite());
    let mut r_dist = 0.0f64;
    for k in 0..log.len() {
        r_dist = r_dist.max(game.leader_set.distance(&log.r_vec(k)).unwrap_or(f64::INFINITY));
    }
    let theta_set = game.model.theta_set();
    let mut theta_dist = theta_set.distance(&log.theta0).unwrap_or(f64::INFINITY);
    match theta_set {
        ConvexSet::Box { lower, upper } => {
            for k in 0..log.len() {
                for &(j, v) in log.delta(k) {
                    theta_dist = theta_dist.max((lower[j] - v).max(v - upper[j]).max(0.0));
                }
            }
        }
        set => log.replay(0..log.len(), |_, theta| {
            theta_dist = theta_dist.max(set.distance(theta).unwrap_or(f64::INFINITY));
        }),
    }
    let max_e = log.e_norm.iter().cloned().fold(0.0, f64::max);
    let worst = r_dist.max(theta_dist);
    CheckOutcome::new(
        "boundedness",
        finite && worst <= tol,
        worst,
        tol,
        format!("finite = {finite}, max ‖e_obs‖ = {max_e:.4e}"),
    )
}

/// `‖θ̂(T) − θ‖ < (ε_obs + ε_f) √(τ₀/α₀)` on a window inside the terminal
/// frozen segment of records `[start, end)` whose Gramian clears `α₀`.
///
/// With a coordinate subset the error is restricted to the Gramian's
/// coordinates. Windows are scanned in quarter-window strides and the
/// first one that clears `α₀` is used.
pub fn parameter_bound_check(
    log: &TrajectoryLog,
    game: &GameDefinition,
    pe: &PEConfig,
    eps_obs: f64,
    eps_f: f64,
    range: (usize, usize),
) -> Result<CheckOutcome> {
    let name = "parameter-bound";
    let limit = pe.theta_error_bound(eps_obs, eps_f);
    let not_applicable = |detail: String| CheckOutcome {
        name: name.into(),
        verdict: Verdict::NotApplicable,
        measured: f64::NAN,
        limit,
        detail,
    };
    let Some(settle) = settling_record(log, range.0, range.1) else {
        return Ok(not_applicable("estimator still active at the end of the phase".into()));
    };
    let Some(truth) = log.true_theta_at(settle).cloned() else {
        return Ok(not_applicable("no ground truth".into()));
    };
    let steps = (pe.tau0 / log.step).round() as usize;
    let stride = (steps / 4).max(1);
    let mut k = settle;
    let mut best = f64::NEG_INFINITY;
    while k + steps < range.1 {
        let g = pe_gramian(log, log.t[k], pe, game)?;
        best = best.max(g.min_eig);
        if g.min_eig >= pe.alpha0 {
            let theta = log.theta_at(settle);
            let err = restricted_norm(&(theta - &truth), &g.coords);
            return Ok(CheckOutcome::new(
                name,
                err < limit,
                err,
                limit,
                format!(
                    "T = {}, window start {}, {} coordinates, min eig {:.4}",
                    log.t[settle],
                    log.t[k],
                    g.coords.len(),
                    g.min_eig
                ),
            ));
        }
        k += stride;
    }
    Ok(not_applicable(format!("no window after T = {} reached α₀ (best min eig {best:.4})", log.t[settle])))
}

fn restricted_norm(v: &DVector<f64>, coords: &[usize]) -> f64 {
    coords.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt()
}

/// Largest `|θ̂_i − θ_i|` over `coords` at record `k`.
pub fn max_coordinate_error(log: &TrajectoryLog, k: usize, coords: &[usize]) -> Option<f64> {
    let truth = log.true_theta_at(k)?;
    let theta = log.theta_at(k);
    Some(coords.iter().map(|&i| (theta[i] - truth[i]).abs()).fold(0.0, f64::max))
}

/// End-of-phase values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub start_time: f64,
    pub end_time: f64,
    /// Start of the terminal frozen segment within the phase.
    pub settled_at: Option<f64>,
    pub final_r: Vec<f64>,
    pub final_j: f64,
    pub final_j_hat: f64,
    pub final_h: Option<f64>,
    pub final_e_norm: f64,
    pub final_theta_err: Option<f64>,
}

/// Final state of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub t: f64,
    pub r: Vec<f64>,
    pub a: Vec<f64>,
    pub e_norm: f64,
    pub lambda_e: f64,
    pub j: f64,
    pub j_hat: f64,
    pub h: Option<f64>,
    pub stationarity_residual: f64,
    /// Generalized residual over gradients sampled within `1e-3`.
    pub sampled_stationarity_residual: f64,
    pub theta_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub records: usize,
    pub step: f64,
    /// Settled within the horizon; nothing is claimed beyond it.
    pub settling_time: Option<f64>,
    pub final_state: FinalState,
    pub phases: Vec<PhaseSummary>,
    pub checks: Vec<CheckOutcome>,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }
}

pub const SAMPLED_RESIDUAL_RADIUS: f64 = 1e-3;

/// Runs every log check and gathers the final values.
pub fn summarize(
    log: &TrajectoryLog,
    game: &GameDefinition,
    params: &EstimatorParams,
    pe: Option<&PEConfig>,
) -> Result<RunSummary> {
    let k = log.last();
    let theta = log.final_theta();
    let r = log.r_vec(k);
    let final_state = FinalState {
        t: log.t[k],
        r: log.r(k).to_vec(),
        a: log.a(k).to_vec(),
        e_norm: log.e_norm[k],
        lambda_e: log.lambda_e[k],
        j: log.j[k],
        j_hat: log.j_hat[k],
        h: log.h[k],
        stationarity_residual: log.residual[k],
        sampled_stationarity_residual: sampled_stationarity_residual(game, &r, &theta, SAMPLED_RESIDUAL_RADIUS)?,
        theta_err: log.theta_err[k],
    };
    let phases = log
        .phases()
        .into_iter()
        .map(|(s, e)| {
            let last = e - 1;
            PhaseSummary {
                start_time: log.t[s],
                end_time: log.t[last],
                settled_at: settling_record(log, s, e).map(|i| log.t[i]),
                final_r: log.r(last).to_vec(),
                final_j: log.j[last],
                final_j_hat: log.j_hat[last],
                final_h: log.h[last],
                final_e_norm: log.e_norm[last],
                final_theta_err: log.theta_err[last],
            }
        })
        .collect();
    let mut checks = vec![lyapunov_check(log), dwell_time_check(log, params), boundedness_check(log, game)];
    if let Some(pe) = pe {
        for (i, range) in log.phases().into_iter().enumerate() {
            let mut c = parameter_bound_check(log, game, pe, params.eps_obs, 0.0, range)?;
            c.name = format!("parameter-bound[phase {}]", i + 1);
            checks.push(c);
        }
    }
    Ok(RunSummary {
        records: log.len(),
        step: log.step,
        settling_time: super::settling_time(log),
        final_state,
        phases,
        checks,
    })
}
