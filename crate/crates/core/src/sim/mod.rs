//! Fixed-step simulation of the coupled estimator and leader dynamics,
//! with strategy switches, excitation monitoring and dither.

pub mod checks;
pub mod gramian;
pub mod log;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimator::{estimator_step_in_place, switching_update, EstimatorParams, EstimatorState, Observation};
use crate::game::{predicted_grad_r, GameDefinition, StrategySwitchSchedule};
use crate::geometry::{ConvexSet, MEMBERSHIP_TOL};
use gramian::{integrate, step_outer, Gramian, GramianWindow};
pub use gramian::{GramianSubset, PeMode};
pub use log::{Record, SwitchEvent, TrajectoryLog};

/// Where a state variable starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialPoint {
    /// Uniform over the set, drawn from the run's seed.
    Random,
    Given(Vec<f64>),
}

/// Excitation window and level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PEConfig {
    pub tau0: f64,
    pub alpha0: f64,
    #[serde(default)]
    pub mode: PeMode,
    #[serde(default)]
    pub subset: GramianSubset,
}

impl Default for PEConfig {
    fn default() -> Self {
        Self { tau0: 100.0, alpha0: 1.0, mode: PeMode::Full, subset: GramianSubset::Active }
    }
}

impl PEConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.alpha0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "pe.tau0 = {} and pe.alpha0 = {} must be > 0",
                self.tau0, self.alpha0
            )));
        }
        Ok(())
    }

    /// `ε_θ` from `ε_θ √(α₀/τ₀) = ε_obs + ε_f`.
    pub fn theta_error_bound(&self, eps_obs: f64, eps_f: f64) -> f64 {
        (eps_obs + eps_f) * (self.tau0 / self.alpha0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DitherTrigger {
    /// Starts whenever `λ_e = 0` and repeats until the excitation check
    /// clears.
    OnLambdaZero,
    Scheduled(Vec<f64>),
}

/// Random-walk perturbation of the leader's action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherSpec {
    pub amplitude: f64,
    pub duration: f64,
    pub trigger: DitherTrigger,
}

impl DitherSpec {
    /// Amplitude `0.1 · diameter(𝓡)`, bursts of 50 time units.
    pub fn default_for(leader_set: &ConvexSet) -> Self {
        Self { amplitude: 0.1 * leader_set.diameter(), duration: 50.0, trigger: DitherTrigger::OnLambdaZero }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.duration >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "dither amplitude = {} and duration = {} must be ≥ 0",
                self.amplitude, self.duration
            )));
        }
        Ok(())
    }
}

/// `Π_𝓡(r + δ)` with `δ` uniform in the ball of radius `spec.amplitude`.
pub fn dither<R: Rng + ?Sized>(
    r: &DVector<f64>,
    spec: &DitherSpec,
    set: &ConvexSet,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_dim(set.dim(), r.len())?;
    if spec.amplitude == 0.0 {
        return Ok(r.clone());
    }
    let n = r.len();
    let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let radius = spec.amplitude * rng.random::<f64>().powf(1.0 / n as f64);
    let norm = dir.norm();
    let delta = if norm > 0.0 { dir * (radius / norm) } else { DVector::zeros(n) };
    set.project_point(&(r + delta))
}

/// Everything a run needs besides the game.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    pub estimator: EstimatorParams,
    pub lambda_r: f64,
    pub initial_r: InitialPoint,
    pub initial_theta: InitialPoint,
    pub switches: StrategySwitchSchedule,
    pub pe: Option<PEConfig>,
    pub dither: Option<DitherSpec>,
}

impl SimConfig {
    /// Defaults: `ε_obs = 0.002`, `ε'_obs = 0.001`, `λ_θ = 0.02`,
    /// `λ_r = 0.002`, random initial values.
    pub fn standard(horizon: f64, step: f64, seed: u64) -> Self {
        Self {
            horizon,
            step,
            seed,
            estimator: EstimatorParams { eps_obs: 0.002, eps_obs_prime: 0.001, lambda_theta: 0.02, flip_sign: false },
            lambda_r: 0.002,
            initial_r: InitialPoint::Random,
            initial_theta: InitialPoint::Random,
            switches: StrategySwitchSchedule::default(),
            pe: None,
            dither: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            problems.push(format!("horizon = {} must be finite and ≥ 0", self.horizon));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            problems.push(format!("step = {} must be > 0", self.step));
        }
        if !(self.lambda_r > 0.0) || !self.lambda_r.is_finite() {
            problems.push(format!("lambda_r = {} must be > 0", self.lambda_r));
        }
        for r in [
            self.estimator.validate(),
            self.pe.as_ref().map_or(Ok(()), PEConfig::validate),
            self.dither.as_ref().map_or(Ok(()), DitherSpec::validate),
        ] {
            if let Err(Error::InvalidInput(msg)) = r {
                problems.push(msg);
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }
}

fn initial_point(p: &InitialPoint, set: &ConvexSet, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    match p {
        InitialPoint::Random => Ok(set.sample(rng)),
        InitialPoint::Given(v) => {
            check_dim(set.dim(), v.len())?;
            let v = DVector::from_column_slice(v);
            let distance = set.distance(&v)?;
            if distance > MEMBERSHIP_TOL {
                return Err(Error::OutsideSet { distance, tolerance: MEMBERSHIP_TOL });
            }
            set.project_point(&v)
        }
    }
}

#[derive(Debug, Default)]
struct DitherState {
    active_until: Option<f64>,
    done: bool,
    zero_since: Option<f64>,
    next_scheduled: usize,
}

const ERR_REFRESH: usize = 4096;
/// The online Gramian eigenvalue is recomputed this many times per window
/// length and held constant in between.
const GRAMIAN_EIG_SUBDIVISIONS: usize = 200;

/// Runs the coupled system for `cfg.horizon` and logs every step.
///
/// Each step observes `a = f(r)`, applies the hysteresis rule, updates `θ̂`
/// and then `r` (both from the pre-update `θ̂`), and finally dithers `r`
/// if a dither burst is active.
pub fn run(game: &GameDefinition, cfg: &SimConfig) -> Result<TrajectoryLog> {
    cfg.validate()?;
    let model = game.model.clone();
    check_dim(model.n_r(), game.leader_set.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut r = initial_point(&cfg.initial_r, &game.leader_set, &mut rng)?;
    let theta0 = initial_point(&cfg.initial_theta, model.theta_set(), &mut rng)?;
    let mut est = EstimatorState::new(theta0.clone(), cfg.estimator, model.theta_set())?;

    let h = cfg.step;
    let n = cfg.steps();
    let mut log = TrajectoryLog::new(model.n_r(), model.n_a(), h, theta0, game.true_theta.clone(), cfg.pe.is_some());
    log.reserve(n + 1);

    let mut current = game.clone();
    let mut truth = game.true_theta.clone();
    let exact_err_sq =
        |theta_hat: &DVector<f64>, truth: &Option<DVector<f64>>| truth.as_ref().map(|t| (theta_hat - t).norm_squared());
    let mut err_sq = exact_err_sq(&est.theta_hat, &truth);
    let mut window = cfg.pe.as_ref().map(|pe| GramianWindow::new(model.n_theta(), (pe.tau0 / h).round() as usize, h));
    let eig_stride = cfg.pe.as_ref().map_or(1, |pe| ((pe.tau0 / h) as usize / GRAMIAN_EIG_SUBDIVISIONS).max(1));
    let mut last_eig = 0.0;
    let mut dith = DitherState::default();
    let mut switches = cfg.switches.switches().iter().peekable();

    for k in 0..=n {
        let t = k as f64 * h;
        while let Some(sw) = switches.next_if(|s| s.time <= t + 1e-9 * h) {
            current = game.with_follower(sw.follower.clone(), sw.follower_cost.clone(), sw.true_theta.clone());
            truth = sw.true_theta.clone();
            err_sq = exact_err_sq(&est.theta_hat, &truth);
            log.switches.push(SwitchEvent {
                time: t,
                record: k,
                true_theta: truth.clone(),
                theta_hat: est.theta_hat.clone(),
            });
            dith = DitherState::default();
            if let Some(w) = window.as_mut() {
                w.clear();
            }
            last_eig = 0.0;
        }
        if k % ERR_REFRESH == 0 {
            err_sq = exact_err_sq(&est.theta_hat, &truth);
        }

        let obs = Observation::observe(&current, &r);
        let a_hat = model.eval(&est.theta_hat, &r);
        let j_hat = current.cost.cost(&r, &a_hat);
        let grad_r = predicted_grad_r(&current, &r, &est.theta_hat);
        let residual = current.leader_set.project_tangent_cone(&r, &(-&grad_r))?.norm();
        let matched = truth.as_ref().map(|th| model.eval(th, &r) == obs.a);
        let h_cost = current.follower_cost.as_ref().map(|c| c.cost(&obs.a, &r));
        let theta_err = err_sq.map(|s| s.max(0.0).sqrt());

        let (e_norm, lambda_e, kte_norm, changed, gain) = if k < n {
            let rep = estimator_step_in_place(&current, &mut est, &obs, h)?;
            (rep.e_norm, rep.lambda_e, rep.kte_norm, rep.changed, Some(rep.gain))
        } else {
            let e = crate::estimator::observation_error(&current, &obs, &est.theta_hat)?;
            let lambda = switching_update(&est, e.norm());
            (e.norm(), lambda, 0.0, Vec::new(), None)
        };
        for (what, v) in [("e_obs", e_norm), ("J", obs.j_obs), ("J_hat", j_hat)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: what.into(), record: k });
            }
        }

        let mut cross_term = 0.0;
        if !changed.is_empty() {
            let ga = current.cost.grad_a(&r, &a_hat);
            let grad_theta = model.jac_theta(&r).tr_mul_sparse(&ga);
            for (j, old, new) in &changed {
                if let Some((_, g)) = grad_theta.iter().find(|(c, _)| c == j) {
                    cross_term += g * (new - old) / h;
                }
            }
            if let (Some(s), Some(th)) = (err_sq.as_mut(), truth.as_ref()) {
                for &(j, old, new) in &changed {
                    *s += (new - th[j]).powi(2) - (old - th[j]).powi(2);
                }
            }
        }

        let gramian_mineig = match (window.as_mut(), cfg.pe.as_ref()) {
            (Some(w), Some(pe)) => {
                let line = match pe.mode {
                    PeMode::Full => Some(match &gain {
                        Some(g) => g.line_grad.clone(),
                        None => current.cost.grad_a_line_integral(&r, &obs.a, &a_hat),
                    }),
                    PeMode::Simplified => None,
                };
                w.push(step_outer(&model.jac_theta(&r), line.as_ref()));
                if k % eig_stride == 0 || k == n {
                    last_eig = w.min_eig(&pe.subset).unwrap_or(0.0);
                }
                Some(last_eig)
            }
            _ => None,
        };

        let dither_on = match cfg.dither.as_ref() {
            Some(spec) => update_dither(&mut dith, spec, cfg.pe.as_ref(), t, lambda_e, gramian_mineig),
            None => false,
        };

        log.push(
            &r,
            &obs.a,
            Record {
                t,
                e_norm,
                lambda_e,
                j: obs.j_obs,
                j_hat,
                h: h_cost,
                residual,
                theta_err,
                gramian_mineig,
                kte_norm,
                matched,
                cross_term,
                dither_active: dither_on,
            },
        );

        if k < n {
            let entries: Vec<(usize, f64)> = changed.iter().map(|&(j, _, new)| (j, new)).collect();
            if entries.iter().any(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite { what: "theta_hat".into(), record: k });
            }
            log.push_delta(&entries);
            let mut next = r - grad_r * (h * cfg.lambda_r);
            current.leader_set.project_in_place(next.as_mut_slice());
            if dither_on {
                next =
                    dither(&next, cfg.dither.as_ref().expect("dither is configured"), &current.leader_set, &mut rng)?;
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "r".into(), record: k });
            }
            r = next;
        }
    }
    Ok(log)
}

/// Advances the dither state machine at time `t`; returns whether the step
/// after this record is dithered.
fn update_dither(
    st: &mut DitherState,
    spec: &DitherSpec,
    pe: Option<&PEConfig>,
    t: f64,
    lambda_e: f64,
    mineig: Option<f64>,
) -> bool {
    if lambda_e == 0.0 {
        st.zero_since.get_or_insert(t);
    } else {
        st.zero_since = None;
    }
    if let (Some(pe), Some(eig), Some(since)) = (pe, mineig, st.zero_since) {
        if t - since >= pe.tau0 - 1e-9 && eig >= pe.alpha0 {
            st.done = true;
            st.active_until = None;
        }
    }
    if st.active_until.is_some_and(|until| t >= until) {
        st.active_until = None;
        if pe.is_none() && matches!(spec.trigger, DitherTrigger::OnLambdaZero) {
            st.done = true;
        }
    }
    if st.active_until.is_none() && !st.done {
        match &spec.trigger {
            DitherTrigger::OnLambdaZero => {
                if lambda_e == 0.0 {
                    st.active_until = Some(t + spec.duration);
                }
            }
            DitherTrigger::Scheduled(times) => {
                if let Some(&start) = times.get(st.next_scheduled) {
                    if t >= start {
                        st.next_scheduled += 1;
                        st.active_until = Some(t + spec.duration);
                    }
                }
            }
        }
    }
    st.active_until.is_some()
}

/// Earliest time after which `λ_e ≡ 0` (hence `θ̂` is frozen) through the
/// end of the log.
pub fn settling_time(log: &TrajectoryLog) -> Option<f64> {
    settling_record(log, 0, log.len()).map(|k| log.t[k])
}

/// Start of the terminal `λ_e ≡ 0` run within records `[start, end)`.
pub fn settling_record(log: &TrajectoryLog, start: usize, end: usize) -> Option<usize> {
    let end = end.min(log.len());
    if start >= end {
        return None;
    }
    match (start..end).rev().find(|&k| log.lambda_e[k] != 0.0) {
        None => Some(start),
        Some(k) if k + 1 < end => Some(k + 1),
        Some(_) => None,
    }
}

/// Trapezoidal Gramian over `[t, t + τ₀]`, replaying `θ̂` from the log.
pub fn pe_gramian(log: &TrajectoryLog, t: f64, pe: &PEConfig, game: &GameDefinition) -> Result<Gramian> {
    pe.validate()?;
    let k0 = log.index_of(t).ok_or_else(|| Error::InvalidInput(format!("window start {t} lies outside the log")))?;
    let steps = (pe.tau0 / log.step).round() as usize;
    let k1 = k0 + steps;
    if k1 >= log.len() {
        return Err(Error::InvalidInput(format!(
            "window [{t}, {}] exceeds the log (ends at {})",
            t + pe.tau0,
            log.t[log.last()]
        )));
    }
    let model = game.model.as_ref();
    let mut samples = Vec::with_capacity(steps + 1);
    log.replay(k0..k1 + 1, |k, theta| {
        let r = log.r_vec(k);
        let line = match pe.mode {
            PeMode::Full => {
                let a_hat = model.eval(theta, &r);
                Some(game.cost.grad_a_line_integral(&r, &log.a_vec(k), &a_hat))
            }
            PeMode::Simplified => None,
        };
        samples.push(step_outer(&model.jac_theta(&r), line.as_ref()));
    });
    integrate(model.n_theta(), &samples, log.step, &pe.subset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddos::{ddos_game, DdosScenario};
    use nalgebra::dvector;

    fn l2_game() -> GameDefinition {
        ddos_game(&DdosScenario::standard(2, 1.0).unwrap(), 4).unwrap()
    }

    #[test]
    fn zero_horizon_logs_one_record() {
        let log = run(&l2_game(), &SimConfig::standard(0.0, 0.05, 1)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.t, vec![0.0]);
    }

    #[test]
    fn dither_with_zero_amplitude_is_identity() {
        let set = ConvexSet::simplex(1.0, 2).unwrap();
        let spec = DitherSpec { amplitude: 0.0, duration: 1.0, trigger: DitherTrigger::OnLambdaZero };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = dvector![0.3, 0.7];
        assert_eq!(dither(&r, &spec, &set, &mut rng).unwrap(), r);
    }

    #[test]
    fn dither_stays_feasible_and_is_reproducible() {
        let set = ConvexSet::simplex(1.5, 3).unwrap();
        let spec = DitherSpec::default_for(&set);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = dvector![0.5, 0.5, 0.5];
            let mut out = Vec::new();
            for _ in 0..50 {
                r = dither(&r, &spec, &set, &mut rng).unwrap();
                assert!(set.contains(&r, 1e-12));
                out.push(r.clone());
            }
            out
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn settling_time_definitions() {
        let mut log = run(&l2_game(), &SimConfig::standard(1.0, 0.05, 1)).unwrap();
        log.lambda_e.iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(settling_time(&log), Some(0.0));
        log.lambda_e[5] = 0.02;
        assert_eq!(settling_time(&log), Some(log.t[6]));
        let last = log.last();
        log.lambda_e[last] = 0.02;
        assert_eq!(settling_time(&log), None);
    }

    #[test]
    fn identical_configs_give_identical_logs() {
        let cfg = SimConfig::standard(20.0, 0.05, 7);
        assert_eq!(run(&l2_game(), &cfg).unwrap(), run(&l2_game(), &cfg).unwrap());
    }

    #[test]
    fn gramian_window_must_fit() {
        let game = l2_game();
        let log = run(&game, &SimConfig::standard(10.0, 0.05, 1)).unwrap();
        let pe = PEConfig { tau0: 100.0, ..PEConfig::default() };
        assert!(matches!(pe_gramian(&log, 0.0, &pe, &game), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_inverted_thresholds() {
        let mut cfg = SimConfig::standard(1.0, 0.05, 1);
        cfg.estimator.eps_obs_prime = 0.003;
        assert!(run(&l2_game(), &cfg).is_err());
    }
}
