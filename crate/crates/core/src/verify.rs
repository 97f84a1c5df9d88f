//! Invariant suite: every property prints a verdict together with the
//! measured value and the limit it was held to.

use std::fmt;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{bundled, ScenarioFile, BUNDLED};
use crate::ddos::{
    attacker_best_response, attacker_cost, best_response_set, flood_patterns, grad_router_cost, router_cost,
    DdosScenario,
};
use crate::error::{Error, Result};
use crate::estimator::{gain_matrix, observation_error, EstimatorParams, Observation};
use crate::game::{predicted_cost, predicted_cost_gradients, GameDefinition};
use crate::geometry::ConvexSet;
use crate::optimizer::sampled_stationarity_residual;
use crate::oracles::{
    brute_point_projection, brute_projection, ddos_grid_stackelberg, finite_diff_gradient, grid_step, GridSpec,
};
use crate::sim::checks::{dwell_time_check, lyapunov_check, CheckOutcome, Verdict, SAMPLED_RESIDUAL_RADIUS};
use crate::sim::{run, SimConfig, TrajectoryLog};
use crate::smooth::smooth_game;

/// Property names accepted by [`verify`].
pub const PROPERTIES: [&str; 7] = [
    "projection-orthogonality",
    "gain-identity",
    "lyapunov",
    "dwell-time",
    "stationarity",
    "gradients",
    "oracle-equivalence",
];

pub const ORTHOGONALITY_TOL: f64 = 1e-10;
pub const GAIN_IDENTITY_TOL: f64 = 1e-8;
pub const GRADIENT_REL_TOL: f64 = 1e-5;
pub const STATIONARITY_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random points per sampled property.
    pub samples: usize,
    /// Mutation fixture: run the estimator with its vector field reversed.
    pub flip_sign: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 1, samples: 1000, flip_sign: false }
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(CheckOutcome::passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            let tag = match o.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
                Verdict::NotApplicable => "N/A ",
            };
            writeln!(f, "{tag} {:<40} measured {:>11.4e}  limit {:>11.4e}  {}", o.name, o.measured, o.limit, o.detail)?;
        }
        Ok(())
    }
}

fn outcome(name: impl Into<String>, ok: bool, measured: f64, limit: f64, detail: String) -> CheckOutcome {
    CheckOutcome { name: name.into(), verdict: if ok { Verdict::Pass } else { Verdict::Fail }, measured, limit, detail }
}

/// Runs `"all"`, a single property, or the log checks of one scenario
/// (a bundled name or a config path).
pub fn verify(target: &str, opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    if target == "all" {
        let runs = reference_runs(opts)?;
        for p in PROPERTIES {
            report.outcomes.extend(property(p, opts, &runs)?);
        }
    } else if PROPERTIES.contains(&target) {
        let runs = if matches!(target, "lyapunov" | "dwell-time" | "stationarity") {
            reference_runs(opts)?
        } else {
            Vec::new()
        };
        report.outcomes.extend(property(target, opts, &runs)?);
    } else {
        let file = match bundled(target) {
            Some(text) => ScenarioFile::parse(text)?,
            None if Path::new(target).exists() => ScenarioFile::load(Path::new(target))?,
            None => {
                return Err(Error::InvalidInput(format!(
                    "unknown verify target {target:?}; expected \"all\", one of {PROPERTIES:?}, a bundled scenario or a config path"
                )))
            }
        };
        let name = Path::new(target).file_stem().map_or(target.to_string(), |s| s.to_string_lossy().into_owned());
        let runs = vec![scenario_run(&name, &file, opts)?];
        for p in ["lyapunov", "dwell-time", "stationarity"] {
            report.outcomes.extend(property(p, opts, &runs)?);
        }
    }
    Ok(report)
}

/// A finished simulation the log properties are evaluated on.
pub struct ReferenceRun {
    pub name: String,
    pub game: GameDefinition,
    pub params: EstimatorParams,
    pub log: TrajectoryLog,
}

fn scenario_run(name: &str, file: &ScenarioFile, opts: &VerifyOptions) -> Result<ReferenceRun> {
    let game = file.game()?;
    let mut cfg = file.sim_config()?;
    cfg.estimator.flip_sign = opts.flip_sign;
    let log = run(&game, &cfg)?;
    Ok(ReferenceRun { name: name.into(), game, params: cfg.estimator, log })
}

/// Settings used for the matched smooth game in the suite.
pub fn smooth_config(seed: u64) -> SimConfig {
    let mut cfg = SimConfig::standard(2000.0, 0.05, seed);
    cfg.estimator = EstimatorParams { eps_obs: 0.004, eps_obs_prime: 0.002, lambda_theta: 0.5, flip_sign: false };
    cfg.lambda_r = 0.05;
    cfg
}

/// The bundled scenarios plus the matched smooth game, run concurrently.
pub fn reference_runs(opts: &VerifyOptions) -> Result<Vec<ReferenceRun>> {
    std::thread::scope(|s| {
        let mut handles: Vec<_> = BUNDLED
            .iter()
            .map(|(name, text)| s.spawn(move || scenario_run(name, &ScenarioFile::parse(text)?, opts)))
            .collect();
        handles.push(s.spawn(|| {
            let game = smooth_game(0.0)?;
            let mut cfg = smooth_config(opts.seed);
            cfg.estimator.flip_sign = opts.flip_sign;
            let log = run(&game, &cfg)?;
            Ok(ReferenceRun { name: "smooth".into(), game, params: cfg.estimator, log })
        }));
        handles.into_iter().map(|h| h.join().expect("verify run panicked")).collect()
    })
}

fn property(name: &str, opts: &VerifyOptions, runs: &[ReferenceRun]) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    Ok(match name {
        "projection-orthogonality" => vec![projection_orthogonality(opts.samples, &mut rng)?],
        "gain-identity" => vec![gain_identity(opts.samples, &mut rng)?],
        "lyapunov" => runs
            .iter()
            .map(|r| {
                let mut o = lyapunov_check(&r.log);
                o.name = format!("lyapunov[{}]", r.name);
                o
            })
            .collect(),
        "dwell-time" => runs
            .iter()
            .map(|r| {
                let mut o = dwell_time_check(&r.log, &r.params);
                o.name = format!("dwell-time[{}]", r.name);
                o
            })
            .collect(),
        "stationarity" => runs.iter().map(stationarity).collect::<Result<_>>()?,
        "gradients" => vec![gradients(opts.samples, &mut rng)?],
        "oracle-equivalence" => oracle_equivalence(opts.samples, &mut rng)?,
        other => return Err(Error::InvalidInput(format!("unknown property {other:?}"))),
    })
}

fn test_sets() -> Result<Vec<ConvexSet>> {
    Ok(vec![
        ConvexSet::simplex(1.0, 2)?,
        ConvexSet::simplex(1.5, 3)?,
        ConvexSet::simplex(2.0, 6)?,
        ConvexSet::cube(0.0, 1.0, 3)?,
        ConvexSet::boxed(vec![-1.0, 0.0, 2.0], vec![1.0, 0.5, 2.5])?,
        ConvexSet::product(vec![ConvexSet::simplex(1.0, 2)?, ConvexSet::cube(-1.0, 1.0, 2)?]),
    ])
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Cycles through interior points, faces and low-dimensional faces.
fn sample_point(set: &ConvexSet, i: usize, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    match i % 3 {
        0 => Ok(set.sample(rng)),
        1 => set.project_point(&(gaussian(set.dim(), rng) * 3.0)),
        _ => set.project_point(&(gaussian(set.dim(), rng) * 30.0)),
    }
}

/// Moreau decomposition `v = Π_T(v) + n` with `Π_T(v) ⊥ n`, plus the
/// variational inequality of the point projection.
fn projection_orthogonality(samples: usize, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let sets = test_sets()?;
    for i in 0..samples {
        let set = &sets[i % sets.len()];
        let x = sample_point(set, i / sets.len(), rng)?;
        let v = gaussian(set.dim(), rng);
        let p = set.project_tangent_cone(&x, &v)?;
        worst = worst.max(p.dot(&(&v - &p)).abs());
        let w = gaussian(set.dim(), rng) * 2.0;
        let pw = set.project_point(&w)?;
        let y = set.sample(rng);
        worst = worst.max((&w - &pw).dot(&(y - &pw)));
    }
    Ok(outcome(
        "projection-orthogonality",
        worst <= ORTHOGONALITY_TOL,
        worst,
        ORTHOGONALITY_TOL,
        format!("{samples} samples over {} sets", sets.len()),
    ))
}

/// `e_obs = K (θ̂ − θ)` wherever the model reproduces the follower.
fn gain_identity(samples: usize, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let games = [
        ("smooth", smooth_game(0.0)?),
        ("l2", crate::ddos::ddos_game(&DdosScenario::standard(2, 1.0)?, 4)?),
        ("l3", crate::ddos::ddos_game(&DdosScenario::standard(3, 1.0)?, 20)?),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..samples {
        let (_, game) = &games[i % games.len()];
        let truth = game.true_theta.as_ref().expect("reference games carry ground truth");
        let r = game.leader_set.sample(rng);
        let obs = Observation::observe(game, &r);
        if game.model.eval(truth, &r) != obs.a {
            continue;
        }
        let theta_hat = game.model.theta_set().sample(rng);
        let e = observation_error(game, &obs, &theta_hat)?;
        let k = gain_matrix(game, &obs, &theta_hat)?;
        worst = worst.max((e - k.mul(&(&theta_hat - truth))).norm());
        checked += 1;
    }
    Ok(outcome(
        "gain-identity",
        checked > 0 && worst <= GAIN_IDENTITY_TOL,
        worst,
        GAIN_IDENTITY_TOL,
        format!("{checked} matched samples over {}", games.map(|g| g.0).join(", ")),
    ))
}

fn stationarity(run: &ReferenceRun) -> Result<CheckOutcome> {
    let k = run.log.last();
    let res =
        sampled_stationarity_residual(&run.game, &run.log.r_vec(k), &run.log.final_theta(), SAMPLED_RESIDUAL_RADIUS)?;
    Ok(outcome(
        format!("stationarity[{}]", run.name),
        res < STATIONARITY_TOL,
        res,
        STATIONARITY_TOL,
        format!("pointwise residual {:.3e} at t = {}", run.log.residual[k], run.log.t[k]),
    ))
}

fn rel_err(g: &DVector<f64>, fd: &DVector<f64>) -> f64 {
    (g - fd).amax() / g.amax().max(1.0)
}

/// Analytic gradients against central differences, half on the flooding
/// cost away from its kinks and half on the smooth game's actual and
/// predicted costs.
fn gradients(samples: usize, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let h_fd = 1e-6;
    let margin = 1e-3;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let smooth = smooth_game(0.0)?;
    while checked < samples {
        if checked % 2 == 0 {
            let links = 2 + checked % 4;
            let scn = DdosScenario::standard(links, 1.0)?;
            let r = DVector::from_fn(links, |_, _| rng.random_range(margin..1.0 - margin));
            let a = DVector::from_fn(links, |_, _| rng.random_range(margin..1.0 - margin));
            if r.iter().zip(a.iter()).any(|(r, a): (&f64, &f64)| (r - (1.0 - a)).abs() < margin) {
                continue;
            }
            let (gr, ga) = grad_router_cost(&r, &a, 1.0);
            let fr = finite_diff_gradient(|x| router_cost(x, &a, &scn), &r, h_fd)?;
            let fa = finite_diff_gradient(|x| router_cost(&r, x, &scn), &a, h_fd)?;
            worst = worst.max(rel_err(&gr, &fr)).max(rel_err(&ga, &fa));
        } else {
            let r = smooth.leader_set.sample(rng);
            let th = smooth.model.theta_set().sample(rng);
            let a = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let cost = smooth.cost.as_ref();
            let fr = finite_diff_gradient(|x| cost.cost(x, &a), &r, 1e-5)?;
            let fa = finite_diff_gradient(|x| cost.cost(&r, x), &a, 1e-5)?;
            worst = worst.max(rel_err(&cost.grad_r(&r, &a), &fr)).max(rel_err(&cost.grad_a(&r, &a), &fa));
            let pg = predicted_cost_gradients(&smooth, &r, &th)?;
            let pr = finite_diff_gradient(|x| predicted_cost(&smooth, x, &th).unwrap_or(f64::NAN), &r, 1e-5)?;
            let pt = finite_diff_gradient(|x| predicted_cost(&smooth, &r, x).unwrap_or(f64::NAN), &th, 1e-5)?;
            worst = worst.max(rel_err(&pg.grad_r, &pr)).max(rel_err(&pg.grad_theta, &pt));
        }
        checked += 1;
    }
    let ok = worst <= GRADIENT_REL_TOL;
    Ok(outcome("gradients", ok, worst, GRADIENT_REL_TOL, format!("{samples} points, central differences")))
}

fn oracle_equivalence(samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    // Point projection against the nearest grid point: the exact projection
    // is never farther from v, and the two agree up to the grid's reach.
    let grids = [
        (ConvexSet::simplex(1.0, 2)?, 201),
        (ConvexSet::simplex(1.5, 3)?, 61),
        (ConvexSet::cube(0.0, 1.0, 2)?, 101),
        (ConvexSet::boxed(vec![-1.0, 0.0, 0.0], vec![1.0, 0.5, 2.0])?, 31),
    ];
    let n = (samples / 20).max(4);
    let mut worst_gain = f64::NEG_INFINITY;
    let mut worst_ratio = 0.0f64;
    for i in 0..n {
        let (set, res) = &grids[i % grids.len()];
        let grid = GridSpec::new(*res)?;
        let v = gaussian(set.dim(), rng) * 1.5;
        let p = set.project_point(&v)?;
        let b = brute_point_projection(set, &v, grid)?;
        let spacing = grid_step(set, grid) * (set.dim() as f64).sqrt();
        let d = (&v - &p).norm();
        worst_gain = worst_gain.max(d - (&v - &b).norm());
        let reach = (2.0 * spacing * d + spacing * spacing).sqrt();
        worst_ratio = worst_ratio.max((&p - &b).norm() / reach);
    }
    out.push(outcome(
        "oracle-equivalence[project-point]",
        worst_gain <= 1e-12 && worst_ratio <= 1.0,
        worst_ratio,
        1.0,
        format!("{n} samples; distance to grid minus exact distance ≥ {:.2e}", -worst_gain),
    ));

    // Tangent-cone projection against the lattice search over directions.
    let cone_sets = [ConvexSet::simplex(1.0, 2)?, ConvexSet::cube(0.0, 1.0, 2)?, ConvexSet::simplex(1.5, 3)?];
    let mut worst_opt = f64::NEG_INFINITY;
    let mut worst_rel = f64::NEG_INFINITY;
    for i in 0..n {
        let set = &cone_sets[i % cone_sets.len()];
        let res = if set.dim() == 3 { 41 } else { 81 };
        let x = sample_point(set, i / cone_sets.len(), rng)?;
        let v = gaussian(set.dim(), rng);
        let p = set.project_tangent_cone(&x, &v)?;
        let b = brute_projection(set, &x, &v, GridSpec::new(res)?)?;
        worst_opt = worst_opt.max((&v - &p).norm() - (&v - &b).norm());
        worst_rel = worst_rel.max((&p - &b).norm() / v.norm() - 2.0 / res as f64);
    }
    out.push(outcome(
        "oracle-equivalence[tangent-cone]",
        worst_opt <= 1e-12 && worst_rel <= 0.0,
        worst_rel,
        0.0,
        format!("{n} samples; ‖Π_T v − brute‖/‖v‖ − 2/resolution, exact residual never larger"),
    ));

    // Sorted best response against enumeration of all flood patterns.
    let mut worst_gap = 0.0f64;
    for _ in 0..n {
        let links = rng.random_range(2..=5);
        let mut scn = DdosScenario::standard(links, 1.0)?;
        scn = scn.with_weights((0..links).map(|_| rng.random_range(0.2..2.0)).collect())?;
        let r = scn.leader_set().sample(rng);
        let k = scn.flooded_links()?;
        let best =
            flood_patterns(links, k, 1.0).iter().map(|a| attacker_cost(a, &r, &scn)).fold(f64::INFINITY, f64::min);
        let br = attacker_cost(&attacker_best_response(&r, &scn)?, &r, &scn);
        worst_gap = worst_gap.max(br - best);
        for a in best_response_set(&r, &scn)? {
            worst_gap = worst_gap.max(attacker_cost(&a, &r, &scn) - best);
        }
    }
    out.push(outcome(
        "oracle-equivalence[best-response]",
        worst_gap <= 1e-12,
        worst_gap,
        1e-12,
        format!("{n} random weighted scenarios"),
    ));

    // Grid Stackelberg actions of the zero-sum scenarios.
    for (links, res) in [(2, 201), (3, 301)] {
        let scn = DdosScenario::standard(links, 1.0)?;
        let rep = ddos_grid_stackelberg(&scn, GridSpec::new(res)?, 1e-9)?;
        let target = scn.r_total / links as f64;
        let dr = rep.r_star.iter().map(|x| (x - target).abs()).fold(0.0, f64::max);
        let dj = (rep.j_star + 0.5).abs();
        let step = scn.r_total / (res - 1) as f64;
        out.push(outcome(
            format!("oracle-equivalence[grid-stackelberg-l{links}]"),
            dr.max(dj) <= step && rep.is_epsilon_action,
            dr.max(dj),
            step,
            format!("r* = {:?}, J* = {}, resolution {res}", rep.r_star, rep.j_star),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions { samples: 200, ..VerifyOptions::default() }
    }

    #[test]
    fn sampled_properties_pass() {
        for p in ["projection-orthogonality", "gain-identity", "gradients", "oracle-equivalence"] {
            let rep = verify(p, &quick()).unwrap();
            assert!(rep.all_passed(), "{rep}");
        }
    }

    #[test]
    fn unknown_target_is_an_error() {
        assert!(verify("no-such-property", &quick()).is_err());
    }

    #[test]
    fn report_lines_carry_verdicts() {
        let rep = verify("gradients", &quick()).unwrap();
        let text = rep.to_string();
        assert!(text.starts_with("PASS gradients"), "{text}");
    }
}
