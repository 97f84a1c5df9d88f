use adaptive_stackelberg::config::{bundled, ScenarioFile};
use adaptive_stackelberg::ddos::{ddos_game, DdosScenario};
use adaptive_stackelberg::estimator::{
    estimator_step_in_place, gain_matrix, observation_error, switching_update, EstimatorParams, EstimatorState,
    Observation,
};
use adaptive_stackelberg::game::predicted_cost;
use adaptive_stackelberg::optimizer::{leader_step, stationarity_residual, OptimizerConfig};
use adaptive_stackelberg::oracles::finite_diff_gradient;
use adaptive_stackelberg::sim::checks::{boundedness_check, dwell_time_check, lyapunov_check, Verdict};
use adaptive_stackelberg::sim::{run, settling_time, InitialPoint, SimConfig};
use adaptive_stackelberg::smooth::{mismatch_level, smooth_game};
use adaptive_stackelberg::verify::smooth_config;
use nalgebra::{dvector, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(eps: f64, eps_prime: f64, lambda: f64) -> EstimatorParams {
    EstimatorParams::new(eps, eps_prime, lambda).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn observation_error_is_the_gain_times_the_parameter_error(
        r in prop::collection::vec(-1.0f64..1.0, 2),
        th in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let game = smooth_game(0.0).unwrap();
        let r = DVector::from_row_slice(&r);
        let theta_hat = DVector::from_row_slice(&th);
        let truth = game.true_theta.clone().unwrap();
        let obs = Observation::observe(&game, &r);
        let e = observation_error(&game, &obs, &theta_hat).unwrap();
        let k = gain_matrix(&game, &obs, &theta_hat).unwrap();
        prop_assert!((&e - k.to_dense() * (&theta_hat - &truth)).amax() <= 1e-8);
    }

    #[test]
    fn ddos_observation_error_is_the_gain_times_the_parameter_error(
        r1 in 0.0f64..1.0,
        th in prop::collection::vec(0.0f64..1.0, 8),
    ) {
        let s = DdosScenario::standard(2, 1.0).unwrap();
        let game = ddos_game(&s, 4).unwrap();
        let r = dvector![r1, 1.0 - r1];
        let theta_hat = DVector::from_row_slice(&th);
        let truth = game.true_theta.clone().unwrap();
        let obs = Observation::observe(&game, &r);
        prop_assume!(game.model.eval(&truth, &r) == obs.a);
        let e = observation_error(&game, &obs, &theta_hat).unwrap();
        let k = gain_matrix(&game, &obs, &theta_hat).unwrap();
        prop_assert!((&e - k.to_dense() * (&theta_hat - &truth)).amax() <= 1e-8);
    }

    /// A single projected step obeys
    /// `Δ‖θ̂ − θ‖² ≤ −2hλ‖e‖² + h²λ²‖Kᵀe‖²` when the model is matched.
    #[test]
    fn matched_steps_decrease_the_parameter_error(
        r in prop::collection::vec(-1.0f64..1.0, 2),
        th in prop::collection::vec(-1.0f64..1.0, 4),
        h in 0.001f64..0.5,
    ) {
        let game = smooth_game(0.0).unwrap();
        let truth = game.true_theta.clone().unwrap();
        let p = params(0.002, 0.001, 0.5);
        let mut state = EstimatorState::new(DVector::from_row_slice(&th), p, game.model.theta_set()).unwrap();
        let before = (&state.theta_hat - &truth).norm_squared();
        let obs = Observation::observe(&game, &DVector::from_row_slice(&r));
        let rep = estimator_step_in_place(&game, &mut state, &obs, h).unwrap();
        let after = (&state.theta_hat - &truth).norm_squared();
        let l = rep.lambda_e;
        let bound = -2.0 * h * l * rep.e_norm.powi(2) + (h * l * rep.kte_norm).powi(2);
        prop_assert!(after - before <= bound + 1e-12, "Δ = {}, bound = {bound}", after - before);
    }

    #[test]
    fn switching_only_moves_across_the_full_band(norms in prop::collection::vec(0.0f64..0.004, 1..200)) {
        let p = params(0.002, 0.001, 0.02);
        let mut state = EstimatorState::new(DVector::zeros(1), p, &adaptive_stackelberg::geometry::ConvexSet::cube(0.0, 1.0, 1).unwrap()).unwrap();
        for (i, &e) in norms.iter().enumerate() {
            let next = switching_update(&state, e);
            if i > 0 && next != state.lambda_e {
                if next == 0.0 {
                    prop_assert!(e <= p.eps_obs_prime);
                } else {
                    prop_assert!(e >= p.eps_obs);
                }
            }
            prop_assert!(next == 0.0 || next == p.lambda_theta);
            state.lambda_e = next;
            state.initialized = true;
        }
    }

    #[test]
    fn leader_steps_stay_feasible_and_descend(
        raw in prop::collection::vec(0.01f64..1.0, 3),
        th in prop::collection::vec(0.0f64..1.0, 1200),
    ) {
        let s = DdosScenario::new(3, 1.0, 1.5, 2.0, vec![1.0; 3]).unwrap();
        let game = ddos_game(&s, 20).unwrap();
        let sum: f64 = raw.iter().sum();
        let r = DVector::from_iterator(3, raw.iter().map(|x| x / sum * 1.5));
        prop_assume!(r.max() <= 1.0);
        let theta = DVector::from_row_slice(&th);
        let cfg = OptimizerConfig::new(0.002, 0.1).unwrap();
        let next = leader_step(&game, &r, &theta, &cfg).unwrap();
        prop_assert!(game.leader_set.contains(&next, 1e-12));
        // Within one cell Ĵ is linear in r, so the projected step cannot increase it.
        let model = adaptive_stackelberg::ddos::build_rbf_model(3, 20, 1.0).unwrap();
        if model.cell_of(&r) == model.cell_of(&next) {
            prop_assert!(predicted_cost(&game, &next, &theta).unwrap() <= predicted_cost(&game, &r, &theta).unwrap() + 1e-12);
        }
    }
}

#[test]
fn mismatched_steps_decrease_while_the_error_exceeds_the_mismatch() {
    let delta = 1e-3;
    let game = smooth_game(delta).unwrap();
    let truth = game.true_theta.clone().unwrap();
    let eps_f = mismatch_level(delta);
    let p = params(4.0 * eps_f, 2.0 * eps_f, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut state = EstimatorState::new(DVector::from_element(4, -1.0), p, game.model.theta_set()).unwrap();
    let h = 0.05;
    let mut active_steps = 0;
    for _ in 0..20_000 {
        let r = dvector![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let obs = Observation::observe(&game, &r);
        let before = (&state.theta_hat - &truth).norm_squared();
        let rep = estimator_step_in_place(&game, &mut state, &obs, h).unwrap();
        if rep.lambda_e == 0.0 {
            continue;
        }
        active_steps += 1;
        assert!(rep.e_norm > p.eps_obs_prime);
        let after = (&state.theta_hat - &truth).norm_squared();
        let l = rep.lambda_e;
        assert!(after - before <= (h * l * rep.kte_norm).powi(2) + 1e-15, "Δ = {}", after - before);
    }
    assert!(active_steps > 100);
}

#[test]
fn gain_has_a_zero_bottom_row_when_the_cost_ignores_the_follower() {
    let s = DdosScenario::standard(2, 1.0).unwrap();
    let game = ddos_game(&s, 4).unwrap();
    // With every link flooded in both the observation and the prediction,
    // ∇_a J vanishes along the whole segment.
    let r = dvector![0.3, 0.7];
    let obs = Observation { r: r.clone(), a: dvector![1.0, 1.0], j_obs: 0.0 };
    let k = gain_matrix(&game, &obs, &DVector::from_element(8, 1.0)).unwrap();
    let dense = k.to_dense();
    assert!(dense.row(2).iter().all(|&x| x == 0.0));
    assert_eq!(dense.rows(0, 2).into_owned(), game.model.jac_theta(&r).to_dense());
}

#[test]
fn descent_reaches_an_interior_stationary_point() {
    let game = smooth_game(0.0).unwrap();
    let truth = game.true_theta.clone().unwrap();
    let cfg = OptimizerConfig::new(1.0, 0.05).unwrap();
    let mut r = dvector![0.9, -0.9];
    let mut last = predicted_cost(&game, &r, &truth).unwrap();
    for _ in 0..5000 {
        r = leader_step(&game, &r, &truth, &cfg).unwrap();
        let j = predicted_cost(&game, &r, &truth).unwrap();
        assert!(j <= last + 1e-12);
        last = j;
    }
    assert!(r.amax() < 1.0);
    assert!(stationarity_residual(&game, &r, &truth).unwrap() < 1e-10);
    let fd = finite_diff_gradient(|x| predicted_cost(&game, x, &truth).unwrap(), &r, 1e-6).unwrap();
    assert!(fd.amax() < 1e-8);
}

#[test]
fn outward_gradient_at_a_vertex_is_stationary() {
    let s = DdosScenario::standard(2, 1.0).unwrap();
    let game = ddos_game(&s, 4).unwrap();
    // Link 2 predicted flooded everywhere: Ĵ = −r₁ pushes toward (1, 0).
    let theta = DVector::from_row_slice(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    assert_eq!(stationarity_residual(&game, &dvector![1.0, 0.0], &theta).unwrap(), 0.0);
    assert!(stationarity_residual(&game, &dvector![0.6, 0.4], &theta).unwrap() > 0.5);
}

fn short(name: &str, horizon: f64) -> ScenarioFile {
    let mut file = ScenarioFile::parse(bundled(name).unwrap()).unwrap();
    file.sim.horizon = horizon;
    file.switches.retain(|s| s.time < horizon);
    file
}

#[test]
fn identical_configs_reproduce_bit_identical_logs() {
    let file = short("l2_switch", 200.0);
    let file = ScenarioFile {
        switches: vec![adaptive_stackelberg::config::SwitchSection { time: 100.0, weights: vec![1.0, 1.0 / 3.0] }],
        ..file
    };
    let game = file.game().unwrap();
    let cfg = file.sim_config().unwrap();
    let (a, b) = (run(&game, &cfg).unwrap(), run(&game, &cfg).unwrap());
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca, 1).unwrap();
    b.write_csv(&mut cb, 1).unwrap();
    assert_eq!(ca, cb);

    let other = file.clone().with_seed(2);
    let c = run(&other.game().unwrap(), &other.sim_config().unwrap()).unwrap();
    let mut cc = Vec::new();
    c.write_csv(&mut cc, 1).unwrap();
    assert_ne!(ca, cc);
}

#[test]
fn zero_horizon_keeps_only_the_initial_record() {
    let file = short("l2_matched", 0.0);
    let log = run(&file.game().unwrap(), &file.sim_config().unwrap()).unwrap();
    assert_eq!(log.len(), 1);
}

#[test]
fn smooth_runs_pass_the_log_checks_and_settle() {
    let game = smooth_game(0.0).unwrap();
    let cfg = smooth_config(3);
    let log = run(&game, &cfg).unwrap();
    let ly = lyapunov_check(&log);
    assert_eq!(ly.verdict, Verdict::Pass, "{ly:?}");
    assert!(dwell_time_check(&log, &cfg.estimator).passed());
    assert!(boundedness_check(&log, &game).passed());
    let t = settling_time(&log).expect("settles within the horizon");
    assert!(t < cfg.horizon);
    assert!(log.e_norm[log.last()] < cfg.estimator.eps_obs);
}

#[test]
fn reversed_estimator_field_breaks_monotonicity() {
    let game = smooth_game(0.0).unwrap();
    let mut cfg = smooth_config(3);
    cfg.horizon = 200.0;
    cfg.estimator.flip_sign = true;
    let log = run(&game, &cfg).unwrap();
    assert!(!lyapunov_check(&log).passed());
}

#[test]
fn given_initial_points_are_used() {
    let game = smooth_game(0.0).unwrap();
    let mut cfg = SimConfig::standard(1.0, 0.05, 1);
    cfg.initial_r = InitialPoint::Given(vec![0.1, 0.2]);
    cfg.initial_theta = InitialPoint::Given(vec![0.0; 4]);
    let log = run(&game, &cfg).unwrap();
    assert_eq!(log.r(0), &[0.1, 0.2]);
    assert_eq!(log.theta_at(0), DVector::zeros(4));
    cfg.initial_r = InitialPoint::Given(vec![2.0, 0.0]);
    assert!(run(&game, &cfg).is_err());
}
