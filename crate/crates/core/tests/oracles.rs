use adaptive_stackelberg::config::{ScenarioFile, BUNDLED};
use adaptive_stackelberg::ddos::{ddos_game, DdosScenario};
use adaptive_stackelberg::game::{predicted_cost, predicted_cost_gradients};
use adaptive_stackelberg::oracles::{ddos_grid_stackelberg, finite_diff_gradient, GridSpec};
use adaptive_stackelberg::Error;
use nalgebra::{dvector, DVector};

fn l3(weights: Vec<f64>) -> DdosScenario {
    DdosScenario::new(3, 1.0, 1.5, 2.0, weights).unwrap()
}

#[test]
fn zero_sum_stackelberg_actions() {
    let rep =
        ddos_grid_stackelberg(&DdosScenario::standard(2, 1.0).unwrap(), GridSpec::new(201).unwrap(), 1e-3).unwrap();
    assert_eq!(rep.r_star, vec![0.5, 0.5]);
    assert_eq!(rep.j_star, -0.5);
    assert!(rep.is_epsilon_action);

    let rep = ddos_grid_stackelberg(&l3(vec![1.0; 3]), GridSpec::new(201).unwrap(), 1e-3).unwrap();
    let step = 1.5 / 200.0;
    assert!(rep.r_star.iter().all(|x| (x - 0.5).abs() <= step + 1e-12), "{:?}", rep.r_star);
    assert!((rep.j_star + 0.5).abs() <= step + 1e-12);
}

#[test]
fn values_do_not_increase_as_the_grid_doubles() {
    for scenario in [
        DdosScenario::standard(2, 1.0).unwrap(),
        DdosScenario::standard(2, 1.0).unwrap().with_weights(vec![1.0, 1.0 / 3.0]).unwrap(),
        l3(vec![1.0; 3]),
        l3(vec![1.0, 0.75, 1.0]),
    ] {
        let values: Vec<f64> = [11, 21, 41, 81, 161]
            .into_iter()
            .map(|res| ddos_grid_stackelberg(&scenario, GridSpec::new(res).unwrap(), 0.0).unwrap().j_star)
            .collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0]), "{:?}: {values:?}", scenario.weights);
    }
}

/// No equilibrium exists for the weighted game; grid values approach the
/// infimum −0.75 from above.
#[test]
fn weighted_l2_infimum_is_approached_from_above() {
    let s = DdosScenario::standard(2, 1.0).unwrap().with_weights(vec![1.0, 1.0 / 3.0]).unwrap();
    let mut last = f64::INFINITY;
    for res in [51, 101, 201, 401, 801] {
        let rep = ddos_grid_stackelberg(&s, GridSpec::new(res).unwrap(), 1e-3).unwrap();
        let step = 1.0 / (res - 1) as f64;
        assert!(rep.j_star > -0.75 && rep.j_star <= -0.75 + 4.0 * step, "res {res}: {}", rep.j_star);
        assert!((rep.r_star[0] - 0.25).abs() <= 4.0 * step);
        assert!(rep.j_star <= last);
        last = rep.j_star;
    }
}

#[test]
fn l3_switched_infimum_is_near_the_reported_point() {
    let rep = ddos_grid_stackelberg(&l3(vec![1.0, 0.75, 1.0]), GridSpec::new(301).unwrap(), 1e-3).unwrap();
    let step = 1.5 / 300.0;
    assert!(rep.j_star > -0.6 && rep.j_star <= -0.6 + 4.0 * step, "{}", rep.j_star);
    let target = [0.45, 0.6, 0.45];
    assert!(rep.r_star.iter().zip(target).all(|(x, t)| (x - t).abs() <= 0.02), "{:?}", rep.r_star);
}

#[test]
fn ddos_predicted_gradient_matches_finite_differences_inside_a_cell() {
    let s = DdosScenario::standard(2, 1.0).unwrap();
    let game = ddos_game(&s, 4).unwrap();
    let theta = DVector::from_row_slice(&[0.2, 0.7, 0.4, 0.9, 0.5, 0.1, 0.6, 0.3]);
    for r in [dvector![0.35, 0.65], dvector![0.61, 0.39], dvector![0.12, 0.88]] {
        let fd = finite_diff_gradient(|x| predicted_cost(&game, x, &theta).unwrap(), &r, 1e-7).unwrap();
        let g = predicted_cost_gradients(&game, &r, &theta).unwrap();
        assert!((g.grad_r - fd).amax() <= 1e-6);
    }
}

#[test]
fn finite_differences_reject_nonpositive_steps() {
    assert!(finite_diff_gradient(|x| x.sum(), &dvector![1.0], 0.0).is_err());
}

#[test]
fn bundled_configs_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in BUNDLED {
        let path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, text).unwrap();
        let file = ScenarioFile::load(&path).unwrap();
        assert_eq!(ScenarioFile::parse(&file.to_toml()).unwrap(), file);
        file.sim_config().unwrap();
        file.game().unwrap();
    }
}

#[test]
fn config_problems_are_reported_together() {
    let text = BUNDLED[0].1.replace("[sim]", "[sim]\nspeed = 3\nnoise = 1");
    match ScenarioFile::parse(&text) {
        Err(Error::UnknownKeys(keys)) => assert_eq!(keys, vec!["sim.noise".to_string(), "sim.speed".to_string()]),
        other => panic!("expected unknown keys, got {other:?}"),
    }
    let text = BUNDLED[0].1.replace("eps_obs_prime = 0.001", "eps_obs_prime = 0.5");
    match ScenarioFile::parse(&text) {
        Err(Error::InvalidInput(msg)) => assert!(msg.contains("eps_obs > eps_obs_prime"), "{msg}"),
        other => panic!("expected a threshold error, got {other:?}"),
    }
}
