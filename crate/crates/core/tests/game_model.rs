use adaptive_stackelberg::ddos::{
    attacker_best_response, attacker_cost, best_response_set, build_rbf_model, ddos_game, ground_truth_theta,
    router_cost, DdosScenario,
};
use adaptive_stackelberg::estimator::{kappa_estimate, mismatch_error_bound_check, SampleGrid};
use adaptive_stackelberg::game::{
    affinity_check, predicted_cost, predicted_cost_gradients, predicted_response, GameDefinition,
};
use adaptive_stackelberg::oracles::finite_diff_gradient;
use adaptive_stackelberg::smooth::{mismatch_level, smooth_game, KAPPA_BOUND};
use nalgebra::{dvector, DVector};
use proptest::prelude::*;

/// `Σ w_l min(r_l, max(c₀ − a_l, 0))` written out independently.
fn weighted_traffic(r: &DVector<f64>, a: &DVector<f64>, w: &[f64], c0: f64) -> f64 {
    (0..r.len()).map(|l| w[l] * r[l].min((c0 - a[l]).max(0.0))).sum()
}

/// Minimum of the attacker's cost over every choice of `k` flooded links.
fn enumerated_attacker_minimum(r: &DVector<f64>, s: &DdosScenario, k: usize) -> f64 {
    (0u32..1 << s.links)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| {
            let a = DVector::from_fn(s.links, |l, _| if m >> l & 1 == 1 { s.c0 } else { 0.0 });
            weighted_traffic(r, &a, &s.weights, s.c0)
        })
        .fold(f64::INFINITY, f64::min)
}

fn simplex_point(raw: &[f64], total: f64) -> DVector<f64> {
    let s: f64 = raw.iter().sum();
    DVector::from_iterator(raw.len(), raw.iter().map(|x| x / s * total))
}

#[test]
fn predicted_response_examples() {
    let s = DdosScenario::standard(2, 1.0).unwrap();
    let game = ddos_game(&s, 4).unwrap();
    let model = game.model.as_ref();
    let r = dvector![0.3, 0.7];
    assert_eq!(predicted_response(model, &DVector::zeros(8), &r).unwrap(), DVector::zeros(2));
    let theta = game.true_theta.clone().unwrap();
    assert_eq!(predicted_response(model, &theta, &r).unwrap(), dvector![0.0, 1.0]);
    let other = DVector::from_fn(8, |i, _| (i % 3) as f64 / 2.0);
    let mid = (&theta + &other) / 2.0;
    let mean = (model.eval(&theta, &r) + model.eval(&other, &r)) / 2.0;
    assert!((predicted_response(model, &mid, &r).unwrap() - mean).amax() < 1e-15);
}

#[test]
fn predicted_cost_examples() {
    let s = DdosScenario::standard(2, 1.0).unwrap();
    let game = ddos_game(&s, 4).unwrap();
    let theta = game.true_theta.clone().unwrap();
    assert_eq!(predicted_cost(&game, &dvector![0.5, 0.5], &theta).unwrap(), -0.5);
    let flood_both = DVector::from_element(8, 1.0);
    assert_eq!(predicted_cost(&game, &dvector![0.3, 0.7], &flood_both).unwrap(), 0.0);
}

#[test]
fn indicator_model_has_no_action_derivative() {
    let s = DdosScenario::standard(3, 1.0).unwrap();
    let game = ddos_game(&s, 20).unwrap();
    let theta = game.true_theta.clone().unwrap();
    let r = dvector![0.33, 0.71, 0.46];
    let a_hat = game.model.eval(&theta, &r);
    let g = predicted_cost_gradients(&game, &r, &theta).unwrap();
    assert_eq!(g.grad_r, game.cost.grad_r(&r, &a_hat));
}

#[test]
fn models_are_affine() {
    for (links, n) in [(2, 4), (3, 20)] {
        let model = build_rbf_model(links, n, 1.0).unwrap();
        assert!(affinity_check(&model, 50, 3));
    }
    assert!(affinity_check(smooth_game(0.0).unwrap().model.as_ref(), 200, 3));
}

#[test]
fn ground_truth_examples() {
    let s = DdosScenario::standard(2, 1.0).unwrap();
    let model = build_rbf_model(2, 4, 1.0).unwrap();
    let theta = ground_truth_theta(&s, &model).unwrap();
    assert_eq!(theta.as_slice(), &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    let weighted = s.with_weights(vec![1.0, 1.0 / 3.0]).unwrap();
    let theta = ground_truth_theta(&weighted, &model).unwrap();
    assert_eq!(theta.as_slice(), &[0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn best_response_examples() {
    let s = DdosScenario::standard(2, 1.0).unwrap();
    assert_eq!(attacker_best_response(&dvector![0.3, 0.7], &s).unwrap(), dvector![0.0, 1.0]);
    let w = s.with_weights(vec![1.0, 1.0 / 3.0]).unwrap();
    assert_eq!(attacker_best_response(&dvector![0.8, 0.2], &w).unwrap(), dvector![1.0, 0.0]);
    let s3 = DdosScenario::new(3, 1.0, 1.5, 2.0, vec![1.0; 3]).unwrap();
    let r = dvector![0.5, 0.5, 0.5];
    let a = attacker_best_response(&r, &s3).unwrap();
    assert_eq!(a, dvector![1.0, 1.0, 0.0]);
    assert_eq!(weighted_traffic(&r, &a, &s3.weights, 1.0), enumerated_attacker_minimum(&r, &s3, 2));
    assert_eq!(best_response_set(&r, &s3).unwrap().len(), 3);
}

#[test]
fn cost_examples() {
    let s = DdosScenario::standard(2, 1.0).unwrap();
    let r = dvector![0.5, 0.5];
    let a = dvector![0.0, 1.0];
    assert_eq!((router_cost(&r, &a, &s), attacker_cost(&a, &r, &s)), (-0.5, 0.5));
    let w = s.with_weights(vec![1.0, 1.0 / 3.0]).unwrap();
    let r = dvector![0.25, 0.75];
    let a = dvector![1.0, 0.0];
    assert_eq!(router_cost(&r, &a, &w), -0.75);
    assert!((attacker_cost(&a, &r, &w) - 0.25).abs() < 1e-15);
}

/// Every `r` on a fine grid of the L = 2 simplex away from the cell
/// boundaries is predicted exactly by the ground-truth parameters.
#[test]
fn l2_model_is_matched_off_cell_boundaries() {
    for weights in [vec![1.0, 1.0], vec![1.0, 1.0 / 3.0]] {
        let s = DdosScenario::standard(2, 1.0).unwrap().with_weights(weights).unwrap();
        let game = ddos_game(&s, 4).unwrap();
        let theta = game.true_theta.clone().unwrap();
        for i in 0..=1000 {
            let r1 = i as f64 / 1000.0;
            if (r1 * 4.0 - (r1 * 4.0).round()).abs() < 1e-9 {
                continue;
            }
            let r = dvector![r1, 1.0 - r1];
            assert_eq!(game.model.eval(&theta, &r), game.follower.respond(&r), "r = {r1}");
        }
    }
}

#[test]
fn l3_model_carries_a_unit_mismatch() {
    let s = DdosScenario::new(3, 1.0, 1.5, 2.0, vec![1.0; 3]).unwrap();
    let game = ddos_game(&s, 20).unwrap();
    let theta = game.true_theta.clone().unwrap();
    let mut rs = Vec::new();
    for i in 0..=30 {
        for j in 0..=30 - i {
            let (r1, r2) = (i as f64 * 0.05, j as f64 * 0.05);
            let r3 = 1.5 - r1 - r2;
            if r1 <= 1.0 && r2 <= 1.0 && r3 <= 1.0 + 1e-12 {
                rs.push(dvector![r1, r2, r3.max(0.0)]);
            }
        }
    }
    let grid = SampleGrid::cartesian(&rs, &[theta.clone()], "0.05 simplex lattice");
    let report = mismatch_error_bound_check(&game, &grid, &theta, 0.999).unwrap();
    assert!(!report.holds);
    assert!(report.attained >= 1.0, "attained {}", report.attained);

    let kappa = kappa_estimate(&game, &grid).unwrap().kappa;
    assert!((1.0..=2.0 + 1e-12).contains(&kappa), "κ = {kappa} outside [1, √(1 + L)]");
}

#[test]
fn matched_models_certify_any_mismatch_level() {
    let s = DdosScenario::standard(2, 1.0).unwrap();
    let game = ddos_game(&s, 4).unwrap();
    let theta = game.true_theta.clone().unwrap();
    let rs: Vec<_> = (0..40).map(|i| dvector![0.01 + i as f64 * 0.025, 0.99 - i as f64 * 0.025]).collect();
    let grid = SampleGrid::cartesian(&rs, &[theta.clone()], "segment");
    assert!(mismatch_error_bound_check(&game, &grid, &theta, 0.0).unwrap().holds);
}

#[test]
fn perturbed_follower_meets_the_bound_at_kappa_delta() {
    let delta = 0.01;
    let game = smooth_game(delta).unwrap();
    let theta = game.true_theta.clone().unwrap();
    let rs: Vec<_> =
        (0..41).flat_map(|i| (0..41).map(move |j| dvector![-1.0 + 0.05 * i as f64, -1.0 + 0.05 * j as f64])).collect();
    let thetas = [theta.clone(), DVector::from_element(4, 1.0), DVector::from_element(4, -1.0)];
    let grid = SampleGrid::cartesian(&rs, &thetas, "0.05 lattice");
    let kappa = kappa_estimate(&game, &grid).unwrap().kappa;
    assert!(kappa <= KAPPA_BOUND);
    let report = mismatch_error_bound_check(&game, &grid, &theta, kappa * delta).unwrap();
    assert!(report.holds);
    // The lattice comes within 0.2% of the perturbation's supremum.
    assert!(report.attained >= 0.998 * kappa * delta);
    assert!(!mismatch_error_bound_check(&game, &grid, &theta, 0.99 * kappa * delta).unwrap().holds);
    assert!(mismatch_error_bound_check(&game, &grid, &theta, mismatch_level(delta)).unwrap().holds);
}

fn smooth_point(game: &GameDefinition, raw: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let r = dvector![raw[0], raw[1]];
    let theta = game.model.theta_set().project_point(&DVector::from_row_slice(&raw[2..6])).unwrap();
    (r, theta)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn predicted_cost_gradients_match_finite_differences(raw in prop::collection::vec(-0.95f64..0.95, 6)) {
        let game = smooth_game(0.0).unwrap();
        let (r, theta) = smooth_point(&game, &raw);
        let g = predicted_cost_gradients(&game, &r, &theta).unwrap();
        let fd_r = finite_diff_gradient(|x| predicted_cost(&game, x, &theta).unwrap(), &r, 1e-5).unwrap();
        let fd_t = finite_diff_gradient(|t| predicted_cost(&game, &r, t).unwrap(), &theta, 1e-5).unwrap();
        prop_assert!((&g.grad_r - &fd_r).amax() <= 1e-6 * fd_r.amax().max(1.0));
        prop_assert!((&g.grad_theta - &fd_t).amax() <= 1e-6 * fd_t.amax().max(1.0));
    }

    #[test]
    fn prediction_differences_are_linear_in_the_parameter_gap(
        raw in prop::collection::vec(-1.0f64..1.0, 6),
        other in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let game = smooth_game(0.0).unwrap();
        let (r, theta) = smooth_point(&game, &raw);
        let truth = game.true_theta.clone().unwrap();
        let lhs = game.model.eval(&theta, &r) - game.model.eval(&truth, &r);
        let rhs = game.model.jac_theta(&r).mul(&(&theta - &truth));
        prop_assert!((lhs - rhs).amax() <= 1e-10);
        let th2 = DVector::from_row_slice(&other);
        prop_assert!((game.model.eval(&th2, &r) - game.model.eval(&truth, &r) - game.model.jac_theta(&r).mul(&(th2 - &truth))).amax() <= 1e-10);
    }

    #[test]
    fn l3_prediction_differences_are_linear(raw in prop::collection::vec(0.01f64..1.0, 3), seed in 0u64..1000) {
        let s = DdosScenario::new(3, 1.0, 1.5, 2.0, vec![1.0; 3]).unwrap();
        let game = ddos_game(&s, 20).unwrap();
        let r = simplex_point(&raw, 1.5);
        prop_assume!(r.max() <= 1.0);
        let truth = game.true_theta.clone().unwrap();
        let theta = DVector::from_fn(truth.len(), |i, _| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0);
        let lhs = game.model.eval(&theta, &r) - game.model.eval(&truth, &r);
        prop_assert!((lhs - game.model.jac_theta(&r).mul(&(&theta - &truth))).amax() <= 1e-10);
    }

    #[test]
    fn router_gradients_match_finite_differences_off_kinks(
        rr in prop::collection::vec(0.0f64..1.0, 3),
        aa in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let r = DVector::from_row_slice(&rr);
        let a = DVector::from_row_slice(&aa);
        // Kinks: r_l = c₀ − a_l, a_l ∈ {0, c₀}, r_l ∈ {0, c₀}.
        let margin = 1e-3;
        prop_assume!((0..3).all(|l| (r[l] - (1.0 - a[l])).abs() > margin && a[l] > margin && r[l] > margin));
        let s = DdosScenario::new(3, 1.0, 1.5, 2.0, vec![1.0; 3]).unwrap();
        let game = ddos_game(&s, 20).unwrap();
        let fd_r = finite_diff_gradient(|x| game.cost.cost(x, &a), &r, 1e-6).unwrap();
        let fd_a = finite_diff_gradient(|x| game.cost.cost(&r, x), &a, 1e-6).unwrap();
        prop_assert!((game.cost.grad_r(&r, &a) - fd_r).amax() <= 1e-6);
        prop_assert!((game.cost.grad_a(&r, &a) - fd_a).amax() <= 1e-6);
    }

    #[test]
    fn best_response_attains_the_enumerated_minimum(raw in prop::collection::vec(0.01f64..1.0, 3), w in prop::collection::vec(0.1f64..1.0, 3)) {
        let s3 = DdosScenario::new(3, 1.0, 1.5, 2.0, w.clone()).unwrap();
        let r = simplex_point(&raw, 1.5);
        let a = attacker_best_response(&r, &s3).unwrap();
        let best = enumerated_attacker_minimum(&r, &s3, 2);
        prop_assert!((weighted_traffic(&r, &a, &w, 1.0) - best).abs() <= 1e-12);
        for b in best_response_set(&r, &s3).unwrap() {
            prop_assert!((weighted_traffic(&r, &b, &w, 1.0) - best).abs() <= 1e-12);
        }
        let s2 = DdosScenario::new(2, 1.0, 1.0, 1.0, w[..2].to_vec()).unwrap();
        let r2 = simplex_point(&raw[..2], 1.0);
        let a2 = attacker_best_response(&r2, &s2).unwrap();
        prop_assert!((weighted_traffic(&r2, &a2, &w[..2], 1.0) - enumerated_attacker_minimum(&r2, &s2, 1)).abs() <= 1e-12);
    }

    #[test]
    fn zero_sum_costs_are_negatives(raw in prop::collection::vec(0.01f64..1.0, 3), aa in prop::collection::vec(0.0f64..1.0, 3)) {
        let s3 = DdosScenario::new(3, 1.0, 1.5, 2.0, vec![1.0; 3]).unwrap();
        let r = simplex_point(&raw, 1.5);
        let a = DVector::from_row_slice(&aa);
        prop_assert_eq!(attacker_cost(&a, &r, &s3), -router_cost(&r, &a, &s3));
    }

    #[test]
    fn cells_predict_their_center_response(raw in prop::collection::vec(0.01f64..1.0, 3)) {
        let s3 = DdosScenario::new(3, 1.0, 1.5, 2.0, vec![1.0; 3]).unwrap();
        let game = ddos_game(&s3, 20).unwrap();
        let theta = game.true_theta.clone().unwrap();
        let r = simplex_point(&raw, 1.5);
        prop_assume!(r.max() <= 1.0);
        let model = build_rbf_model(3, 20, 1.0).unwrap();
        let cell = model.cell_of(&r).unwrap();
        let center = model.cell_center(cell);
        let rc = dvector![center[0], center[1], 1.5 - center[0] - center[1]];
        prop_assert_eq!(game.model.eval(&theta, &r), attacker_best_response(&rc, &s3).unwrap());
    }

    #[test]
    fn matched_prediction_reproduces_the_actual_cost(raw in prop::collection::vec(-1.0f64..1.0, 2)) {
        let game = smooth_game(0.0).unwrap();
        let r = DVector::from_row_slice(&raw);
        let truth = game.true_theta.clone().unwrap();
        prop_assert_eq!(predicted_cost(&game, &r, &truth).unwrap(), game.cost.cost(&r, &game.follower.respond(&r)));
    }
}
