mod common;

use common::*;

#[test]
fn gae_recursion_matches_double_sum() {
    let e = gae_max_error(100, 11);
    assert!(e < 1e-10, "max error {e}");
}

#[test]
fn gae_with_unit_gamma_lambda_is_return_minus_value() {
    let r = [0.0, 0.0, 2.5];
    let v = [0.3, -0.1, 0.7];
    let a = tnd::ppo::compute_gae(&r, &v, 1.0, 1.0).unwrap();
    for (i, x) in a.advantages.iter().enumerate() {
        assert!((x - (2.5 - v[i])).abs() < 1e-12);
    }
}

#[test]
fn clip_regimes() {
    for (ratio, a, got, want) in clip_cases() {
        assert!((got - want).abs() < 1e-12, "ratio {ratio} A {a}: {got} vs {want}");
    }
}

#[test]
fn reward_identities() {
    let (zero, shift) = reward_identity_errors();
    assert!(zero < 1e-12 && shift < 1e-12, "{zero} {shift}");
}

#[test]
fn standardized_ols_matches_normal_equations() {
    let e = ols_max_error(200, 5);
    assert!(e < 1e-8, "max error {e}");
}

#[test]
fn orthogonal_predictors_have_unit_vif() {
    for v in orthogonal_vifs() {
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }
}

#[test]
fn trial_generated_surprisal_gives_dominant_trial_beta() {
    let wins = trial_dominance(10, 21);
    assert!(wins >= 9, "{wins}/10");
}

#[test]
fn gauss_solver_on_hand_system() {
    let x = gauss_solve(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]);
    assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
}
