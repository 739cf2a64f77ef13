use dperm_web::{accountant_curve, noise_curves, simulate};

#[test]
fn noise_curves_fall_as_one_over_eps_squared() {
    let curves = noise_curves(1000, 100, 0.01, 1e-6, 1.0, 0.01, 0.25, 9).unwrap();
    assert_eq!(curves.epsilon.len(), 9);
    assert!((curves.epsilon[8] - 0.25).abs() < 1e-12);
    let input = curves
        .curves
        .iter()
        .find(|c| c.mechanism == "input")
        .unwrap();
    let ratio = input.variance[0] / input.variance[8];
    assert!((ratio - (0.25f64 / 0.01).powi(2)).abs() < 1e-9 * ratio);
    assert_eq!(curves.curves.len(), 5);
}

#[test]
fn output_curve_is_null_under_pl() {
    let curves = noise_curves(100, 10, 0.0, 1e-4, 1.0, 0.1, 1.0, 3).unwrap();
    let output = curves
        .curves
        .iter()
        .find(|c| c.mechanism == "output")
        .unwrap();
    assert!(output.variance.iter().all(|v| v.is_nan()));
    let json = serde_json::to_value(&curves).unwrap();
    assert!(json["curves"][1]["variance"][0].is_null());
}

#[test]
fn accountant_curve_minimum_matches_report() {
    let a = accountant_curve(0.1, 1e-5, 100, 1000, 0.01, 16.0, 1.0).unwrap();
    assert!(a.passed);
    let min = a
        .epsilon_at_lambda
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    assert_eq!(min, a.realized_epsilon);
    assert_eq!(
        a.lambda[a.epsilon_at_lambda.iter().position(|&e| e == min).unwrap()],
        a.best_lambda
    );
    assert!(
        !accountant_curve(0.1, 1e-5, 100, 1000, 0.01, 1.0, 1.0)
            .unwrap()
            .passed
    );
}

#[test]
fn simulation_is_seeded() {
    let a = simulate(200, 4, 2, 16.0, 3).unwrap();
    assert_eq!(a, simulate(200, 4, 2, 16.0, 3).unwrap());
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    // reference row plus 3 mechanisms × 9 budgets × 2 repetitions
    assert_eq!(v["rows"].as_array().unwrap().len(), 1 + 3 * 9 * 2);
    assert!(v["aggregates"]["input"].is_array());
}
