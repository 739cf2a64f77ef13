//! Browser bindings for three interactive views: noise variance of every
//! mechanism over ε, the accountant's ε(λ) curve, and a small seeded
//! input-perturbation sweep on synthetic blobs.
//!
//! Every export returns a JSON string. The pure functions are also usable
//! natively, which is how they are tested.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dperm::bench::{DatasetSource, ExperimentSpec, ModelChoice};
use dperm::mechanisms::{mechanism_variance, MechanismKind, NoiseContext};
use dperm::privacy::{lambda_grid, per_step_moment_bound};
use dperm::{calibrate_sigma, verify_calibration, CalibrationInputs, PrivacyParams, Regime};

fn regime(modulus: f64) -> Regime {
    if modulus > 0.0 {
        Regime::StronglyConvex { modulus }
    } else {
        Regime::Pl
    }
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub mechanism: String,
    /// NaN where the mechanism does not apply (serialized as null).
    pub variance: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct NoiseCurves {
    pub epsilon: Vec<f64>,
    pub curves: Vec<Curve>,
}

/// Per-coordinate noise variance of each mechanism at `points`
/// log-spaced ε in [eps_min, eps_max]. `modulus` ≤ 0 selects the PL form.
#[allow(clippy::too_many_arguments)]
pub fn noise_curves(
    n: usize,
    steps: u64,
    modulus: f64,
    delta: f64,
    c: f64,
    eps_min: f64,
    eps_max: f64,
    points: usize,
) -> dperm::Result<NoiseCurves> {
    if points < 2 || !(eps_min > 0.0 && eps_max > eps_min) {
        return Err(dperm::Error::Spec(
            "need 0 < eps_min < eps_max and 2+ points".into(),
        ));
    }
    let step = (eps_max / eps_min).ln() / (points - 1) as f64;
    let epsilon: Vec<f64> = (0..points)
        .map(|i| eps_min * (step * i as f64).exp())
        .collect();
    let mut curves = Vec::new();
    for kind in MechanismKind::ALL
        .into_iter()
        .filter(|k| *k != MechanismKind::None)
    {
        let mut variance = Vec::with_capacity(points);
        for &eps in &epsilon {
            let ctx = NoiseContext {
                params: PrivacyParams::new(eps, delta)?,
                steps,
                n,
                lipschitz: 1.0,
                smoothness: 0.25 + modulus.max(0.0),
                regime: regime(modulus),
                c,
            };
            variance.push(match mechanism_variance(kind, &ctx) {
                Ok(v) => v,
                Err(dperm::Error::Unsupported(_)) => f64::NAN,
                Err(e) => return Err(e),
            });
        }
        curves.push(Curve {
            mechanism: kind.name().into(),
            variance,
        });
    }
    Ok(NoiseCurves { epsilon, curves })
}

#[derive(Debug, Serialize)]
pub struct AccountantCurve {
    pub sigma_sq: f64,
    pub lambda: Vec<u32>,
    /// (T·α(λ) + ln(1/δ)) / λ at each order.
    pub epsilon_at_lambda: Vec<f64>,
    pub realized_epsilon: f64,
    pub best_lambda: u32,
    pub passed: bool,
}

/// Calibrates input perturbation for the given target and traces the
/// accountant's bound at every moment order.
pub fn accountant_curve(
    epsilon: f64,
    delta: f64,
    steps: u64,
    n: usize,
    modulus: f64,
    c: f64,
    curvature_floor: f64,
) -> dperm::Result<AccountantCurve> {
    let params = PrivacyParams::new(epsilon, delta)?;
    let scale = calibrate_sigma(params, steps, n, 1.0, regime(modulus), c)?;
    let inputs = CalibrationInputs { curvature_floor };
    let report = verify_calibration(&params, &scale, &inputs)?;
    let c1 = inputs.c1(scale.regime);
    let lambda: Vec<u32> = lambda_grid(&params).collect();
    let epsilon_at_lambda = lambda
        .iter()
        .map(|&l| {
            let per_step = per_step_moment_bound(l, 1.0, scale.sigma_sq, n, scale.regime, c1)?;
            Ok((steps as f64 * per_step + params.log_inv_delta()) / f64::from(l))
        })
        .collect::<dperm::Result<Vec<_>>>()?;
    Ok(AccountantCurve {
        sigma_sq: scale.sigma_sq,
        lambda,
        epsilon_at_lambda,
        realized_epsilon: report.realized_epsilon,
        best_lambda: report.best_lambda,
        passed: report.passed,
    })
}

/// A seeded sweep on separable blobs comparing input perturbation with
/// gradient and output perturbation. Returns the emitted JSON table.
pub fn simulate(
    n: usize,
    d: usize,
    repetitions: usize,
    c: f64,
    seed: u64,
) -> dperm::Result<String> {
    let mut spec = ExperimentSpec::new(
        DatasetSource::Blobs { n, d },
        ModelChoice::LrL2 { reg_lambda: 0.01 },
        vec![
            MechanismKind::Input,
            MechanismKind::Output,
            MechanismKind::Gradient(dperm::GradientVariant::StepComposed),
        ],
    );
    spec.repetitions = repetitions;
    spec.base_seed = seed;
    spec.c = c;
    spec.steps = 50;
    spec.record_wall_time = false;
    let table = dperm::run_experiment(&spec)?;
    let mut out = Vec::new();
    dperm::bench::write_json(&table, &mut out)?;
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

fn to_js<T: Serialize>(r: dperm::Result<T>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(Into::into))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = noiseCurves)]
#[allow(clippy::too_many_arguments)]
pub fn noise_curves_js(
    n: usize,
    steps: u32,
    modulus: f64,
    delta: f64,
    c: f64,
    eps_min: f64,
    eps_max: f64,
    points: usize,
) -> Result<String, JsValue> {
    to_js(noise_curves(
        n,
        u64::from(steps),
        modulus,
        delta,
        c,
        eps_min,
        eps_max,
        points,
    ))
}

#[wasm_bindgen(js_name = accountantCurve)]
pub fn accountant_curve_js(
    epsilon: f64,
    delta: f64,
    steps: u32,
    n: usize,
    modulus: f64,
    c: f64,
    curvature_floor: f64,
) -> Result<String, JsValue> {
    to_js(accountant_curve(
        epsilon,
        delta,
        u64::from(steps),
        n,
        modulus,
        c,
        curvature_floor,
    ))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(
    n: usize,
    d: usize,
    repetitions: usize,
    c: f64,
    seed: u32,
) -> Result<String, JsValue> {
    simulate(n, d, repetitions, c, u64::from(seed)).map_err(|e| JsValue::from_str(&e.to_string()))
}
