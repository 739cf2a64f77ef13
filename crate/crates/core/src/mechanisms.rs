//! The perturbation mechanisms: input perturbation (noise on every training
//! row, then plain gradient descent) and the three central baselines that
//! perturb the output, the objective or each gradient step.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::losses::{project_to_ball, LossFamily, LossSpec, ModelParams};
use crate::objective::{Erm, LinearTilt};
use crate::privacy::{calibrate_sigma, NoiseScale, PrivacyParams, Regime};
use crate::seed;
use crate::trainer::{descend, descent_step, minimize, OracleSettings, TrainConfig, TrainOutput};

/// Variance rule of a gradient-perturbation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientVariant {
    /// G²·T·ln(1/δ) / (n²ε²): per-step noise composed over T steps.
    StepComposed,
    /// G²·n²·ln(n/δ)·ln(1/δ) / ε².
    SampleQuadratic,
}

/// Serialized as its short name (`none`, `input`, `gradient_t`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum MechanismKind {
    None,
    Input,
    Output,
    Objective,
    Gradient(GradientVariant),
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 6] = [
        MechanismKind::None,
        MechanismKind::Input,
        MechanismKind::Output,
        MechanismKind::Objective,
        MechanismKind::Gradient(GradientVariant::StepComposed),
        MechanismKind::Gradient(GradientVariant::SampleQuadratic),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MechanismKind::None => "none",
            MechanismKind::Input => "input",
            MechanismKind::Output => "output",
            MechanismKind::Objective => "objective",
            MechanismKind::Gradient(GradientVariant::StepComposed) => "gradient_t",
            MechanismKind::Gradient(GradientVariant::SampleQuadratic) => "gradient_n2",
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<MechanismKind> for String {
    fn from(k: MechanismKind) -> String {
        k.name().to_string()
    }
}

impl TryFrom<String> for MechanismKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Spec(format!("unknown mechanism `{s}`")))
    }
}

/// Everything the variance formulas read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseContext {
    pub params: PrivacyParams,
    pub steps: u64,
    pub n: usize,
    pub lipschitz: f64,
    pub smoothness: f64,
    pub regime: Regime,
    /// Leading constant of the input-perturbation calibration.
    pub c: f64,
}

/// Per-coordinate noise variance of each mechanism. Baselines use unit
/// leading constants.
pub fn mechanism_variance(kind: MechanismKind, ctx: &NoiseContext) -> Result<f64> {
    let eps = ctx.params.epsilon();
    let delta = ctx.params.delta();
    let g2 = ctx.lipschitz * ctx.lipschitz;
    let n = ctx.n as f64;
    let log_inv_delta = ctx.params.log_inv_delta();
    Ok(match kind {
        MechanismKind::None => 0.0,
        MechanismKind::Input => {
            calibrate_sigma(
                ctx.params,
                ctx.steps,
                ctx.n,
                ctx.lipschitz,
                ctx.regime,
                ctx.c,
            )?
            .sigma_sq
        }
        MechanismKind::Output => {
            let modulus = match ctx.regime {
                Regime::StronglyConvex { modulus } => modulus,
                Regime::Pl => {
                    return Err(Error::Unsupported(
                        "output perturbation needs a strongly convex loss".into(),
                    ))
                }
            };
            let l = ctx.smoothness;
            let lift = 1.0 + l / modulus;
            g2 * lift * lift * (2.0 / delta).ln() / (n * n * l * l * eps * eps)
        }
        MechanismKind::Objective => g2 * (eps + (4.0 / (delta * delta)).ln()) / (eps * eps),
        MechanismKind::Gradient(GradientVariant::StepComposed) => {
            g2 * ctx.steps as f64 * log_inv_delta / (n * n * eps * eps)
        }
        MechanismKind::Gradient(GradientVariant::SampleQuadratic) => {
            g2 * n * n * (n / delta).ln() * log_inv_delta / (eps * eps)
        }
    })
}

/// A reproducible block of i.i.d. N(0, variance) values.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub seed: u64,
    pub variance: f64,
    pub values: Array1<f64>,
}

impl NoiseDraw {
    pub fn gaussian(seed: u64, len: usize, variance: f64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(invalid("variance", "must be finite and non-negative"));
        }
        let sd = variance.sqrt();
        let mut rng = seed::rng(seed);
        let values = Array1::from_iter((0..len).map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            sd * e
        }));
        Ok(Self {
            seed,
            variance,
            values,
        })
    }
}

/// Stream index of the input noise under a run seed.
const INPUT_NOISE_STREAM: u64 = 1;
const OUTPUT_NOISE_STREAM: u64 = 2;
const OBJECTIVE_NOISE_STREAM: u64 = 3;
const GRADIENT_NOISE_STREAM: u64 = 4;

/// Adds an independent N(0, σ²I) draw to every row. Row i uses the seed
/// derived from (`seed`, `keys[i]`), so the noise a row receives does not
/// depend on where it sits in the dataset.
pub fn perturb_inputs_keyed(
    dataset: &Dataset,
    sigma_sq: f64,
    seed: u64,
    keys: &[u64],
) -> Result<Dataset> {
    if keys.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            actual: keys.len(),
        });
    }
    if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
        return Err(invalid("sigma_sq", "must be finite and non-negative"));
    }
    if sigma_sq == 0.0 {
        return Ok(dataset.clone());
    }
    let d = dataset.dim();
    let mut features: Array2<f64> = dataset.features().clone();
    for (mut row, &key) in features.outer_iter_mut().zip(keys) {
        let z = NoiseDraw::gaussian(seed::derive(seed, key), d, sigma_sq)?;
        row += &z.values;
    }
    Ok(dataset.with_features(features))
}

/// Input perturbation: row i becomes xᵢ + zᵢ with zᵢ ~ N(0, σ²I) drawn
/// independently per row (keyed by row index). Labels are untouched and
/// the rows are not pulled back into the unit ball.
pub fn perturb_inputs(dataset: &Dataset, scale: &NoiseScale, seed: u64) -> Result<Dataset> {
    let keys: Vec<u64> = (0..dataset.len() as u64).collect();
    perturb_inputs_keyed(dataset, scale.sigma_sq, seed, &keys)
}

/// The literal shared-noise reading: one draw z added to every row.
/// Provided for comparison only; the accountant does not model it.
pub fn perturb_inputs_shared(dataset: &Dataset, scale: &NoiseScale, seed: u64) -> Result<Dataset> {
    if scale.sigma_sq == 0.0 {
        return Ok(dataset.clone());
    }
    let z = NoiseDraw::gaussian(seed, dataset.dim(), scale.sigma_sq)?;
    let mut features = dataset.features().clone();
    for mut row in features.outer_iter_mut() {
        row += &z.values;
    }
    Ok(dataset.with_features(features))
}

/// θ_priv = Π_D(θ* + z), z ~ N(0, variance·I).
pub fn output_perturb(theta_star: &ModelParams, variance: f64, seed: u64) -> Result<ModelParams> {
    let z = NoiseDraw::gaussian(seed, theta_star.dim(), variance)?;
    if variance == 0.0 {
        return Ok(theta_star.clone());
    }
    project_to_ball(theta_star.theta() + &z.values, theta_star.radius())
}

/// Minimizes L(θ) + (1/n)zᵀθ for one draw z ~ N(0, variance·I) and
/// projects the minimizer onto the ball of radius `radius`.
pub fn objective_perturb(
    dataset: &Dataset,
    loss: &LossSpec,
    variance: f64,
    seed: u64,
    settings: &OracleSettings,
    radius: f64,
) -> Result<ModelParams> {
    if !loss.is_convex() {
        return Err(Error::Unsupported(
            "objective perturbation needs a convex loss".into(),
        ));
    }
    let erm = Erm::new(dataset, *loss)?;
    let z = NoiseDraw::gaussian(seed, loss.param_dim(dataset.dim()), variance)?;
    let solution = if variance == 0.0 {
        minimize(&erm, settings)?
    } else {
        minimize(&LinearTilt::new(erm, &z.values, dataset.len())?, settings)?
    };
    project_to_ball(solution.params.into_theta(), radius)
}

/// One step θ_{t+1} = Π_D(θ_t − α(g + z)) with z drawn from the stream
/// (`seed`, `step_index`).
pub fn gradient_perturb_step(
    theta: &ModelParams,
    grad: &Array1<f64>,
    variance: f64,
    alpha: f64,
    seed: u64,
    step_index: u64,
) -> Result<ModelParams> {
    if grad.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            actual: grad.len(),
        });
    }
    if variance == 0.0 {
        return descent_step(theta, grad, alpha);
    }
    let z = NoiseDraw::gaussian(seed::derive(seed, step_index), grad.len(), variance)?;
    descent_step(theta, &(grad + &z.values), alpha)
}

/// The objective every mechanism trains on. MLP gradients are clipped per
/// sample to the declared G so that the 2G/n sensitivity holds.
pub fn training_objective<'a>(data: &'a Dataset, loss: &LossSpec) -> Result<Erm<'a>> {
    let erm = Erm::new(data, *loss)?;
    match loss.family() {
        LossFamily::Mlp { .. } => erm.with_clipping(loss.lipschitz()),
        _ => Ok(erm),
    }
}

/// How input noise is laid out over the rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLayout {
    /// An independent draw per row, as the accountant assumes.
    #[default]
    PerInstance,
    /// One draw shared by every row.
    Shared,
}

/// Result of training on perturbed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRun {
    pub output: TrainOutput,
    pub perturbed: Dataset,
}

/// Input perturbation end to end: perturb every row once, then run T steps
/// of projected gradient descent on the perturbed data.
pub fn input_perturbation(
    dataset: &Dataset,
    loss: &LossSpec,
    scale: &NoiseScale,
    config: &TrainConfig,
    run_seed: u64,
) -> Result<InputRun> {
    input_perturbation_with(
        dataset,
        loss,
        scale,
        config,
        run_seed,
        NoiseLayout::PerInstance,
    )
}

/// [`input_perturbation`] with an explicit noise layout.
pub fn input_perturbation_with(
    dataset: &Dataset,
    loss: &LossSpec,
    scale: &NoiseScale,
    config: &TrainConfig,
    run_seed: u64,
    layout: NoiseLayout,
) -> Result<InputRun> {
    let stream = seed::derive(run_seed, INPUT_NOISE_STREAM);
    let perturbed = match layout {
        NoiseLayout::PerInstance => perturb_inputs(dataset, scale, stream)?,
        NoiseLayout::Shared => perturb_inputs_shared(dataset, scale, stream)?,
    };
    let output = {
        let objective = training_objective(&perturbed, loss)?;
        crate::trainer::train_gd(&objective, config)?
    };
    Ok(InputRun { output, perturbed })
}

/// Gradient perturbation: T noisy projected steps on the clean objective.
pub fn gradient_perturbation(
    dataset: &Dataset,
    loss: &LossSpec,
    variance: f64,
    config: &TrainConfig,
    run_seed: u64,
) -> Result<TrainOutput> {
    let objective = training_objective(dataset, loss)?;
    let stream = seed::derive(run_seed, GRADIENT_NOISE_STREAM);
    let alpha = config.learning_rate;
    descend(&objective, config, |t, theta, grad| {
        gradient_perturb_step(theta, grad, variance, alpha, stream, t as u64)
    })
}

/// Output perturbation of an already computed minimizer.
pub fn output_perturbation(
    theta_star: &ModelParams,
    variance: f64,
    run_seed: u64,
) -> Result<ModelParams> {
    output_perturb(
        theta_star,
        variance,
        seed::derive(run_seed, OUTPUT_NOISE_STREAM),
    )
}

/// Objective perturbation with the run's noise stream.
pub fn objective_perturbation(
    dataset: &Dataset,
    loss: &LossSpec,
    variance: f64,
    settings: &OracleSettings,
    radius: f64,
    run_seed: u64,
) -> Result<ModelParams> {
    objective_perturb(
        dataset,
        loss,
        variance,
        seed::derive(run_seed, OBJECTIVE_NOISE_STREAM),
        settings,
        radius,
    )
}
