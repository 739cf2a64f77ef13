//! Full-batch projected gradient descent, the non-private reference
//! optimizer that defines L*, and the accuracy / optimality-gap metrics.

use ndarray::{Array1, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::losses::{predict_score, project_to_ball, LossSpec, ModelParams};
use crate::objective::{Erm, Objective};
use crate::seed;

/// Starting point of gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Zeros,
    /// i.i.d. N(0, scale²) coordinates drawn from the config seed.
    Gaussian {
        scale: f64,
    },
}

impl Init {
    /// Gaussian init with scale 0.1/√d, used to break MLP symmetry.
    pub fn gaussian_for_dim(d: usize) -> Self {
        Init::Gaussian {
            scale: 0.1 / (d.max(1) as f64).sqrt(),
        }
    }

    fn draw(&self, p: usize, seed: u64) -> Array1<f64> {
        match *self {
            Init::Zeros => Array1::zeros(p),
            Init::Gaussian { scale } => {
                let mut rng = seed::rng(seed);
                Array1::from_iter((0..p).map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    scale * e
                }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub init: Init,
    pub radius: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if !(self.radius > 0.0) {
            return Err(invalid("radius", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: ModelParams,
    /// Objective value after each of the T steps.
    pub loss_curve: Vec<f64>,
}

/// θ − α·g, projected onto the ball.
pub(crate) fn descent_step(
    theta: &ModelParams,
    grad: &Array1<f64>,
    alpha: f64,
) -> Result<ModelParams> {
    let mut next = theta.theta().clone();
    next.scaled_add(-alpha, grad);
    project_to_ball(next, theta.radius())
}

/// Runs `config.steps` iterations where `update(t, θ_t, ∇L(θ_t))` produces
/// θ_{t+1}. Plain projected GD and its noisy variants share this loop.
pub fn descend<F>(
    objective: &dyn Objective,
    config: &TrainConfig,
    mut update: F,
) -> Result<TrainOutput>
where
    F: FnMut(usize, &ModelParams, &Array1<f64>) -> Result<ModelParams>,
{
    config.validate()?;
    let p = objective.dim();
    let mut theta = project_to_ball(config.init.draw(p, config.seed), config.radius)?;
    let mut loss_curve = Vec::with_capacity(config.steps);
    for t in 0..config.steps {
        let grad = objective.gradient(theta.theta().view())?;
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                iteration: t,
            });
        }
        theta = update(t, &theta, &grad)?;
        let value = objective.value(theta.theta().view())?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                iteration: t,
            });
        }
        loss_curve.push(value);
    }
    Ok(TrainOutput {
        params: theta,
        loss_curve,
    })
}

/// T steps of θ ← Π_D(θ − α∇L(θ)).
pub fn train_gd(objective: &dyn Objective, config: &TrainConfig) -> Result<TrainOutput> {
    let alpha = config.learning_rate;
    descend(objective, config, |_, theta, grad| {
        descent_step(theta, grad, alpha)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Keep L(θ_k) for every iterate in [`OracleSolution::loss_curve`].
    pub record_curve: bool,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 2_000_000,
            record_curve: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Unconstrained minimizer (radius = ∞).
    pub params: ModelParams,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Upper bound ‖∇L‖²/(2Δ) on L(θ) − L*, when Δ is known.
    pub certified_gap: Option<f64>,
    /// L(θ_0), ..., L(θ_k) when requested, else empty.
    pub loss_curve: Vec<f64>,
    pub step_size: f64,
}

/// Unconstrained gradient descent from zero with α = 1/smoothness until
/// ‖∇L‖ ≤ tolerance.
pub fn minimize(objective: &dyn Objective, settings: &OracleSettings) -> Result<OracleSolution> {
    if !(settings.tolerance > 0.0) {
        return Err(invalid("tolerance", "must be positive"));
    }
    let smoothness = objective
        .smoothness()
        .ok_or_else(|| Error::Unsupported("objective has no smoothness bound".into()))?;
    let alpha = 1.0 / smoothness;
    let mut theta = Array1::zeros(objective.dim());
    let mut loss_curve = Vec::new();
    for iterations in 0..=settings.max_iter {
        if settings.record_curve {
            loss_curve.push(objective.value(theta.view())?);
        }
        let grad = objective.gradient(theta.view())?;
        let grad_norm = grad.dot(&grad).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                what: "gradient",
                iteration: iterations,
            });
        }
        if grad_norm <= settings.tolerance {
            let value = objective.value(theta.view())?;
            let certified_gap = objective
                .strong_convexity()
                .map(|m| grad_norm * grad_norm / (2.0 * m));
            return Ok(OracleSolution {
                params: project_to_ball(theta, f64::INFINITY)?,
                value,
                grad_norm,
                iterations,
                certified_gap,
                loss_curve,
                step_size: alpha,
            });
        }
        if iterations == settings.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm,
            });
        }
        theta.scaled_add(-alpha, &grad);
    }
    unreachable!("loop returns on its last iteration")
}

/// θ* and L* = min L(θ) for a convex loss on `dataset`.
pub fn oracle_optimum(
    dataset: &Dataset,
    loss: &LossSpec,
    tolerance: f64,
) -> Result<OracleSolution> {
    if !loss.is_convex() {
        return Err(Error::Unsupported(
            "the reference optimizer needs a convex loss".into(),
        ));
    }
    let settings = OracleSettings {
        tolerance,
        ..OracleSettings::default()
    };
    minimize(&Erm::new(dataset, *loss)?, &settings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub optimality_gap: f64,
}

/// Fraction of rows with sign(score) = y, counting a zero score as +1.
pub fn accuracy(theta: ArrayView1<'_, f64>, data: &Dataset, loss: &LossSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::TooFewRows {
            required: 1,
            actual: 0,
        });
    }
    let mut correct = 0usize;
    for (x, y) in data.rows() {
        let score = predict_score(loss, theta, x)?;
        let predicted = if score >= 0.0 { 1.0 } else { -1.0 };
        if predicted == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Test accuracy and the optimality gap L_train(θ) − L* on the original,
/// unperturbed training objective.
pub fn evaluate(
    theta: &ModelParams,
    test: &Dataset,
    train: &Dataset,
    loss: &LossSpec,
    l_star: f64,
) -> Result<Evaluation> {
    let accuracy = accuracy(theta.theta().view(), test, loss)?;
    let value = Erm::new(train, *loss)?.value(theta.theta().view())?;
    Ok(Evaluation {
        accuracy,
        optimality_gap: value - l_star,
    })
}
