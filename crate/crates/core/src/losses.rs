//! Margin losses with certified constants, the one-hidden-layer MLP loss,
//! parameter vectors constrained to a ball, and a Polyak-Łojasiewicz check.

use ndarray::{s, Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objective::Objective;

/// Curvature assumption attached to a loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Convexity {
    None,
    StronglyConvex { modulus: f64 },
    Pl { mu: f64 },
}

impl Convexity {
    /// The PL constant implied by this assumption. Strong convexity with
    /// modulus Δ implies PL with μ = Δ.
    pub fn pl_constant(&self) -> Option<f64> {
        match *self {
            Convexity::None => None,
            Convexity::StronglyConvex { modulus } => Some(modulus),
            Convexity::Pl { mu } => Some(mu),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossFamily {
    Logistic,
    LogisticL2 { reg_lambda: f64 },
    Mlp { hidden_width: usize },
}

/// A loss family together with the constants the privacy analysis
/// consumes: Lipschitz constant `lipschitz` (G), smoothness `smoothness`
/// (L) of the data term, curvature and the per-sample infimum ℓ*.
///
/// For the logistic families the constants are exact on unit-ball inputs.
/// For the MLP they are declared by the caller and enforced by clipping
/// inside the private mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    family: LossFamily,
    lipschitz: f64,
    smoothness: f64,
    convexity: Convexity,
    per_sample_inf: f64,
}

impl LossSpec {
    pub fn logistic() -> Self {
        Self {
            family: LossFamily::Logistic,
            lipschitz: 1.0,
            smoothness: 0.25,
            convexity: Convexity::None,
            per_sample_inf: 0.0,
        }
    }

    /// Logistic loss plus (λ/2)‖θ‖². G and L describe the data term; the
    /// regularizer contributes λ to the curvature.
    pub fn logistic_l2(reg_lambda: f64) -> Result<Self> {
        if !(reg_lambda > 0.0 && reg_lambda.is_finite()) {
            return Err(invalid("reg_lambda", "must be positive"));
        }
        Ok(Self {
            family: LossFamily::LogisticL2 { reg_lambda },
            lipschitz: 1.0,
            smoothness: 0.25,
            convexity: Convexity::StronglyConvex {
                modulus: reg_lambda,
            },
            per_sample_inf: 0.0,
        })
    }

    /// One-hidden-layer tanh network with user-declared constants.
    pub fn mlp(
        hidden_width: usize,
        lipschitz: f64,
        smoothness: f64,
        convexity: Convexity,
    ) -> Result<Self> {
        if hidden_width == 0 {
            return Err(invalid("hidden_width", "must be positive"));
        }
        if !(lipschitz > 0.0 && smoothness > 0.0) {
            return Err(invalid("lipschitz", "G and L must be positive"));
        }
        if let Convexity::StronglyConvex { .. } = convexity {
            return Err(invalid(
                "convexity",
                "an MLP loss cannot be declared strongly convex",
            ));
        }
        Ok(Self {
            family: LossFamily::Mlp { hidden_width },
            lipschitz,
            smoothness,
            convexity,
            per_sample_inf: 0.0,
        })
    }

    /// Overrides the declared curvature (e.g. to probe a PL constant).
    pub fn with_convexity(mut self, convexity: Convexity) -> Self {
        self.convexity = convexity;
        self
    }

    pub fn family(&self) -> LossFamily {
        self.family
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn convexity(&self) -> Convexity {
        self.convexity
    }

    pub fn per_sample_inf(&self) -> f64 {
        self.per_sample_inf
    }

    pub fn reg_lambda(&self) -> f64 {
        match self.family {
            LossFamily::LogisticL2 { reg_lambda } => reg_lambda,
            _ => 0.0,
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self.family, LossFamily::Mlp { .. })
    }

    /// Smoothness of the full per-sample loss, regularizer included.
    pub fn total_smoothness(&self) -> f64 {
        self.smoothness + self.reg_lambda()
    }

    /// Number of parameters for inputs of dimension `d`.
    pub fn param_dim(&self, d: usize) -> usize {
        match self.family {
            LossFamily::Logistic | LossFamily::LogisticL2 { .. } => d,
            LossFamily::Mlp { hidden_width: h } => h * d + 2 * h + 1,
        }
    }

    fn check_dims(&self, theta: usize, x: usize) -> Result<()> {
        let expected = self.param_dim(x);
        if theta != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: theta,
            });
        }
        Ok(())
    }
}

/// A parameter vector θ with ‖θ‖ ≤ radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    theta: Array1<f64>,
    radius: f64,
}

impl ModelParams {
    pub fn zeros(p: usize, radius: f64) -> Result<Self> {
        project_to_ball(Array1::zeros(p), radius)
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.theta
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn norm(&self) -> f64 {
        self.theta.dot(&self.theta).sqrt()
    }

    pub fn into_theta(self) -> Array1<f64> {
        self.theta
    }
}

/// Euclidean projection onto the ball of radius `radius`: θ is kept when
/// ‖θ‖ ≤ radius, otherwise rescaled to θ·radius/‖θ‖.
pub fn project_to_ball(theta: Array1<f64>, radius: f64) -> Result<ModelParams> {
    if !(radius > 0.0) {
        return Err(invalid("radius", "must be positive"));
    }
    let norm = theta.dot(&theta).sqrt();
    if norm <= radius {
        return Ok(ModelParams { theta, radius });
    }
    let mut factor = radius / norm;
    loop {
        let scaled = &theta * factor;
        if scaled.dot(&scaled).sqrt() <= radius {
            return Ok(ModelParams {
                theta: scaled,
                radius,
            });
        }
        factor = factor.next_down();
    }
}

/// log(1 + exp(-m)) without overflow.
pub fn logistic(margin: f64) -> f64 {
    if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

/// d/dm log(1 + exp(-m)) = -1 / (1 + exp(m)).
pub fn logistic_derivative(margin: f64) -> f64 {
    if margin > 0.0 {
        let e = (-margin).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + margin.exp())
    }
}

struct MlpView<'a> {
    w1: ArrayView1<'a, f64>,
    b1: ArrayView1<'a, f64>,
    w2: ArrayView1<'a, f64>,
    b2: f64,
    h: usize,
    d: usize,
}

impl<'a> MlpView<'a> {
    // layout: W1 (h×d, row-major) | b1 (h) | w2 (h) | b2
    fn new(theta: ArrayView1<'a, f64>, h: usize, d: usize) -> Self {
        let hd = h * d;
        Self {
            w1: theta.slice_move(s![..hd]),
            b1: theta.slice_move(s![hd..hd + h]),
            w2: theta.slice_move(s![hd + h..hd + 2 * h]),
            b2: theta[hd + 2 * h],
            h,
            d,
        }
    }

    fn hidden(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_iter((0..self.h).map(|k| {
            let row = self.w1.slice(s![k * self.d..(k + 1) * self.d]);
            (row.dot(&x) + self.b1[k]).tanh()
        }))
    }

    fn output(&self, hidden: &Array1<f64>) -> f64 {
        self.w2.dot(hidden) + self.b2
    }
}

/// Raw decision score: θᵀx for linear models, the network output for the
/// MLP. Its sign is the predicted label.
pub fn predict_score(
    spec: &LossSpec,
    theta: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
) -> Result<f64> {
    spec.check_dims(theta.len(), x.len())?;
    Ok(match spec.family {
        LossFamily::Logistic | LossFamily::LogisticL2 { .. } => theta.dot(&x),
        LossFamily::Mlp { hidden_width } => {
            let net = MlpView::new(theta, hidden_width, x.len());
            net.output(&net.hidden(x))
        }
    })
}

/// Loss of the data term alone, ℓ(y·f(x)), regularizer excluded.
pub(crate) fn data_loss(
    spec: &LossSpec,
    theta: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
    y: f64,
) -> Result<f64> {
    Ok(logistic(y * predict_score(spec, theta, x)?))
}

/// Adds `scale` times the data-term gradient at (x, y) into `out`.
/// When `clip` is given the per-sample gradient is first rescaled to norm
/// at most `clip`.
pub(crate) fn accumulate_data_gradient(
    spec: &LossSpec,
    theta: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
    y: f64,
    scale: f64,
    clip: Option<f64>,
    out: &mut Array1<f64>,
) -> Result<()> {
    spec.check_dims(theta.len(), x.len())?;
    match spec.family {
        LossFamily::Logistic | LossFamily::LogisticL2 { .. } => {
            let coef = y * logistic_derivative(y * theta.dot(&x));
            let coef = match clip {
                Some(c) => {
                    let norm = coef.abs() * x.dot(&x).sqrt();
                    if norm > c {
                        coef * c / norm
                    } else {
                        coef
                    }
                }
                None => coef,
            };
            out.scaled_add(scale * coef, &x);
        }
        LossFamily::Mlp { hidden_width: h } => {
            let d = x.len();
            let net = MlpView::new(theta, h, d);
            let hidden = net.hidden(x);
            let dout = y * logistic_derivative(y * net.output(&hidden));
            let mut grad = Array1::zeros(theta.len());
            for k in 0..h {
                let da = dout * net.w2[k] * (1.0 - hidden[k] * hidden[k]);
                grad.slice_mut(s![k * d..(k + 1) * d]).scaled_add(da, &x);
                grad[h * d + k] = da;
                grad[h * d + h + k] = dout * hidden[k];
            }
            grad[h * d + 2 * h] = dout;
            let factor = match clip {
                Some(c) => {
                    let norm = grad.dot(&grad).sqrt();
                    if norm > c {
                        c / norm
                    } else {
                        1.0
                    }
                }
                None => 1.0,
            };
            out.scaled_add(scale * factor, &grad);
        }
    }
    Ok(())
}

/// Per-sample loss ℓ(θ, x, y), including the L2 term for `logistic_l2`.
pub fn loss_value(
    spec: &LossSpec,
    theta: &ModelParams,
    x: ArrayView1<'_, f64>,
    y: f64,
) -> Result<f64> {
    let t = theta.theta.view();
    let reg = spec.reg_lambda();
    Ok(data_loss(spec, t, x, y)? + 0.5 * reg * t.dot(&t))
}

/// Exact per-sample gradient with respect to θ.
pub fn loss_gradient(
    spec: &LossSpec,
    theta: &ModelParams,
    x: ArrayView1<'_, f64>,
    y: f64,
) -> Result<Array1<f64>> {
    let t = theta.theta.view();
    let mut g = Array1::zeros(t.len());
    accumulate_data_gradient(spec, t, x, y, 1.0, None, &mut g)?;
    let reg = spec.reg_lambda();
    if reg != 0.0 {
        g.scaled_add(reg, &t);
    }
    Ok(g)
}

/// Outcome of a PL-inequality probe.
#[derive(Debug, Clone, PartialEq)]
pub struct PlReport {
    pub mu: f64,
    /// ‖∇L(θ)‖² − 2μ(L(θ) − L*) at each probe.
    pub slacks: Vec<f64>,
    pub passed: bool,
}

impl PlReport {
    pub fn worst_slack(&self) -> f64 {
        self.slacks.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Checks ‖∇L(θ)‖² ≥ 2μ(L(θ) − L*) at every probe, with μ taken from the
/// loss's declared curvature. Passes when every slack is ≥ -1e-9.
pub fn check_pl(
    spec: &LossSpec,
    objective: &dyn Objective,
    probes: &[ModelParams],
    l_star: f64,
) -> Result<PlReport> {
    let mu = spec.convexity().pl_constant().ok_or_else(|| {
        Error::Unsupported("loss declares no PL or strong-convexity constant".into())
    })?;
    let slacks = probes
        .iter()
        .map(|p| {
            let g = objective.gradient(p.theta.view())?;
            let v = objective.value(p.theta.view())?;
            Ok(g.dot(&g) - 2.0 * mu * (v - l_star))
        })
        .collect::<Result<Vec<_>>>()?;
    let passed = slacks.iter().all(|&s| s >= -1e-9);
    Ok(PlReport { mu, slacks, passed })
}
