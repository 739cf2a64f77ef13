//! Gaussian noise calibration for input perturbation and the moments
//! accountant used to audit it.
//!
//! Each gradient step of training on perturbed data is treated as a
//! Gaussian mechanism whose two outputs on adjacent datasets differ in mean
//! by at most 2G/n. The λ-th log moment of one step is λ·D_{λ+1} between
//! those Gaussians; moments add over T steps, and a tail bound turns the
//! composed moments into an (ε, δ) guarantee.
//!
//! All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest moment order of the default accountant grid.
pub const DEFAULT_LAMBDA_MAX: u32 = 64;

/// Target (ε, δ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid("epsilon", "must be positive and finite"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta", "must lie in (0, 1)"));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// ln(1/δ).
    pub fn log_inv_delta(&self) -> f64 {
        -self.delta.ln()
    }
}

/// Which curvature assumption the calibration relies on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// Δ-strongly convex loss; the noise shrinks by √Δ.
    StronglyConvex { modulus: f64 },
    /// Loss satisfying the Polyak-Łojasiewicz inequality.
    Pl,
}

impl Regime {
    fn check(&self) -> Result<()> {
        match *self {
            Regime::StronglyConvex { modulus } if !(modulus > 0.0 && modulus.is_finite()) => Err(
                invalid("modulus", "strong convexity modulus must be positive"),
            ),
            _ => Ok(()),
        }
    }

    fn sqrt_modulus(&self) -> f64 {
        match *self {
            Regime::StronglyConvex { modulus } => modulus.sqrt(),
            Regime::Pl => 1.0,
        }
    }
}

/// A calibrated per-coordinate noise variance together with everything it
/// was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScale {
    pub sigma_sq: f64,
    pub c: f64,
    pub regime: Regime,
    pub steps: u64,
    pub n: usize,
    pub lipschitz: f64,
    pub params: PrivacyParams,
}

impl NoiseScale {
    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }
}

fn pair_count(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::TooFewRows {
            required: 2,
            actual: n,
        });
    }
    let n = n as f64;
    Ok(n * (n - 1.0))
}

/// Noise variance for input perturbation:
///
/// σ² = c·G²·T·ln(1/δ) / (n(n−1)·√Δ·ε²)
///
/// under Δ-strong convexity, and the same expression without √Δ under the
/// PL condition.
pub fn calibrate_sigma(
    params: PrivacyParams,
    steps: u64,
    n: usize,
    lipschitz: f64,
    regime: Regime,
    c: f64,
) -> Result<NoiseScale> {
    let pairs = pair_count(n)?;
    regime.check()?;
    if steps == 0 {
        return Err(invalid("steps", "must be at least 1"));
    }
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(invalid("lipschitz", "must be positive"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid("c", "must be positive"));
    }
    let eps = params.epsilon();
    let sigma_sq = c * lipschitz * lipschitz * steps as f64 * params.log_inv_delta()
        / (pairs * regime.sqrt_modulus() * eps * eps);
    Ok(NoiseScale {
        sigma_sq,
        c,
        regime,
        steps,
        n,
        lipschitz,
        params,
    })
}

/// Rényi divergence of order `order` between N(μ₁, σ²I) and N(μ₂, σ²I)
/// with ‖μ₁ − μ₂‖ = `mean_gap`: order·gap²/(2σ²).
pub fn gaussian_renyi(order: f64, mean_gap: f64, sigma_sq: f64) -> Result<f64> {
    if !(order > 1.0) {
        return Err(invalid("order", "Rényi order must exceed 1"));
    }
    if !(mean_gap >= 0.0) {
        return Err(invalid("mean_gap", "must be non-negative"));
    }
    if !(sigma_sq > 0.0) {
        return Err(invalid("sigma_sq", "must be positive"));
    }
    Ok(order * mean_gap * mean_gap / (2.0 * sigma_sq))
}

/// Bound on the λ-th log moment of one training step.
///
/// Strongly convex: c₁·λ(λ+1)G² / (√Δ·σ²·n(n−1)).
/// PL: c₁·2λ(λ+1)G² / (n(n−1)·σ²).
///
/// A zero variance yields an infinite bound.
pub fn per_step_moment_bound(
    lambda: u32,
    lipschitz: f64,
    sigma_sq: f64,
    n: usize,
    regime: Regime,
    c1: f64,
) -> Result<f64> {
    if lambda == 0 {
        return Err(invalid("lambda", "moment order must be at least 1"));
    }
    let pairs = pair_count(n)?;
    regime.check()?;
    if !(sigma_sq >= 0.0) {
        return Err(invalid("sigma_sq", "must be non-negative"));
    }
    if !(lipschitz > 0.0) || !(c1 > 0.0) {
        return Err(invalid("c1", "G and c1 must be positive"));
    }
    let l = f64::from(lambda);
    let moments = l * (l + 1.0) * lipschitz * lipschitz;
    Ok(match regime {
        Regime::StronglyConvex { modulus } => c1 * moments / (modulus.sqrt() * sigma_sq * pairs),
        Regime::Pl => c1 * 2.0 * moments / (pairs * sigma_sq),
    })
}

/// Per-step moment bounds over a grid of orders, plus how many steps have
/// already been composed into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsLedger {
    lambda_grid: Vec<u32>,
    per_step_bounds: Vec<f64>,
    steps_composed: u64,
}

impl MomentsLedger {
    /// Evaluates `bound` at every order in `lambda_grid`.
    pub fn from_fn(
        lambda_grid: impl IntoIterator<Item = u32>,
        mut bound: impl FnMut(u32) -> Result<f64>,
    ) -> Result<Self> {
        let lambda_grid: Vec<u32> = lambda_grid.into_iter().collect();
        let per_step_bounds = lambda_grid
            .iter()
            .map(|&l| {
                let b = bound(l)?;
                if b.is_nan() || b < 0.0 {
                    return Err(invalid("per_step_bound", "must be non-negative"));
                }
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lambda_grid,
            per_step_bounds,
            steps_composed: 0,
        })
    }

    /// The ledger for one training step of a calibrated scale.
    pub fn for_scale(
        scale: &NoiseScale,
        c1: f64,
        lambda_grid: impl IntoIterator<Item = u32>,
    ) -> Result<Self> {
        Self::from_fn(lambda_grid, |l| {
            per_step_moment_bound(
                l,
                scale.lipschitz,
                scale.sigma_sq,
                scale.n,
                scale.regime,
                c1,
            )
        })
    }

    pub fn lambda_grid(&self) -> &[u32] {
        &self.lambda_grid
    }

    pub fn per_step_bounds(&self) -> &[f64] {
        &self.per_step_bounds
    }

    pub fn steps_composed(&self) -> u64 {
        self.steps_composed
    }

    /// The same ledger with `steps` more steps composed in.
    pub fn compose(&self, steps: u64) -> Self {
        Self {
            steps_composed: self.steps_composed + steps,
            ..self.clone()
        }
    }

    /// Composed bound steps_composed × per-step bound at each order.
    pub fn composed_bounds(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.lambda_grid
            .iter()
            .zip(&self.per_step_bounds)
            .map(move |(&l, &b)| {
                let total = if self.steps_composed == 0 {
                    0.0
                } else {
                    self.steps_composed as f64 * b
                };
                (l, total)
            })
    }
}

/// The smallest ε certified by a ledger, and the order attaining it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    pub epsilon: f64,
    pub lambda: u32,
}

/// Composes `steps` steps into the ledger and converts the composed
/// moments to ε = min over λ of (α(λ) + ln(1/δ)) / λ.
pub fn compose_and_convert(ledger: &MomentsLedger, steps: u64, delta: f64) -> Result<Conversion> {
    if ledger.lambda_grid.is_empty() {
        return Err(invalid("lambda_grid", "ledger has no moment orders"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", "must lie in (0, 1)"));
    }
    let log_inv_delta = -delta.ln();
    let composed = ledger.compose(steps);
    let best = composed
        .composed_bounds()
        .map(|(l, alpha)| Conversion {
            epsilon: (alpha + log_inv_delta) / f64::from(l),
            lambda: l,
        })
        .fold(None::<Conversion>, |best, c| match best {
            Some(b) if b.epsilon <= c.epsilon => Some(b),
            _ => Some(c),
        })
        .expect("grid is non-empty");
    Ok(best)
}

/// Constants linking the calibration to the accountant.
///
/// `curvature_floor` is the assumed lower bound on the data-dependent
/// factor √(2Δ(ℓ(θ_T) − ℓ*)) (with √Δ kept explicit in the strongly convex
/// regime) or √(2μ(ℓ(θ_T) − ℓ*)) in the PL regime. It is a fixed constant,
/// never estimated from data. The default 1 corresponds to a final excess
/// loss of 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInputs {
    pub curvature_floor: f64,
}

impl Default for CalibrationInputs {
    fn default() -> Self {
        Self {
            curvature_floor: 1.0,
        }
    }
}

impl CalibrationInputs {
    /// Per-step constant c₁ implied by the 2G/n sensitivity and the
    /// curvature floor.
    pub fn c1(&self, regime: Regime) -> f64 {
        match regime {
            Regime::StronglyConvex { .. } => 2.0 / self.curvature_floor,
            Regime::Pl => 1.0 / self.curvature_floor,
        }
    }

    /// Smallest calibration constant c for which the accountant certifies
    /// the target ε: c = 8·c₁ in the strongly convex form.
    ///
    /// With λ(λ+1) ≤ 2λ² the composed moment is at most
    /// 2c₁λ²ε²/(c·ln(1/δ)); choosing λ = ⌈2ln(1/δ)/ε⌉ and c = 8c₁ leaves a
    /// realized ε of at most 3ε/4 + ε²/(4ln(1/δ)) ≤ ε whenever ε ≤ ln(1/δ).
    pub fn consistent_c(&self) -> f64 {
        16.0 / self.curvature_floor
    }
}

/// Integer moment orders 1..=max(64, ⌈2·ln(1/δ)/ε⌉). The upper end is the
/// order at which the tail term ln(1/δ)/λ drops to ε/2.
pub fn lambda_grid(params: &PrivacyParams) -> std::ops::RangeInclusive<u32> {
    let needed = (2.0 * params.log_inv_delta() / params.epsilon()).ceil();
    let top = if needed >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        (needed as u32).max(DEFAULT_LAMBDA_MAX)
    };
    1..=top
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target_epsilon: f64,
    pub realized_epsilon: f64,
    pub best_lambda: u32,
    pub c1: f64,
    pub lambda_max: u32,
    pub passed: bool,
}

/// Runs the accountant on a calibrated scale and reports whether the
/// realized ε stays within the target.
pub fn verify_calibration(
    params: &PrivacyParams,
    scale: &NoiseScale,
    inputs: &CalibrationInputs,
) -> Result<CalibrationReport> {
    if !(inputs.curvature_floor > 0.0) {
        return Err(invalid("curvature_floor", "must be positive"));
    }
    let c1 = inputs.c1(scale.regime);
    let grid = lambda_grid(params);
    let lambda_max = *grid.end();
    let ledger = MomentsLedger::for_scale(scale, c1, grid)?;
    let conv = compose_and_convert(&ledger, scale.steps, params.delta())?;
    Ok(CalibrationReport {
        target_epsilon: params.epsilon(),
        realized_epsilon: conv.epsilon,
        best_lambda: conv.lambda,
        c1,
        lambda_max,
        passed: conv.epsilon <= params.epsilon(),
    })
}
