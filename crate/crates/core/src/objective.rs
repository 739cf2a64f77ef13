//! Dataset-level objectives consumed by the optimizers.

use ndarray::{Array1, ArrayView1};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::losses::{accumulate_data_gradient, data_loss, LossSpec};

/// A differentiable objective over a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, theta: ArrayView1<'_, f64>) -> Result<f64>;

    fn gradient(&self, theta: ArrayView1<'_, f64>) -> Result<Array1<f64>>;

    /// A global upper bound on the gradient's Lipschitz constant, if known.
    fn smoothness(&self) -> Option<f64> {
        None
    }

    /// Strong convexity modulus, if the objective is strongly convex.
    fn strong_convexity(&self) -> Option<f64> {
        None
    }
}

/// Empirical risk (1/n)·Σ ℓ(θ, xᵢ, yᵢ) over a dataset.
///
/// With `clip` set, every per-sample data gradient is rescaled to norm at
/// most `clip` before averaging. Clipping changes only the gradient, so
/// the reported value stays the unclipped empirical risk.
#[derive(Debug, Clone, Copy)]
pub struct Erm<'a> {
    data: &'a Dataset,
    loss: LossSpec,
    clip: Option<f64>,
}

impl<'a> Erm<'a> {
    pub fn new(data: &'a Dataset, loss: LossSpec) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::TooFewRows {
                required: 1,
                actual: 0,
            });
        }
        Ok(Self {
            data,
            loss,
            clip: None,
        })
    }

    pub fn with_clipping(mut self, clip: f64) -> Result<Self> {
        if !(clip > 0.0) {
            return Err(invalid("clip", "must be positive"));
        }
        self.clip = Some(clip);
        Ok(self)
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn loss(&self) -> &LossSpec {
        &self.loss
    }

    fn check(&self, theta: ArrayView1<'_, f64>) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        Ok(())
    }
}

impl Objective for Erm<'_> {
    fn dim(&self) -> usize {
        self.loss.param_dim(self.data.dim())
    }

    fn value(&self, theta: ArrayView1<'_, f64>) -> Result<f64> {
        self.check(theta)?;
        let mut total = 0.0;
        for (x, y) in self.data.rows() {
            total += data_loss(&self.loss, theta, x, y)?;
        }
        let reg = self.loss.reg_lambda();
        Ok(total / self.data.len() as f64 + 0.5 * reg * theta.dot(&theta))
    }

    fn gradient(&self, theta: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check(theta)?;
        let mut g = Array1::zeros(theta.len());
        let scale = 1.0 / self.data.len() as f64;
        // sequential sum: fixed reduction order keeps runs bit-reproducible
        for (x, y) in self.data.rows() {
            accumulate_data_gradient(&self.loss, theta, x, y, scale, self.clip, &mut g)?;
        }
        let reg = self.loss.reg_lambda();
        if reg != 0.0 {
            g.scaled_add(reg, &theta);
        }
        Ok(g)
    }

    /// For margin losses the Hessian is bounded by L·max‖x‖² + λ. Inputs
    /// inside the unit ball give the familiar L + λ.
    fn smoothness(&self) -> Option<f64> {
        if !self.loss.is_convex() {
            return None;
        }
        let r = self.data.max_row_norm();
        Some(self.loss.smoothness() * (r * r).max(1.0) + self.loss.reg_lambda())
    }

    fn strong_convexity(&self) -> Option<f64> {
        match self.loss.family() {
            crate::losses::LossFamily::LogisticL2 { reg_lambda } => Some(reg_lambda),
            _ => None,
        }
    }
}

/// ½·Δ·‖θ − centre‖², the reference strongly convex objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    modulus: f64,
    centre: Array1<f64>,
}

impl Quadratic {
    pub fn new(modulus: f64, centre: Array1<f64>) -> Result<Self> {
        if !(modulus > 0.0) {
            return Err(invalid("modulus", "must be positive"));
        }
        Ok(Self { modulus, centre })
    }

    pub fn centre(&self) -> &Array1<f64> {
        &self.centre
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.centre.len()
    }

    fn value(&self, theta: ArrayView1<'_, f64>) -> Result<f64> {
        let diff = &theta - &self.centre;
        Ok(0.5 * self.modulus * diff.dot(&diff))
    }

    fn gradient(&self, theta: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok((&theta - &self.centre) * self.modulus)
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.modulus)
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(self.modulus)
    }
}

/// An objective plus the linear term (1/n)·zᵀθ.
#[derive(Debug, Clone)]
pub struct LinearTilt<O> {
    inner: O,
    tilt: Array1<f64>,
}

impl<O: Objective> LinearTilt<O> {
    /// Builds inner(θ) + (1/n)·zᵀθ.
    pub fn new(inner: O, z: &Array1<f64>, n: usize) -> Result<Self> {
        if z.len() != inner.dim() {
            return Err(Error::DimensionMismatch {
                expected: inner.dim(),
                actual: z.len(),
            });
        }
        Ok(Self {
            inner,
            tilt: z / n as f64,
        })
    }

    pub fn tilt(&self) -> &Array1<f64> {
        &self.tilt
    }
}

impl<O: Objective> Objective for LinearTilt<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, theta: ArrayView1<'_, f64>) -> Result<f64> {
        Ok(self.inner.value(theta)? + self.tilt.dot(&theta))
    }

    fn gradient(&self, theta: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.inner.gradient(theta)? + &self.tilt)
    }

    fn smoothness(&self) -> Option<f64> {
        self.inner.smoothness()
    }

    fn strong_convexity(&self) -> Option<f64> {
        self.inner.strong_convexity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use ndarray::array;

    #[test]
    fn erm_averages_per_sample_losses() {
        let data = synthetic_blobs(6, 3, 2).unwrap();
        let loss = LossSpec::logistic_l2(0.2).unwrap();
        let erm = Erm::new(&data, loss).unwrap();
        let theta = array![0.3, -0.1, 0.5];
        let params = crate::losses::project_to_ball(theta.clone(), 10.0).unwrap();
        let mean: f64 = data
            .rows()
            .map(|(x, y)| crate::losses::loss_value(&loss, &params, x, y).unwrap())
            .sum::<f64>()
            / 6.0;
        assert!((erm.value(theta.view()).unwrap() - mean).abs() < 1e-14);
        assert_eq!(erm.smoothness(), Some(0.25 + 0.2));
    }

    #[test]
    fn tilt_shifts_gradient_by_z_over_n() {
        let q = Quadratic::new(2.0, array![1.0, 1.0]).unwrap();
        let z = array![4.0, -8.0];
        let t = LinearTilt::new(q.clone(), &z, 4).unwrap();
        let theta = array![0.5, 3.0];
        let g = t.gradient(theta.view()).unwrap();
        assert_eq!(g, q.gradient(theta.view()).unwrap() + array![1.0, -2.0]);
    }

    #[test]
    fn erm_rejects_wrong_dimension() {
        let data = synthetic_blobs(4, 2, 2).unwrap();
        let erm = Erm::new(&data, LossSpec::logistic()).unwrap();
        assert!(erm.value(array![1.0].view()).is_err());
        assert!(erm.gradient(array![1.0, 2.0, 3.0].view()).is_err());
    }
}
