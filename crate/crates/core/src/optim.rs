//! Binary cross-entropy loss, Adam, and plain SGD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Predictions are clipped into `[PROB_CLIP, 1 - PROB_CLIP]` before the log.
pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct LossValue<T: Real> {
    pub loss: T,
    /// `dH/dp`, same shape as the predictions.
    pub gradient: Tensor<T>,
}

/// Mean binary cross-entropy over every element:
/// `H = -(1/N) * sum(y*ln(p) + (1-y)*ln(1-p))`.
///
/// The gradient `-(1/N) * (y/p - (1-y)/(1-p))` is evaluated at the clipped
/// prediction and passed straight through the clip, so saturated wrong
/// predictions still receive a corrective signal.
pub fn bce_loss<T: Real>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<LossValue<T>> {
    if predictions.shape() != targets.shape() {
        return Err(Error::Dimension(format!(
            "bce_loss: predictions {:?} vs targets {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    if let Some(i) = targets
        .data()
        .iter()
        .position(|&y| y != T::zero() && y != T::one())
    {
        return Err(Error::Validation(format!(
            "bce_loss: target {} at flat index {i} is not binary",
            targets.data()[i]
        )));
    }
    let lo = T::lit(PROB_CLIP);
    let hi = T::one() - lo;
    let n = T::lit(predictions.len() as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &y) in predictions.data().iter().zip(targets.data()) {
        let p = p.max(lo).min(hi);
        if y == T::one() {
            total += p.ln();
            grad.push(-(T::one() / p) / n);
        } else {
            total += (T::one() - p).ln();
            grad.push((T::one() / (T::one() - p)) / n);
        }
    }
    Ok(LossValue {
        loss: -total / n,
        gradient: Tensor::new(predictions.shape(), grad)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        // lr = 0 is accepted so an epoch can run as a pure no-op probe
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "adam epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    /// Completed steps.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(shape: &[usize]) -> Result<Self> {
        Ok(Self {
            m: Tensor::zeros(shape)?,
            v: Tensor::zeros(shape)?,
            t: 0,
        })
    }
}

/// One Adam update of `params` in place:
///
/// ```text
/// m_t = b1 m_{t-1} + (1 - b1) g
/// v_t = b2 v_{t-1} + (1 - b2) g^2
/// m^  = m_t / (1 - b1^t)
/// v^  = v_t / (1 - b2^t)
/// theta <- theta - lr / (sqrt(v^) + eps) * m^
/// ```
pub fn adam_step<T: Real>(
    params: &mut Tensor<T>,
    grads: &Tensor<T>,
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.shape() != grads.shape()
        || params.shape() != state.m.shape()
        || params.shape() != state.v.shape()
    {
        return Err(Error::Dimension(format!(
            "adam_step: params {:?}, grads {:?}, moments {:?}",
            params.shape(),
            grads.shape(),
            state.m.shape()
        )));
    }
    let t = state.t + 1;
    let b1 = T::lit(hyper.beta1);
    let b2 = T::lit(hyper.beta2);
    let lr = T::lit(hyper.learning_rate);
    let eps = T::lit(hyper.epsilon);
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = T::one() - b1.powi(exp);
    let c2 = T::one() - b2.powi(exp);

    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((theta, &g), m), v) in params
        .data_mut()
        .iter_mut()
        .zip(grads.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *theta -= lr / (v_hat.sqrt() + eps) * m_hat;
    }
    state.t = t;
    Ok(())
}

/// `theta <- theta - lr * g`.
pub fn sgd_step<T: Real>(params: &mut Tensor<T>, grads: &Tensor<T>, learning_rate: f64) -> Result<()> {
    if params.shape() != grads.shape() {
        return Err(Error::Dimension(format!(
            "sgd_step: params {:?} vs grads {:?}",
            params.shape(),
            grads.shape()
        )));
    }
    let lr = T::lit(learning_rate);
    for (theta, &g) in params.data_mut().iter_mut().zip(grads.data()) {
        *theta -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}
