//! Forward and backward passes for the network's layers.
//!
//! Every layer keeps whatever it needs from its last `forward` call and
//! consumes it in `backward`. A backward call without a preceding forward is
//! an error. Parameter gradients accumulate; call
//! [`LayerParams::zero_grad`] between optimizer steps.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod pool;
mod reshape;
mod softmax;

pub use activation::Relu;
pub use batchnorm::{BatchNorm, BN_EPSILON, BN_MOMENTUM};
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use pool::MaxPool2;
pub use reshape::Flatten;
pub use softmax::{softmax_rows, Softmax};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Trainable tensors of one layer plus their gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Real> {
    pub name: String,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

impl<T: Real> LayerParams<T> {
    pub fn new(name: impl Into<String>, weights: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            grad_weights: weights.zeros_like(),
            grad_bias: bias.zeros_like(),
            weights,
            bias,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(T::zero());
        self.grad_bias.fill(T::zero());
    }

    pub fn count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

fn no_cache(layer: &str) -> Error {
    Error::Validation(format!("{layer}: backward called without a cached forward pass"))
}

fn expect_rank4(x: &Tensor<impl Real>, layer: &str) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(Error::Dimension(format!(
            "{layer}: expected B x C x H x W input, got {:?}",
            x.shape()
        ))),
    }
}

fn expect_shape(g: &Tensor<impl Real>, shape: &[usize], layer: &str) -> Result<()> {
    if g.shape() != shape {
        return Err(Error::Dimension(format!(
            "{layer}: upstream gradient shape {:?} does not match output shape {shape:?}",
            g.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Layer<T: Real> {
    Conv(Conv2d<T>),
    Relu(Relu<T>),
    MaxPool(MaxPool2),
    BatchNorm(BatchNorm<T>),
    Dense(Dense<T>),
    Dropout(Dropout<T>),
    Flatten(Flatten),
    Softmax(Softmax<T>),
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv2d",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool2",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Dense(_) => "dense",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
            Layer::Softmax(_) => "softmax",
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::MaxPool(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Dense(l) => l.forward(x),
            Layer::Dropout(l) => Ok(l.forward(x, mode)),
            Layer::Flatten(l) => l.forward(x),
            Layer::Softmax(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(g),
            Layer::Relu(l) => l.backward(g),
            Layer::MaxPool(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::Dense(l) => l.backward(g),
            Layer::Dropout(l) => l.backward(g),
            Layer::Flatten(l) => l.backward(g),
            Layer::Softmax(l) => l.backward(g),
        }
    }

    pub fn params(&self) -> Option<&LayerParams<T>> {
        match self {
            Layer::Conv(l) => Some(&l.params),
            Layer::BatchNorm(l) => Some(&l.params),
            Layer::Dense(l) => Some(&l.params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams<T>> {
        match self {
            Layer::Conv(l) => Some(&mut l.params),
            Layer::BatchNorm(l) => Some(&mut l.params),
            Layer::Dense(l) => Some(&mut l.params),
            _ => None,
        }
    }
}
