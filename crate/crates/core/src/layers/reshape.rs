use super::no_cache;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `B x C x H x W -> B x (C*H*W)` in row-major order.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = x.shape()[0];
        let rest = x.len() / b;
        self.input_shape = Some(x.shape().to_vec());
        x.clone().reshape(&[b, rest])
    }

    pub fn backward<T: Real>(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.take().ok_or_else(|| no_cache("flatten"))?;
        if g.len() != shape.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "flatten: gradient {:?} cannot be unflattened to {shape:?}",
                g.shape()
            )));
        }
        g.clone().reshape(&shape)
    }
}
