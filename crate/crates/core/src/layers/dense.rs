use super::{expect_shape, no_cache, LayerParams};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;
use crate::tensor::{dot, init_weights, Init, Real, Tensor};

/// Affine map `x W + b` with `W: N x M` and `b: M`.
#[derive(Debug, Clone)]
pub struct Dense<T: Real> {
    pub params: LayerParams<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let weights = init_weights(&[inputs, outputs], Init::HeUniform, rng)?;
        let bias = Tensor::zeros(&[outputs])?;
        Self::from_params(LayerParams::new(name, weights, bias))
    }

    pub fn from_params(params: LayerParams<T>) -> Result<Self> {
        match *params.weights.shape() {
            [_, m] if params.bias.shape() == [m] => Ok(Self {
                params,
                cache: None,
            }),
            _ => Err(Error::Dimension(format!(
                "dense {}: weights {:?} / bias {:?} are not N x M / M",
                params.name,
                params.weights.shape(),
                params.bias.shape()
            ))),
        }
    }

    pub fn inputs(&self) -> usize {
        self.params.weights.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.params.weights.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, m) = (self.inputs(), self.outputs());
        let b = match *x.shape() {
            [b, cols] if cols == n => b,
            _ => {
                return Err(Error::Dimension(format!(
                    "dense {}: input {:?} does not match weights {:?}",
                    self.params.name,
                    x.shape(),
                    self.params.weights.shape()
                )))
            }
        };
        let w = self.params.weights.data();
        let bias = self.params.bias.data();
        let input = x.data();
        let mut out = vec![T::zero(); b * m];
        par::for_each_chunk_mut(&mut out, m, |row_idx, row| {
            row.copy_from_slice(bias);
            let x_row = &input[row_idx * n..(row_idx + 1) * n];
            for (i, &xv) in x_row.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                for (o, &wv) in row.iter_mut().zip(&w[i * m..(i + 1) * m]) {
                    *o += xv * wv;
                }
            }
        });
        self.cache = Some(x.clone());
        Ok(Tensor::from_parts(vec![b, m], out))
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| no_cache("dense"))?;
        let (n, m) = (self.inputs(), self.outputs());
        let b = x.shape()[0];
        expect_shape(g, &[b, m], "dense")?;
        let input = x.data();
        let upstream = g.data();

        // dW[i, :] += sum_b x[b, i] * g[b, :]; rows are disjoint
        par::for_each_chunk_mut(self.params.grad_weights.data_mut(), m, |i, row| {
            for s in 0..b {
                let xv = input[s * n + i];
                if xv == T::zero() {
                    continue;
                }
                for (acc, &gv) in row.iter_mut().zip(&upstream[s * m..(s + 1) * m]) {
                    *acc += xv * gv;
                }
            }
        });
        for s in 0..b {
            for (acc, &gv) in self
                .params
                .grad_bias
                .data_mut()
                .iter_mut()
                .zip(&upstream[s * m..(s + 1) * m])
            {
                *acc += gv;
            }
        }

        let w = self.params.weights.data();
        let mut dx = vec![T::zero(); b * n];
        par::for_each_chunk_mut(&mut dx, n, |s, row| {
            let g_row = &upstream[s * m..(s + 1) * m];
            for (i, d) in row.iter_mut().enumerate() {
                *d = dot(g_row, &w[i * m..(i + 1) * m]);
            }
        });
        Ok(Tensor::from_parts(vec![b, n], dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{assert_grads_close, numeric_grad};

    fn layer(w: Tensor<f64>, b: Tensor<f64>) -> Dense<f64> {
        Dense::from_params(LayerParams::new("dense", w, b)).unwrap()
    }

    #[test]
    fn identity_weights() {
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut d = layer(eye, Tensor::zeros(&[2]).unwrap());
        let x = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap(), x);
    }

    #[test]
    fn analytic_case() {
        let mut d = layer(
            Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap(),
            Tensor::new(&[1], vec![0.5]).unwrap(),
        );
        let y = d.forward(&Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[3.5]);
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = Rng::new(1);
        let mut d = Dense::<f64>::new("dense", 3, 2, &mut rng).unwrap();
        assert!(matches!(
            d.forward(&Tensor::zeros(&[1, 4]).unwrap()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(14);
        let mut d = Dense::<f64>::new("dense", 5, 4, &mut rng).unwrap();
        d.params.bias = Tensor::from_fn(&[4], |_| rng.uniform(-1.0, 1.0)).unwrap();
        let x = Tensor::from_fn(&[3, 5], |_| rng.uniform(-1.0, 1.0)).unwrap();
        let r = Tensor::from_fn(&[3, 4], |_| rng.uniform(-1.0, 1.0)).unwrap();
        d.forward(&x).unwrap();
        let dx = d.backward(&r).unwrap();

        let mut probe = d.clone();
        let num_dx = numeric_grad(&x, |xp| probe.forward(xp).unwrap().mul(&r).unwrap().sum());
        assert_grads_close(&dx, &num_dx, 1e-6);

        let mut probe = d.clone();
        let num_dw = numeric_grad(&d.params.weights, |wp| {
            probe.params.weights = wp.clone();
            probe.forward(&x).unwrap().mul(&r).unwrap().sum()
        });
        assert_grads_close(&d.params.grad_weights, &num_dw, 1e-6);

        let mut probe = d.clone();
        let num_db = numeric_grad(&d.params.bias, |bp| {
            probe.params.bias = bp.clone();
            probe.forward(&x).unwrap().mul(&r).unwrap().sum()
        });
        assert_grads_close(&d.params.grad_bias, &num_db, 1e-6);
    }
}
