use super::{expect_shape, no_cache};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// `max(0, x)`. The subgradient at exactly zero is zero.
#[derive(Debug, Clone, Default)]
pub struct Relu<T: Real> {
    cache: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        self.cache = Some(x.clone());
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| no_cache("relu"))?;
        expect_shape(g, x.shape(), "relu")?;
        let data = x
            .data()
            .iter()
            .zip(g.data())
            .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
            .collect();
        Ok(Tensor::from_parts(x.shape().to_vec(), data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{assert_grads_close, numeric_grad};
    use crate::rng::Rng;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(Relu::new().forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn positive_input_unchanged() {
        let x = Tensor::new(&[3], vec![0.5, 1.0, 2.0]).unwrap();
        assert_eq!(Relu::new().forward(&x), x);
    }

    #[test]
    fn zero_has_zero_gradient() {
        let mut relu = Relu::new();
        relu.forward(&Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
        let g = relu.backward(&Tensor::new(&[2], vec![3.0, 3.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 3.0]);
    }

    #[test]
    fn backward_matches_finite_differences_away_from_zero() {
        let mut rng = Rng::new(3);
        let x = Tensor::from_fn(&[2, 3, 4], |_| {
            let v = rng.uniform(0.01, 1.0);
            if rng.chance(0.5) { -v } else { v }
        })
        .unwrap();
        let r = Tensor::from_fn(x.shape(), |_| rng.uniform(-1.0, 1.0)).unwrap();
        let mut relu = Relu::new();
        relu.forward(&x);
        let dx = relu.backward(&r).unwrap();
        let num = numeric_grad(&x, |xp| Relu::new().forward(xp).mul(&r).unwrap().sum());
        assert_grads_close(&dx, &num, 1e-6);
    }
}
