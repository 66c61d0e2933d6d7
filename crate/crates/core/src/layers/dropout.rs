use super::{expect_shape, no_cache, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`. Inference is the
/// identity.
#[derive(Debug, Clone)]
pub struct Dropout<T: Real> {
    rate: f64,
    rng: Rng,
    mask: Option<Vec<T>>,
    shape: Vec<usize>,
}

impl<T: Real> Dropout<T> {
    pub fn new(rate: f64, rng: Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Self {
            rate,
            rng,
            mask: None,
            shape: Vec::new(),
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Replaces the mask stream, e.g. to replay an identical mask.
    pub fn reseed(&mut self, rng: Rng) {
        self.rng = rng;
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        self.shape = x.shape().to_vec();
        if mode == Mode::Infer || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let rate = self.rate;
        let mask: Vec<T> = (0..x.len())
            .map(|_| if self.rng.chance(rate) { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape.is_empty() {
            return Err(no_cache("dropout"));
        }
        expect_shape(g, &self.shape, "dropout")?;
        self.shape.clear();
        match self.mask.take() {
            None => Ok(g.clone()),
            Some(mask) => {
                let data = g.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                Ok(Tensor::from_parts(g.shape().to_vec(), data))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_is_identity() {
        let mut rng = Rng::new(0);
        let x = Tensor::from_fn(&[4, 8], |_| rng.uniform(-1.0, 1.0)).unwrap();
        let mut d = Dropout::<f64>::new(0.5, Rng::new(1)).unwrap();
        assert_eq!(d.forward(&x, Mode::Infer), x);
    }

    #[test]
    fn zero_rate_is_identity_in_training() {
        let x = Tensor::from_fn(&[4, 8], |i| i as f64).unwrap();
        let mut d = Dropout::<f64>::new(0.0, Rng::new(1)).unwrap();
        assert_eq!(d.forward(&x, Mode::Train), x);
        assert_eq!(d.backward(&x).unwrap(), x);
    }

    #[test]
    fn rate_one_is_rejected() {
        assert!(matches!(
            Dropout::<f64>::new(1.0, Rng::new(0)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn expectation_is_preserved() {
        let x = Tensor::<f64>::ones(&[1_000_000]).unwrap();
        let mut d = Dropout::<f64>::new(0.5, Rng::new(42)).unwrap();
        let y = d.forward(&x, Mode::Train);
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn backward_reuses_forward_mask() {
        let x = Tensor::<f64>::ones(&[64]).unwrap();
        let mut d = Dropout::<f64>::new(0.3, Rng::new(5)).unwrap();
        let y = d.forward(&x, Mode::Train);
        let g = d.backward(&x).unwrap();
        assert_eq!(y, g);
    }
}
