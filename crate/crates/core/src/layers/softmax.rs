use super::{expect_shape, no_cache};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-wise softmax of a `B x K` matrix, stabilized by subtracting the row max.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, k) = match *logits.shape() {
        [b, k] if k >= 2 => (b, k),
        _ => {
            return Err(Error::Dimension(format!(
                "softmax expects B x K logits with K >= 2, got {:?}",
                logits.shape()
            )))
        }
    };
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(Tensor::from_parts(vec![b, k], out))
}

#[derive(Debug, Clone, Default)]
pub struct Softmax<T: Real> {
    cache: Option<Tensor<T>>,
}

impl<T: Real> Softmax<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let p = softmax_rows(x)?;
        self.cache = Some(p.clone());
        Ok(p)
    }

    /// `dz = p * (g - sum(g * p))` per row.
    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.cache.take().ok_or_else(|| no_cache("softmax"))?;
        expect_shape(g, p.shape(), "softmax")?;
        let k = p.shape()[1];
        let mut dz = vec![T::zero(); p.len()];
        for ((dz_row, p_row), g_row) in dz
            .chunks_mut(k)
            .zip(p.data().chunks(k))
            .zip(g.data().chunks(k))
        {
            let inner: T = p_row.iter().zip(g_row).map(|(&a, &b)| a * b).sum();
            for ((d, &pv), &gv) in dz_row.iter_mut().zip(p_row).zip(g_row) {
                *d = pv * (gv - inner);
            }
        }
        Ok(Tensor::from_parts(p.shape().to_vec(), dz))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{assert_grads_close, numeric_grad};
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn symmetric_logits_split_evenly() {
        let p = softmax_rows(&Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p: Tensor<f64> = softmax_rows(&Tensor::new(&[1, 2], vec![1000.0, 0.0]).unwrap()).unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        assert!(p.data()[1] >= 0.0 && p.data()[1] < 1e-300);
    }

    #[test]
    fn needs_two_classes() {
        assert!(softmax_rows(&Tensor::new(&[1, 1], vec![0.0]).unwrap()).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(6);
        let x = Tensor::from_fn(&[3, 5], |_| rng.uniform(-2.0, 2.0)).unwrap();
        let r = Tensor::from_fn(&[3, 5], |_| rng.uniform(-1.0, 1.0)).unwrap();
        let mut sm = Softmax::new();
        sm.forward(&x).unwrap();
        let dx = sm.backward(&r).unwrap();
        let num = numeric_grad(&x, |xp| softmax_rows(xp).unwrap().mul(&r).unwrap().sum());
        assert_grads_close(&dx, &num, 1e-6);
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_shift_invariant(
            logits in proptest::collection::vec(-15.0f64..15.0, 12),
            shift in -100.0f64..100.0,
        ) {
            let x = Tensor::new(&[3, 4], logits).unwrap();
            let p = softmax_rows(&x).unwrap();
            for row in p.data().chunks(4) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            }
            let shifted = softmax_rows(&x.add_scalar(shift).unwrap()).unwrap();
            prop_assert!(p.max_abs_diff(&shifted).unwrap() < 1e-12);
        }
    }
}
