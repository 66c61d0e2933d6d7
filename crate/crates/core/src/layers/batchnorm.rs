use super::{expect_rank4, expect_shape, no_cache, LayerParams, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight on the old running value: `running = m * running + (1 - m) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization over `B x C x H x W`.
///
/// `params.weights` holds gamma and `params.bias` holds beta. Training
/// normalizes by the biased batch variance; inference uses the running
/// statistics only.
#[derive(Debug, Clone)]
pub struct BatchNorm<T: Real> {
    pub params: LayerParams<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
    /// When false, training-mode passes leave the running statistics alone.
    pub track_running_stats: bool,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    shape: Vec<usize>,
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Result<Self> {
        Self::from_parts(
            LayerParams::new(name, Tensor::ones(&[channels])?, Tensor::zeros(&[channels])?),
            Tensor::zeros(&[channels])?,
            Tensor::ones(&[channels])?,
        )
    }

    pub fn from_parts(
        params: LayerParams<T>,
        running_mean: Tensor<T>,
        running_var: Tensor<T>,
    ) -> Result<Self> {
        let c = params.weights.len();
        if params.weights.shape() != [c]
            || params.bias.shape() != [c]
            || running_mean.shape() != [c]
            || running_var.shape() != [c]
        {
            return Err(Error::Dimension(format!(
                "batchnorm {}: gamma/beta/running stats must all be [{c}]",
                params.name
            )));
        }
        if running_var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Domain(format!(
                "batchnorm {}: negative running variance",
                params.name
            )));
        }
        Ok(Self {
            params,
            running_mean,
            running_var,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            track_running_stats: true,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.params.weights.len()
    }

    pub fn gamma(&self) -> &Tensor<T> {
        &self.params.weights
    }

    pub fn beta(&self) -> &Tensor<T> {
        &self.params.bias
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (b, c, h, w) = expect_rank4(x, "batchnorm")?;
        if c != self.channels() {
            return Err(Error::Dimension(format!(
                "batchnorm {}: input has {c} channels, layer has {}",
                self.params.name,
                self.channels()
            )));
        }
        if mode == Mode::Train && b < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batchnorm {} needs at least 2 samples in training, got {b}",
                self.params.name
            )));
        }
        let hw = h * w;
        let m = T::lit((b * hw) as f64);
        let eps = T::lit(self.epsilon);
        let data = x.data();
        let mut x_hat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        let mut inv_std = vec![T::zero(); c];

        for ch in 0..c {
            let plane = |n: usize| n * c * hw + ch * hw;
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = T::zero();
                    for n in 0..b {
                        sum += data[plane(n)..plane(n) + hw].iter().copied().sum::<T>();
                    }
                    let mean = sum / m;
                    let mut sq = T::zero();
                    for n in 0..b {
                        for &v in &data[plane(n)..plane(n) + hw] {
                            sq += (v - mean) * (v - mean);
                        }
                    }
                    (mean, sq / m)
                }
                Mode::Infer => (self.running_mean.data()[ch], self.running_var.data()[ch]),
            };
            let istd = T::one() / (var + eps).sqrt();
            inv_std[ch] = istd;
            let gamma = self.params.weights.data()[ch];
            let beta = self.params.bias.data()[ch];
            for n in 0..b {
                for i in plane(n)..plane(n) + hw {
                    let xh = (data[i] - mean) * istd;
                    x_hat[i] = xh;
                    out[i] = gamma * xh + beta;
                }
            }
            if mode == Mode::Train && self.track_running_stats {
                let mom = T::lit(self.momentum);
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = mom * *rm + (T::one() - mom) * mean;
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = mom * *rv + (T::one() - mom) * var;
            }
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            x_hat,
            inv_std,
            mode,
        });
        Ok(Tensor::from_parts(x.shape().to_vec(), out))
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| no_cache("batchnorm"))?;
        expect_shape(g, &cache.shape, "batchnorm")?;
        let (b, c, hw) = (cache.shape[0], cache.shape[1], cache.shape[2] * cache.shape[3]);
        let m = T::lit((b * hw) as f64);
        let up = g.data();
        let mut dx = vec![T::zero(); up.len()];

        for ch in 0..c {
            let plane = |n: usize| n * c * hw + ch * hw;
            let mut sum_g = T::zero();
            let mut sum_g_xhat = T::zero();
            for n in 0..b {
                for i in plane(n)..plane(n) + hw {
                    sum_g += up[i];
                    sum_g_xhat += up[i] * cache.x_hat[i];
                }
            }
            self.params.grad_weights.data_mut()[ch] += sum_g_xhat;
            self.params.grad_bias.data_mut()[ch] += sum_g;

            let gamma = self.params.weights.data()[ch];
            let istd = cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    // dx = gamma*istd/m * (m*g - sum(g) - x_hat*sum(g*x_hat))
                    let scale = gamma * istd / m;
                    for n in 0..b {
                        for i in plane(n)..plane(n) + hw {
                            dx[i] = scale * (m * up[i] - sum_g - cache.x_hat[i] * sum_g_xhat);
                        }
                    }
                }
                Mode::Infer => {
                    for n in 0..b {
                        for i in plane(n)..plane(n) + hw {
                            dx[i] = gamma * istd * up[i];
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_parts(cache.shape, dx))
    }
}
