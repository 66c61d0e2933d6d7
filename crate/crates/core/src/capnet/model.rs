use super::config::ModelConfig;
use crate::capgen::{Charset, LABEL_LEN};
use crate::error::{Error, Result};
use crate::layers::{
    BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, LayerParams, MaxPool2, Mode, Relu, Softmax,
};
use crate::optim::bce_loss;
use crate::rng::{stream, Rng};
use crate::tensor::{Real, Tensor};

/// Five-head convolutional classifier: a shared trunk feeding one
/// dense/softmax branch per character position.
#[derive(Debug, Clone)]
pub struct CapNet<T: Real> {
    config: ModelConfig,
    charset: Charset,
    trunk: Vec<Layer<T>>,
    heads: Vec<Vec<Layer<T>>>,
}

/// Batchnorm cancels any per-channel shift, so the bias would be dead weight.
fn pre_norm_conv<T: Real>(name: &str, c: usize, f: usize, rng: &mut Rng) -> Result<Conv2d<T>> {
    let mut conv = Conv2d::new(name, c, f, rng)?;
    conv.use_bias = false;
    Ok(conv)
}

pub fn build_model<T: Real>(config: &ModelConfig, charset: &Charset, rng: &Rng) -> Result<CapNet<T>> {
    config.validate()?;
    let mut init = rng.child(stream::INIT);
    let dropout_root = rng.child(stream::DROPOUT);
    let [f1, f2, f3, f4] = config.filters;
    let k = charset.len();

    let mut conv1 = Conv2d::new("conv1", 1, f1, &mut init)?;
    // Nothing upstream of the first convolution needs a gradient.
    conv1.input_grad = false;
    let trunk = vec![
        Layer::Conv(conv1),
        Layer::Relu(Relu::new()),
        Layer::MaxPool(MaxPool2::new()),
        Layer::Conv(Conv2d::new("conv2", f1, f2, &mut init)?),
        Layer::Relu(Relu::new()),
        Layer::MaxPool(MaxPool2::new()),
        Layer::Conv(pre_norm_conv("conv3", f2, f3, &mut init)?),
        Layer::BatchNorm(BatchNorm::new("bn3", f3)?),
        Layer::Relu(Relu::new()),
        Layer::MaxPool(MaxPool2::new()),
        Layer::Conv(pre_norm_conv("conv4", f3, f4, &mut init)?),
        Layer::BatchNorm(BatchNorm::new("bn4", f4)?),
        Layer::Relu(Relu::new()),
        Layer::MaxPool(MaxPool2::new()),
        Layer::Flatten(Flatten::new()),
    ];
    let flat = config.flatten_width();
    let heads = (0..LABEL_LEN)
        .map(|h| {
            Ok(vec![
                Layer::Dense(Dense::new(&format!("head{h}.dense1"), flat, config.dense_width, &mut init)?),
                Layer::Relu(Relu::new()),
                Layer::Dropout(Dropout::new(config.dropout, dropout_root.child(h as u64))?),
                Layer::Dense(Dense::new(&format!("head{h}.dense2"), config.dense_width, k, &mut init)?),
                Layer::Softmax(Softmax::new()),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CapNet { config: *config, charset: charset.clone(), trunk, heads })
}

impl<T: Real> CapNet<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn charset(&self) -> &Charset {
        &self.charset
    }

    pub fn classes(&self) -> usize {
        self.charset.len()
    }

    pub fn trunk(&self) -> &[Layer<T>] {
        &self.trunk
    }

    pub fn heads(&self) -> &[Vec<Layer<T>>] {
        &self.heads
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.trunk.iter().chain(self.heads.iter().flatten())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.trunk.iter_mut().chain(self.heads.iter_mut().flatten())
    }

    pub fn params(&self) -> impl Iterator<Item = &LayerParams<T>> {
        self.layers().filter_map(Layer::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut LayerParams<T>> {
        self.layers_mut().filter_map(Layer::params_mut)
    }

    pub fn parameter_count(&self) -> usize {
        self.params().map(LayerParams::count).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(LayerParams::zero_grad);
    }

    pub fn set_track_running_stats(&mut self, track: bool) {
        for layer in self.layers_mut() {
            if let Layer::BatchNorm(bn) = layer {
                bn.track_running_stats = track;
            }
        }
    }

    /// Five `B x K` probability matrices for a `B x 1 x H x W` batch.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        let expect = [x.shape().first().copied().unwrap_or(0), 1, self.config.image_height, self.config.image_width];
        if x.shape() != expect {
            return Err(Error::Dimension(format!(
                "model expects B x 1 x {} x {} input, got {:?}",
                self.config.image_height,
                self.config.image_width,
                x.shape()
            )));
        }
        let mut features = x.clone();
        for layer in &mut self.trunk {
            features = layer.forward(&features, mode)?;
        }
        self.heads
            .iter_mut()
            .map(|head| {
                let mut out = features.clone();
                for layer in head.iter_mut() {
                    out = layer.forward(&out, mode)?;
                }
                Ok(out)
            })
            .collect()
    }

    /// Accumulates parameter gradients from per-head `dLoss/dProb`.
    pub fn backward(&mut self, head_grads: &[Tensor<T>]) -> Result<()> {
        if head_grads.len() != self.heads.len() {
            return Err(Error::Dimension(format!(
                "expected {} head gradients, got {}",
                self.heads.len(),
                head_grads.len()
            )));
        }
        let mut total: Option<Tensor<T>> = None;
        for (head, g) in self.heads.iter_mut().zip(head_grads) {
            let mut g = g.clone();
            for layer in head.iter_mut().rev() {
                g = layer.backward(&g)?;
            }
            total = Some(match total {
                None => g,
                Some(t) => t.add(&g)?,
            });
        }
        let mut g = total.expect("at least one head");
        for layer in self.trunk.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(())
    }
}

/// Mean BCE over every cell of every head, plus `dLoss/dProb` per head.
pub fn joint_loss<T: Real>(heads: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<(T, Vec<Tensor<T>>)> {
    if heads.len() != targets.len() || heads.is_empty() {
        return Err(Error::Dimension(format!(
            "{} heads vs {} target matrices",
            heads.len(),
            targets.len()
        )));
    }
    // All heads share a shape, so the mean of head means is the global mean.
    let scale = T::one() / T::lit(heads.len() as f64);
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(heads.len());
    for (p, y) in heads.iter().zip(targets) {
        if p.shape() != heads[0].shape() {
            return Err(Error::Dimension(format!(
                "head shapes differ: {:?} vs {:?}",
                p.shape(),
                heads[0].shape()
            )));
        }
        let lv = bce_loss(p, y)?;
        loss += lv.loss * scale;
        grads.push(lv.gradient.scale(scale)?);
    }
    Ok((loss, grads))
}
