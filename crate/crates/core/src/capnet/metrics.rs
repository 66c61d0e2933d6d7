use serde::{Deserialize, Serialize};

use super::model::CapNet;
use crate::capgen::{Charset, LABEL_LEN};
use crate::datapipe::{argmax, EncodedSet};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::optim::PROB_CLIP;
use crate::tensor::Real;

/// Inference batch size; infer mode is batch-independent, so this only
/// bounds memory.
pub const EVAL_BATCH: usize = 64;

/// Per-sample, per-head probability vectors, stored `[sample][head][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    samples: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl Predictions {
    pub fn new(samples: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != samples * LABEL_LEN * classes {
            return Err(Error::Dimension(format!(
                "{} probabilities for {samples} samples x {LABEL_LEN} heads x {classes} classes",
                probs.len()
            )));
        }
        Ok(Self { samples, classes, probs })
    }

    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn head(&self, sample: usize, head: usize) -> &[f64] {
        let start = (sample * LABEL_LEN + head) * self.classes;
        &self.probs[start..start + self.classes]
    }

    pub fn heads(&self, sample: usize) -> [&[f64]; LABEL_LEN] {
        std::array::from_fn(|h| self.head(sample, h))
    }

    pub fn decoded(&self, sample: usize) -> [usize; LABEL_LEN] {
        std::array::from_fn(|h| argmax(self.head(sample, h)))
    }

    /// Joint BCE of one sample against its labels.
    pub fn sample_loss(&self, sample: usize, labels: &[usize; LABEL_LEN]) -> f64 {
        let mut total = 0.0;
        for (h, &truth) in labels.iter().enumerate() {
            for (c, &p) in self.head(sample, h).iter().enumerate() {
                let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                total -= if c == truth { p.ln() } else { (1.0 - p).ln() };
            }
        }
        total / (LABEL_LEN * self.classes) as f64
    }
}

/// Anything that maps an encoded dataset to head probabilities.
pub trait Predictor<T: Real> {
    fn charset(&self) -> &Charset;
    fn predict(&mut self, data: &EncodedSet<T>) -> Result<Predictions>;
}

fn check_classes(charset: &Charset, data_classes: usize) -> Result<()> {
    if charset.len() != data_classes {
        return Err(Error::Validation(format!(
            "model charset {charset:?} has {} symbols but the data uses {data_classes}",
            charset.len()
        )));
    }
    Ok(())
}

impl<T: Real> Predictor<T> for CapNet<T> {
    fn charset(&self) -> &Charset {
        CapNet::charset(self)
    }

    fn predict(&mut self, data: &EncodedSet<T>) -> Result<Predictions> {
        check_classes(CapNet::charset(self), data.classes())?;
        let k = self.classes();
        let mut probs = vec![0.0; data.len() * LABEL_LEN * k];
        let indices: Vec<usize> = (0..data.len()).collect();
        for chunk in indices.chunks(EVAL_BATCH) {
            let heads = self.forward(&data.batch_inputs(chunk), Mode::Infer)?;
            for (row, &i) in chunk.iter().enumerate() {
                for (h, head) in heads.iter().enumerate() {
                    let start = (i * LABEL_LEN + h) * k;
                    for (dst, src) in probs[start..start + k].iter_mut().zip(&head.data()[row * k..(row + 1) * k]) {
                        *dst = src.as_f64();
                    }
                }
            }
        }
        Predictions::new(data.len(), k, probs)
    }
}

/// Test stub that answers with the true labels as clipped one-hot vectors.
#[derive(Debug, Clone)]
pub struct OracleModel {
    charset: Charset,
}

impl OracleModel {
    pub fn new(charset: Charset) -> Self {
        Self { charset }
    }
}

impl<T: Real> Predictor<T> for OracleModel {
    fn charset(&self) -> &Charset {
        &self.charset
    }

    fn predict(&mut self, data: &EncodedSet<T>) -> Result<Predictions> {
        check_classes(&self.charset, data.classes())?;
        let k = self.charset.len();
        let mut probs = vec![PROB_CLIP; data.len() * LABEL_LEN * k];
        for (i, labels) in data.labels().iter().enumerate() {
            for (h, &c) in labels.iter().enumerate() {
                probs[(i * LABEL_LEN + h) * k + c] = 1.0 - (k - 1) as f64 * PROB_CLIP;
            }
        }
        Predictions::new(data.len(), k, probs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub char_accuracy: f64,
    pub full_accuracy: f64,
    pub per_position_accuracy: [f64; LABEL_LEN],
    pub mean_loss: f64,
}

impl Metrics {
    /// Accuracies from decoded class indices.
    pub fn from_decoded(
        predicted: &[[usize; LABEL_LEN]],
        truth: &[[usize; LABEL_LEN]],
        mean_loss: f64,
    ) -> Result<Self> {
        if predicted.is_empty() {
            return Err(Error::Validation("cannot evaluate an empty dataset".into()));
        }
        if predicted.len() != truth.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} samples",
                predicted.len(),
                truth.len()
            )));
        }
        let n = predicted.len();
        let mut per_position = [0usize; LABEL_LEN];
        let mut full = 0;
        for (p, t) in predicted.iter().zip(truth) {
            let mut all = true;
            for h in 0..LABEL_LEN {
                if p[h] == t[h] {
                    per_position[h] += 1;
                } else {
                    all = false;
                }
            }
            full += all as usize;
        }
        let chars: usize = per_position.iter().sum();
        Ok(Self {
            char_accuracy: chars as f64 / (LABEL_LEN * n) as f64,
            full_accuracy: full as f64 / n as f64,
            per_position_accuracy: per_position.map(|c| c as f64 / n as f64),
            mean_loss,
        })
    }

    pub fn from_predictions(preds: &Predictions, truth: &[[usize; LABEL_LEN]]) -> Result<Self> {
        if preds.len() != truth.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} samples",
                preds.len(),
                truth.len()
            )));
        }
        let decoded: Vec<_> = (0..preds.len()).map(|i| preds.decoded(i)).collect();
        let loss = if truth.is_empty() {
            0.0
        } else {
            truth.iter().enumerate().map(|(i, t)| preds.sample_loss(i, t)).sum::<f64>() / truth.len() as f64
        };
        Self::from_decoded(&decoded, truth, loss)
    }
}

/// Infer-mode metrics over a whole dataset.
pub fn evaluate<T: Real, P: Predictor<T> + ?Sized>(predictor: &mut P, data: &EncodedSet<T>) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty dataset".into()));
    }
    let preds = predictor.predict(data)?;
    Metrics::from_predictions(&preds, data.labels())
}
