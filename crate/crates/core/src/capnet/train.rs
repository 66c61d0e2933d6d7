use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::{evaluate, Metrics};
use super::model::{joint_loss, CapNet};
use crate::capgen::LABEL_LEN;
use crate::datapipe::{argmax, EncodedSet};
use crate::error::{Error, Result};
use crate::layers::{LayerParams, Mode};
use crate::optim::{adam_step, sgd_step, AdamState, OptimizerKind};
use crate::rng::{stream, Rng};
use crate::tensor::Real;

/// Loss and accuracies of one training pass, measured on the training
/// batches as they were fitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub char_accuracy: f64,
    pub full_accuracy: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_char_acc: f64,
    pub train_full_acc: f64,
    pub test_loss: Option<f64>,
    pub test_char_acc: Option<f64>,
    pub test_full_acc: Option<f64>,
    pub ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Owns optimizer state and the shuffle stream across epochs.
#[derive(Debug, Clone)]
pub struct Trainer<T: Real> {
    config: TrainConfig,
    shuffle: Rng,
    /// Moments for `[weights, bias]` of each parameter set, in model order.
    states: Vec<[AdamState<T>; 2]>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            shuffle: rng.child(stream::SHUFFLE),
            states: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn train_epoch(&mut self, model: &mut CapNet<T>, data: &EncodedSet<T>) -> Result<EpochStats> {
        if data.len() < 2 {
            return Err(Error::Validation(format!(
                "training needs at least 2 samples, got {}",
                data.len()
            )));
        }
        if data.classes() != model.classes() {
            return Err(Error::Validation(format!(
                "model has {} classes, data has {}",
                model.classes(),
                data.classes()
            )));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        if self.config.shuffle {
            self.shuffle.shuffle(&mut order);
        }
        model.set_track_running_stats(!self.config.freeze_batchnorm_stats);

        let k = model.classes();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut chars = 0usize;
        let mut full = 0usize;
        let mut batches = 0;
        for batch in order.chunks(self.config.batch_size) {
            // A lone trailing sample cannot be batch-normalized.
            if batch.len() < 2 {
                continue;
            }
            model.zero_grad();
            let heads = model.forward(&data.batch_inputs(batch), Mode::Train)?;
            let targets = data.batch_targets(batch);
            let (loss, grads) = joint_loss(&heads, &targets)?;
            model.backward(&grads)?;
            self.step(model)?;

            loss_sum += loss.as_f64() * batch.len() as f64;
            seen += batch.len();
            batches += 1;
            for (row, &i) in batch.iter().enumerate() {
                let mut all = true;
                for h in 0..LABEL_LEN {
                    let probs: Vec<f64> = heads[h].data()[row * k..(row + 1) * k].iter().map(|v| v.as_f64()).collect();
                    if argmax(&probs) == data.labels()[i][h] {
                        chars += 1;
                    } else {
                        all = false;
                    }
                }
                full += all as usize;
            }
        }
        model.set_track_running_stats(true);
        Ok(EpochStats {
            loss: loss_sum / seen as f64,
            char_accuracy: chars as f64 / (LABEL_LEN * seen) as f64,
            full_accuracy: full as f64 / seen as f64,
            batches,
        })
    }

    fn step(&mut self, model: &mut CapNet<T>) -> Result<()> {
        if self.states.is_empty() {
            self.states = model
                .params()
                .map(|p| Ok([AdamState::new(p.weights.shape())?, AdamState::new(p.bias.shape())?]))
                .collect::<Result<_>>()?;
        }
        let hyper = self.config.adam;
        for (p, state) in model.params_mut().zip(self.states.iter_mut()) {
            let LayerParams { weights, bias, grad_weights, grad_bias, .. } = p;
            match self.config.optimizer {
                OptimizerKind::Adam => {
                    adam_step(weights, grad_weights, &mut state[0], &hyper)?;
                    adam_step(bias, grad_bias, &mut state[1], &hyper)?;
                }
                OptimizerKind::Sgd => {
                    sgd_step(weights, grad_weights, hyper.learning_rate)?;
                    sgd_step(bias, grad_bias, hyper.learning_rate)?;
                }
            }
        }
        Ok(())
    }

    /// Runs the configured number of epochs, evaluating `test` after each.
    pub fn fit(
        &mut self,
        model: &mut CapNet<T>,
        train: &EncodedSet<T>,
        test: Option<&EncodedSet<T>>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<History> {
        let mut history = History::default();
        for epoch in 1..=self.config.epochs {
            let start = Instant::now();
            let stats = self.train_epoch(model, train)?;
            let test_metrics: Option<Metrics> = test.map(|t| evaluate(model, t)).transpose()?;
            let record = EpochRecord {
                epoch,
                train_loss: stats.loss,
                train_char_acc: stats.char_accuracy,
                train_full_acc: stats.full_accuracy,
                test_loss: test_metrics.map(|m| m.mean_loss),
                test_char_acc: test_metrics.map(|m| m.char_accuracy),
                test_full_acc: test_metrics.map(|m| m.full_accuracy),
                ms: start.elapsed().as_millis() as u64,
            };
            on_epoch(&record);
            history.records.push(record);
        }
        Ok(history)
    }
}
