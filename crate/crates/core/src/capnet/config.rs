use serde::{Deserialize, Serialize};

use crate::capgen::{CANVAS_H, CANVAS_W};
use crate::error::{Error, Result};
use crate::optim::{AdamHyper, OptimizerKind};
use crate::tensor::Precision;

/// Number of 2x2 pooling stages in the trunk.
pub const POOL_STAGES: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub filters: [usize; 4],
    pub dense_width: usize,
    pub dropout: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_width: CANVAS_W,
            image_height: CANVAS_H,
            filters: [32, 48, 64, 64],
            dense_width: 1664,
            dropout: 0.5,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    /// Small, fast configuration.
    pub fn desk() -> Self {
        Self {
            filters: [4, 4, 8, 8],
            dense_width: 64,
            dropout: 0.0,
            ..Self::default()
        }
    }

    /// Spatial size after the pooling stages, `(height, width)`.
    pub fn pooled_dims(&self) -> (usize, usize) {
        let halve = |mut v: usize| {
            for _ in 0..POOL_STAGES {
                v /= 2;
            }
            v
        };
        (halve(self.image_height), halve(self.image_width))
    }

    pub fn flatten_width(&self) -> usize {
        let (h, w) = self.pooled_dims();
        self.filters[3] * h * w
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters.contains(&0) {
            return Err(Error::Config(format!("filter counts must be >= 1, got {:?}", self.filters)));
        }
        if self.dense_width == 0 {
            return Err(Error::Config("dense_width must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        let (h, w) = self.pooled_dims();
        if h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "{}x{} input collapses to {w}x{h} after {POOL_STAGES} pooling stages",
                self.image_width, self.image_height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub shuffle: bool,
    pub optimizer: OptimizerKind,
    /// Keep batchnorm running statistics fixed during training.
    pub freeze_batchnorm_stats: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            adam: AdamHyper::default(),
            shuffle: true,
            optimizer: OptimizerKind::Adam,
            freeze_batchnorm_stats: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        // A single-sample batch has no batch variance.
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        self.adam.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_flatten_width() {
        let c = ModelConfig::default();
        assert_eq!(c.pooled_dims(), (3, 12));
        assert_eq!(c.flatten_width(), 64 * 12 * 3);
        c.validate().unwrap();
    }

    #[test]
    fn collapse_is_a_config_error() {
        let c = ModelConfig { image_width: 8, image_height: 8, ..ModelConfig::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ModelConfig { image_width: 16, image_height: 16, ..ModelConfig::default() };
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(ModelConfig { dropout: 1.0, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { filters: [1, 0, 1, 1], ..ModelConfig::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn json_rejects_unknown_keys() {
        assert!(serde_json::from_str::<ModelConfig>(r#"{"filterz": [1,1,1,1]}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "optimizer": "sgd"}"#).unwrap();
        assert_eq!((c.epochs, c.batch_size, c.optimizer), (3, 32, OptimizerKind::Sgd));
    }
}
