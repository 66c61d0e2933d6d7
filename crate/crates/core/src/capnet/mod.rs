//! The five-head solver: architecture, training, evaluation, persistence.

mod config;
mod history;
mod io;
mod metrics;
mod model;
mod train;

pub use config::{ModelConfig, TrainConfig, POOL_STAGES};
pub use history::{
    accuracy_svg, emit_history, history_csv, loss_svg, ACCURACY_SVG, HISTORY_CSV, HISTORY_HEADER,
    LOSS_SVG,
};
pub use io::{decode_model, encode_model, load_model, save_model, AnyCapNet, MAGIC, VERSION};
pub use metrics::{evaluate, Metrics, OracleModel, Predictions, Predictor, EVAL_BATCH};
pub use model::{build_model, joint_loss, CapNet};
pub use train::{EpochRecord, EpochStats, History, Trainer};
