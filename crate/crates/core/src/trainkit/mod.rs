//! Losses, the training loop and evaluation metrics.

mod loss;
mod metrics;
mod train;

pub use loss::{cross_entropy, total_loss};
pub use metrics::{
    metrics_from_predictions, BinaryMetrics, ConfusionCounts, Direction, MetricsReport, StatusMetrics, STATUSES,
};
pub use train::{evaluate, predict_all, train, train_with, EpochRecord, TrainConfig};
