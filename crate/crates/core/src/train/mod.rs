//! Detection loss, the Adam training loop and held-out evaluation.

mod evaluate;
mod fit;
mod loss;

pub use evaluate::{detection_report, evaluate_detection, DetectionReport};
pub use fit::{sample_gradient, train, write_history, EpochRecord, Preset, TrainConfig};
pub use loss::{l2_gradient, l2_penalty, pixel_loss, LossConfig, LossForm, PixelLoss};
