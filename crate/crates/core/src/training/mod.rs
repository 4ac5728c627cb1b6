//! Losses, optimizer, metrics, data pipeline and tiled inference.

mod data;
mod infer;
mod loss;
mod metrics;
mod optim;
mod sliding;
mod trainer;

pub use data::{
    augment, crop_at, destandardize, dominant_fraction, flip_h, flip_v, random_crop, rot90, standardize, Crop, Dihedral, Sample,
    CROP_ALPHA, CROP_MAX_ITER, IMAGENET_MEAN, IMAGENET_STD,
};
pub use infer::{argmax, predict_logits, SIZE_MULTIPLE};
pub use loss::{cross_entropy_loss, dice_loss, one_hot, total_loss, LossParts, AUX_WEIGHT, DICE_EPS, IGNORE_INDEX};
pub use metrics::{ConfusionMatrix, Metrics};
pub use optim::{cosine_lr, AdamW, OptimState};
pub use sliding::{coverage, placements, sliding_window_infer, windows, Window};
pub use trainer::{collate, evaluate, EpochLog, StepLoss, TrainConfig, Trainer};
