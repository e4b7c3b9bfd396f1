//! Contrastive self-supervision over action-unit embeddings.
//!
//! Pretraining builds augmented pairs (noise view, scale view) per input,
//! pushes them through a conv-conv-LSTM encoder and a projection head, and
//! minimizes the normalized temperature-scaled cross entropy. Fine-tuning
//! discards the projection head, attaches a small prediction head, and
//! minimizes cross entropy on the motif-derived seed points. Inference
//! returns a label only when the softmax score clears the threshold.

mod augment;
mod classify;
mod loss;
mod model;
mod train;

pub use augment::{augment_noise, augment_scale};
pub use classify::{predict_thresholded, Classifier};
pub use loss::nt_xent;
pub use model::{EncoderParams, PredictionHeadParams, ProjectionParams, ENCODER_OUT_DIM};
pub use train::{fine_tune, pretrain, PretrainOutcome};

use serde::{Deserialize, Serialize};

/// Input representation: one feature vector per action unit (its window
/// embedding).
pub type FeatureVector = Vec<f64>;

/// Contrastive and fine-tuning hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Batch size N; each contrastive batch holds 2N augmented views.
    pub batch_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    /// Std-dev of the additive noise augmentation.
    pub noise_sigma: f64,
    /// Mean/std of the per-feature scaling augmentation.
    pub scale_mean: f64,
    pub scale_std: f64,
    /// Softmax acceptance threshold for thresholded prediction.
    pub softmax_threshold: f64,
    pub dropout: f64,
    /// Deterministic subsample caps; `None` trains on everything.
    pub max_pretrain_samples: Option<usize>,
    pub max_finetune_samples: Option<usize>,
    /// Freeze encoder weights during fine-tuning (head-only training).
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            temperature: 0.5,
            learning_rate: 1e-3,
            pretrain_epochs: 100,
            finetune_epochs: 50,
            seed: 0,
            noise_sigma: 0.05,
            scale_mean: 1.0,
            scale_std: 0.1,
            softmax_threshold: 0.7,
            dropout: 0.1,
            max_pretrain_samples: None,
            max_finetune_samples: None,
            freeze_encoder: false,
        }
    }
}
