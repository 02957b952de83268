//! The twin network `G_W`: a three-layer ReLU MLP trained with contrastive loss.

pub mod forward;
pub mod grad;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod train;

pub use forward::{forward, DropoutMasks, Mode};
pub use grad::{grad_check, grad_check_sampled, kink_distance, loss_gradients, pair_loss};
pub use loss::{contrastive_loss, pair_distance, LossConfig};
pub use model::{Embedding, Normalizer, SiameseModel};
pub use optim::{AdamConfig, OptimizerKind};
pub use params::{init_params, Dense, MlpParams, DEFAULT_LAYER_DIMS};
pub use train::{train, train_observed, write_history_csv, EpochStats, TrainConfig, TrainOutcome};
