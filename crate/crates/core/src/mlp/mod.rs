//! Dense network mapping steering-vector stacks to beamformers.

mod adam;
pub mod io;
mod loss;
mod model;
mod train;

pub use adam::Adam;
pub use loss::{loss_name, sample_loss, LossSpec};
pub use model::{to_complex, Activation, Layer, MlpModel, ModelMeta};
pub use train::{
    loss_and_gradient, mean_loss, random_query, train, train_with_progress, DatasetSpec,
    EpochStats, TrainConfig, TrainReport,
};
