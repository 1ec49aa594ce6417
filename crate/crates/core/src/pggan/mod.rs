//! Progressive-growing Wasserstein GAN with gradient penalty.
//!
//! Both networks are built for the final resolution up front; the active
//! stage and fade weight are forward-pass arguments, so growing the model
//! never reallocates parameters.

mod checkpoint;
mod loss;
mod network;
mod schedule;
mod train;

pub use checkpoint::{GanCheckpoint, RngState};
pub use loss::{
    critic_loss, fade_in_blend, generator_loss, gradient_penalty, gradient_penalty_with_weights,
};
pub use network::{Discriminator, Generator, NetworkShape, LRELU_SLOPE};
pub use schedule::{stage_schedule, ResolutionSchedule, StagePlan};
pub use train::{
    critic_scores, curate_samples, generate_samples, select_top, train, write_loss_csv,
    GanTrainConfig, LossRecord, ScoredImage, TrainOptions, TrainOutcome,
};
