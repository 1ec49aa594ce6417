//! Synthetic-data augmentation for binary tumor detection on brain MR
//! slices: dataset preparation, classical affine augmentation, a
//! progressive-growing Wasserstein GAN, a residual classifier experiment
//! grid and a t-SNE embedding of the resulting image populations.

pub mod augment;
pub mod classifier;
pub mod dataset;
mod error;
pub mod imaging;
pub mod phantom;
pub mod pggan;
pub mod pipeline;
pub mod seeding;
pub mod store;
pub mod tsne;

pub use error::{Error, Result};
