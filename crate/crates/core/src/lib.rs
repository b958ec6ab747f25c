//! Sequence-level variational motion prior for human motion.
//!
//! The crate is organized around the two training stages: a transformer
//! VAE over motion clips ([`prior`]) and a video encoder that maps rendered
//! clips into the prior's latent space ([`video`]). Supporting modules hold
//! the differentiable body model, losses, metrics, synthetic data and the
//! training harness.

pub mod batch;
pub mod body;
pub mod checkpoint;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod normalize;
pub mod prior;
pub mod rotation;
pub mod train;
pub mod video;

pub use error::{Result, VmpError};
