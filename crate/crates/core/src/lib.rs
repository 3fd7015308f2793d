//! Uncertainty-guided generative data augmentation at desk scale.
//!
//! A class-conditional latent diffusion model synthesises paired
//! (image, mask) samples for the classes a deep-ensemble segmenter is most
//! uncertain about, and those samples are mixed into its training batches.
//! The crate also carries the baselines (frequency weighting and score-based
//! adaptive sampling), the evaluation metrics, and the toy datasets used to
//! compare them.

pub mod autoencoder;
pub mod data;
pub mod diffusion;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod generative;
pub mod metrics;
pub mod nn;
pub mod numeric;
pub mod sampling;
pub mod trainer;

pub use error::{GaudaError, Result};
