//! Denoising diffusion in a flat latent space: schedules, the conditional
//! ε-predictor, classifier-free guidance and the ancestral sampler.

mod denoiser;
mod sampler;
mod schedule;
mod train;

pub use denoiser::{time_embedding, ConditionalDenoiser, EpsPredictor, TIME_EMBED_DIM};
pub use sampler::{
    ancestral_step, cfg_combine, reverse_sample, sample_with_provenance, SampleBatch,
    SampleProvenance, DEFAULT_GUIDANCE,
};
pub use schedule::NoiseSchedule;
pub use train::{train_denoiser, train_denoiser_weighted, DiffusionTrainConfig};
