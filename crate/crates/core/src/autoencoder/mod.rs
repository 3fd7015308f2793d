//! Paired image and mask autoencoders with vector-quantized bottlenecks.

mod codebook;
mod model;
mod sample;

pub use codebook::{Codebook, Quantized};
pub use model::{
    train_autoencoders, train_branch, AeConfig, AeDims, AeReport, Branch, BranchKind, BranchLoss,
    PairedAutoencoder,
};
pub use sample::{argmax_lowest, PairedLatent, PairedSample};
