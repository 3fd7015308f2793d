//! Downstream ensemble training under the sampling and synthesis policies.

mod augment;
mod config;
mod pool;
mod run;

pub use augment::{classic_augment, hflip, rot90, Geometry};
pub use config::{GaudaConfig, Policy, PolicyKind, PolicyName, TrainerConfig};
pub use pool::{
    mix_batch, select_uncertain_classes, spread_requests, synthesize_for_classes, PairSynthesizer, PoolEntry,
    SynthPool, SynthRound, Synthesizer, Toy2dSimulator,
};
pub use run::{run_training, RunOptions, RunResult, TrainingData};
