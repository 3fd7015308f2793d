//! Small multilayer perceptrons, their losses and optimizers.

mod checkpoint;
mod loss;
mod mlp;
mod optim;

pub use checkpoint::{load_mlp, save_mlp, MlpManifest};
pub use loss::{cross_entropy, mse, one_hot};
pub use mlp::{ForwardPass, Mlp, Mode, Parameterized};
pub use optim::{Adam, AdamConfig};
