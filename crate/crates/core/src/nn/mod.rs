//! Small multilayer-perceptron engine: exact reverse-mode gradients,
//! forward-mode JVPs, Adam/AdamW and binary checkpoints.

mod checkpoint;
pub mod gradcheck;
mod mlp;
mod optim;

pub use checkpoint::{Checkpoint, CheckpointHeader, NetEntry, MAGIC};
pub use mlp::{Activation, ForwardCache, GradBundle, Mlp, MlpConfig};
pub use optim::{OptConfig, OptState, OptimizerKind};
