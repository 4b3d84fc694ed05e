//! Compact language model, flat parameter arithmetic and persistence.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod optim;
pub mod params;
pub mod transformer;

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Precision};
pub use loss::{log_softmax, loss_and_grad, sequence_nll, softmax, Objective};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{param_axpy, ParameterVector, Segment};
pub use transformer::{init_model, LanguageModel, Matrix};
