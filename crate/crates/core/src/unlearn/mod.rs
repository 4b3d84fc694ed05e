//! Saliency masks, task-vector negation, direct-descent baselines and the
//! sequential controller.

pub mod config;
pub mod direct;
pub mod registry;
pub mod saliency;
pub mod sequence;
pub mod task_vector;
pub mod train;

pub use config::{KlAnchor, LrSchedule, MaskMode, UnlearnConfig};
pub use registry::{Registry, StepContext, StepOutput, Unlearner};
pub use saliency::{masked_update, saliency_mask, GammaPolicy, SaliencyMask};
pub use sequence::{run_sequence, run_time_step, NoObserver, SequenceRun, StepObserver, TimeStepResult};
pub use task_vector::{fine_tune_stage, negate_task_vector, FineTunePlan};
