//! End-to-end experiments: config, the vanilla memorization phase, sequential
//! unlearning with persisted checkpoints and metrics, and reports.

pub mod config;
pub mod report;
pub mod run;

pub use config::{resolve, CorpusPaths, ExperimentConfig, MemFreeConfig, MemorizeConfig, SCHEMA_JSON};
pub use report::{load_step_reports, report_emit, write_tradeoff_csv, TRADEOFF_CSV, TRADEOFF_HEADER};
pub use run::{
    evaluate_checkpoint, evaluate_model, greedy_rouge_l, memorize, protected_chunks, run_dir_of, run_experiment,
    Books, RunManifest, RunStatus, StepRecord, VanillaRecord, MANIFEST_FILE, METRICS_CSV, VANILLA_CKPT, VANILLA_CSV,
};
