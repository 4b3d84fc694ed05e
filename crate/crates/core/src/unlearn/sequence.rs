//! Chains time steps: θ_u^t = step(θ_u^{t−1}, D_f^t).

use std::path::PathBuf;
use std::time::Instant;

use super::config::UnlearnConfig;
use super::registry::{Registry, StepContext, StepOutput, Unlearner};
use super::train::LoopReport;
use crate::corpus::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{LanguageModel, ParameterVector};
use crate::rng::derive_seed;

#[derive(Debug, Clone)]
pub struct TimeStepResult {
    pub t: usize,
    pub lr: f64,
    pub theta_u: ParameterVector,
    pub theta_ft: Option<ParameterVector>,
    pub report: LoopReport,
    pub theta_u_checkpoint: Option<PathBuf>,
    pub theta_ft_checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub wall_clock_secs: f64,
}

/// Hook run after every completed time step, before the next one starts.
/// Typically persists checkpoints and evaluates, filling in the path fields.
pub trait StepObserver {
    fn on_step(&mut self, model: &LanguageModel, result: &mut TimeStepResult) -> Result<()>;
}

/// Does nothing.
pub struct NoObserver;

impl StepObserver for NoObserver {
    fn on_step(&mut self, _model: &LanguageModel, _result: &mut TimeStepResult) -> Result<()> {
        Ok(())
    }
}

/// Per-step seed, independent of how many steps ran before.
pub fn step_seed(cfg: &UnlearnConfig, t: usize) -> u64 {
    derive_seed(cfg.seed, "time-step", t as u64)
}

/// One time step of `unlearner` from `theta_prev`. The unlearner must already be prepared.
pub fn run_time_step(
    unlearner: &dyn Unlearner,
    theta_prev: &LanguageModel,
    theta_0: &LanguageModel,
    splits: &SplitDataset,
    cfg: &UnlearnConfig,
    t: usize,
) -> Result<StepOutput> {
    if t < 1 || t > splits.steps() {
        return Err(Error::InvalidArgument(format!(
            "time step {t} outside 1..={}",
            splits.steps()
        )));
    }
    let ctx = StepContext {
        t,
        theta_prev,
        theta_0,
        splits,
        cfg,
        lr: cfg.lr_schedule.lr_for(cfg.lr, t),
        seed: step_seed(cfg, t),
    };
    unlearner.step(&ctx)
}

#[derive(Debug)]
pub struct SequenceRun {
    /// Completed steps, in order; kept even when a later step fails.
    pub results: Vec<TimeStepResult>,
    pub aborted: Option<Error>,
}

impl SequenceRun {
    pub fn into_result(self) -> Result<Vec<TimeStepResult>> {
        match self.aborted {
            Some(e) => Err(e),
            None => Ok(self.results),
        }
    }
}

/// Runs steps 1..=`t_max`. Config and preparation errors are returned directly;
/// failures inside a step end the run with the earlier steps preserved.
pub fn run_sequence(
    theta_0: &LanguageModel,
    splits: &SplitDataset,
    cfg: &UnlearnConfig,
    registry: &Registry,
    t_max: usize,
    observer: &mut dyn StepObserver,
) -> Result<SequenceRun> {
    cfg.validate()?;
    if t_max > splits.steps() {
        return Err(Error::InvalidArgument(format!(
            "requested {t_max} time steps but only {} forget books",
            splits.steps()
        )));
    }
    let mut unlearner = registry.create(&cfg.algorithm)?;
    unlearner.prepare(theta_0, splits, cfg)?;
    let mut current = theta_0.clone();
    let mut results = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let started = Instant::now();
        let outcome = run_time_step(unlearner.as_ref(), &current, theta_0, splits, cfg, t)
            .and_then(|out| {
                current.set_params(out.theta_u.clone())?;
                let mut result = TimeStepResult {
                    t,
                    lr: cfg.lr_schedule.lr_for(cfg.lr, t),
                    theta_u: current.params().clone(),
                    theta_ft: out.theta_ft,
                    report: out.report,
                    theta_u_checkpoint: None,
                    theta_ft_checkpoint: None,
                    metrics: None,
                    wall_clock_secs: started.elapsed().as_secs_f64(),
                };
                observer.on_step(&current, &mut result)?;
                Ok(result)
            });
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                return Ok(SequenceRun {
                    results,
                    aborted: Some(e),
                })
            }
        }
    }
    Ok(SequenceRun { results, aborted: None })
}
