//! Mini-batch gradient loop shared by fine-tuning, direct descent and
//! memorization training.

use rand::seq::SliceRandom;

use super::saliency::{masked_update, SaliencyMask};
use crate::corpus::ChunkPair;
use crate::error::{Error, Result};
use crate::model::{LanguageModel, Optimizer, ParameterVector};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy)]
pub struct LoopSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub divergence_guard: bool,
}

/// Seeded shuffled mini-batches for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(derive_seed(seed, "epoch", epoch as u64)));
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

#[derive(Debug, Clone, Default)]
pub struct LoopReport {
    pub losses: Vec<f64>,
    pub masks_applied: usize,
    pub mask_fraction_sum: f64,
    pub last_gamma: Option<f64>,
}

impl LoopReport {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    pub fn mean_mask_fraction(&self) -> Option<f64> {
        (self.masks_applied > 0).then(|| self.mask_fraction_sum / self.masks_applied as f64)
    }
}

/// Runs `spec.epochs` passes over `set`. For every batch, `objective` returns
/// the loss and gradient at the current weights, `mask` optionally gates which
/// coordinates of the optimizer proposal are written.
pub fn train_loop<O, M>(
    model: &mut LanguageModel,
    set: &[ChunkPair],
    spec: LoopSpec,
    optimizer: &mut Optimizer,
    mut objective: O,
    mut mask: M,
) -> Result<LoopReport>
where
    O: FnMut(&LanguageModel, &[ChunkPair], usize) -> Result<(f64, ParameterVector)>,
    M: FnMut(&ParameterVector, usize) -> Result<Option<SaliencyMask>>,
{
    let mut report = LoopReport::default();
    let mut initial: Option<f64> = None;
    let mut step = 0;
    for epoch in 0..spec.epochs {
        for batch_idx in epoch_batches(set.len(), spec.batch_size, spec.seed, epoch) {
            let batch: Vec<ChunkPair> = batch_idx.iter().map(|&i| set[i].clone()).collect();
            let (loss, grad) = objective(model, &batch, step)?;
            if !loss.is_finite() || !grad.all_finite() {
                return Err(Error::NonFiniteLoss(loss));
            }
            let init = *initial.get_or_insert(loss);
            if spec.divergence_guard && loss.abs() > 10.0 * init.abs().max(1e-12) {
                return Err(Error::Diverged {
                    step,
                    loss,
                    initial: init,
                });
            }
            let m = mask(&grad, step)?;
            if let Some(m) = &m {
                report.masks_applied += 1;
                report.mask_fraction_sum += m.fraction();
                report.last_gamma = Some(m.gamma_used);
            }
            let delta = optimizer.propose(&grad);
            let next = masked_update(model.params(), &delta, m.as_ref())?;
            model.set_params(next)?;
            report.losses.push(loss);
            step += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_all_once() {
        let b = epoch_batches(7, 2, 3, 0);
        assert_eq!(b.len(), 4);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert_eq!(b, epoch_batches(7, 2, 3, 0));
        assert_ne!(b, epoch_batches(7, 2, 3, 1));
    }
}
