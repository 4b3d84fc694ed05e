//! Gradient-magnitude saliency masks and masked parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaPolicy {
    /// γ = mean(|g|) + std(|g|).
    #[default]
    MeanPlusStd,
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMask {
    pub bits: Vec<bool>,
    pub gamma_used: f64,
}

impl SaliencyMask {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.bits.len() as f64
        }
    }
}

pub fn resolve_gamma(grad: &[f64], policy: GammaPolicy) -> f64 {
    match policy {
        GammaPolicy::Absolute(g) => g,
        GammaPolicy::MeanPlusStd => {
            let n = grad.len() as f64;
            let mean = grad.iter().map(|g| g.abs()).sum::<f64>() / n;
            let var = grad.iter().map(|g| (g.abs() - mean).powi(2)).sum::<f64>() / n;
            mean + var.sqrt()
        }
    }
}

/// Bit `i` is set iff `|grad_i| ≥ γ`.
pub fn saliency_mask(grad: &ParameterVector, policy: GammaPolicy) -> Result<SaliencyMask> {
    let g = grad.values();
    if g.is_empty() {
        return Err(Error::Empty("gradient"));
    }
    if !grad.all_finite() {
        return Err(Error::InvalidArgument("gradient has non-finite entries".into()));
    }
    let gamma = resolve_gamma(g, policy);
    Ok(SaliencyMask {
        bits: g.iter().map(|v| v.abs() >= gamma).collect(),
        gamma_used: gamma,
    })
}

/// `θ ← m ⊙ (Δθ + θ) + (1 − m) ⊙ θ`; `None` is the all-ones mask.
pub fn masked_update(
    params: &ParameterVector,
    delta: &ParameterVector,
    mask: Option<&SaliencyMask>,
) -> Result<ParameterVector> {
    if params.len() != delta.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            got: delta.len(),
        });
    }
    if !params.same_layout(delta) {
        return Err(Error::SegmentMismatch);
    }
    let mut out = params.clone();
    match mask {
        None => {
            for (o, d) in out.values_mut().iter_mut().zip(delta.values()) {
                *o += d;
            }
        }
        Some(m) => {
            if m.len() != params.len() {
                return Err(Error::LengthMismatch {
                    expected: params.len(),
                    got: m.len(),
                });
            }
            for ((o, d), &bit) in out.values_mut().iter_mut().zip(delta.values()).zip(&m.bits) {
                if bit {
                    *o += d;
                }
            }
        }
    }
    Ok(out)
}
