//! Emulated fp16 mixed-precision training.
//!
//! Activations, weights-in-compute and activation gradients are rounded to
//! binary16 on the tape; accumulation stays wide and the optimizer updates
//! f32 master weights. A dynamic [`LossScaler`] keeps small gradients out of
//! the subnormal range and skips steps that overflow.

pub mod half;
mod scaler;

pub use half::{round_to_half, to_half, Half16};
pub use scaler::LossScaler;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TokenBatch, TransformerClassifier};
use crate::tensor::{AdamState, Dtype, Tape};
use crate::train::{train_step, Objective, StepOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmpConfig {
    pub enabled: bool,
    pub keep_master_weights: bool,
}

impl Default for AmpConfig {
    fn default() -> Self {
        AmpConfig {
            enabled: false,
            keep_master_weights: true,
        }
    }
}

impl AmpConfig {
    pub fn enabled() -> Self {
        AmpConfig {
            enabled: true,
            keep_master_weights: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !self.keep_master_weights {
            return Err(Error::config("amp requires keep_master_weights"));
        }
        Ok(())
    }
}

/// Scaled gradients from one half-precision pass.
#[derive(Clone, Debug)]
pub struct HalfGrads {
    pub loss: f64,
    /// One buffer per parameter, in `named_params` order, multiplied by the scale.
    pub grads: Vec<Vec<f64>>,
}

/// Forward and backward in emulated fp16 with the loss multiplied by `scale`.
pub fn half_forward_backward(
    model: &TransformerClassifier,
    batch: &TokenBatch,
    labels: &[usize],
    scale: f64,
) -> Result<HalfGrads> {
    scaled_loss_grads(model, batch, labels, scale, 1.0)
}

/// As [`half_forward_backward`], with the cross-entropy multiplied by
/// `loss_weight` before scaling.
pub fn scaled_loss_grads(
    model: &TransformerClassifier,
    batch: &TokenBatch,
    labels: &[usize],
    scale: f64,
    loss_weight: f64,
) -> Result<HalfGrads> {
    let mut tape = Tape::new(Dtype::F16e);
    let out = model.forward(&mut tape, batch, None, false, None)?;
    let ce = tape.cross_entropy(out.logits, labels)?;
    let loss = if loss_weight == 1.0 {
        ce
    } else {
        tape.scale(ce, loss_weight)
    };
    let g = tape.backward_scaled(loss, scale)?;
    Ok(HalfGrads {
        loss: tape.value(loss)[0],
        grads: out
            .params
            .iter()
            .map(|&v| g.get_or_zeros(v, tape.value(v).len()))
            .collect(),
    })
}

/// Divide by `scale` unless any gradient is non-finite. Returns the overflow flag;
/// on overflow the buffers are left untouched.
pub fn unscale_and_check(grads: &mut [Vec<f64>], scale: f64) -> bool {
    assert!(scale > 0.0, "loss scale must be positive");
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return true;
    }
    let inv = 1.0 / scale;
    grads.iter_mut().flatten().for_each(|g| *g *= inv);
    false
}

/// One mixed-precision optimizer step on the f32 master weights. Overflow
/// steps leave weights and optimizer moments untouched.
pub fn amp_train_step(
    model: &mut TransformerClassifier,
    batch: &TokenBatch,
    labels: &[usize],
    scaler: &mut LossScaler,
    adam: &mut AdamState,
) -> Result<StepOutcome> {
    train_step(
        model,
        None,
        false,
        batch,
        labels,
        &Objective::CrossEntropy,
        adam,
        Some(scaler),
        None,
        0,
    )
}
