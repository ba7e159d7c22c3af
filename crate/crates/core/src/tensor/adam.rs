use super::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers are created on the first step
/// and keyed by position in the parameter list.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// Update every parameter from its `grad`. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.numel())
        {
            return Err(Error::invalid(
                "parameter list changed shape between Adam steps",
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let Some(grad) = p.grad.take() else {
                // zero gradient still decays the moments
                m.iter_mut().for_each(|m| *m *= self.beta1);
                v.iter_mut().for_each(|v| *v *= self.beta2);
                continue;
            };
            let dtype = p.dtype();
            for (((w, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w = dtype.round(*w - self.learning_rate * mhat / (vhat.sqrt() + self.eps));
            }
            p.grad = Some(grad);
        }
        Ok(())
    }
}
