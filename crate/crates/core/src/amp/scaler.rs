use serde::{Deserialize, Serialize};

/// Dynamic loss scale: halve on overflow, double after `growth_interval`
/// consecutive good steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossScaler {
    pub scale: f64,
    pub growth_interval: u32,
    pub growth_factor: f64,
    pub backoff_factor: f64,
    pub good_steps: u32,
}

impl Default for LossScaler {
    fn default() -> Self {
        LossScaler {
            scale: 32768.0,
            growth_interval: 2000,
            growth_factor: 2.0,
            backoff_factor: 0.5,
            good_steps: 0,
        }
    }
}

impl LossScaler {
    pub fn with_scale(scale: f64) -> Self {
        LossScaler {
            scale,
            ..Self::default()
        }
    }

    /// Record the outcome of a step. Returns whether the step should be applied.
    pub fn update(&mut self, overflow: bool) -> bool {
        if overflow {
            self.scale *= self.backoff_factor;
            self.good_steps = 0;
            return false;
        }
        self.good_steps += 1;
        if self.good_steps == self.growth_interval {
            self.scale *= self.growth_factor;
            self.good_steps = 0;
        }
        true
    }
}
