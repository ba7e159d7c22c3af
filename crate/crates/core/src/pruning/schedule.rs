use super::PruneConfig;
use crate::error::{Error, Result};

/// Fraction of blocks retained at `step`.
///
/// Holds `initial_threshold` through warmup, then follows a cubic ramp
/// `final + (initial − final)(1 − p)³` down to `final_threshold`, reached at
/// `cooldown_start` and held to the end.
pub fn threshold_at(step: usize, config: &PruneConfig) -> Result<f64> {
    if step > config.total_steps {
        return Err(Error::invalid(format!(
            "step {step} beyond total_steps {}",
            config.total_steps
        )));
    }
    let (init, fin) = (config.initial_threshold, config.final_threshold);
    if step <= config.warmup_steps {
        // a zero-length ramp jumps straight to the final value
        if step == config.cooldown_start {
            return Ok(fin);
        }
        return Ok(init);
    }
    if step >= config.cooldown_start {
        return Ok(fin);
    }
    let p =
        (step - config.warmup_steps) as f64 / (config.cooldown_start - config.warmup_steps) as f64;
    Ok(fin + (init - fin) * (1.0 - p).powi(3))
}
