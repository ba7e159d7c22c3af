//! Browser bindings for three small pieces of the library: the pruning
//! schedule with its block masks, distillation soft targets and loss, and
//! binary16 rounding.
//!
//! The plain functions are the tested surface; the `js_*` wrappers only
//! convert errors for JavaScript.

use serde_json::json;
use slimbert::amp::{to_half, Half16};
use slimbert::distill::{kd_loss, soft_targets};
use slimbert::pruning::{compute_masks, threshold_at, PruneConfig};
use slimbert::{Result, Tensor};
use wasm_bindgen::prelude::*;

/// Retained fraction at every step `0..=total`.
pub fn schedule(
    initial: f64,
    fin: f64,
    warmup: usize,
    cooldown: usize,
    total: usize,
) -> Result<Vec<f64>> {
    let config = PruneConfig {
        initial_threshold: initial,
        final_threshold: fin,
        warmup_steps: warmup,
        cooldown_start: cooldown,
        total_steps: total,
        ..PruneConfig::default()
    };
    config.validate()?;
    (0..=total).map(|s| threshold_at(s, &config)).collect()
}

/// 1 for kept blocks, 0 for pruned ones.
pub fn block_mask(scores: &[f64], fraction: f64) -> Result<Vec<u8>> {
    Ok(compute_masks(scores, fraction)?
        .into_iter()
        .map(u8::from)
        .collect())
}

/// Teacher soft targets and the distillation loss against `student` for one example.
pub fn distill_view(
    teacher: &[f64],
    student: &[f64],
    label: usize,
    temperature: f64,
    alpha: f64,
) -> Result<String> {
    let row = |v: &[f64]| Tensor::from_vec(&[1, v.len()], v.to_vec());
    let (t, s) = (row(teacher)?, row(student)?);
    let targets = soft_targets(&t, temperature)?;
    let student_probs = soft_targets(&s, temperature)?;
    let loss = kd_loss(&s, &t, &[label], temperature, alpha)?;
    let soft_only = kd_loss(&s, &t, &[label], temperature, 0.0)?;
    Ok(json!({
        "teacher": targets.data(),
        "student": student_probs.data(),
        "loss": loss,
        "soft_term": soft_only,
    })
    .to_string())
}

/// Nearest binary16 value to `x` with its bit fields.
pub fn half_view(x: f64) -> String {
    let h = to_half(x as f32);
    let bits = h.to_bits();
    let value = h.to_f64();
    let kind = if h.is_nan() {
        "nan"
    } else if !h.is_finite() {
        "infinite"
    } else if bits & 0x7c00 == 0 && bits & 0x03ff != 0 {
        "subnormal"
    } else if bits & 0x7fff == 0 {
        "zero"
    } else {
        "normal"
    };
    json!({
        "bits": format!("{bits:016b}"),
        "sign": bits >> 15,
        "exponent": (bits >> 10) & 0x1f,
        "mantissa": bits & 0x03ff,
        "value": if value.is_finite() { json!(value) } else { json!(value.to_string()) },
        "abs_error": if value.is_finite() { json!((value - x).abs()) } else { json!(null) },
        "kind": kind,
        "max": Half16::MAX.to_f64(),
    })
    .to_string()
}

fn js(e: slimbert::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = schedule)]
pub fn js_schedule(
    initial: f64,
    fin: f64,
    warmup: usize,
    cooldown: usize,
    total: usize,
) -> Result<Vec<f64>, JsError> {
    schedule(initial, fin, warmup, cooldown, total).map_err(js)
}

#[wasm_bindgen(js_name = blockMask)]
pub fn js_block_mask(scores: &[f64], fraction: f64) -> Result<Vec<u8>, JsError> {
    block_mask(scores, fraction).map_err(js)
}

#[wasm_bindgen(js_name = distillView)]
pub fn js_distill_view(
    teacher: &[f64],
    student: &[f64],
    label: usize,
    temperature: f64,
    alpha: f64,
) -> Result<String, JsError> {
    distill_view(teacher, student, label, temperature, alpha).map_err(js)
}

#[wasm_bindgen(js_name = halfView)]
pub fn js_half_view(x: f64) -> String {
    half_view(x)
}
