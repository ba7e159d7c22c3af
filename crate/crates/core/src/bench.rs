//! Latency measurement, speedup arithmetic, energy and carbon estimates,
//! and the results report.

use std::cmp::Ordering;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TokenBatch, TransformerClassifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub seq_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub warmup_runs: usize,
    pub measured_runs: usize,
    pub batch_size: usize,
    pub seq_len: usize,
}

/// Linear-interpolation percentile of sorted samples, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Time `repeats` calls of `run` after `warmup` untimed ones.
pub fn measure_latency_on<F>(
    mut run: F,
    spec: BatchSpec,
    warmup: usize,
    repeats: usize,
) -> Result<LatencyReport>
where
    F: FnMut() -> Result<()>,
{
    check_protocol(warmup, repeats)?;
    for _ in 0..warmup {
        run()?;
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        times.push(time_ms(&mut run)?);
    }
    Ok(summarize(times, spec, warmup))
}

fn check_protocol(warmup: usize, repeats: usize) -> Result<()> {
    if warmup < 1 {
        return Err(Error::invalid(
            "latency measurement needs at least 1 warmup run",
        ));
    }
    if repeats < 5 {
        return Err(Error::invalid(format!(
            "need at least 5 timed repeats, got {repeats}"
        )));
    }
    Ok(())
}

fn time_ms(run: &mut impl FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    run()?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

fn summarize(mut times: Vec<f64>, spec: BatchSpec, warmup: usize) -> LatencyReport {
    times.sort_by(f64::total_cmp);
    LatencyReport {
        median_ms: percentile(&times, 0.5),
        p10_ms: percentile(&times, 0.1),
        p90_ms: percentile(&times, 0.9),
        warmup_runs: warmup,
        measured_runs: times.len(),
        batch_size: spec.batch_size,
        seq_len: spec.seq_len,
    }
}

/// Full-length random token batch, no padding.
pub fn random_batch(vocab_size: usize, spec: BatchSpec, seed: u64) -> Result<TokenBatch> {
    if spec.batch_size == 0 || spec.seq_len == 0 {
        return Err(Error::invalid(
            "batch size and sequence length must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = 2.min(vocab_size - 1);
    let rows: Vec<Vec<usize>> = (0..spec.batch_size)
        .map(|_| {
            (0..spec.seq_len)
                .map(|_| rng.gen_range(lo..vocab_size))
                .collect()
        })
        .collect();
    TokenBatch::new(&rows)
}

/// Inference latency of `model` on one seeded batch, reused for every run.
pub fn measure_latency(
    model: &TransformerClassifier,
    spec: BatchSpec,
    warmup: usize,
    repeats: usize,
    seed: u64,
) -> Result<LatencyReport> {
    if spec.seq_len > model.config().max_seq_len {
        return Err(Error::invalid(format!(
            "seq_len {} exceeds the model's {}",
            spec.seq_len,
            model.config().max_seq_len
        )));
    }
    let batch = random_batch(model.config().vocab_size, spec, seed)?;
    measure_latency_on(|| model.logits(&batch).map(drop), spec, warmup, repeats)
}

/// Paired measurement of several models: each repeat times every model once,
/// in turn, so slow drift in machine load lands on all of them alike.
pub fn measure_latency_interleaved(
    models: &[&TransformerClassifier],
    spec: BatchSpec,
    warmup: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<LatencyReport>> {
    check_protocol(warmup, repeats)?;
    let mut batches = Vec::with_capacity(models.len());
    for m in models {
        if spec.seq_len > m.config().max_seq_len {
            return Err(Error::invalid(format!(
                "seq_len {} exceeds a model's {}",
                spec.seq_len,
                m.config().max_seq_len
            )));
        }
        batches.push(random_batch(m.config().vocab_size, spec, seed)?);
    }
    for (m, b) in models.iter().zip(&batches) {
        for _ in 0..warmup {
            m.logits(b)?;
        }
    }
    let mut times = vec![Vec::with_capacity(repeats); models.len()];
    for _ in 0..repeats {
        for ((m, b), t) in models.iter().zip(&batches).zip(&mut times) {
            t.push(time_ms(&mut || m.logits(b).map(drop))?);
        }
    }
    Ok(times
        .into_iter()
        .map(|t| summarize(t, spec, warmup))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub speedup_x: f64,
    pub pct_decrease: f64,
}

pub fn speedup(t_baseline_ms: f64, t_ms: f64) -> Result<Speedup> {
    if !(t_baseline_ms > 0.0 && t_ms > 0.0) {
        return Err(Error::invalid(format!(
            "times must be positive, got {t_baseline_ms} and {t_ms}"
        )));
    }
    let ratio = t_ms / t_baseline_ms;
    Ok(Speedup {
        speedup_x: t_baseline_ms / t_ms,
        pct_decrease: (1.0 - ratio) * 100.0,
    })
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must be non-negative, got {v}"
        )))
    }
}

/// kWh drawn at a constant `power_w` for `duration_s`.
pub fn estimate_energy(duration_s: f64, power_w: f64) -> Result<f64> {
    non_negative("duration", duration_s)?;
    non_negative("power", power_w)?;
    Ok(power_w * duration_s / 3.6e6)
}

/// kg CO2-equivalent for `energy_kwh` at grid intensity `kg_per_kwh`.
pub fn estimate_co2(energy_kwh: f64, kg_per_kwh: f64) -> Result<f64> {
    non_negative("energy", energy_kwh)?;
    non_negative("carbon intensity", kg_per_kwh)?;
    Ok(energy_kwh * kg_per_kwh)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub duration_s: f64,
    pub power_w: f64,
    pub energy_kwh: f64,
    pub intensity_kg_per_kwh: f64,
    pub co2_kg: f64,
}

impl EnergyReport {
    pub fn new(duration_s: f64, power_w: f64, intensity_kg_per_kwh: f64) -> Result<Self> {
        let energy_kwh = estimate_energy(duration_s, power_w)?;
        Ok(EnergyReport {
            duration_s,
            power_w,
            energy_kwh,
            intensity_kg_per_kwh,
            co2_kg: estimate_co2(energy_kwh, intensity_kg_per_kwh)?,
        })
    }
}

/// One report row. Reduction and speedup fields are `None` for the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub params_millions: f64,
    pub pct_param_reduction: Option<f64>,
    pub median_latency_ms: f64,
    pub pct_latency_decrease: Option<f64>,
    pub speedup_x: Option<f64>,
    pub accuracy_pct: f64,
    pub co2_kg: f64,
}

impl ExperimentResult {
    pub fn baseline(
        name: &str,
        params: usize,
        latency_ms: f64,
        accuracy_pct: f64,
        co2_kg: f64,
    ) -> Self {
        ExperimentResult {
            name: name.into(),
            params_millions: params as f64 / 1e6,
            pct_param_reduction: None,
            median_latency_ms: latency_ms,
            pct_latency_decrease: None,
            speedup_x: None,
            accuracy_pct,
            co2_kg,
        }
    }

    /// A row measured against `base`.
    pub fn relative_to(
        base: &ExperimentResult,
        name: &str,
        params: usize,
        latency_ms: f64,
        accuracy_pct: f64,
        co2_kg: f64,
    ) -> Result<Self> {
        let s = speedup(base.median_latency_ms, latency_ms)?;
        let params_millions = params as f64 / 1e6;
        Ok(ExperimentResult {
            name: name.into(),
            params_millions,
            pct_param_reduction: Some((1.0 - params_millions / base.params_millions) * 100.0),
            median_latency_ms: latency_ms,
            pct_latency_decrease: Some(s.pct_decrease),
            speedup_x: Some(s.speedup_x),
            accuracy_pct,
            co2_kg,
        })
    }
}

pub const TABLE_HEADERS: [&str; 6] = [
    "Optimization added",
    "Number of parameters (in million)",
    "% Reduction in no of parameters",
    "% decrease in inference time/ Time Speed up",
    "Accuracy",
    "Estimated Carbon emissions (kg CO2 eq)",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// Cells of each row in [`TABLE_HEADERS`] order.
///
/// Parameter counts use no decimals when every row has at least a million,
/// else four so desk-scale models do not print as 0.
pub fn table_cells(rows: &[ExperimentResult]) -> Vec<[String; 6]> {
    let params_dp = if rows.iter().all(|r| r.params_millions >= 1.0) {
        0
    } else {
        4
    };
    rows.iter()
        .map(|r| {
            let reduction = r
                .pct_param_reduction
                .map_or("-".into(), |p| format!("{p:.2}"));
            let latency = match (r.pct_latency_decrease, r.speedup_x) {
                (Some(p), Some(s)) => format!("{p:.2}({s:.2}x)"),
                _ => "-".into(),
            };
            [
                r.name.clone(),
                format!("{:.*}", params_dp, r.params_millions),
                reduction,
                latency,
                format!("{:.2}", r.accuracy_pct),
                format!("{:.6}", r.co2_kg),
            ]
        })
        .collect()
}

pub fn emit_results_table(rows: &[ExperimentResult], format: TableFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("results table needs at least one row"));
    }
    let cells = table_cells(rows);
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(TABLE_HEADERS).map_err(csv_error)?;
            for row in &cells {
                w.write_record(row).map_err(csv_error)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        TableFormat::Markdown => {
            let line = |cells: &[&str]| format!("| {} |\n", cells.join(" | "));
            let mut out = line(&TABLE_HEADERS);
            out.push_str(&line(&["---"; 6]));
            for row in &cells {
                let refs: Vec<&str> = row.iter().map(|c| c.as_str()).collect();
                out.push_str(&line(&refs));
            }
            Ok(out)
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// Plot data: one `(median_latency_ms, accuracy_pct, label)` line per row,
/// fastest first, ties by name.
pub fn emit_accuracy_vs_time(rows: &[ExperimentResult]) -> Result<String> {
    let mut sorted: Vec<&ExperimentResult> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.median_latency_ms
            .partial_cmp(&b.median_latency_ms)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["median_latency_ms", "accuracy_pct", "label"])
        .map_err(csv_error)?;
    for r in sorted {
        w.write_record([
            r.median_latency_ms.to_string(),
            r.accuracy_pct.to_string(),
            r.name.clone(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_ordered() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&xs, 0.5), 3.0);
        assert_eq!(percentile(&xs, 0.1), 1.4);
        assert_eq!(percentile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn rejects_too_few_repeats() {
        let spec = BatchSpec {
            batch_size: 1,
            seq_len: 1,
        };
        assert!(measure_latency_on(|| Ok(()), spec, 1, 4).is_err());
        assert!(measure_latency_on(|| Ok(()), spec, 0, 5).is_err());
        let r = measure_latency_on(|| Ok(()), spec, 1, 5).unwrap();
        assert!(r.p10_ms <= r.median_ms && r.median_ms <= r.p90_ms);
    }

    #[test]
    fn speedup_identity_and_errors() {
        let s = speedup(3.0, 3.0).unwrap();
        assert_eq!((s.speedup_x, s.pct_decrease), (1.0, 0.0));
        assert!(speedup(0.0, 1.0).is_err());
        assert!(speedup(1.0, -1.0).is_err());
    }

    #[test]
    fn energy_errors() {
        assert!(estimate_energy(-1.0, 10.0).is_err());
        assert!(estimate_co2(1.0, -0.1).is_err());
        assert_eq!(estimate_energy(0.0, 100.0).unwrap(), 0.0);
    }
}
