use proptest::prelude::*;
use slimbert::bench::{
    emit_accuracy_vs_time, emit_results_table, estimate_co2, estimate_energy, measure_latency,
    measure_latency_interleaved, measure_latency_on, speedup, table_cells, BatchSpec, EnergyReport,
    ExperimentResult, TableFormat, TABLE_HEADERS,
};
use slimbert::model::{ModelConfig, TransformerClassifier};
use slimbert::tensor::Dtype;

#[test]
fn energy_and_co2_arithmetic() {
    assert_eq!(estimate_energy(3600.0, 100.0).unwrap(), 0.1);
    assert_eq!(estimate_energy(0.0, 100.0).unwrap(), 0.0);
    assert_eq!(estimate_energy(7200.0, 250.0).unwrap(), 0.5);
    assert_eq!(estimate_co2(0.1, 0.5).unwrap(), 0.05);
    assert_eq!(estimate_co2(0.1, 0.0).unwrap(), 0.0);
    assert!(estimate_energy(-1.0, 1.0).is_err());
    assert!(estimate_energy(1.0, -1.0).is_err());
    assert!(estimate_co2(-0.1, 0.5).is_err());

    let r = EnergyReport::new(3600.0, 100.0, 0.5).unwrap();
    assert_eq!(r.co2_kg, 0.05);
    assert_eq!(r.energy_kwh, r.power_w * r.duration_s / 3.6e6);
    assert_eq!(r.co2_kg, r.energy_kwh * r.intensity_kg_per_kwh);
}

#[test]
fn speedup_examples() {
    let s = speedup(10.0, 4.444).unwrap();
    assert_eq!(format!("{:.2}", s.speedup_x), "2.25");
    assert_eq!(format!("{:.1}", s.pct_decrease), "55.6");
    let same = speedup(7.0, 7.0).unwrap();
    assert_eq!((same.speedup_x, same.pct_decrease), (1.0, 0.0));
    let s = speedup(10.0, 5.988).unwrap();
    assert_eq!(format!("{:.2}", s.speedup_x), "1.67");
    assert_eq!(format!("{:.1}", s.pct_decrease), "40.1");
    assert!(speedup(0.0, 1.0).is_err());
    assert!(speedup(1.0, -1.0).is_err());
}

#[test]
fn consistent_table_pairs_from_synthetic_timings() {
    // reported speedups of the pruning rows, converted to a timing against a 100 ms baseline
    for (x, pct) in [(1.43, "30.1"), (1.67, "40.1"), (2.25, "55.6")] {
        let s = speedup(100.0, 100.0 / x).unwrap();
        assert_eq!(format!("{:.2}", s.speedup_x), format!("{x:.2}"));
        assert_eq!(format!("{:.1}", s.pct_decrease), pct);
    }
    // and the other way round from the printed decreases
    for (pct, x) in [(30.11, "1.43"), (40.21, "1.67"), (55.6, "2.25")] {
        let s = speedup(100.0, 100.0 - pct).unwrap();
        assert_eq!(format!("{:.2}", s.speedup_x), x);
    }
    // 59.06% cannot sit next to 2.56x
    let s = speedup(100.0, 100.0 - 59.06).unwrap();
    assert_ne!(format!("{:.2}", s.speedup_x), "2.56");
}

proptest! {
    #[test]
    fn pct_and_speedup_agree(tb in 1e-3f64..1e4, t in 1e-3f64..1e4) {
        let s = speedup(tb, t).unwrap();
        let from_x = (1.0 - 1.0 / s.speedup_x) * 100.0;
        prop_assert!((s.pct_decrease - from_x).abs() <= 1e-9 * from_x.abs().max(1.0));
    }
}

fn reference_rows() -> Vec<ExperimentResult> {
    let base = ExperimentResult::baseline("Baseline", 238_000_000, 100.0, 92.43, 0.006135);
    let rows = [
        ("25% pruning", 223_000_000, 100.0 / 1.43, 92.29, 0.002735),
        ("50% pruning", 209_000_000, 100.0 / 1.67, 91.81, 0.002663),
        ("75% pruning", 195_000_000, 100.0 / 2.25, 90.11, 0.001335),
        (
            "25% pruning + knowledge distillation",
            223_000_000,
            100.0 / 2.56,
            92.18,
            0.003464,
        ),
        (
            "50% pruning + knowledge distillation",
            209_000_000,
            100.0 / 2.32,
            91.49,
            0.003301,
        ),
        (
            "75% pruning + knowledge distillation",
            195_000_000,
            100.0 / 2.25,
            90.55,
            0.003723,
        ),
    ];
    let mut out = vec![base.clone()];
    for (name, p, t, acc, co2) in rows {
        out.push(ExperimentResult::relative_to(&base, name, p, t, acc, co2).unwrap());
    }
    out
}

#[test]
fn baseline_cells_match_the_reference_table() {
    let cells = table_cells(&reference_rows());
    assert_eq!(cells[0][1..], ["238", "-", "-", "92.43", "0.006135"]);
    assert_eq!(cells[1][1], "223");
    assert_eq!(cells[1][4], "92.29");
    assert_eq!(cells[3][3], "55.56(2.25x)");
}

#[test]
fn csv_table_has_headers_and_seven_rows() {
    let text = emit_results_table(&reference_rows(), TableFormat::Csv).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(headers, TABLE_HEADERS);
    let records: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 7);
    assert_eq!(&records[0][2], "-");
    assert_eq!(&records[0][3], "-");
    assert_eq!(&records[6][0], "75% pruning + knowledge distillation");
}

#[test]
fn markdown_table_shape() {
    let text = emit_results_table(&reference_rows()[..1], TableFormat::Markdown).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains("% decrease in inference time/ Time Speed up"));
    assert_eq!(lines[2], "| Baseline | 238 | - | - | 92.43 | 0.006135 |");
    assert!(emit_results_table(&[], TableFormat::Markdown).is_err());
}

#[test]
fn small_models_keep_parameter_digits() {
    let base = ExperimentResult::baseline("Baseline", 81_234, 1.0, 90.0, 0.0);
    assert_eq!(table_cells(&[base])[0][1], "0.0812");
}

fn parse_plot(text: &str) -> Vec<(f64, f64, String)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        r.headers().unwrap(),
        vec!["median_latency_ms", "accuracy_pct", "label"]
    );
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (
                rec[0].parse().unwrap(),
                rec[1].parse().unwrap(),
                rec[2].to_string(),
            )
        })
        .collect()
}

#[test]
fn accuracy_vs_time_sorted_and_round_trips() {
    let rows = reference_rows();
    let parsed = parse_plot(&emit_accuracy_vs_time(&rows).unwrap());
    assert_eq!(parsed.len(), 7);
    assert!(parsed.windows(2).all(|w| w[0].0 <= w[1].0));
    for (t, acc, name) in &parsed {
        let r = rows.iter().find(|r| &r.name == name).unwrap();
        assert_eq!((*t, *acc), (r.median_latency_ms, r.accuracy_pct));
    }
    // 75% pruning and its KD twin share a latency; the name breaks the tie
    assert_eq!(parsed[2].2, "75% pruning");
    assert_eq!(parsed[3].2, "75% pruning + knowledge distillation");
}

#[test]
fn accuracy_vs_time_three_rows() {
    let rows = [
        ExperimentResult::baseline("c", 1, 3.0, 1.0, 0.0),
        ExperimentResult::baseline("a", 1, 1.5, 2.0, 0.0),
        ExperimentResult::baseline("b", 1, 2.25, 3.0, 0.0),
    ];
    let labels: Vec<String> = parse_plot(&emit_accuracy_vs_time(&rows).unwrap())
        .into_iter()
        .map(|r| r.2)
        .collect();
    assert_eq!(labels, ["a", "b", "c"]);
}

#[test]
fn latency_protocol() {
    let spec = BatchSpec {
        batch_size: 2,
        seq_len: 4,
    };
    let mut calls = 0;
    let r = measure_latency_on(
        || {
            calls += 1;
            Ok(())
        },
        spec,
        2,
        7,
    )
    .unwrap();
    assert_eq!(calls, 9);
    assert_eq!(
        (r.warmup_runs, r.measured_runs, r.batch_size, r.seq_len),
        (2, 7, 2, 4)
    );
    assert!(r.p10_ms <= r.median_ms && r.median_ms <= r.p90_ms);
    assert!(measure_latency_on(|| Ok(()), spec, 1, 4).is_err());
    assert!(measure_latency_on(|| Ok(()), spec, 0, 5).is_err());

    let model = TransformerClassifier::new(
        ModelConfig {
            dropout_rate: 0.0,
            ..ModelConfig::default()
        },
        Dtype::F32,
        0,
    )
    .unwrap();
    let a = measure_latency(
        &model,
        BatchSpec {
            batch_size: 8,
            seq_len: 16,
        },
        2,
        9,
        0,
    )
    .unwrap();
    assert!(a.median_ms > 0.0);
    assert!(measure_latency(
        &model,
        BatchSpec {
            batch_size: 8,
            seq_len: 17
        },
        2,
        9,
        0
    )
    .is_err());
}

#[test]
fn interleaved_protocol() {
    let cfg = ModelConfig {
        dropout_rate: 0.0,
        ..ModelConfig::default()
    };
    let a = TransformerClassifier::new(cfg.clone(), Dtype::F32, 0).unwrap();
    let b = TransformerClassifier::new(
        ModelConfig {
            max_seq_len: 8,
            ..cfg
        },
        Dtype::F32,
        1,
    )
    .unwrap();
    let spec = BatchSpec {
        batch_size: 2,
        seq_len: 8,
    };
    let reports = measure_latency_interleaved(&[&a, &b], spec, 1, 5, 0).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports
        .iter()
        .all(|r| r.measured_runs == 5 && r.p10_ms <= r.median_ms && r.median_ms <= r.p90_ms));
    assert!(measure_latency_interleaved(&[&a], spec, 1, 4, 0).is_err());
    let long = BatchSpec {
        batch_size: 2,
        seq_len: 9,
    };
    assert!(measure_latency_interleaved(&[&a, &b], long, 1, 5, 0).is_err());
}
