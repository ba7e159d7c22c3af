//! Config-driven runs: baseline training, pruning, distillation, latency
//! benchmarks and the full experiment matrix.
//!
//! Every command writes under `output_dir`. Learning metrics go to
//! `metrics.json`, keyed by checkpoint stem, and are seed-deterministic;
//! timings are kept out of that file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::amp::AmpConfig;
use crate::bench::{
    emit_accuracy_vs_time, emit_results_table, measure_latency, measure_latency_interleaved,
    speedup, BatchSpec, EnergyReport, ExperimentResult, LatencyReport, Speedup, TableFormat,
};
use crate::data::{
    encode_dataset, generate_synthetic, load_dataset, split, DataFormat, Dataset, EncodedExample,
    SplitRatios, SyntheticSpec,
};
use crate::distill::{distill_train, DistillConfig};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::{
    evaluate_masked, ModelConfig, ParameterCount, TransformerClassifier, Vocabulary,
};
use crate::pruning::{compact, prune_train, PruneConfig, PruningState, SparsityReport};
use crate::tensor::Dtype;
use crate::train::{fine_tune, TrainOptions};

/// Retained fractions of the matrix: 25, 50 and 75% pruning.
pub const MATRIX_THRESHOLDS: [f64; 3] = [0.75, 0.5, 0.25];
pub const BASELINE_NAME: &str = "Baseline";
pub const KD_SUFFIX: &str = " + knowledge distillation";
pub const AMP_SUFFIX: &str = " (amp)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct DataConfig {
    /// A JSONL or CSV file; the synthetic corpus is used when absent.
    pub path: Option<PathBuf>,
    /// Inferred from the extension when absent.
    pub format: Option<DataFormat>,
    pub synthetic: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub warmup: usize,
    pub repeats: usize,
    pub batch_size: usize,
    /// 0 means the model's `max_seq_len`.
    pub seq_len: usize,
    /// Modeled constant power draw during training runs.
    pub power_w: f64,
    /// Grid carbon intensity. Required for any CO2 figure; there is no default.
    pub intensity_kg_per_kwh: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup: 3,
            repeats: 21,
            batch_size: 32,
            seq_len: 0,
            power_w: 0.0,
            intensity_kg_per_kwh: None,
        }
    }
}

impl BenchConfig {
    fn spec(&self, model: &ModelConfig) -> BatchSpec {
        BatchSpec {
            batch_size: self.batch_size,
            seq_len: if self.seq_len == 0 {
                model.max_seq_len
            } else {
                self.seq_len
            },
        }
    }

    fn intensity(&self) -> Result<f64> {
        self.intensity_kg_per_kwh
            .ok_or_else(|| Error::config("bench.intensity_kg_per_kwh must be set to estimate CO2"))
    }
}

/// One JSON document describing a run.
///
/// `model.vocab_size` caps the vocabulary built from the training split;
/// the effective size and `n_classes` come from the data. `seed` drives the
/// split, initialization, batching and dropout of every phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub split: SplitRatios,
    pub seed: u64,
    pub train: TrainOptions,
    pub prune: PruneConfig,
    pub distill: DistillConfig,
    pub amp: AmpConfig,
    pub bench: BenchConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            data: DataConfig::default(),
            split: SplitRatios::default(),
            seed: 0,
            train: TrainOptions::default(),
            prune: PruneConfig::default(),
            distill: DistillConfig::default(),
            amp: AmpConfig::default(),
            bench: BenchConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn merge(base: &mut Value, patch: Value, at: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if at.is_empty() {
                    k.clone()
                } else {
                    format!("{at}.{k}")
                };
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| Error::config(format!("unknown key {key}")))?;
                merge(slot, v, &key)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Apply one `dot.path=value` assignment. The value is parsed as JSON and
/// taken as a plain string if that fails.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut patch = value;
    for key in path.rsplit('.') {
        if key.is_empty() {
            return Err(Error::config(format!("bad override path {path:?}")));
        }
        patch = Value::Object([(key.to_owned(), patch)].into_iter().collect());
    }
    merge(doc, patch, "")
}

impl ExperimentConfig {
    /// Defaults, then the JSON document `text`, then each override in order.
    pub fn from_sources(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(ExperimentConfig::default())?;
        if let Some(text) = text {
            let file: Value =
                serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
            merge(&mut doc, file, "")?;
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(doc).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = path.map(fs::read_to_string).transpose()?;
        Self::from_sources(text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.split.validate()?;
        self.train.validate()?;
        self.prune.validate()?;
        self.distill.validate()?;
        self.amp.validate()?;
        if self.data.path.is_none() {
            self.data.synthetic.validate()?;
        }
        let b = &self.bench;
        if b.warmup < 1 || b.repeats < 5 || b.batch_size == 0 {
            return Err(Error::config(
                "bench needs warmup >= 1, repeats >= 5, batch_size >= 1",
            ));
        }
        if b.seq_len > self.model.max_seq_len {
            return Err(Error::config("bench.seq_len exceeds model.max_seq_len"));
        }
        if !(b.power_w >= 0.0) || b.intensity_kg_per_kwh.is_some_and(|i| !(i >= 0.0)) {
            return Err(Error::config(
                "bench power and carbon intensity must be non-negative",
            ));
        }
        Ok(())
    }

    fn train_options(&self, offset: u64) -> TrainOptions {
        TrainOptions {
            seed: self.seed.wrapping_add(offset),
            ..self.train.clone()
        }
    }
}

/// Encoded splits plus the vocabulary and class list they were encoded with.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocabulary: Vocabulary,
    pub classes: Vec<String>,
    pub train: Vec<EncodedExample>,
    pub val: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
}

fn load_examples(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data.path {
        None => generate_synthetic(&cfg.data.synthetic),
        Some(path) => {
            let format = cfg
                .data
                .format
                .or_else(|| DataFormat::from_path(path))
                .ok_or_else(|| Error::config("data.format must be set for this file extension"))?;
            load_dataset(path, format)
        }
    }
}

fn encode_splits(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    vocabulary: Option<Vocabulary>,
    classes: Vec<String>,
) -> Result<PreparedData> {
    let parts = split(&dataset.examples, &cfg.split, cfg.seed)?;
    let vocabulary = match vocabulary {
        Some(v) => v,
        None => Vocabulary::build(
            parts.train.iter().map(|e| e.text.as_str()),
            cfg.model.vocab_size,
        )?,
    };
    let len = cfg.model.max_seq_len;
    let enc = |xs: &[_]| encode_dataset(xs, &vocabulary, &classes, len);
    Ok(PreparedData {
        train: enc(&parts.train)?,
        val: enc(&parts.val)?,
        test: enc(&parts.test)?,
        vocabulary,
        classes,
    })
}

/// Load or generate the corpus, split it, and build a vocabulary from the
/// training split.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let dataset = load_examples(cfg)?;
    let classes = dataset.classes.clone();
    encode_splits(cfg, &dataset, None, classes)
}

/// Same splits, encoded with a checkpoint's vocabulary and classes.
pub fn prepare_data_for(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> Result<PreparedData> {
    let dataset = load_examples(cfg)?;
    if dataset.classes != ckpt.classes {
        return Err(Error::config(format!(
            "checkpoint classes {:?} do not match the data's {:?}",
            ckpt.classes, dataset.classes
        )));
    }
    if ckpt.model.config().max_seq_len != cfg.model.max_seq_len {
        return Err(Error::config(
            "checkpoint max_seq_len differs from model.max_seq_len",
        ));
    }
    encode_splits(
        cfg,
        &dataset,
        Some(ckpt.vocabulary.clone()),
        ckpt.classes.clone(),
    )
}

/// `cfg.model` with vocabulary size and class count taken from the data.
pub fn model_config(cfg: &ExperimentConfig, data: &PreparedData) -> ModelConfig {
    ModelConfig {
        vocab_size: data.vocabulary.len(),
        n_classes: data.classes.len(),
        ..cfg.model.clone()
    }
}

/// Learning metrics for one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub experiment: String,
    pub seed: u64,
    pub val_accuracy_pct: f64,
    /// The headline figure.
    pub test_accuracy_pct: f64,
    pub parameters: ParameterCount,
    pub losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kd_loss: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<SparsityReport>,
    pub skipped_steps: usize,
}

fn accuracies(
    model: &TransformerClassifier,
    masks: Option<&PruningState>,
    data: &PreparedData,
) -> Result<(f64, f64)> {
    Ok((
        100.0 * evaluate_masked(model, &data.val, masks)?,
        100.0 * evaluate_masked(model, &data.test, masks)?,
    ))
}

fn write_metrics(dir: &Path, key: &str, metrics: &RunMetrics) -> Result<()> {
    let path = dir.join("metrics.json");
    let mut all: BTreeMap<String, Value> = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };
    all.insert(key.to_owned(), serde_json::to_value(metrics)?);
    fs::write(path, serde_json::to_string_pretty(&all)? + "\n")?;
    Ok(())
}

fn output_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(&cfg.output_dir)
}

fn stem_for(fraction: f64, kd: bool, amp: bool) -> String {
    let pct = ((1.0 - fraction) * 100.0).round() as i64;
    format!(
        "pruned-{pct}{}{}",
        if kd { "-kd" } else { "" },
        if amp { "-amp" } else { "" }
    )
}

/// Baseline training on the prepared data.
pub fn train_baseline(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    amp: &AmpConfig,
) -> Result<(TransformerClassifier, RunMetrics)> {
    let mut model = TransformerClassifier::new(model_config(cfg, data), Dtype::F32, cfg.seed)?;
    let log = fine_tune(&mut model, &data.train, &cfg.train_options(0), amp)?;
    let (val, test) = accuracies(&model, None, data)?;
    let metrics = RunMetrics {
        experiment: BASELINE_NAME.into(),
        seed: cfg.seed,
        val_accuracy_pct: val,
        test_accuracy_pct: test,
        parameters: model.count_parameters(),
        losses: log.step_losses,
        kd_loss: None,
        sparsity: None,
        skipped_steps: log.skipped_steps,
    };
    Ok((model, metrics))
}

/// A pruned model, compacted when its blocks allow it.
#[derive(Clone, Debug)]
pub struct PrunedModel {
    pub model: TransformerClassifier,
    /// Present only when the masks could not be folded into a smaller model.
    pub masks: Option<PruningState>,
    pub metrics: RunMetrics,
}

fn compactable(cfg: &PruneConfig, model: &ModelConfig) -> bool {
    cfg.block_cols == 0 || cfg.block_cols == model.d_model
}

/// Prune a copy of `baseline` down to `prune.final_threshold`.
pub fn prune_phase(
    cfg: &ExperimentConfig,
    baseline: &TransformerClassifier,
    data: &PreparedData,
    prune: &PruneConfig,
    amp: &AmpConfig,
) -> Result<PrunedModel> {
    let mut model = baseline.clone();
    let outcome = prune_train(&mut model, &data.train, prune, &cfg.train_options(1), amp)?;
    let (model, masks) = if compactable(prune, model.config()) {
        (compact(&model, &outcome.state)?, None)
    } else {
        (model, Some(outcome.state))
    };
    let (val, test) = accuracies(&model, masks.as_ref(), data)?;
    let metrics = RunMetrics {
        experiment: prune.experiment_name(),
        seed: cfg.seed,
        val_accuracy_pct: val,
        test_accuracy_pct: test,
        parameters: model.count_parameters(),
        losses: outcome.log.losses,
        kd_loss: None,
        sparsity: Some(outcome.report),
        skipped_steps: outcome.log.skipped_steps,
    };
    Ok(PrunedModel {
        model,
        masks,
        metrics,
    })
}

/// Distill `teacher` into `student` in place, keeping its masks fixed.
pub fn distill_phase(
    cfg: &ExperimentConfig,
    teacher: &TransformerClassifier,
    student: &mut TransformerClassifier,
    mut masks: Option<&mut PruningState>,
    data: &PreparedData,
    amp: &AmpConfig,
    name: &str,
) -> Result<RunMetrics> {
    let log = distill_train(
        teacher,
        student,
        masks.as_deref_mut(),
        &data.train,
        &cfg.distill,
        amp,
        cfg.seed.wrapping_add(2),
    )?;
    let (val, test) = accuracies(student, masks.as_deref(), data)?;
    Ok(RunMetrics {
        experiment: name.into(),
        seed: cfg.seed,
        val_accuracy_pct: val,
        test_accuracy_pct: test,
        parameters: student.count_parameters(),
        losses: log.losses,
        kd_loss: Some(log.kd_terms),
        sparsity: None,
        skipped_steps: log.skipped_steps,
    })
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub checkpoint: PathBuf,
    pub metrics: RunMetrics,
}

/// Train the baseline (teacher) and write `baseline.ckpt`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = output_dir(cfg)?;
    let data = prepare_data(cfg)?;
    let (model, metrics) = train_baseline(cfg, &data, &cfg.amp)?;
    let checkpoint = dir.join("baseline.ckpt");
    Checkpoint {
        model,
        vocabulary: data.vocabulary,
        classes: data.classes,
        pruning: None,
    }
    .save(&checkpoint)?;
    write_metrics(dir, "baseline", &metrics)?;
    Ok(RunSummary {
        checkpoint,
        metrics,
    })
}

/// Prune a baseline checkpoint to `prune.final_threshold` and write
/// `pruned-{pct}.ckpt`.
pub fn cmd_prune(cfg: &ExperimentConfig, baseline: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = output_dir(cfg)?;
    let ckpt = Checkpoint::load(baseline)?;
    if ckpt.pruning.is_some() {
        return Err(Error::config("prune expects an unpruned checkpoint"));
    }
    let data = prepare_data_for(cfg, &ckpt)?;
    let pruned = prune_phase(cfg, &ckpt.model, &data, &cfg.prune, &cfg.amp)?;
    let stem = stem_for(cfg.prune.final_threshold, false, cfg.amp.enabled);
    let checkpoint = dir.join(format!("{stem}.ckpt"));
    Checkpoint {
        model: pruned.model,
        vocabulary: ckpt.vocabulary,
        classes: ckpt.classes,
        pruning: pruned.masks,
    }
    .save(&checkpoint)?;
    write_metrics(dir, &stem, &pruned.metrics)?;
    Ok(RunSummary {
        checkpoint,
        metrics: pruned.metrics,
    })
}

/// Distill a teacher checkpoint into a student checkpoint, writing
/// `{student}-kd.ckpt`.
pub fn cmd_distill(cfg: &ExperimentConfig, teacher: &Path, student: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = output_dir(cfg)?;
    let t = Checkpoint::load(teacher)?;
    let mut s = Checkpoint::load(student)?;
    if t.classes != s.classes {
        return Err(Error::config(format!(
            "teacher classes {:?} differ from student classes {:?}",
            t.classes, s.classes
        )));
    }
    if t.vocabulary != s.vocabulary {
        return Err(Error::config("teacher and student vocabularies differ"));
    }
    let data = prepare_data_for(cfg, &s)?;
    let stem = student
        .file_stem()
        .and_then(|x| x.to_str())
        .unwrap_or("student")
        .to_owned();
    let name = format!("{stem}{KD_SUFFIX}");
    let metrics = distill_phase(
        cfg,
        &t.model,
        &mut s.model,
        s.pruning.as_mut(),
        &data,
        &cfg.amp,
        &name,
    )?;
    let key = format!("{stem}-kd");
    let checkpoint = dir.join(format!("{key}.ckpt"));
    s.save(&checkpoint)?;
    write_metrics(dir, &key, &metrics)?;
    Ok(RunSummary {
        checkpoint,
        metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub checkpoint: PathBuf,
    pub parameters: usize,
    pub test_accuracy_pct: f64,
    pub latency: LatencyReport,
    /// Relative to the first checkpoint.
    pub speedup: Option<Speedup>,
}

/// Inference latency of each checkpoint, the first serving as baseline.
/// Writes `bench.json`.
pub fn cmd_bench(cfg: &ExperimentConfig, checkpoints: &[PathBuf]) -> Result<Vec<BenchEntry>> {
    cfg.validate()?;
    if checkpoints.is_empty() {
        return Err(Error::config("bench needs at least one checkpoint"));
    }
    let dir = output_dir(cfg)?;
    let mut loaded = Vec::with_capacity(checkpoints.len());
    for path in checkpoints {
        let ckpt = Checkpoint::load(path)?;
        let data = prepare_data_for(cfg, &ckpt)?;
        let test = 100.0 * evaluate_masked(&ckpt.model, &data.test, ckpt.pruning.as_ref())?;
        loaded.push((ckpt, test));
    }
    let models: Vec<&TransformerClassifier> = loaded.iter().map(|(c, _)| &c.model).collect();
    let spec = cfg.bench.spec(models[0].config());
    let reports =
        measure_latency_interleaved(&models, spec, cfg.bench.warmup, cfg.bench.repeats, cfg.seed)?;
    let base_ms = reports[0].median_ms;
    let mut out = Vec::with_capacity(loaded.len());
    for (i, ((ckpt, test), latency)) in loaded.iter().zip(reports).enumerate() {
        out.push(BenchEntry {
            checkpoint: checkpoints[i].clone(),
            parameters: ckpt.model.count_parameters().total,
            test_accuracy_pct: *test,
            speedup: if i == 0 {
                None
            } else {
                Some(speedup(base_ms, latency.median_ms)?)
            },
            latency,
        });
    }
    fs::write(
        dir.join("bench.json"),
        serde_json::to_string_pretty(&out)? + "\n",
    )?;
    Ok(out)
}

/// Write `results.json`, `results.csv`, `results.md` and `accuracy_vs_time.csv`.
pub fn write_results(dir: &Path, rows: &[ExperimentResult]) -> Result<()> {
    fs::write(
        dir.join("results.json"),
        serde_json::to_string_pretty(rows)? + "\n",
    )?;
    fs::write(
        dir.join("results.csv"),
        emit_results_table(rows, TableFormat::Csv)?,
    )?;
    fs::write(
        dir.join("results.md"),
        emit_results_table(rows, TableFormat::Markdown)?,
    )?;
    fs::write(
        dir.join("accuracy_vs_time.csv"),
        emit_accuracy_vs_time(rows)?,
    )?;
    Ok(())
}

/// Regenerate the report files from `results.json` in `dir`; returns the
/// markdown table.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let text = fs::read_to_string(dir.join("results.json"))?;
    let rows: Vec<ExperimentResult> = serde_json::from_str(&text)?;
    write_results(dir, &rows)?;
    emit_results_table(&rows, TableFormat::Markdown)
}

struct MatrixRun<'c> {
    cfg: &'c ExperimentConfig,
    dir: &'c Path,
    data: PreparedData,
    intensity: f64,
    reference: Option<ExperimentResult>,
}

impl MatrixRun<'_> {
    fn save(
        &self,
        stem: &str,
        model: &TransformerClassifier,
        masks: Option<&PruningState>,
    ) -> Result<()> {
        Checkpoint {
            model: model.clone(),
            vocabulary: self.data.vocabulary.clone(),
            classes: self.data.classes.clone(),
            pruning: masks.cloned(),
        }
        .save(&self.dir.join(format!("{stem}.ckpt")))
    }

    fn latency(&self, model: &TransformerClassifier) -> Result<f64> {
        let b = &self.cfg.bench;
        Ok(measure_latency(
            model,
            b.spec(model.config()),
            b.warmup,
            b.repeats,
            self.cfg.seed,
        )?
        .median_ms)
    }

    fn row(
        &mut self,
        metrics: &RunMetrics,
        model: &TransformerClassifier,
        seconds: f64,
    ) -> Result<ExperimentResult> {
        let latency = self.latency(model)?;
        let co2 = EnergyReport::new(seconds, self.cfg.bench.power_w, self.intensity)?.co2_kg;
        let params = metrics.parameters.total;
        let acc = metrics.test_accuracy_pct;
        log::info!(
            "{}: {acc:.2}% test accuracy, {params} parameters, {latency:.3} ms, {seconds:.1} s",
            metrics.experiment
        );
        match &self.reference {
            None => {
                let base =
                    ExperimentResult::baseline(&metrics.experiment, params, latency, acc, co2);
                self.reference = Some(base.clone());
                Ok(base)
            }
            Some(base) => {
                ExperimentResult::relative_to(base, &metrics.experiment, params, latency, acc, co2)
            }
        }
    }

    /// Baseline, the three pruning levels, then the three distilled students.
    fn variant(&mut self, amp: &AmpConfig, done: &mut Vec<ExperimentResult>) -> Result<()> {
        let cfg = self.cfg;
        let suffix = if amp.enabled { AMP_SUFFIX } else { "" };
        let tag = if amp.enabled { "-amp" } else { "" };
        let start = Instant::now();
        let base_name = format!("{BASELINE_NAME}{suffix}");
        let (teacher, mut metrics) =
            train_baseline(cfg, &self.data, amp).map_err(|e| e.in_experiment(&base_name))?;
        let train_s = start.elapsed().as_secs_f64();
        metrics.experiment = base_name.clone();
        let stem = format!("baseline{tag}");
        self.save(&stem, &teacher, None)?;
        write_metrics(self.dir, &stem, &metrics)?;
        let row = self
            .row(&metrics, &teacher, train_s)
            .map_err(|e| e.in_experiment(&base_name))?;
        let mut pruned_rows = vec![row];
        let mut kd_rows = Vec::new();
        let dir = self.dir;
        let flush = |p: &[ExperimentResult], k: &[ExperimentResult], done: &[ExperimentResult]| {
            let all: Vec<_> = done.iter().chain(p).chain(k).cloned().collect();
            write_results(dir, &all)
        };
        flush(&pruned_rows, &kd_rows, done)?;
        for fraction in MATRIX_THRESHOLDS {
            let prune = PruneConfig {
                final_threshold: fraction,
                ..cfg.prune.clone()
            };
            let name = format!("{}{suffix}", prune.experiment_name());
            let start = Instant::now();
            let mut pruned = prune_phase(cfg, &teacher, &self.data, &prune, amp)
                .map_err(|e| e.in_experiment(&name))?;
            let prune_s = start.elapsed().as_secs_f64();
            pruned.metrics.experiment = name.clone();
            let stem = stem_for(fraction, false, amp.enabled);
            self.save(&stem, &pruned.model, pruned.masks.as_ref())?;
            write_metrics(self.dir, &stem, &pruned.metrics)?;
            let row = self
                .row(&pruned.metrics, &pruned.model, prune_s)
                .map_err(|e| e.in_experiment(&name))?;
            pruned_rows.push(row);
            flush(&pruned_rows, &kd_rows, done)?;

            let kd_name = format!("{}{KD_SUFFIX}{suffix}", prune.experiment_name());
            let start = Instant::now();
            let mut student = pruned.model;
            let mut masks = pruned.masks;
            let metrics = distill_phase(
                cfg,
                &teacher,
                &mut student,
                masks.as_mut(),
                &self.data,
                amp,
                &kd_name,
            )
            .map_err(|e| e.in_experiment(&kd_name))?;
            let kd_s = start.elapsed().as_secs_f64() + prune_s;
            let stem = stem_for(fraction, true, amp.enabled);
            self.save(&stem, &student, masks.as_ref())?;
            write_metrics(self.dir, &stem, &metrics)?;
            let row = self
                .row(&metrics, &student, kd_s)
                .map_err(|e| e.in_experiment(&kd_name))?;
            kd_rows.push(row);
            flush(&pruned_rows, &kd_rows, done)?;
        }
        done.extend(pruned_rows);
        done.extend(kd_rows);
        Ok(())
    }
}

/// Baseline, 25/50/75% pruning and 25/50/75% pruning with distillation,
/// all measured against one baseline. With `amp.enabled` the same seven
/// runs are repeated in mixed precision and appended with an "(amp)" suffix.
/// Report files are rewritten after every row so a failure keeps what
/// finished.
pub fn cmd_matrix(cfg: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    cfg.validate()?;
    let intensity = cfg.bench.intensity()?;
    let dir = output_dir(cfg)?;
    let mut run = MatrixRun {
        cfg,
        dir,
        data: prepare_data(cfg)?,
        intensity,
        reference: None,
    };
    let mut rows = Vec::new();
    run.variant(&AmpConfig::default(), &mut rows)?;
    if cfg.amp.enabled {
        run.variant(&cfg.amp, &mut rows)?;
    }
    Ok(rows)
}
