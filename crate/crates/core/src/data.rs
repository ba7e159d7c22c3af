//! Labeled text datasets: loading, splitting, encoding, and a synthetic
//! topic corpus.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vocabulary;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Guess from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(DataFormat::Jsonl),
            "csv" => Some(DataFormat::Csv),
            _ => None,
        }
    }
}

/// Examples plus the sorted set of class names; a label's index is its
/// position in `classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub classes: Vec<String>,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>) -> Self {
        let classes = examples
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Dataset { examples, classes }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes
            .binary_search_by(|c| c.as_str().cmp(label))
            .ok()
    }
}

#[derive(Deserialize)]
struct Record {
    text: Option<String>,
    label: Option<String>,
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn require(path: &Path, line: usize, r: Record) -> Result<LabeledExample> {
    let text = r
        .text
        .ok_or_else(|| parse_error(path, line, "missing field \"text\""))?;
    let label = r
        .label
        .ok_or_else(|| parse_error(path, line, "missing field \"label\""))?;
    Ok(LabeledExample { text, label })
}

/// Read examples in file order. Line numbers in errors are 1-based and count
/// the CSV header.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    let file = File::open(path)?;
    let examples = match format {
        DataFormat::Jsonl => load_jsonl(path, BufReader::new(file))?,
        DataFormat::Csv => load_csv(path, file)?,
    };
    if examples.is_empty() {
        return Err(parse_error(path, 1, "no examples"));
    }
    Ok(Dataset::new(examples))
}

fn load_jsonl(path: &Path, reader: impl BufRead) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        out.push(require(path, i + 1, record)?);
    }
    Ok(out)
}

fn load_csv(path: &Path, file: File) -> Result<Vec<LabeledExample>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    for want in ["text", "label"] {
        if !headers.iter().any(|h| h == want) {
            return Err(parse_error(
                path,
                1,
                format!("header lacks \"{want}\" column"),
            ));
        }
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .and_then(|i| row.get(i))
                .filter(|v| !v.is_empty() || name == "text")
                .map(str::to_owned)
        };
        let record = Record {
            text: field("text"),
            label: field("label"),
        };
        out.push(require(path, line, record)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&x| !(x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split ratios must be positive and sum to 1, got {r:?}"
            )));
        }
        Ok(())
    }

    /// Sizes for `n` items: floors for train and val, remainder to test.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The small slack keeps exact products like 0.1 * 10 from flooring down.
        let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let val = floor(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then contiguous cuts. Not stratified by class.
pub fn split<T: Clone>(examples: &[T], ratios: &SplitRatios, seed: u64) -> Result<Splits<T>> {
    ratios.validate()?;
    if examples.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 examples to split, got {}",
            examples.len()
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b, _) = ratios.sizes(examples.len());
    let take = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect();
    Ok(Splits {
        train: take(&order[..a]),
        val: take(&order[a..a + b]),
        test: take(&order[a + b..]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub examples_per_class: usize,
    pub vocab_per_class: usize,
    pub shared_vocab: usize,
    pub words_per_example: usize,
    pub class_word_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 4,
            examples_per_class: 1500,
            vocab_per_class: 24,
            shared_vocab: 96,
            words_per_example: 2,
            class_word_probability: 0.7,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_classes", self.n_classes),
            ("examples_per_class", self.examples_per_class),
            ("vocab_per_class", self.vocab_per_class),
            ("shared_vocab", self.shared_vocab),
            ("words_per_example", self.words_per_example),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("synthetic {name} must be positive")));
        }
        let p = self.class_word_probability;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::config(format!(
                "class_word_probability must be in (0, 1], got {p}"
            )));
        }
        Ok(())
    }

    pub fn class_name(k: usize) -> String {
        format!("class_{k}")
    }
}

/// Balanced topic corpus. Class `k` owns words `c{k}w{i}`; every class
/// shares words `s{i}`. Each word comes from the class vocabulary with
/// probability `class_word_probability`, else from the shared one.
/// Examples are interleaved by class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut examples = Vec::with_capacity(spec.n_classes * spec.examples_per_class);
    for _ in 0..spec.examples_per_class {
        for k in 0..spec.n_classes {
            let words: Vec<String> = (0..spec.words_per_example)
                .map(|_| {
                    if rng.gen_bool(spec.class_word_probability) {
                        format!("c{k}w{}", rng.gen_range(0..spec.vocab_per_class))
                    } else {
                        format!("s{}", rng.gen_range(0..spec.shared_vocab))
                    }
                })
                .collect();
            examples.push(LabeledExample {
                text: words.join(" "),
                label: SyntheticSpec::class_name(k),
            });
        }
    }
    Ok(Dataset::new(examples))
}

/// Token ids padded to a fixed length plus a class index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub label: usize,
}

/// Encode against `vocab` and the class list `classes`.
pub fn encode_dataset(
    examples: &[LabeledExample],
    vocab: &Vocabulary,
    classes: &[String],
    max_seq_len: usize,
) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|e| {
            let label = classes
                .iter()
                .position(|c| *c == e.label)
                .ok_or_else(|| Error::invalid(format!("unknown label {:?}", e.label)))?;
            Ok(EncodedExample {
                ids: vocab.encode(&e.text, max_seq_len),
                label,
            })
        })
        .collect()
}
