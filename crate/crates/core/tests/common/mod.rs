#![allow(dead_code)]

use slimbert::model::{ModelConfig, TokenBatch, TransformerClassifier};
use slimbert::pruning::PruningState;
use slimbert::tensor::{cross_entropy, Dtype, Tape};

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        d_ffn: 16,
        n_classes: 3,
        max_seq_len: 5,
        dropout_rate: 0.0,
    }
}

/// Three rows, two of them padded.
pub fn tiny_batch() -> (TokenBatch, Vec<usize>) {
    let rows = vec![
        vec![2, 5, 7, 3, 11],
        vec![4, 9, 0, 0, 0],
        vec![1, 6, 10, 8, 0],
    ];
    (TokenBatch::new(&rows).unwrap(), vec![0, 2, 1])
}

/// Loss through the inference entry point; no backward pass involved.
pub fn eval_loss(
    model: &TransformerClassifier,
    batch: &TokenBatch,
    labels: &[usize],
    pruning: Option<&PruningState>,
) -> f64 {
    let logits = model.logits_masked(batch, pruning).unwrap();
    cross_entropy(&logits, labels).unwrap()
}

/// Analytic gradients of every parameter, in `named_params` order.
pub fn tape_grads(
    model: &TransformerClassifier,
    batch: &TokenBatch,
    labels: &[usize],
    pruning: Option<&PruningState>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut tape = Tape::new(Dtype::F64);
    let out = model
        .forward(&mut tape, batch, pruning, pruning.is_some(), None)
        .unwrap();
    let loss = tape.cross_entropy(out.logits, labels).unwrap();
    let g = tape.backward(loss).unwrap();
    let params = out
        .params
        .iter()
        .map(|&v| g.get_or_zeros(v, tape.value(v).len()))
        .collect();
    let scores = out
        .scores
        .iter()
        .flatten()
        .map(|&v| g.get_or_zeros(v, tape.value(v).len()))
        .collect();
    (params, scores)
}

/// Fourth-order central differences of `loss` with respect to every
/// parameter entry.
pub fn numeric_grads(
    model: &TransformerClassifier,
    h: f64,
    loss: impl Fn(&TransformerClassifier) -> f64,
) -> Vec<Vec<f64>> {
    let mut probe = model.clone();
    let n_params = model.named_params().len();
    let mut out = Vec::with_capacity(n_params);
    for p in 0..n_params {
        let base = model.named_params()[p].tensor.data().to_vec();
        let mut grads = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut at = |delta: f64| {
                let mut x = base.clone();
                x[i] += delta;
                probe.params_mut()[p].assign(&x).unwrap();
                loss(&probe)
            };
            let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            grads[i] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        }
        probe.params_mut()[p].assign(&base).unwrap();
        out.push(grads);
    }
    out
}

/// Relative error with a floor so entries near zero compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| rel_err(*p, *q))
        })
        .fold(0.0, f64::max)
}

/// Fill every bias and layer-norm shift with small seeded values.
pub fn randomize_biases(model: &mut TransformerClassifier, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = model.named_params().into_iter().map(|p| p.name).collect();
    for (name, p) in names.iter().zip(model.params_mut()) {
        if p.shape().len() == 1 && !name.ends_with("gamma") {
            let v: Vec<f64> = (0..p.numel()).map(|_| rng.gen_range(-0.5..0.5)).collect();
            p.assign(&v).unwrap();
        }
    }
}
