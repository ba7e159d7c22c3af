//! Miniature BERT-style encoder classifier.
//!
//! Post-LN encoder blocks (multi-head self-attention, GELU feed-forward),
//! mean pooling over non-pad positions, and a linear head. Linear weights
//! are stored `[out × in]`, so FFN intermediate units are rows of `w_in`
//! and columns of `w_out`, and attention heads are row bands of the Q/K/V
//! projections and column bands of the output projection.

pub mod checkpoint;
mod vocab;

pub use vocab::{Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EncodedExample;
use crate::error::{Error, Result};
use crate::pruning::PruningState;
use crate::tensor::{kernels, Dtype, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;
/// Additive attention bias for pad keys; finite so it survives binary16.
const PAD_BIAS: f64 = -1.0e4;
const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub n_classes: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 512,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            d_ffn: 64,
            n_classes: 4,
            max_seq_len: 16,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
            ("n_classes", self.n_classes),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("model.{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ffn < self.n_heads {
            return Err(Error::config("d_ffn must be at least n_heads"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must be in [0, 1)"));
        }
        Ok(())
    }

    /// Parameter counts of a dense model with this config, without building it.
    pub fn parameter_count(&self) -> ParameterCount {
        let (d, f) = (self.d_model, self.d_ffn);
        let embedding = (self.vocab_size + self.max_seq_len) * d;
        let attention = self.n_layers * (4 * (d * d + d) + 2 * d);
        let ffn = self.n_layers * (2 * d * f + f + d + 2 * d);
        let head = d * self.n_classes + self.n_classes;
        ParameterCount {
            embedding,
            attention,
            ffn,
            head,
            total: embedding + attention + ffn + head,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Per-layer parameter slots, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerParam {
    Wq,
    Bq,
    Wk,
    Bk,
    Wv,
    Bv,
    Wo,
    Bo,
    AttnNormGamma,
    AttnNormBeta,
    WIn,
    BIn,
    WOut,
    BOut,
    FfnNormGamma,
    FfnNormBeta,
}

impl LayerParam {
    pub const ALL: [LayerParam; 16] = [
        LayerParam::Wq,
        LayerParam::Bq,
        LayerParam::Wk,
        LayerParam::Bk,
        LayerParam::Wv,
        LayerParam::Bv,
        LayerParam::Wo,
        LayerParam::Bo,
        LayerParam::AttnNormGamma,
        LayerParam::AttnNormBeta,
        LayerParam::WIn,
        LayerParam::BIn,
        LayerParam::WOut,
        LayerParam::BOut,
        LayerParam::FfnNormGamma,
        LayerParam::FfnNormBeta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerParam::Wq => "attn.wq",
            LayerParam::Bq => "attn.bq",
            LayerParam::Wk => "attn.wk",
            LayerParam::Bk => "attn.bk",
            LayerParam::Wv => "attn.wv",
            LayerParam::Bv => "attn.bv",
            LayerParam::Wo => "attn.wo",
            LayerParam::Bo => "attn.bo",
            LayerParam::AttnNormGamma => "attn.norm.gamma",
            LayerParam::AttnNormBeta => "attn.norm.beta",
            LayerParam::WIn => "ffn.w_in",
            LayerParam::BIn => "ffn.b_in",
            LayerParam::WOut => "ffn.w_out",
            LayerParam::BOut => "ffn.b_out",
            LayerParam::FfnNormGamma => "ffn.norm.gamma",
            LayerParam::FfnNormBeta => "ffn.norm.beta",
        }
    }

    /// Layer norms count toward the sublayer they follow.
    pub fn category(self) -> ParamCategory {
        if (self as usize) < LayerParam::WIn as usize {
            ParamCategory::Attention
        } else {
            ParamCategory::Ffn
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamCategory {
    Embedding,
    Attention,
    Ffn,
    Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    params: [Tensor; 16],
}

impl Index<LayerParam> for EncoderLayer {
    type Output = Tensor;

    fn index(&self, p: LayerParam) -> &Tensor {
        &self.params[p as usize]
    }
}

impl IndexMut<LayerParam> for EncoderLayer {
    fn index_mut(&mut self, p: LayerParam) -> &mut Tensor {
        &mut self.params[p as usize]
    }
}

impl EncoderLayer {
    pub(crate) fn from_params(params: [Tensor; 16]) -> Self {
        EncoderLayer { params }
    }

    /// Width of the attention projections (n_heads × d_head).
    pub fn attn_width(&self) -> usize {
        self[LayerParam::Wq].shape()[0]
    }

    pub fn d_ffn(&self) -> usize {
        self[LayerParam::WIn].shape()[0]
    }

    pub fn params(&self) -> &[Tensor; 16] {
        &self.params
    }
}

/// A B×L batch of token ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    ids: Vec<usize>,
    batch: usize,
    seq_len: usize,
}

impl TokenBatch {
    pub fn new(rows: &[Vec<usize>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::invalid("empty batch"));
        };
        let seq_len = first.len();
        if seq_len == 0 || rows.iter().any(|r| r.len() != seq_len) {
            return Err(Error::invalid("batch rows must share a non-zero length"));
        }
        Ok(TokenBatch {
            ids: rows.concat(),
            batch: rows.len(),
            seq_len,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.seq_len..(b + 1) * self.seq_len]
    }
}

pub struct NamedParam<'m> {
    pub name: String,
    pub category: ParamCategory,
    pub tensor: &'m Tensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub embedding: usize,
    pub attention: usize,
    pub ffn: usize,
    pub head: usize,
    pub total: usize,
}

/// Vars recorded by one forward pass.
pub struct ForwardOutput {
    pub logits: Var,
    /// One per parameter, in [`TransformerClassifier::named_params`] order.
    pub params: Vec<Var>,
    /// One per score group when scores are being trained.
    pub scores: Vec<Option<Var>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerClassifier {
    config: ModelConfig,
    dtype: Dtype,
    token_emb: Tensor,
    pos_emb: Tensor,
    layers: Vec<EncoderLayer>,
    head_w: Tensor,
    head_b: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], limit: f64, dtype: Dtype) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data, dtype)
        .expect("shape matches data")
        .with_requires_grad(true)
}

fn xavier(rng: &mut ChaCha8Rng, out: usize, inp: usize, dtype: Dtype) -> Tensor {
    uniform(rng, &[out, inp], (6.0 / (out + inp) as f64).sqrt(), dtype)
}

fn filled(n: usize, v: f64, dtype: Dtype) -> Tensor {
    Tensor::full(&[n], v, dtype).with_requires_grad(true)
}

impl TransformerClassifier {
    /// Seeded random initialization: Xavier-uniform matrices, zero biases,
    /// unit layer-norm gains.
    pub fn new(config: ModelConfig, dtype: Dtype, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f) = (config.d_model, config.d_ffn);
        let token_emb = uniform(&mut rng, &[config.vocab_size, d], 0.1, dtype);
        let pos_emb = uniform(&mut rng, &[config.max_seq_len, d], 0.1, dtype);
        let layers = (0..config.n_layers)
            .map(|_| {
                let mut p: Vec<Tensor> = Vec::with_capacity(16);
                for _ in 0..4 {
                    p.push(xavier(&mut rng, d, d, dtype));
                    p.push(filled(d, 0.0, dtype));
                }
                p.push(filled(d, 1.0, dtype));
                p.push(filled(d, 0.0, dtype));
                p.push(xavier(&mut rng, f, d, dtype));
                p.push(filled(f, 0.0, dtype));
                p.push(xavier(&mut rng, d, f, dtype));
                p.push(filled(d, 0.0, dtype));
                p.push(filled(d, 1.0, dtype));
                p.push(filled(d, 0.0, dtype));
                EncoderLayer::from_params(p.try_into().expect("16 layer params"))
            })
            .collect();
        let head_w = xavier(&mut rng, config.n_classes, d, dtype);
        let head_b = filled(config.n_classes, 0.0, dtype);
        Ok(TransformerClassifier {
            config,
            dtype,
            token_emb,
            pos_emb,
            layers,
            head_w,
            head_b,
        })
    }

    /// Assemble from explicit tensors, checking every shape.
    pub fn from_parts(
        config: ModelConfig,
        token_emb: Tensor,
        pos_emb: Tensor,
        layers: Vec<EncoderLayer>,
        head_w: Tensor,
        head_b: Tensor,
    ) -> Result<Self> {
        config.validate()?;
        let dtype = token_emb.dtype();
        let model = TransformerClassifier {
            config,
            dtype,
            token_emb,
            pos_emb,
            layers,
            head_w,
            head_b,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let (d, dh) = (c.d_model, c.d_head());
        let bad = |name: String, got: &[usize], want: &[usize]| {
            Err(Error::Checkpoint(format!(
                "{name}: shape {got:?}, expected {want:?}"
            )))
        };
        let mut expect: Vec<(String, &Tensor, Vec<usize>)> = vec![
            ("token_emb".into(), &self.token_emb, vec![c.vocab_size, d]),
            ("pos_emb".into(), &self.pos_emb, vec![c.max_seq_len, d]),
            ("head.w".into(), &self.head_w, vec![c.n_classes, d]),
            ("head.b".into(), &self.head_b, vec![c.n_classes]),
        ];
        if self.layers.len() != c.n_layers {
            return Err(Error::Checkpoint(format!(
                "{} layers present, config says {}",
                self.layers.len(),
                c.n_layers
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (a, f) = (layer.attn_width(), layer.d_ffn());
            if a == 0 || a % dh != 0 || a > d || f == 0 {
                return Err(Error::Checkpoint(format!(
                    "layer {l}: attention width {a} / ffn width {f} invalid"
                )));
            }
            for p in LayerParam::ALL {
                let want = match p {
                    LayerParam::Wq | LayerParam::Wk | LayerParam::Wv => vec![a, d],
                    LayerParam::Bq | LayerParam::Bk | LayerParam::Bv => vec![a],
                    LayerParam::Wo => vec![d, a],
                    LayerParam::WIn => vec![f, d],
                    LayerParam::BIn => vec![f],
                    LayerParam::WOut => vec![d, f],
                    _ => vec![d],
                };
                expect.push((format!("layers.{l}.{}", p.name()), &layer[p], want));
            }
        }
        for (name, t, want) in expect {
            if t.shape() != want.as_slice() {
                return bad(name, t.shape(), &want);
            }
            if t.dtype() != self.dtype {
                return Err(Error::Checkpoint(format!("{name}: mixed dtypes")));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [EncoderLayer] {
        &mut self.layers
    }

    pub fn head_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.head_w, &mut self.head_b)
    }

    pub fn embeddings(&self) -> (&Tensor, &Tensor) {
        (&self.token_emb, &self.pos_emb)
    }

    /// All parameters in a fixed order: embeddings, layers, head.
    pub fn named_params(&self) -> Vec<NamedParam<'_>> {
        let mut out = vec![
            NamedParam {
                name: "token_emb".into(),
                category: ParamCategory::Embedding,
                tensor: &self.token_emb,
            },
            NamedParam {
                name: "pos_emb".into(),
                category: ParamCategory::Embedding,
                tensor: &self.pos_emb,
            },
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for p in LayerParam::ALL {
                out.push(NamedParam {
                    name: format!("layers.{l}.{}", p.name()),
                    category: p.category(),
                    tensor: &layer[p],
                });
            }
        }
        out.push(NamedParam {
            name: "head.w".into(),
            category: ParamCategory::Head,
            tensor: &self.head_w,
        });
        out.push(NamedParam {
            name: "head.b".into(),
            category: ParamCategory::Head,
            tensor: &self.head_b,
        });
        out
    }

    /// Mutable parameters in [`named_params`](Self::named_params) order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.params.iter_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn count_parameters(&self) -> ParameterCount {
        let mut c = ParameterCount::default();
        for p in self.named_params() {
            let n = p.tensor.numel();
            match p.category {
                ParamCategory::Embedding => c.embedding += n,
                ParamCategory::Attention => c.attention += n,
                ParamCategory::Ffn => c.ffn += n,
                ParamCategory::Head => c.head += n,
            }
            c.total += n;
        }
        c
    }

    /// Record a forward pass on `tape`.
    ///
    /// With `pruning`, every scored matrix is replaced by its masked copy;
    /// `train_scores` additionally puts the block scores on the tape so
    /// they receive straight-through gradients. Dropout runs only when an
    /// RNG is supplied.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        batch: &TokenBatch,
        pruning: Option<&'a PruningState>,
        train_scores: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let (b, l) = (batch.batch, batch.seq_len);
        if l > cfg.max_seq_len {
            return Err(Error::invalid(format!(
                "sequence length {l} exceeds max_seq_len {}",
                cfg.max_seq_len
            )));
        }
        if let Some(&bad) = batch.ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocabulary of {}",
                cfg.vocab_size
            )));
        }

        let params: Vec<Var> = self
            .named_params()
            .iter()
            .map(|p| tape.leaf(p.tensor))
            .collect();
        let scores: Vec<Option<Var>> = match pruning {
            Some(state) if train_scores => state
                .groups
                .iter()
                .map(|g| Some(tape.leaf(&g.scores)))
                .collect(),
            Some(state) => vec![None; state.groups.len()],
            None => Vec::new(),
        };

        let tok = tape.gather(params[0], &batch.ids)?;
        let pos_ids: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
        let pos = tape.gather(params[1], &pos_ids)?;
        let mut x = tape.add(tok, pos)?;
        if let Some(r) = rng.as_deref_mut() {
            x = tape.dropout(x, cfg.dropout_rate, r);
        }

        let key_bias: Vec<Option<Var>> = (0..b)
            .map(|bi| {
                let row = batch.row(bi);
                if !row.contains(&PAD_ID) {
                    return None;
                }
                let mut bias = vec![0.0; l * l];
                for i in 0..l {
                    for (j, &id) in row.iter().enumerate() {
                        if id == PAD_ID {
                            bias[i * l + j] = PAD_BIAS;
                        }
                    }
                }
                Some(tape.constant(Tensor::from_vec(&[l, l], bias).expect("l×l")))
            })
            .collect();

        for (li, _) in self.layers.iter().enumerate() {
            let base = 2 + li * 16;
            let mut w: [Var; 16] = params[base..base + 16].try_into().expect("16 params");
            if let Some(state) = pruning {
                for (gi, group) in state.groups.iter().enumerate() {
                    if group.layer != li {
                        continue;
                    }
                    for m in &group.members {
                        let slot = m.param as usize;
                        w[slot] = tape.masked_weight(w[slot], scores[gi], &group.mask, m.layout)?;
                    }
                }
            }
            x = self.encoder_layer(tape, x, &w, batch, &key_bias, rng.as_deref_mut())?;
        }

        let d = cfg.d_model;
        let mut pooled = Vec::with_capacity(b);
        for bi in 0..b {
            let row = batch.row(bi);
            let n_valid = row.iter().filter(|&&id| id != PAD_ID).count();
            let weights: Vec<f64> = row
                .iter()
                .map(|&id| {
                    if id == PAD_ID {
                        0.0
                    } else {
                        1.0 / n_valid as f64
                    }
                })
                .collect();
            let wv = tape.constant(Tensor::from_vec(&[1, l], weights).expect("1×l"));
            let rows = tape.slice(x, (bi * l, (bi + 1) * l), (0, d))?;
            pooled.push(tape.matmul(wv, rows)?);
        }
        let pooled = if b == 1 {
            pooled[0]
        } else {
            tape.concat_rows(&pooled)?
        };
        let n = params.len();
        let logits = linear(tape, pooled, params[n - 2], params[n - 1])?;
        Ok(ForwardOutput {
            logits,
            params,
            scores,
        })
    }

    fn encoder_layer<'a>(
        &self,
        tape: &mut Tape<'a>,
        x: Var,
        w: &[Var; 16],
        batch: &TokenBatch,
        key_bias: &[Option<Var>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        use LayerParam as P;
        let (b, l) = (batch.batch, batch.seq_len);
        let d_head = self.config.d_head();
        let n_heads = tape.shape(w[P::Wq as usize])[0] / d_head;
        let scale = 1.0 / (d_head as f64).sqrt();
        let p = |slot: P| w[slot as usize];

        let q = linear(tape, x, p(P::Wq), p(P::Bq))?;
        let k = linear(tape, x, p(P::Wk), p(P::Bk))?;
        let v = linear(tape, x, p(P::Wv), p(P::Bv))?;

        let mut rows = Vec::with_capacity(b);
        for bi in 0..b {
            let r = (bi * l, (bi + 1) * l);
            let mut heads = Vec::with_capacity(n_heads);
            for h in 0..n_heads {
                let c = (h * d_head, (h + 1) * d_head);
                let qh = tape.slice(q, r, c)?;
                let kh = tape.slice(k, r, c)?;
                let vh = tape.slice(v, r, c)?;
                let s = tape.matmul_t(qh, kh)?;
                let mut s = tape.scale(s, scale);
                if let Some(bias) = key_bias[bi] {
                    s = tape.add(s, bias)?;
                }
                let attn = tape.softmax(s, 1)?;
                heads.push(tape.matmul(attn, vh)?);
            }
            rows.push(if n_heads == 1 {
                heads[0]
            } else {
                tape.concat_cols(&heads)?
            });
        }
        let ctx = if b == 1 {
            rows[0]
        } else {
            tape.concat_rows(&rows)?
        };
        let mut attn_out = linear(tape, ctx, p(P::Wo), p(P::Bo))?;
        if let Some(r) = rng.as_deref_mut() {
            attn_out = tape.dropout(attn_out, self.config.dropout_rate, r);
        }
        let res = tape.add(x, attn_out)?;
        let x1 = tape.layer_norm(res, p(P::AttnNormGamma), p(P::AttnNormBeta), LN_EPS)?;

        let h = linear(tape, x1, p(P::WIn), p(P::BIn))?;
        let h = tape.gelu(h);
        let mut f = linear(tape, h, p(P::WOut), p(P::BOut))?;
        if let Some(r) = rng {
            f = tape.dropout(f, self.config.dropout_rate, r);
        }
        let res = tape.add(x1, f)?;
        tape.layer_norm(res, p(P::FfnNormGamma), p(P::FfnNormBeta), LN_EPS)
    }

    /// Inference logits (B×n_classes), computed in the model's dtype.
    pub fn logits(&self, batch: &TokenBatch) -> Result<Tensor> {
        self.logits_masked(batch, None)
    }

    pub fn logits_masked(
        &self,
        batch: &TokenBatch,
        pruning: Option<&PruningState>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new(self.dtype);
        let out = self.forward(&mut tape, batch, pruning, false, None)?;
        Ok(tape.tensor(out.logits))
    }

    /// Argmax class per row, lowest index on ties.
    pub fn predict(
        &self,
        rows: &[Vec<usize>],
        pruning: Option<&PruningState>,
    ) -> Result<Vec<usize>> {
        let mut preds = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(EVAL_BATCH) {
            let logits = self.logits_masked(&TokenBatch::new(chunk)?, pruning)?;
            let k = self.config.n_classes;
            preds.extend(logits.data().chunks(k).map(kernels::argmax));
        }
        Ok(preds)
    }
}

fn linear(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul_t(x, w)?;
    tape.add_row(y, b)
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn evaluate(model: &TransformerClassifier, data: &[EncodedExample]) -> Result<f64> {
    evaluate_masked(model, data, None)
}

pub fn evaluate_masked(
    model: &TransformerClassifier,
    data: &[EncodedExample],
    pruning: Option<&PruningState>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let rows: Vec<Vec<usize>> = data.iter().map(|e| e.ids.clone()).collect();
    let preds = model.predict(&rows, pruning)?;
    let correct = preds
        .iter()
        .zip(data)
        .filter(|(p, e)| **p == e.label)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
