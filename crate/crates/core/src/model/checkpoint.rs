//! Single-file model container.
//!
//! Layout: one line of compact JSON (the header) terminated by `\n`, then
//! the tensor payloads as little-endian f32 in manifest order. Offsets in
//! the manifest are relative to the first payload byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderLayer, LayerParam, ModelConfig, TransformerClassifier, Vocabulary};
use crate::error::{Error, Result};
use crate::pruning::{GroupKind, GroupMember, PruneConfig, PruningState, ScoreGroup};
use crate::tensor::{Dtype, Tensor};

pub const FORMAT: &str = "slimbert-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Param,
    Score,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Storage type of the payload; always `"f32"`.
    pub dtype: String,
    pub offset: usize,
    pub nbytes: usize,
    pub kind: TensorKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub attn_width: usize,
    pub d_ffn: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GroupHeader {
    name: String,
    layer: usize,
    kind: GroupKind,
    members: Vec<GroupMember>,
    n_blocks: usize,
    /// Bit-packed, least significant bit first, hex encoded.
    mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PruningHeader {
    config: PruneConfig,
    groups: Vec<GroupHeader>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    /// Value type of the in-memory model; payloads are f32 regardless.
    pub model_dtype: Dtype,
    pub config: ModelConfig,
    pub layers: Vec<LayerDims>,
    pub vocabulary: Vocabulary,
    pub classes: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pruning: Option<PruningHeader>,
}

impl Header {
    /// Elements stored for model parameters (scores excluded).
    pub fn param_elements(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.kind == TensorKind::Param)
            .map(|t| t.nbytes / 4)
            .sum()
    }
}

/// A model with everything needed to run it on raw text.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: TransformerClassifier,
    pub vocabulary: Vocabulary,
    pub classes: Vec<String>,
    pub pruning: Option<PruningState>,
}

pub(crate) fn pack_bits(bits: &[bool]) -> String {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        bytes[i / 8] |= 1 << (i % 8);
    }
    hex::encode(bytes)
}

pub(crate) fn unpack_bits(text: &str, n: usize) -> Result<Vec<bool>> {
    if text.len() != 2 * n.div_ceil(8) {
        return Err(Error::Checkpoint(format!(
            "mask holds {} hex digits for {n} bits",
            text.len()
        )));
    }
    let bytes = hex::decode(text).map_err(|e| Error::Checkpoint(format!("mask: {e}")))?;
    Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, t: &Tensor, kind: TensorKind| {
            let offset = payload.len();
            for &v in t.data() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                nbytes: payload.len() - offset,
                kind,
            });
        };
        for p in self.model.named_params() {
            push(p.name, p.tensor, TensorKind::Param);
        }
        let pruning = self.pruning.as_ref().map(|state| PruningHeader {
            config: state.config.clone(),
            groups: state
                .groups
                .iter()
                .map(|g| {
                    push(format!("{}.scores", g.name), &g.scores, TensorKind::Score);
                    GroupHeader {
                        name: g.name.clone(),
                        layer: g.layer,
                        kind: g.kind,
                        members: g.members.clone(),
                        n_blocks: g.n_blocks(),
                        mask: pack_bits(&g.mask),
                    }
                })
                .collect(),
        });
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            model_dtype: self.model.dtype(),
            config: self.model.config().clone(),
            layers: self
                .model
                .layers()
                .iter()
                .map(|l| LayerDims {
                    attn_width: l.attn_width(),
                    d_ffn: l.d_ffn(),
                })
                .collect(),
            vocabulary: self.vocabulary.clone(),
            classes: self.classes.clone(),
            tensors,
            pruning,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.extend(payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = read_header(bytes)?;
        let dtype = header.model_dtype;
        let mut entries = header.tensors.iter();
        let mut next = |want: &str, kind: TensorKind| -> Result<Tensor> {
            let e = entries
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("manifest ends before {want}")))?;
            if e.name != want || e.kind != kind {
                return Err(Error::Checkpoint(format!(
                    "expected {want}, found {}",
                    e.name
                )));
            }
            let data = read_tensor(e, payload)?;
            Ok(Tensor::new(e.shape.clone(), data, dtype)?.with_requires_grad(true))
        };

        let token_emb = next("token_emb", TensorKind::Param)?;
        let pos_emb = next("pos_emb", TensorKind::Param)?;
        let mut layers = Vec::with_capacity(header.layers.len());
        for l in 0..header.layers.len() {
            let mut params = Vec::with_capacity(16);
            for p in LayerParam::ALL {
                params.push(next(
                    &format!("layers.{l}.{}", p.name()),
                    TensorKind::Param,
                )?);
            }
            layers.push(EncoderLayer::from_params(
                params.try_into().expect("16 layer params"),
            ));
        }
        let head_w = next("head.w", TensorKind::Param)?;
        let head_b = next("head.b", TensorKind::Param)?;
        let model = TransformerClassifier::from_parts(
            header.config.clone(),
            token_emb,
            pos_emb,
            layers,
            head_w,
            head_b,
        )?;
        for (l, (dims, layer)) in header.layers.iter().zip(model.layers()).enumerate() {
            if dims.attn_width != layer.attn_width() || dims.d_ffn != layer.d_ffn() {
                return Err(Error::Checkpoint(format!(
                    "layer {l}: dims disagree with tensors"
                )));
            }
        }

        let pruning = match &header.pruning {
            None => None,
            Some(ph) => {
                let mut groups = Vec::with_capacity(ph.groups.len());
                for g in &ph.groups {
                    let scores = next(&format!("{}.scores", g.name), TensorKind::Score)?;
                    if scores.numel() != g.n_blocks {
                        return Err(Error::Checkpoint(format!("{}: score count", g.name)));
                    }
                    if g.layer >= model.layers().len() {
                        return Err(Error::Checkpoint(format!(
                            "{}: no layer {}",
                            g.name, g.layer
                        )));
                    }
                    groups.push(ScoreGroup {
                        name: g.name.clone(),
                        layer: g.layer,
                        kind: g.kind,
                        scores,
                        mask: unpack_bits(&g.mask, g.n_blocks)?,
                        members: g.members.clone(),
                    });
                }
                Some(PruningState {
                    config: ph.config.clone(),
                    groups,
                })
            }
        };
        if entries.next().is_some() {
            return Err(Error::Checkpoint("unexpected trailing tensors".into()));
        }
        if header.classes.len() != model.config().n_classes {
            return Err(Error::Checkpoint(format!(
                "{} class names for {} outputs",
                header.classes.len(),
                model.config().n_classes
            )));
        }
        if header.vocabulary.len() != model.config().vocab_size {
            return Err(Error::Checkpoint(
                "vocabulary size disagrees with config".into(),
            ));
        }
        Ok(Checkpoint {
            model,
            vocabulary: header.vocabulary,
            classes: header.classes,
            pruning,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Parse and validate just the header.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unknown format {:?}",
            header.format
        )));
    }
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "version {} not supported (expected {VERSION})",
            header.version
        )));
    }
    Ok((header, &bytes[nl + 1..]))
}

fn read_tensor(e: &TensorEntry, payload: &[u8]) -> Result<Vec<f64>> {
    let n: usize = e.shape.iter().product();
    if e.dtype != "f32" || e.nbytes != 4 * n {
        return Err(Error::Checkpoint(format!("{}: bad dtype or size", e.name)));
    }
    let bytes = payload
        .get(e.offset..e.offset + e.nbytes)
        .ok_or_else(|| Error::Checkpoint(format!("{}: payload truncated", e.name)))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_round_trip() {
        let bits = [true, false, false, true, true, false, true, false, true];
        let hex = pack_bits(&bits);
        assert_eq!(hex, "5901");
        assert_eq!(unpack_bits(&hex, bits.len()).unwrap(), bits);
        assert!(unpack_bits("59", 9).is_err());
    }
}
