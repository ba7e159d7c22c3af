use super::state::{GroupKind, PruningState};
use crate::error::{Error, Result};
use crate::model::{LayerParam, TransformerClassifier};
use crate::tensor::Tensor;

fn select_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let cols = t.numel() / t.shape()[0];
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend_from_slice(&t.data()[r * cols..(r + 1) * cols]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(shape, data, t.dtype())
        .expect("selected rows")
        .with_requires_grad(t.requires_grad)
}

fn select_cols(t: &Tensor, keep: &[usize]) -> Tensor {
    let (r, c) = t.dims2().expect("matrix");
    let mut data = Vec::with_capacity(r * keep.len());
    for i in 0..r {
        data.extend(keep.iter().map(|&j| t.data()[i * c + j]));
    }
    Tensor::new(vec![r, keep.len()], data, t.dtype())
        .expect("selected cols")
        .with_requires_grad(t.requires_grad)
}

/// Physically remove every FFN unit and attention head whose block is
/// masked, giving a smaller dense model with the same logits as the masked one.
pub fn compact(
    model: &TransformerClassifier,
    state: &PruningState,
) -> Result<TransformerClassifier> {
    let d_head = model.config().d_head();
    let mut out = model.clone();
    for g in &state.groups {
        let layer = out
            .layers_mut()
            .get_mut(g.layer)
            .ok_or_else(|| Error::invalid(format!("{}: no layer {}", g.name, g.layer)))?;
        match g.kind {
            GroupKind::Ffn => {
                let w_in = g
                    .members
                    .iter()
                    .find(|m| m.param == LayerParam::WIn)
                    .ok_or_else(|| Error::invalid(format!("{}: no w_in member", g.name)))?;
                if w_in.layout.block_cols != w_in.layout.cols {
                    return Err(Error::invalid(format!(
                        "{}: blocks of {}x{} cover partial rows and cannot be removed; \
                         use block_cols = d_model ({}) for compactable row blocks",
                        g.name, w_in.layout.block_rows, w_in.layout.block_cols, w_in.layout.cols
                    )));
                }
                let units: Vec<usize> = (0..w_in.layout.rows)
                    .filter(|&u| g.mask[w_in.layout.block_of(u, 0)])
                    .collect();
                if units.is_empty() {
                    return Err(Error::invalid(format!(
                        "{}: every unit is masked; at least one must be kept",
                        g.name
                    )));
                }
                layer[LayerParam::WIn] = select_rows(&layer[LayerParam::WIn], &units);
                layer[LayerParam::BIn] = select_rows(&layer[LayerParam::BIn], &units);
                layer[LayerParam::WOut] = select_cols(&layer[LayerParam::WOut], &units);
            }
            GroupKind::Attention => {
                let cols: Vec<usize> = (0..g.mask.len())
                    .filter(|&h| g.mask[h])
                    .flat_map(|h| h * d_head..(h + 1) * d_head)
                    .collect();
                if cols.is_empty() {
                    return Err(Error::invalid(format!(
                        "{}: every head is masked; at least one must be kept",
                        g.name
                    )));
                }
                for p in [
                    LayerParam::Wq,
                    LayerParam::Bq,
                    LayerParam::Wk,
                    LayerParam::Bk,
                    LayerParam::Wv,
                    LayerParam::Bv,
                ] {
                    layer[p] = select_rows(&layer[p], &cols);
                }
                layer[LayerParam::Wo] = select_cols(&layer[LayerParam::Wo], &cols);
            }
        }
    }
    out.check_shapes()?;
    Ok(out)
}

/// Parameters removable by FFN unit pruning: `w_in`, `b_in` and `w_out`.
pub fn prunable_ffn_params(model: &TransformerClassifier) -> usize {
    model
        .layers()
        .iter()
        .map(|l| {
            l[LayerParam::WIn].numel() + l[LayerParam::BIn].numel() + l[LayerParam::WOut].numel()
        })
        .sum()
}
