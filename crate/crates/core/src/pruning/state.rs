use serde::{Deserialize, Serialize};

use super::blocks::{block_magnitudes, compute_masks, BlockLayout};
use super::{Criterion, PruneConfig, Scope};
use crate::error::{Error, Result};
use crate::model::{LayerParam, TransformerClassifier};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    /// One score per block of FFN units, shared by `w_in` rows and `w_out` columns.
    Ffn,
    /// One score per head, shared by the Q/K/V row bands and the output column band.
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMember {
    pub param: LayerParam,
    pub layout: BlockLayout,
}

/// Matrices of one layer that are masked together from one score grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGroup {
    pub name: String,
    pub layer: usize,
    pub kind: GroupKind,
    pub scores: Tensor,
    pub mask: Vec<bool>,
    pub members: Vec<GroupMember>,
}

impl ScoreGroup {
    pub fn n_blocks(&self) -> usize {
        self.mask.len()
    }

    pub fn kept(&self) -> usize {
        self.mask.iter().filter(|&&k| k).count()
    }

    fn magnitudes(&self, model: &TransformerClassifier) -> Vec<f64> {
        let layer = &model.layers()[self.layer];
        let mut total = vec![0.0; self.n_blocks()];
        for m in &self.members {
            let mags = block_magnitudes(layer[m.param].data(), &m.layout);
            total.iter_mut().zip(mags).for_each(|(t, v)| *t += v);
        }
        total
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruningState {
    pub config: PruneConfig,
    pub groups: Vec<ScoreGroup>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSparsity {
    pub name: String,
    pub blocks_total: usize,
    pub blocks_kept: usize,
    pub weight_sparsity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub experiment: String,
    pub matrices: Vec<MatrixSparsity>,
    pub blocks_total: usize,
    pub blocks_kept: usize,
    pub weight_sparsity: f64,
}

/// Wrap every in-scope matrix of `model` with zero scores and full masks.
pub fn attach_scores(model: &TransformerClassifier, config: &PruneConfig) -> Result<PruningState> {
    config.validate()?;
    let cfg = model.config();
    let d = cfg.d_model;
    let block_cols = if config.block_cols == 0 {
        d
    } else {
        config.block_cols
    };
    let mut groups = Vec::new();

    for (l, layer) in model.layers().iter().enumerate() {
        let f = layer.d_ffn();
        let layout = |p: LayerParam, rows, cols, br, bc, transposed| {
            BlockLayout::new(rows, cols, br, bc, transposed)
                .map(|layout| GroupMember { param: p, layout })
                .map_err(|_| {
                    Error::invalid(format!(
                        "layers.{l}.{}: block {br}x{bc} does not tile its {rows}x{cols} weight",
                        p.name()
                    ))
                })
        };
        let members = vec![
            layout(LayerParam::WIn, f, d, config.block_rows, block_cols, false)?,
            layout(LayerParam::WOut, d, f, block_cols, config.block_rows, true)?,
        ];
        groups.push(new_group(
            format!("layers.{l}.ffn"),
            l,
            GroupKind::Ffn,
            members,
            model,
        ));

        if config.scope == Scope::FfnAndAttention {
            let (a, dh) = (layer.attn_width(), cfg.d_head());
            let mut members = Vec::new();
            for p in [LayerParam::Wq, LayerParam::Wk, LayerParam::Wv] {
                members.push(layout(p, a, d, dh, d, false)?);
            }
            members.push(layout(LayerParam::Wo, d, a, d, dh, true)?);
            groups.push(new_group(
                format!("layers.{l}.attn"),
                l,
                GroupKind::Attention,
                members,
                model,
            ));
        }
    }
    Ok(PruningState {
        config: config.clone(),
        groups,
    })
}

fn new_group(
    name: String,
    layer: usize,
    kind: GroupKind,
    members: Vec<GroupMember>,
    model: &TransformerClassifier,
) -> ScoreGroup {
    let (gr, gc) = members[0].layout.grid();
    ScoreGroup {
        name,
        layer,
        kind,
        scores: Tensor::zeros(&[gr, gc], model.dtype()).with_requires_grad(true),
        mask: vec![true; gr * gc],
        members,
    }
}

impl PruningState {
    /// Recompute every mask for retained fraction `fraction`.
    pub fn refresh(&mut self, fraction: f64, model: &TransformerClassifier) -> Result<()> {
        for g in &mut self.groups {
            g.mask = match self.config.criterion {
                Criterion::Movement => compute_masks(g.scores.data(), fraction)?,
                Criterion::Magnitude => compute_masks(&g.magnitudes(model), fraction)?,
            };
        }
        Ok(())
    }

    /// The wrapped matrices, by full parameter name.
    pub fn scored_parameters(&self) -> Vec<(String, &ScoreGroup, &GroupMember)> {
        self.groups
            .iter()
            .flat_map(|g| {
                g.members
                    .iter()
                    .map(move |m| (format!("layers.{}.{}", g.layer, m.param.name()), g, m))
            })
            .collect()
    }

    pub fn scores_mut(&mut self) -> Vec<&mut Tensor> {
        self.groups.iter_mut().map(|g| &mut g.scores).collect()
    }

    pub fn report(&self) -> SparsityReport {
        let mut matrices = Vec::new();
        let (mut total, mut kept) = (0, 0);
        for (name, g, _) in self.scored_parameters() {
            let (t, k) = (g.n_blocks(), g.kept());
            matrices.push(MatrixSparsity {
                name,
                blocks_total: t,
                blocks_kept: k,
                weight_sparsity: 1.0 - k as f64 / t as f64,
            });
            total += t;
            kept += k;
        }
        SparsityReport {
            experiment: self.config.experiment_name(),
            matrices,
            blocks_total: total,
            blocks_kept: kept,
            weight_sparsity: if total == 0 {
                0.0
            } else {
                1.0 - kept as f64 / total as f64
            },
        }
    }
}
