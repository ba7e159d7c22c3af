//! Block movement pruning.
//!
//! Each in-scope weight matrix is tiled into blocks with one learnable score
//! per block. During fine-tuning the mask keeps the top-scoring fraction of
//! blocks, the fraction following a cubic schedule, and scores receive
//! straight-through gradients so pruned blocks can come back. A block-mean
//! |W| criterion is available as a baseline. Once training ends, blocks that
//! cover whole FFN units or attention heads are removed by [`compact`].

mod blocks;
mod compact;
mod schedule;
mod state;
mod train;

pub use blocks::{
    block_magnitudes, compute_masks, kept_count, magnitude_masks, BlockLayout, ScoredParameter,
};
pub use compact::{compact, prunable_ffn_params};
pub use schedule::threshold_at;
pub use state::{
    attach_scores, GroupKind, GroupMember, MatrixSparsity, PruningState, ScoreGroup, SparsityReport,
};
pub use train::{prune_train, PruneLog, PruneOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    FfnOnly,
    FfnAndAttention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    Movement,
    Magnitude,
}

/// Thresholds are fractions of blocks *retained*: 0.75 means 25% pruning.
///
/// Block dims are given in the orientation of the FFN input projection
/// `[d_ffn × d_model]`; `block_cols == d_model` makes each block a set of
/// whole intermediate units. A `block_cols` of 0 is shorthand for d_model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub block_rows: usize,
    pub block_cols: usize,
    pub initial_threshold: f64,
    pub final_threshold: f64,
    pub warmup_steps: usize,
    pub cooldown_start: usize,
    pub total_steps: usize,
    pub scope: Scope,
    pub criterion: Criterion,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            block_rows: 1,
            block_cols: 0,
            initial_threshold: 1.0,
            final_threshold: 0.75,
            warmup_steps: 30,
            cooldown_start: 210,
            total_steps: 300,
            scope: Scope::FfnOnly,
            criterion: Criterion::Movement,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        let (i, f) = (self.initial_threshold, self.final_threshold);
        if !(0.0 < f && f <= i && i <= 1.0) {
            return Err(Error::config(format!(
                "thresholds must satisfy 0 < final ({f}) <= initial ({i}) <= 1"
            )));
        }
        if !(self.warmup_steps <= self.cooldown_start && self.cooldown_start <= self.total_steps) {
            return Err(Error::config(format!(
                "schedule must satisfy warmup ({}) <= cooldown_start ({}) <= total_steps ({})",
                self.warmup_steps, self.cooldown_start, self.total_steps
            )));
        }
        if self.block_rows == 0 {
            return Err(Error::config("block_rows must be positive"));
        }
        Ok(())
    }

    /// Table-style experiment name, e.g. "25% pruning" for a final threshold of 0.75.
    pub fn experiment_name(&self) -> String {
        let pct = (1.0 - self.final_threshold) * 100.0;
        if (pct - pct.round()).abs() < 1e-9 {
            format!("{}% pruning", pct.round() as i64)
        } else {
            format!("{pct:.1}% pruning")
        }
    }
}
