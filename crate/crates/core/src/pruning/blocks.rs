use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{kernels, Dtype, Tensor};

/// How a `rows × cols` matrix is tiled into scored blocks.
///
/// A transposed layout tiles the matrix with the same block grid read
/// column-major, so that e.g. the rows of an FFN input projection and the
/// columns of its output projection share one score per unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub rows: usize,
    pub cols: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub transposed: bool,
}

impl BlockLayout {
    pub fn new(
        rows: usize,
        cols: usize,
        block_rows: usize,
        block_cols: usize,
        transposed: bool,
    ) -> Result<Self> {
        if block_rows == 0
            || block_cols == 0
            || !rows.is_multiple_of(block_rows)
            || !cols.is_multiple_of(block_cols)
        {
            return Err(Error::invalid(format!(
                "block {block_rows}x{block_cols} does not tile a {rows}x{cols} matrix"
            )));
        }
        Ok(BlockLayout {
            rows,
            cols,
            block_rows,
            block_cols,
            transposed,
        })
    }

    /// Shape of the score grid.
    pub fn grid(&self) -> (usize, usize) {
        let (r, c) = (self.rows / self.block_rows, self.cols / self.block_cols);
        if self.transposed {
            (c, r)
        } else {
            (r, c)
        }
    }

    pub fn n_blocks(&self) -> usize {
        (self.rows / self.block_rows) * (self.cols / self.block_cols)
    }

    /// Flat score-grid index of matrix element (i, j).
    #[inline]
    pub fn block_of(&self, i: usize, j: usize) -> usize {
        let (bi, bj) = (i / self.block_rows, j / self.block_cols);
        if self.transposed {
            bj * (self.rows / self.block_rows) + bi
        } else {
            bi * (self.cols / self.block_cols) + bj
        }
    }

    /// Per-element 0/1 multiplier for a block mask.
    pub fn expand(&self, keep: &[bool]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(if keep[self.block_of(i, j)] { 1.0 } else { 0.0 });
            }
        }
        out
    }

    /// acc[block] += Σ_{(i,j) ∈ block} a[i,j] · b[i,j]
    pub fn accumulate_block_sums(&self, a: &[f64], b: &[f64], acc: &mut [f64]) {
        for i in 0..self.rows {
            for j in 0..self.cols {
                let e = i * self.cols + j;
                acc[self.block_of(i, j)] += a[e] * b[e];
            }
        }
    }

    /// Number of matrix elements in one block.
    pub fn block_size(&self) -> usize {
        self.block_rows * self.block_cols
    }
}

/// Blocks kept at a retained fraction: ceil(fraction · n), at least one.
pub fn kept_count(fraction: f64, n_blocks: usize) -> usize {
    // tolerance so that e.g. 0.3 · 10 does not round up to 4
    let k = (fraction * n_blocks as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n_blocks)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "retained fraction must be in (0, 1], got {fraction}"
        )))
    }
}

/// Keep the top `ceil(fraction · n)` scores. Equal scores favour the lower
/// index; NaN ranks below everything.
pub fn compute_masks(scores: &[f64], fraction: f64) -> Result<Vec<bool>> {
    check_fraction(fraction)?;
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        key(scores[b])
            .partial_cmp(&key(scores[a]))
            .expect("NaN mapped away")
            .then(a.cmp(&b))
    });
    let mut mask = vec![false; scores.len()];
    for &i in &order[..kept_count(fraction, scores.len())] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Mean absolute weight of each block, in score-grid order.
pub fn block_magnitudes(weights: &[f64], layout: &BlockLayout) -> Vec<f64> {
    let abs: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    let ones = vec![1.0; abs.len()];
    let mut sums = vec![0.0; layout.n_blocks()];
    layout.accumulate_block_sums(&abs, &ones, &mut sums);
    let size = layout.block_size() as f64;
    sums.iter().map(|s| s / size).collect()
}

/// Magnitude baseline: rank blocks by mean |W| instead of learned scores.
pub fn magnitude_masks(
    weights: &Tensor,
    fraction: f64,
    block_rows: usize,
    block_cols: usize,
) -> Result<Vec<bool>> {
    check_fraction(fraction)?;
    let (r, c) = weights.dims2()?;
    let layout = BlockLayout::new(r, c, block_rows, block_cols, false)?;
    compute_masks(&block_magnitudes(weights.data(), &layout), fraction)
}

/// A weight matrix with one learnable score and one mask bit per block.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredParameter {
    pub weight: Tensor,
    /// Shape `(rows / block_rows) × (cols / block_cols)`.
    pub scores: Tensor,
    pub mask: Vec<bool>,
    pub layout: BlockLayout,
}

impl ScoredParameter {
    /// Wrap `weight` with zero scores and a full mask.
    pub fn new(weight: Tensor, block_rows: usize, block_cols: usize) -> Result<Self> {
        let (r, c) = weight.dims2()?;
        let layout = BlockLayout::new(r, c, block_rows, block_cols, false)?;
        let (gr, gc) = layout.grid();
        Ok(ScoredParameter {
            scores: Tensor::zeros(&[gr, gc], Dtype::F64),
            mask: vec![true; layout.n_blocks()],
            weight,
            layout,
        })
    }

    pub fn refresh_mask(&mut self, fraction: f64) -> Result<()> {
        self.mask = compute_masks(self.scores.data(), fraction)?;
        Ok(())
    }

    /// W ⊙ expand(M)
    pub fn masked_weight(&self) -> Tensor {
        let keep = self.layout.expand(&self.mask);
        let data = self
            .weight
            .data()
            .iter()
            .zip(&keep)
            .map(|(w, k)| w * k)
            .collect();
        Tensor::new(self.weight.shape().to_vec(), data, self.weight.dtype()).expect("same shape")
    }

    /// y = x · (W ⊙ expand(M))ᵀ for x of shape [n × cols].
    pub fn masked_forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, k) = x.dims2()?;
        if k != self.layout.cols {
            return Err(Error::Shape {
                op: "masked_forward",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let w = self.masked_weight();
        let mut out = vec![0.0; n * self.layout.rows];
        kernels::matmul_t(x.data(), w.data(), &mut out, n, k, self.layout.rows);
        Tensor::new(vec![n, self.layout.rows], out, x.dtype())
    }

    /// Straight-through score gradient: dS[b] = Σ_{(i,j)∈b} dL/dW′[i,j] · W[i,j],
    /// the same for kept and masked blocks.
    pub fn score_gradient(&self, upstream: &Tensor) -> Result<Tensor> {
        if upstream.shape() != self.weight.shape() {
            return Err(Error::Shape {
                op: "score_gradient",
                lhs: upstream.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let mut ds = vec![0.0; self.layout.n_blocks()];
        self.layout
            .accumulate_block_sums(upstream.data(), self.weight.data(), &mut ds);
        Tensor::new(self.scores.shape().to_vec(), ds, Dtype::F64)
    }
}
