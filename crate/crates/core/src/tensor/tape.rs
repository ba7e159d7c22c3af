use std::borrow::Cow;

use super::kernels;
use super::{Dtype, Tensor};
use crate::error::{Error, Result};
use crate::pruning::BlockLayout;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Matmul(Var, Var),
    MatmulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Slice {
        x: Var,
        r0: usize,
        c0: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    KlDiv {
        logits: Var,
        target: Vec<f64>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Masked {
        weight: Var,
        scores: Option<Var>,
        keep: Vec<f64>,
        layout: BlockLayout,
    },
    Dropout {
        x: Var,
        keep: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, [f64]>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
///
/// Every op output is rounded to the tape's precision. Leaves borrow their
/// tensor's buffer whenever no rounding is needed.
pub struct Tape<'a> {
    precision: Dtype,
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v`, or zeros of `len` if nothing reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<'a> Tape<'a> {
    pub fn new(precision: Dtype) -> Self {
        Tape {
            precision,
            nodes: Vec::new(),
        }
    }

    pub fn precision(&self) -> Dtype {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec(), self.precision)
            .expect("tape values are well-formed")
    }

    /// Register a tensor as a leaf. Gradients are tracked if the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        let value = if t.dtype().fits_in(self.precision) {
            Cow::Borrowed(t.data())
        } else {
            let mut v = t.data().to_vec();
            self.precision.round_slice(&mut v);
            Cow::Owned(v)
        };
        self.push_node(value, t.shape().to_vec(), t.requires_grad, Op::Leaf)
    }

    /// Register an owned tensor as a leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad;
        let shape = t.shape().to_vec();
        let mut v = t.into_data();
        self.precision.round_slice(&mut v);
        self.push_node(Cow::Owned(v), shape, requires_grad, Op::Leaf)
    }

    fn push_node(&mut self, value: Cow<'a, [f64]>, shape: Vec<usize>, rg: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            shape,
            requires_grad: rg,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, mut value: Vec<f64>, shape: Vec<usize>, inputs: &[Var], op: Op) -> Var {
        self.precision.round_slice(&mut value);
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(Cow::Owned(value), shape, rg, op)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(shape_err(op, s, &[])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(out, vec![m, n], &[a, b], Op::Matmul(a, b)))
    }

    /// a · bᵀ, the orientation of a linear layer with weight `b` of shape [out×in].
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_t")?;
        let (n, k2) = self.dims2(b, "matmul_t")?;
        if k != k2 {
            return Err(shape_err("matmul_t", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_t(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(out, vec![m, n], &[a, b], Op::MatmulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(out, self.shape(a).to_vec(), &[a, b], Op::Add(a, b)))
    }

    /// Add a length-c vector to every row of an r×c matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.dims2(x, "add_row")?;
        if self.shape(bias) != [c] {
            return Err(shape_err("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(v, bv)| v + bv))
            .collect();
        Ok(self.push(out, self.shape(x).to_vec(), &[x, bias], Op::AddRow(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(out, self.shape(a).to_vec(), &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * s).collect();
        self.push(out, self.shape(x).to_vec(), &[x], Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        self.push(out, self.shape(x).to_vec(), &[x], Op::Gelu(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = kernels::axis_split(self.shape(x), axis)?;
        let mut out = vec![0.0; self.value(x).len()];
        kernels::softmax(self.value(x), &mut out, outer, len, inner);
        Ok(self.push(out, self.shape(x).to_vec(), &[x], Op::Softmax { x, axis }))
    }

    /// Normalize over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let d = *self.shape(x).last().expect("non-empty shape");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let n = self.value(x).len();
        let mut out = vec![0.0; n];
        let mut xhat = vec![0.0; n];
        let mut inv_std = vec![0.0; n / d];
        kernels::layer_norm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            eps,
            d,
            &mut out,
            &mut xhat,
            &mut inv_std,
        );
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        Ok(self.push(out, self.shape(x).to_vec(), &[x, gamma, beta], op))
    }

    /// Copy out the sub-matrix rows [r0, r1) × cols [c0, c1).
    pub fn slice(&mut self, x: Var, rows: (usize, usize), cols: (usize, usize)) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice")?;
        let ((r0, r1), (c0, c1)) = (rows, cols);
        if r0 >= r1 || r1 > r || c0 >= c1 || c1 > c {
            return Err(shape_err("slice", &[r, c], &[r0, r1, c0, c1]));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for i in r0..r1 {
            out.extend_from_slice(&src[i * c + c0..i * c + c1]);
        }
        Ok(self.push(out, vec![r1 - r0, c1 - c0], &[x], Op::Slice { x, r0, c0 }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims2(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return Err(shape_err(
                    "concat_cols",
                    self.shape(parts[0]),
                    self.shape(p),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(
            out,
            vec![rows, total],
            parts,
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.dims2(parts[0], "concat_rows")?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != cols {
                return Err(shape_err(
                    "concat_rows",
                    self.shape(parts[0]),
                    self.shape(p),
                ));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(out, vec![rows, cols], parts, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, d) = self.dims2(table, "gather")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!(
                "index {bad} out of range for {n} rows"
            )));
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.push(out, vec![ids.len(), d], &[table], op))
    }

    /// Batch-mean of −log softmax(logits)[label].
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = self.dims2(logits, "cross_entropy")?;
        if labels.len() != b {
            return Err(shape_err(
                "cross_entropy",
                self.shape(logits),
                &[labels.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let logp = kernels::log_softmax_rows(self.value(logits), k);
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &l)| logp[i * k + l])
            .sum::<f64>()
            / b as f64;
        let probs = logp.iter().map(|v| v.exp()).collect();
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(vec![loss], vec![1], &[logits], op))
    }

    /// Batch-mean KL(target ‖ softmax(logits)); `target` rows are
    /// probability distributions held constant.
    pub fn kl_div(&mut self, logits: Var, target: &[f64]) -> Result<Var> {
        let (b, k) = self.dims2(logits, "kl_div")?;
        if target.len() != b * k {
            return Err(shape_err("kl_div", self.shape(logits), &[target.len()]));
        }
        let logq = kernels::log_softmax_rows(self.value(logits), k);
        let kl = target
            .iter()
            .zip(&logq)
            .filter(|(&t, _)| t > 0.0)
            .map(|(&t, &lq)| t * (t.ln() - lq))
            .sum::<f64>()
            / b as f64;
        let op = Op::KlDiv {
            logits,
            target: target.to_vec(),
            probs: logq.iter().map(|v| v.exp()).collect(),
        };
        Ok(self.push(vec![kl], vec![1], &[logits], op))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![s], vec![1], &[x], Op::Sum(x))
    }

    /// W ⊙ expand(mask). When `scores` is given, it receives the
    /// straight-through gradient Σ_block dL/dW′ · W for every block, kept or not.
    pub fn masked_weight(
        &mut self,
        weight: Var,
        scores: Option<Var>,
        keep_blocks: &[bool],
        layout: BlockLayout,
    ) -> Result<Var> {
        let (r, c) = self.dims2(weight, "masked_weight")?;
        if (r, c) != (layout.rows, layout.cols) || keep_blocks.len() != layout.n_blocks() {
            return Err(shape_err(
                "masked_weight",
                &[r, c],
                &[layout.rows, layout.cols],
            ));
        }
        if let Some(s) = scores {
            if self.value(s).len() != layout.n_blocks() {
                return Err(shape_err(
                    "masked_weight",
                    self.shape(s),
                    &[layout.n_blocks()],
                ));
            }
        }
        let keep = layout.expand(keep_blocks);
        let out = self
            .value(weight)
            .iter()
            .zip(&keep)
            .map(|(w, k)| w * k)
            .collect();
        let mut inputs = vec![weight];
        inputs.extend(scores);
        let op = Op::Masked {
            weight,
            scores,
            keep,
            layout,
        };
        Ok(self.push(out, vec![r, c], &inputs, op))
    }

    /// Inverted dropout; `rate` is the drop probability.
    pub fn dropout<R: rand::Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let keep: Vec<f64> = (0..self.value(x).len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&keep)
            .map(|(v, k)| v * k)
            .collect();
        self.push(out, self.shape(x).to_vec(), &[x], Op::Dropout { x, keep })
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_scaled(loss, 1.0)
    }

    /// Backpropagate with the output gradient seeded to `scale` (loss scaling).
    pub fn backward_scaled(&self, loss: Var, scale: f64) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![scale]);

        for i in (0..=loss.0).rev() {
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let leaf = matches!(node.op, Op::Leaf);
            // leaves hold master-precision gradients
            let gdtype = if leaf && self.precision == Dtype::F16e {
                Dtype::F32
            } else {
                self.precision
            };
            gdtype.round_slice(&mut g);
            if !leaf {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        let shp = |v: Var| -> &[usize] { &self.nodes[v.0].shape };

        match &node.op {
            Op::Leaf => {}
            &Op::Matmul(a, b) => {
                let (m, k) = (shp(a)[0], shp(a)[1]);
                let n = shp(b)[1];
                acc(a, &mut |da| {
                    let mut tmp = vec![0.0; m * k];
                    kernels::matmul_t(g, val(b), &mut tmp, m, n, k);
                    da.iter_mut().zip(&tmp).for_each(|(d, t)| *d += t);
                });
                acc(b, &mut |db| kernels::matmul_tn_acc(val(a), g, db, m, k, n));
            }
            &Op::MatmulT(a, b) => {
                let (m, k) = (shp(a)[0], shp(a)[1]);
                let n = shp(b)[0];
                acc(a, &mut |da| {
                    let mut tmp = vec![0.0; m * k];
                    kernels::matmul(g, val(b), &mut tmp, m, n, k);
                    da.iter_mut().zip(&tmp).for_each(|(d, t)| *d += t);
                });
                acc(b, &mut |db| kernels::matmul_tn_acc(g, val(a), db, m, n, k));
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    acc(v, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
            }
            &Op::AddRow(x, bias) => {
                let c = shp(bias)[0];
                acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(bias, &mut |db| {
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            &Op::Mul(a, b) => {
                acc(a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(val(b)) {
                        *d += g * y;
                    }
                });
                acc(b, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(val(a)) {
                        *d += g * x;
                    }
                });
            }
            &Op::Scale(x, s) => {
                acc(x, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g)
                });
            }
            &Op::Gelu(x) => acc(x, &mut |d| {
                for ((d, g), &xv) in d.iter_mut().zip(g).zip(val(x)) {
                    *d += g * kernels::gelu_grad(xv);
                }
            }),
            &Op::Softmax { x, axis } => {
                let (outer, len, inner) =
                    kernels::axis_split(shp(x), axis).expect("checked in forward");
                acc(x, &mut |d| {
                    kernels::softmax_backward(&node.value, g, d, outer, len, inner)
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = shp(*gamma)[0];
                let gam = val(*gamma);
                acc(*x, &mut |dx| {
                    for (r, &istd) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let dxhat: Vec<f64> = gr.iter().zip(gam).map(|(g, w)| g * w).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dx[r * d + j] +=
                                istd / d as f64 * (d as f64 * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                });
                acc(*gamma, &mut |dg| {
                    for (gr, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * xh[j];
                        }
                    }
                });
                acc(*beta, &mut |db| {
                    for gr in g.chunks(d) {
                        db.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                });
            }
            &Op::Slice { x, r0, c0 } => {
                let src_cols = shp(x)[1];
                let (rows, cols) = (node.shape[0], node.shape[1]);
                acc(x, &mut |d| {
                    for i in 0..rows {
                        let dst = (r0 + i) * src_cols + c0;
                        for j in 0..cols {
                            d[dst + j] += g[i * cols + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = (node.shape[0], node.shape[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = shp(p)[1];
                    acc(p, &mut |d| {
                        for i in 0..rows {
                            for j in 0..w {
                                d[i * w + j] += g[i * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(p, &mut |d| {
                        d.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(d, g)| *d += g)
                    });
                    offset += n;
                }
            }
            Op::Gather { table, ids } => {
                let d = shp(*table)[1];
                acc(*table, &mut |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let k = probs.len() / b;
                let s = g[0] / b as f64;
                acc(*logits, &mut |d| {
                    for (i, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == l { 1.0 } else { 0.0 };
                            d[i * k + j] += s * (probs[i * k + j] - onehot);
                        }
                    }
                });
            }
            Op::KlDiv {
                logits,
                target,
                probs,
            } => {
                let b = shp(*logits)[0];
                let s = g[0] / b as f64;
                acc(*logits, &mut |d| {
                    for ((d, q), t) in d.iter_mut().zip(probs).zip(target) {
                        *d += s * (q - t);
                    }
                });
            }
            &Op::Sum(x) => acc(x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Masked {
                weight,
                scores,
                keep,
                layout,
            } => {
                acc(*weight, &mut |d| {
                    for ((d, g), k) in d.iter_mut().zip(g).zip(keep) {
                        *d += g * k;
                    }
                });
                if let Some(s) = *scores {
                    let w = val(*weight);
                    acc(s, &mut |ds| layout.accumulate_block_sums(g, w, ds));
                }
            }
            Op::Dropout { x, keep } => acc(*x, &mut |d| {
                for ((d, g), k) in d.iter_mut().zip(g).zip(keep) {
                    *d += g * k;
                }
            }),
        }
    }
}
