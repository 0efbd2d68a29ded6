//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value and whatever the
//! backward rule needs. Node ids increase in recording order, so replaying
//! the list backwards is a valid reverse topological order and each node is
//! visited once.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
        /// Batch mean and biased variance; `None` in evaluation mode.
        batch_stats: Option<(Vec<f64>, Vec<f64>)>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    AssembleTokens {
        proj: Var,
        class_token: Var,
        pos: Var,
        panels: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    GroupSum {
        x: Var,
        group: usize,
        scale: f64,
    },
    RepeatRows {
        x: Var,
        times: usize,
    },
    SumAll(Var),
    MeanAll(Var),
    CrossEntropy {
        scores: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    ContrastLoss {
        scores: Var,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient data of a leaf, zeros when the leaf is unused.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Per-row (`axis_rows = true`) or per-column normalisation statistics.
fn normalise(x: &[f64], rows: usize, cols: usize, eps: f64, axis_rows: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (groups, len) = if axis_rows { (rows, cols) } else { (cols, rows) };
    let at = |g: usize, t: usize| if axis_rows { g * cols + t } else { t * cols + g };
    let mut xhat = vec![0.0; x.len()];
    let mut means = Vec::with_capacity(groups);
    let mut vars = Vec::with_capacity(groups);
    let mut rstds = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut sum = 0.0;
        for t in 0..len {
            sum += x[at(g, t)];
        }
        let mean = sum / len as f64;
        let mut sq = 0.0;
        for t in 0..len {
            let d = x[at(g, t)] - mean;
            sq += d * d;
        }
        let var = sq / len as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for t in 0..len {
            xhat[at(g, t)] = (x[at(g, t)] - mean) * rstd;
        }
        means.push(mean);
        vars.push(var);
        rstds.push(rstd);
    }
    (xhat, rstds, means, vars)
}

/// Backward of `xhat = (x - mean)·rstd` given `dxhat`, along rows or columns.
fn normalise_backward(dxhat: &[f64], xhat: &[f64], rstd: &[f64], rows: usize, cols: usize, axis_rows: bool) -> Vec<f64> {
    let (groups, len) = if axis_rows { (rows, cols) } else { (cols, rows) };
    let at = |g: usize, t: usize| if axis_rows { g * cols + t } else { t * cols + g };
    let mut dx = vec![0.0; dxhat.len()];
    for g in 0..groups {
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for t in 0..len {
            mean_d += dxhat[at(g, t)];
            mean_dx += dxhat[at(g, t)] * xhat[at(g, t)];
        }
        mean_d /= len as f64;
        mean_dx /= len as f64;
        for t in 0..len {
            let i = at(g, t);
            dx[i] = rstd[g] * (dxhat[i] - mean_d - xhat[i] * mean_dx);
        }
    }
    dx
}

/// Copies columns `col..col+width` of rows `row..row+rows` into a dense block.
fn head_block(x: &[f64], row: usize, rows: usize, cols: usize, col: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * width);
    for r in row..row + rows {
        out.extend_from_slice(&x[r * cols + col..][..width]);
    }
    out
}

/// Inverse of [`head_block`].
fn scatter_block(x: &mut [f64], block: &[f64], row: usize, rows: usize, cols: usize, col: usize, width: usize) {
    for (r, src) in (row..row + rows).zip(block.chunks_exact(width)) {
        x[r * cols + col..][..width].copy_from_slice(src);
    }
}

/// Fixed-tree sum of the rows of `block` into `out`.
fn pairwise_sum(block: &[f64], cols: usize, out: &mut [f64]) {
    let rows = block.len() / cols;
    if rows == 1 {
        out.copy_from_slice(block);
        return;
    }
    let mid = rows / 2;
    let mut right = vec![0.0; cols];
    pairwise_sum(&block[..mid * cols], cols, out);
    pairwise_sum(&block[mid * cols..], cols, &mut right);
    add_into(out, &right);
}

fn check_targets(op: &'static str, targets: &[usize], rows: usize, cols: usize) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::shape(op, format!("{} targets for {rows} score rows", targets.len())));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= cols) {
        return Err(Error::Contract(format!("{op}: answer index {t} outside [0, {cols})")));
    }
    Ok(())
}

/// Per-row contrast objective: `softplus(-s⋆) + Σ_{a≠⋆} softplus(s_a)`,
/// i.e. `-log σ(s⋆) - Σ log(1 - σ(s_a))`.
pub(crate) fn contrast_row(scores: &[f64], target: usize) -> f64 {
    let mut loss = 0.0;
    for (a, &s) in scores.iter().enumerate() {
        loss += if a == target {
            kernels::softplus(-s)
        } else {
            kernels::softplus(s)
        };
    }
    loss
}

/// Per-row cross-entropy `-log softmax(scores)[target]`.
pub(crate) fn cross_entropy_row(scores: &[f64], target: usize) -> f64 {
    kernels::log_sum_exp(scores) - scores[target]
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf (a parameter or a checked input).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Attention weights `[groups × heads × seq × seq]` of an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Batch mean and biased variance recorded by a training-mode batch norm.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm {
                batch_stats: Some((m, s)),
                ..
            } => Some((m, s)),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul { a, b }, &[a, b]))
    }

    /// `x·w + b` for `x [r×i]`, `w [i×o]`, `b [o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let mut out = self.value(x).matmul(self.value(w)).map_err(|e| match e {
            Error::Shape { detail, .. } => Error::shape("linear", detail),
            e => e,
        })?;
        if let Some(b) = b {
            let (_, o) = out.dims2()?;
            let bias = self.value(b);
            if bias.shape() != [o] {
                return Err(Error::shape("linear", format!("bias {:?} for {o} outputs", bias.shape())));
            }
            let bias = bias.data().to_vec();
            for row in out.data_mut().chunks_exact_mut(o) {
                add_into(row, &bias);
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(kernels::gelu);
        self.push(value, Op::Gelu(a), &[a])
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let outer = shape[..axis].iter().product();
        let len = shape[axis];
        let inner = shape[axis + 1..].iter().product();
        let value = Tensor::new(shape, kernels::softmax_axis(v.data(), outer, len, inner))?;
        Ok(self.push(value, Op::Softmax { x, outer, len, inner }, &[x]))
    }

    /// Normalises each last-axis row: `gamma ⊙ (x − mean)/sqrt(var + eps) + beta`
    /// with the biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = v.rows_cols();
        self.check_affine("layer_norm", gamma, beta, cols)?;
        if !(eps >= 0.0) {
            return Err(Error::Contract(format!("layer_norm eps must be nonnegative, got {eps}")));
        }
        let (xhat, rstd, _, _) = normalise(v.data(), rows, cols, eps, true);
        let out = self.affine(&xhat, gamma, beta, cols);
        let value = Tensor::new(v.shape(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Per-feature normalisation of `x [r×c]` with batch statistics
    /// (`running = None`) or with fixed running mean/variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = v.dims2()?;
        self.check_affine("batch_norm", gamma, beta, cols)?;
        let (xhat, rstd, batch_stats) = match running {
            None => {
                let (xhat, rstd, mean, var) = normalise(v.data(), rows, cols, eps, false);
                (xhat, rstd, Some((mean, var)))
            }
            Some((mean, var)) => {
                if mean.len() != cols || var.len() != cols {
                    return Err(Error::shape("batch_norm", "running statistics length"));
                }
                let rstd: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
                let mut xhat = v.data().to_vec();
                for row in xhat.chunks_exact_mut(cols) {
                    for j in 0..cols {
                        row[j] = (row[j] - mean[j]) * rstd[j];
                    }
                }
                (xhat, rstd, None)
            }
        };
        let out = self.affine(&xhat, gamma, beta, cols);
        let value = Tensor::new([rows, cols], out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                batch_stats,
            },
            &[x, gamma, beta],
        ))
    }

    fn check_affine(&self, op: &'static str, gamma: Var, beta: Var, cols: usize) -> Result<()> {
        for p in [gamma, beta] {
            if self.value(p).shape() != [cols] {
                return Err(Error::shape(
                    op,
                    format!("affine parameter {:?} for feature size {cols}", self.value(p).shape()),
                ));
            }
        }
        Ok(())
    }

    fn affine(&self, xhat: &[f64], gamma: Var, beta: Var, cols: usize) -> Vec<f64> {
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.to_vec();
        for row in out.chunks_exact_mut(cols) {
            for j in 0..cols {
                row[j] = g[j] * row[j] + b[j];
            }
        }
        out
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `q`, `k`, `v` are `[groups·seq × D]`; rows `g·seq..(g+1)·seq` form one
    /// independent sequence and head `h` uses columns `h·D/H..(h+1)·D/H`. The
    /// output concatenates the heads along columns.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, seq: usize, heads: usize) -> Result<Var> {
        let (rows, d) = self.value(q).dims2()?;
        for other in [k, v] {
            same_shape("attention", self.value(q), self.value(other))?;
        }
        if rows != groups * seq {
            return Err(Error::shape("attention", format!("{rows} rows for {groups} sequences of {seq}")));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("width {d} not divisible into {heads} heads")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; groups * heads * seq * seq];
        let mut out = vec![0.0; rows * d];
        for g in 0..groups {
            for h in 0..heads {
                let block = |x: &[f64]| head_block(x, g * seq, seq, d, h * dh, dh);
                let (qh, kh, vh) = (block(qd), block(kd), block(vd));
                let p = &mut probs[(g * heads + h) * seq * seq..][..seq * seq];
                p.copy_from_slice(&kernels::matmul_nt(&qh, &kh, seq, dh, seq));
                for row in p.chunks_exact_mut(seq) {
                    row.iter_mut().for_each(|s| *s *= scale);
                    kernels::softmax_row(row);
                }
                let o = kernels::matmul(p, &vh, seq, seq, dh);
                scatter_block(&mut out, &o, g * seq, seq, d, h * dh, dh);
            }
        }
        let value = Tensor::new([rows, d], out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                groups,
                seq,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Builds `[x_class; proj_1; …; proj_T] + E_pos` for each of `panels`
    /// consecutive blocks of `proj [panels·T × D]`.
    pub fn assemble_tokens(&mut self, proj: Var, class_token: Var, pos: Var, panels: usize) -> Result<Var> {
        let (rows, d) = self.value(proj).dims2()?;
        if panels == 0 || rows % panels != 0 {
            return Err(Error::shape("assemble_tokens", format!("{rows} rows for {panels} panels")));
        }
        let tokens = rows / panels;
        if self.value(class_token).shape() != [d] {
            return Err(Error::shape("assemble_tokens", "class token width"));
        }
        if self.value(pos).shape() != [tokens + 1, d] {
            return Err(Error::shape(
                "assemble_tokens",
                format!("positional table {:?}, expected [{}, {d}]", self.value(pos).shape(), tokens + 1),
            ));
        }
        let (pd, cd, posd) = (self.value(proj).data(), self.value(class_token).data(), self.value(pos).data());
        let seq = tokens + 1;
        let mut out = vec![0.0; panels * seq * d];
        for p in 0..panels {
            for t in 0..seq {
                let src = if t == 0 { cd } else { &pd[(p * tokens + t - 1) * d..][..d] };
                let dst = &mut out[(p * seq + t) * d..][..d];
                for j in 0..d {
                    dst[j] = src[j] + posd[t * d + j];
                }
            }
        }
        let value = Tensor::new([panels * seq, d], out)?;
        Ok(self.push(
            value,
            Op::AssembleTokens {
                proj,
                class_token,
                pos,
                panels,
            },
            &[proj, class_token, pos],
        ))
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if let Some(bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {r}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in &rows {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::new([rows.len(), c], out)?;
        Ok(self.push(value, Op::GatherRows { x, rows }, &[x]))
    }

    /// Sums each block of `group` consecutive rows: `[n·group × c] → [n × c]`.
    ///
    /// Rows are combined pairwise in a fixed tree (halves first), which keeps
    /// the order deterministic and makes the sum of identical rows exact for
    /// power-of-two groups.
    pub fn group_sum(&mut self, x: Var, group: usize) -> Result<Var> {
        self.group_reduce(x, group, 1.0)
    }

    /// Averages each block of `group` consecutive rows.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var> {
        self.group_reduce(x, group, 1.0 / group as f64)
    }

    fn group_reduce(&mut self, x: Var, group: usize, scale: f64) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if group == 0 || r % group != 0 {
            return Err(Error::shape("group_sum", format!("{r} rows in groups of {group}")));
        }
        let src = self.value(x).data();
        let n = r / group;
        let mut out = vec![0.0; n * c];
        for (dst, block) in out.chunks_exact_mut(c).zip(src.chunks_exact(group * c)) {
            pairwise_sum(block, c, dst);
        }
        if scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let value = Tensor::new([n, c], out)?;
        Ok(self.push(value, Op::GroupSum { x, group, scale }, &[x]))
    }

    /// Repeats every row `times` times consecutively: `[n × c] → [n·times × c]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if times == 0 {
            return Err(Error::shape("repeat_rows", "zero repetitions"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * times * c);
        for row in src.chunks_exact(c) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        let value = Tensor::new([r * times, c], out)?;
        Ok(self.push(value, Op::RepeatRows { x, times }, &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: f64 = v.data().iter().sum();
        let m = s / v.numel() as f64;
        self.push(Tensor::scalar(m), Op::MeanAll(x), &[x])
    }

    /// Mean over rows of `-log softmax(scores)[target]`.
    pub fn cross_entropy(&mut self, scores: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(scores);
        let (rows, cols) = v.dims2()?;
        check_targets("cross_entropy", targets, rows, cols)?;
        let mut probs = v.data().to_vec();
        let mut total = 0.0;
        for (row, (p, &t)) in v.data().chunks_exact(cols).zip(probs.chunks_exact_mut(cols).zip(targets)) {
            total += cross_entropy_row(row, t);
            kernels::softmax_row(p);
        }
        let value = Tensor::scalar(total / rows as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                scores,
                targets: targets.to_vec(),
                probs,
            },
            &[scores],
        ))
    }

    /// Mean over rows of `-log σ(s⋆) - Σ_{a≠⋆} log(1 - σ(s_a))`.
    pub fn contrast_loss(&mut self, scores: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(scores);
        let (rows, cols) = v.dims2()?;
        check_targets("contrast_loss", targets, rows, cols)?;
        let total: f64 = v
            .data()
            .chunks_exact(cols)
            .zip(targets)
            .map(|(row, &t)| contrast_row(row, t))
            .sum();
        let value = Tensor::scalar(total / rows as f64);
        Ok(self.push(
            value,
            Op::ContrastLoss {
                scores,
                targets: targets.to_vec(),
            },
            &[scores],
        ))
    }

    /// Propagates `d loss / d node` back to every differentiable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(Error::Contract("backward: loss is not on this tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; n];

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut push = |v: Var, delta: Vec<f64>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => add_into(acc, &delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            let wants = |v: Var| self.nodes[v.0].requires_grad;
            let val = |v: Var| &self.nodes[v.0].value;

            match &node.op {
                Op::Leaf => {
                    leaf_grads[id] = Some(Tensor::new(node.value.shape(), g)?);
                }
                Op::MatMul { a, b } | Op::Linear { x: a, w: b, .. } => {
                    let (m, k) = val(*a).dims2()?;
                    let (_, cols) = val(*b).dims2()?;
                    if wants(*a) {
                        push(*a, kernels::matmul_nt(&g, val(*b).data(), m, cols, k));
                    }
                    if wants(*b) {
                        push(*b, kernels::matmul_tn(val(*a).data(), &g, m, k, cols));
                    }
                    if let Op::Linear { b: Some(bias), .. } = &node.op {
                        if wants(*bias) {
                            let mut db = vec![0.0; cols];
                            for row in g.chunks_exact(cols) {
                                add_into(&mut db, row);
                            }
                            push(*bias, db);
                        }
                    }
                }
                Op::Add(a, b) => {
                    push(*a, g.clone());
                    push(*b, g);
                }
                Op::Sub(a, b) => {
                    push(*b, g.iter().map(|v| -v).collect());
                    push(*a, g);
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        push(*a, g.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect());
                    }
                    if wants(*b) {
                        push(*b, g.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect());
                    }
                }
                Op::Scale(a, c) => push(*a, g.iter().map(|v| v * c).collect()),
                Op::Transpose(a) => {
                    let (r, c) = val(*a).dims2()?;
                    push(*a, kernels::transpose(&g, c, r));
                }
                Op::Reshape(a) => push(*a, g),
                Op::Gelu(a) => {
                    push(*a, g.iter().zip(val(*a).data()).map(|(g, &x)| g * kernels::gelu_grad(x)).collect());
                }
                Op::Softmax { x, outer, len, inner } => {
                    let y = node.value.data();
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |t: usize| o * len * inner + t * inner + i;
                            let mut dot = 0.0;
                            for t in 0..*len {
                                dot += g[at(t)] * y[at(t)];
                            }
                            for t in 0..*len {
                                dx[at(t)] = y[at(t)] * (g[at(t)] - dot);
                            }
                        }
                    }
                    push(*x, dx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let (rows, cols) = node.value.rows_cols();
                    let gam = val(*gamma).data();
                    let (mut dg, mut db) = (vec![0.0; cols], vec![0.0; cols]);
                    let mut dxhat = vec![0.0; g.len()];
                    for r in 0..rows {
                        for j in 0..cols {
                            let i = r * cols + j;
                            dg[j] += g[i] * xhat[i];
                            db[j] += g[i];
                            dxhat[i] = g[i] * gam[j];
                        }
                    }
                    if wants(*x) {
                        push(*x, normalise_backward(&dxhat, xhat, rstd, rows, cols, true));
                    }
                    push(*gamma, dg);
                    push(*beta, db);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                    batch_stats,
                } => {
                    let (rows, cols) = node.value.dims2()?;
                    let gam = val(*gamma).data();
                    let (mut dg, mut db) = (vec![0.0; cols], vec![0.0; cols]);
                    let mut dxhat = vec![0.0; g.len()];
                    for r in 0..rows {
                        for j in 0..cols {
                            let i = r * cols + j;
                            dg[j] += g[i] * xhat[i];
                            db[j] += g[i];
                            dxhat[i] = g[i] * gam[j];
                        }
                    }
                    if wants(*x) {
                        let dx = if batch_stats.is_some() {
                            normalise_backward(&dxhat, xhat, rstd, rows, cols, false)
                        } else {
                            let mut dx = dxhat;
                            for row in dx.chunks_exact_mut(cols) {
                                for j in 0..cols {
                                    row[j] *= rstd[j];
                                }
                            }
                            dx
                        };
                        push(*x, dx);
                    }
                    push(*gamma, dg);
                    push(*beta, db);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    groups,
                    seq,
                    heads,
                    probs,
                } => {
                    let (rows, d) = val(*q).dims2()?;
                    let (seq, heads) = (*seq, *heads);
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let (qd, kd, vd) = (val(*q).data(), val(*k).data(), val(*v).data());
                    let (mut dq, mut dk, mut dv) = (vec![0.0; rows * d], vec![0.0; rows * d], vec![0.0; rows * d]);
                    for grp in 0..*groups {
                        for h in 0..heads {
                            let block = |x: &[f64]| head_block(x, grp * seq, seq, d, h * dh, dh);
                            let (qh, kh, vh, go) = (block(qd), block(kd), block(vd), block(&g));
                            let p = &probs[(grp * heads + h) * seq * seq..][..seq * seq];
                            let dvh = kernels::matmul_tn(p, &go, seq, seq, dh);
                            let mut ds = kernels::matmul_nt(&go, &vh, seq, dh, seq);
                            for (dsr, pr) in ds.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                                let dot: f64 = pr.iter().zip(dsr.iter()).map(|(p, d)| p * d).sum();
                                for (x, &pj) in dsr.iter_mut().zip(pr) {
                                    *x = pj * (*x - dot) * scale;
                                }
                            }
                            let dqh = kernels::matmul(&ds, &kh, seq, seq, dh);
                            let dkh = kernels::matmul_tn(&ds, &qh, seq, seq, dh);
                            scatter_block(&mut dq, &dqh, grp * seq, seq, d, h * dh, dh);
                            scatter_block(&mut dk, &dkh, grp * seq, seq, d, h * dh, dh);
                            scatter_block(&mut dv, &dvh, grp * seq, seq, d, h * dh, dh);
                        }
                    }
                    push(*q, dq);
                    push(*k, dk);
                    push(*v, dv);
                }
                Op::AssembleTokens {
                    proj,
                    class_token,
                    pos,
                    panels,
                } => {
                    let (rows, d) = val(*proj).dims2()?;
                    let tokens = rows / panels;
                    let seq = tokens + 1;
                    let mut dproj = vec![0.0; rows * d];
                    let mut dcls = vec![0.0; d];
                    let mut dpos = vec![0.0; seq * d];
                    for p in 0..*panels {
                        for t in 0..seq {
                            let src = &g[(p * seq + t) * d..][..d];
                            add_into(&mut dpos[t * d..][..d], src);
                            if t == 0 {
                                add_into(&mut dcls, src);
                            } else {
                                dproj[(p * tokens + t - 1) * d..][..d].copy_from_slice(src);
                            }
                        }
                    }
                    if wants(*proj) {
                        push(*proj, dproj);
                    }
                    push(*class_token, dcls);
                    push(*pos, dpos);
                }
                Op::GatherRows { x, rows } => {
                    let (r, c) = val(*x).dims2()?;
                    let mut dx = vec![0.0; r * c];
                    for (k, &i) in rows.iter().enumerate() {
                        add_into(&mut dx[i * c..][..c], &g[k * c..][..c]);
                    }
                    push(*x, dx);
                }
                Op::GroupSum { x, group, scale } => {
                    let (r, c) = val(*x).dims2()?;
                    let mut dx = vec![0.0; r * c];
                    for (i, row) in dx.chunks_exact_mut(c).enumerate() {
                        let src = &g[(i / group) * c..][..c];
                        for j in 0..c {
                            row[j] = src[j] * scale;
                        }
                    }
                    push(*x, dx);
                }
                Op::RepeatRows { x, times } => {
                    let (r, c) = val(*x).dims2()?;
                    let mut dx = vec![0.0; r * c];
                    for (k, row) in g.chunks_exact(c).enumerate() {
                        add_into(&mut dx[(k / times) * c..][..c], row);
                    }
                    push(*x, dx);
                }
                Op::SumAll(x) => push(*x, vec![g[0]; val(*x).numel()]),
                Op::MeanAll(x) => {
                    let n = val(*x).numel();
                    push(*x, vec![g[0] / n as f64; n]);
                }
                Op::CrossEntropy { scores, targets, probs } => {
                    let (rows, cols) = val(*scores).dims2()?;
                    let w = g[0] / rows as f64;
                    let mut ds = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        ds[r * cols + t] -= 1.0;
                    }
                    ds.iter_mut().for_each(|v| *v *= w);
                    push(*scores, ds);
                }
                Op::ContrastLoss { scores, targets } => {
                    let (rows, cols) = val(*scores).dims2()?;
                    let w = g[0] / rows as f64;
                    let s = val(*scores).data();
                    let mut ds = vec![0.0; s.len()];
                    for (r, &t) in targets.iter().enumerate() {
                        for a in 0..cols {
                            let i = r * cols + a;
                            let sig = kernels::sigmoid(s[i]);
                            ds[i] = w * if a == t { sig - 1.0 } else { sig };
                        }
                    }
                    push(*scores, ds);
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}
