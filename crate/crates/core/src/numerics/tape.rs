//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Every op evaluates eagerly and appends a node; `backward` walks the nodes
//! in reverse, accumulating vector-Jacobian products into the inputs that
//! require gradients. Parameters are borrowed, not copied, for the lifetime
//! of the tape.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::numerics::tensor::{Mask, Tensor};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

impl<T> Deref for Value<'_, T> {
    type Target = Tensor<T>;

    fn deref(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        means: Vec<f64>,
        rstds: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Transpose(Var),
    Gelu(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
    },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::ConcatCols(..) => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::Transpose(..) => "transpose",
            Op::Gelu(..) => "gelu",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node<'a, T> {
    value: Value<'a, T>,
    op: Op,
    requires_grad: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub struct Tape<'a, T> {
    nodes: Vec<Node<'a, T>>,
    grad_enabled: bool,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape on which parameters never require gradients.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Value<'a, T>, op: Op, requires_grad: bool) -> Result<Var> {
        value.ensure_finite(op.name())?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A borrowed trainable leaf.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Result<Var> {
        let g = self.grad_enabled;
        self.push(Value::Borrowed(t), Op::Leaf, g)
    }

    /// An owned trainable leaf.
    pub fn param_owned(&mut self, t: Tensor<T>) -> Result<Var> {
        let g = self.grad_enabled;
        self.push(Value::Owned(t), Op::Leaf, g)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(Value::Owned(t), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor<T>) -> Result<Var> {
        self.push(Value::Borrowed(t), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let g = self.any_grad(&[a, b]);
        self.push(Value::Owned(out), Op::MatMul(a, b), g)
    }

    /// `a · bᵀ`, the layout used for every linear layer (`W` is `out × in`).
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        let g = self.any_grad(&[a, b]);
        self.push(Value::Owned(out), Op::MatMulT(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let g = self.any_grad(&[a, b]);
        self.push(Value::Owned(out), Op::Add(a, b), g)
    }

    /// Adds a length-`n` vector to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let n = xv.cols();
        if bv.numel() != n {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let g = self.any_grad(&[x, bias]);
        self.push(Value::Owned(out), Op::AddBias(x, bias), g)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mul", av.shape(), bv.shape()));
        }
        let out = av.zip_map(bv, |x, y| x * y);
        let g = self.any_grad(&[a, b]);
        self.push(Value::Owned(out), Op::Mul(a, b), g)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).scale(T::lit(s));
        let g = self.any_grad(&[x]);
        self.push(Value::Owned(out), Op::Scale(x, s), g)
    }

    /// Row-wise softmax; entries outside `mask` get probability zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&Mask>) -> Result<Var> {
        let out = self.value(x).softmax_rows_masked(mask)?;
        let g = self.any_grad(&[x]);
        self.push(Value::Owned(out), Op::Softmax(x), g)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (out, means, rstds) =
            self.value(x)
                .layer_norm(self.value(gain), self.value(bias), T::lit(eps))?;
        let g = self.any_grad(&[x, gain, bias]);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            means: means.iter().map(|m| m.to_f64_lossless()).collect(),
            rstds: rstds.iter().map(|r| r.to_f64_lossless()).collect(),
        };
        self.push(Value::Owned(out), op, g)
    }

    /// Gathers rows of `table` (`vocab × d`) by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (vocab, d) = (tv.rows(), tv.cols());
        if ids.is_empty() {
            return Err(Error::InvalidTensor("embedding lookup with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::InvalidTensor(format!(
                    "embedding id {id} out of range for table of {vocab} rows"
                )));
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let g = self.any_grad(&[table]);
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        self.push(Value::Owned(out), op, g)
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidTensor("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != 2 || pv.rows() != rows {
                return Err(Error::shape("concat", self.value(*first).shape(), pv.shape()));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let g = self.any_grad(parts);
        self.push(Value::Owned(out), Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || len == 0 || start + len > xv.cols() {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for i in 0..xv.rows() {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![xv.rows(), len], data)?;
        let g = self.any_grad(&[x]);
        self.push(Value::Owned(out), Op::SliceCols { x, start }, g)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || len == 0 || start + len > xv.rows() {
            return Err(Error::shape("slice_rows", xv.shape(), &[start, len]));
        }
        let c = xv.cols();
        let data = xv.data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(vec![len, c], data)?;
        let g = self.any_grad(&[x]);
        self.push(Value::Owned(out), Op::SliceRows { x, start }, g)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let g = self.any_grad(&[x]);
        self.push(Value::Owned(out), Op::Transpose(x), g)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let c = T::lit(GELU_C);
        let a = T::lit(GELU_A);
        let half = T::lit(0.5);
        let out = self
            .value(x)
            .map(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()));
        let g = self.any_grad(&[x]);
        self.push(Value::Owned(out), Op::Gelu(x), g)
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. `None` targets (padding) contribute nothing.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, vocab) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(Error::shape("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let mut total = T::zero();
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= vocab {
                return Err(Error::InvalidTensor(format!(
                    "target {t} out of range for {vocab} classes"
                )));
            }
            let row = lv.row(i);
            total += log_sum_exp(row) - row[t];
        }
        let g = self.any_grad(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
        };
        self.push(Value::Owned(Tensor::scalar(total)), op, g)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let g = self.any_grad(&[x]);
        self.push(Value::Owned(out), Op::Sum(x), g)
    }

    /// Consumes the tape and returns `d loss / d leaf` for every leaf that
    /// requires gradients.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Backward("loss is not on this tape".into()))?;
        if !loss_node.value.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        if !loss_node.requires_grad {
            return Err(Error::Backward(
                "loss is detached from every trainable parameter".into(),
            ));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_node.value.shape(), T::one()));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(g);
                continue;
            }
            for (input, contribution) in self.vjp(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                contribution.ensure_finite(&format!("backward of {}", node.op.name()))?;
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution)?,
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn vjp(&self, node: &Node<'a, T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    out.push((*a, g.matmul_t(val(*b))?));
                }
                if needs(*b) {
                    out.push((*b, val(*a).t_matmul(g)?));
                }
            }
            Op::MatMulT(a, b) => {
                // c = a bᵀ: da = g b, db = gᵀ a
                if needs(*a) {
                    out.push((*a, g.matmul(val(*b))?));
                }
                if needs(*b) {
                    out.push((*b, g.t_matmul(val(*a))?));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::AddBias(x, bias) => {
                out.push((*x, g.clone()));
                if needs(*bias) {
                    let n = g.cols();
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    out.push((*bias, Tensor::new(val(*bias).shape().to_vec(), db)?));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    out.push((*a, g.zip_map(val(*b), |x, y| x * y)));
                }
                if needs(*b) {
                    out.push((*b, g.zip_map(val(*a), |x, y| x * y)));
                }
            }
            Op::Scale(x, s) => out.push((*x, g.scale(T::lit(*s)))),
            Op::Softmax(x) => {
                let y = &*node.value;
                let n = y.cols();
                let mut dx = vec![T::zero(); y.numel()];
                for ((yr, gr), dr) in y
                    .data()
                    .chunks(n)
                    .zip(g.data().chunks(n))
                    .zip(dx.chunks_mut(n))
                {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                out.push((*x, Tensor::new(y.shape().to_vec(), dx)?));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                means,
                rstds,
            } => {
                let xv = val(*x);
                let gv = val(*gain);
                let c = xv.cols();
                let nf = T::from_usize(c).expect("extent fits scalar");
                let mut dx = vec![T::zero(); xv.numel()];
                let mut dgain = vec![T::zero(); c];
                let mut dbias = vec![T::zero(); c];
                let mut xhat = vec![T::zero(); c];
                let mut dxhat = vec![T::zero(); c];
                for r in 0..xv.rows() {
                    let mean = T::lit(means[r]);
                    let rstd = T::lit(rstds[r]);
                    let xr = xv.row(r);
                    let gr = g.row(r);
                    for j in 0..c {
                        xhat[j] = (xr[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gv.data()[j];
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                    let mean_d: T = dxhat.iter().copied().sum::<T>() / nf;
                    let mean_dx: T =
                        dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / nf;
                    for j in 0..c {
                        dx[r * c + j] = rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                    }
                }
                out.push((*x, Tensor::new(xv.shape().to_vec(), dx)?));
                if needs(*gain) {
                    out.push((*gain, Tensor::new(gv.shape().to_vec(), dgain)?));
                }
                if needs(*bias) {
                    out.push((*bias, Tensor::new(val(*bias).shape().to_vec(), dbias)?));
                }
            }
            Op::Embedding { table, ids } => {
                let tv = val(*table);
                let d = tv.cols();
                let mut dt = Tensor::zeros(tv.shape());
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                    for (o, &v) in dst.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                out.push((*table, dt));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if needs(p) {
                        let mut data = Vec::with_capacity(g.rows() * w);
                        for i in 0..g.rows() {
                            data.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        out.push((p, Tensor::new(vec![g.rows(), w], data)?));
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let mut dx = Tensor::zeros(xv.shape());
                let (c, w) = (xv.cols(), g.cols());
                for i in 0..g.rows() {
                    dx.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                out.push((*x, dx));
            }
            Op::SliceRows { x, start } => {
                let xv = val(*x);
                let mut dx = Tensor::zeros(xv.shape());
                let c = xv.cols();
                dx.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                out.push((*x, dx));
            }
            Op::Transpose(x) => out.push((*x, g.transpose()?)),
            Op::Gelu(x) => {
                let c = T::lit(GELU_C);
                let a = T::lit(GELU_A);
                let half = T::lit(0.5);
                let three = T::lit(3.0);
                let dx = val(*x).zip_map(g, |v, gv| {
                    let t = (c * (v + a * v * v * v)).tanh();
                    let dt = (T::one() - t * t) * c * (T::one() + three * a * v * v);
                    gv * (half * (T::one() + t) + half * v * dt)
                });
                out.push((*x, dx));
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = val(*logits);
                let upstream = g.item();
                let mut dl = Tensor::zeros(lv.shape());
                let n = lv.cols();
                for (i, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let row = lv.row(i);
                    let lse = log_sum_exp(row);
                    let dst = &mut dl.data_mut()[i * n..(i + 1) * n];
                    for (d, &x) in dst.iter_mut().zip(row) {
                        *d = (x - lse).exp() * upstream;
                    }
                    dst[t] -= upstream;
                }
                out.push((*logits, dl));
            }
            Op::Sum(x) => out.push((*x, Tensor::full(val(*x).shape(), g.item()))),
        }
        Ok(out)
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    /// `None` when the leaf did not take part in the loss or needs no gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
