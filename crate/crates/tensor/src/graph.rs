use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
///
/// A `Var` is only meaningful for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `b` is broadcast onto the shape of `a`; `b_index[i]` maps output
    /// position `i` to its source element in `b` (empty when shapes match).
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        b_index: Vec<usize>,
    },
    Scale(Var, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in execution order, so
/// the tape is topologically sorted by construction.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    matmul_flops: u64,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            matmul_flops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Multiply-add FLOPs (2·m·k·n per product) spent in forward matmuls.
    pub fn matmul_flops(&self) -> u64 {
        self.matmul_flops
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    /// Registers a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    fn live(&self) -> Result<()> {
        if self.consumed {
            Err(TensorError::State(
                "graph was consumed by backward(); record a new graph".into(),
            ))
        } else {
            Ok(())
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let value = Tensor::new(shape, data).expect("op produced consistent shape");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2()?;
        let (k2, n) = bv.dims2()?;
        if k != k2 {
            return Err(TensorError::Dimension {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        self.matmul_flops += 2 * (m * k * n) as u64;
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise `a ∘ b` with `b` broadcast along leading axes of `a`.
    pub fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        self.live()?;
        let (av, bv) = (self.value(a), self.value(b));
        let b_index = broadcast_index(av.shape(), bv.shape()).ok_or_else(|| {
            TensorError::Dimension {
                op: match kind {
                    BinaryKind::Add => "add",
                    BinaryKind::Sub => "sub",
                    BinaryKind::Mul => "mul",
                },
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            }
        })?;
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out: Vec<T> = if b_index.is_empty() {
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            av.data()
                .iter()
                .zip(&b_index)
                .map(|(&x, &j)| f(x, bv.data()[j]))
                .collect()
        };
        let shape = av.shape().to_vec();
        Ok(self.push(shape, out, Op::Binary { kind, a, b, b_index }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.live()?;
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| v * c).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(shape, out, Op::Scale(x, c), &[x]))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| {
            TensorError::Contract("softmax of a rank-0 tensor".into())
        })?;
        if n == 0 {
            return Err(TensorError::Contract("softmax over an empty axis".into()));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(shape, out, Op::Softmax(x), &[x]))
    }

    /// Layer normalization over the last axis (biased variance).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        self.live()?;
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap_or(&0);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if d == 0 || gv.shape() != [d] || bv.shape() != [d] {
            return Err(TensorError::Dimension {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        if eps <= T::zero() {
            return Err(TensorError::Contract("layer_norm eps must be positive".into()));
        }
        let rows = xv.numel() / d;
        let inv_d = T::of(1.0 / d as f64);
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * gv.data()[j] + bv.data()[j]);
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Tanh-approximated GELU, see [`kernels::gelu`].
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| kernels::gelu(v)).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(shape, out, Op::Gelu(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        let src = xv.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], out, Op::Transpose(x), &[x]))
    }

    /// Selects rows of a matrix; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        self.live()?;
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(TensorError::Contract(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(xv.row(i));
        }
        Ok(self.push(
            vec![rows.len(), c],
            out,
            Op::GatherRows(x, rows.to_vec()),
            &[x],
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.live()?;
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if start >= end || end > c {
            return Err(TensorError::Contract(format!(
                "column slice {start}..{end} of a matrix with {c} columns"
            )));
        }
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..end]);
        }
        Ok(self.push(vec![r, end - start], out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.live()?;
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let (r, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            let (pr, pc) = pv.dims2()?;
            if pr != r {
                return Err(TensorError::Dimension {
                    op: "concat_cols",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: pv.shape().to_vec(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(vec![r, total], out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.live()?;
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.numel() {
            return Err(TensorError::Dimension {
                op: "reshape",
                lhs: xv.shape().to_vec(),
                rhs: shape,
            });
        }
        let out = xv.data().to_vec();
        Ok(self.push(shape, out, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let total = self.value(x).data().iter().copied().sum();
        Ok(self.push(vec![], vec![total], Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(TensorError::Contract("mean of an empty tensor".into()));
        }
        let total: T = xv.data().iter().copied().sum();
        let m = total / T::of(xv.numel() as f64);
        Ok(self.push(vec![], vec![m], Op::Mean(x), &[x]))
    }

    /// Reverse pass from a scalar `loss`. Afterwards every leaf created with
    /// `requires_grad` holds its gradient and the graph accepts no more work.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.live()?;
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.set_grad(g)?;
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        // Leaves that need a gradient but were unreachable from the loss.
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.needs_grad && node.value.grad().is_none() {
                let zeros = vec![T::zero(); node.value.numel()];
                node.value.set_grad(zeros)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2().expect("matrix");
                let n = bv.shape()[1];
                if needs(*a) {
                    let acc = slot(grads, *a, m * k);
                    kernels::matmul_nt_acc(g, bv.data(), acc, m, n, k);
                }
                if needs(*b) {
                    let acc = slot(grads, *b, k * n);
                    kernels::matmul_tn_acc(av.data(), g, acc, m, k, n);
                }
            }
            Op::Binary { kind, a, b, b_index } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let bidx = |p: usize| if b_index.is_empty() { p } else { b_index[p] };
                if needs(*a) {
                    let acc = slot(grads, *a, av.numel());
                    for (p, (o, &gp)) in acc.iter_mut().zip(g).enumerate() {
                        *o = *o
                            + match kind {
                                BinaryKind::Add | BinaryKind::Sub => gp,
                                BinaryKind::Mul => gp * bv.data()[bidx(p)],
                            };
                    }
                }
                if needs(*b) {
                    let acc = slot(grads, *b, bv.numel());
                    for (p, &gp) in g.iter().enumerate() {
                        let j = bidx(p);
                        acc[j] = acc[j]
                            + match kind {
                                BinaryKind::Add => gp,
                                BinaryKind::Sub => -gp,
                                BinaryKind::Mul => gp * av.data()[p],
                            };
                    }
                }
            }
            Op::Scale(x, c) => {
                let acc = slot(grads, *x, g.len());
                for (o, &gp) in acc.iter_mut().zip(g) {
                    *o = *o + gp * *c;
                }
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().expect("rank >= 1");
                let y = node.value.data();
                let acc = slot(grads, *x, y.len());
                for ((yr, gr), ar) in y.chunks(n).zip(g.chunks(n)).zip(acc.chunks_mut(n)) {
                    let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&yv, &gv)| s + yv * gv);
                    for ((o, &yv), &gv) in ar.iter_mut().zip(yr).zip(gr) {
                        *o = *o + yv * (gv - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                if needs(*gamma) {
                    let acc = slot(grads, *gamma, d);
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            acc[j] = acc[j] + gr[j] * hr[j];
                        }
                    }
                }
                if needs(*beta) {
                    let acc = slot(grads, *beta, d);
                    for gr in g.chunks(d) {
                        for j in 0..d {
                            acc[j] = acc[j] + gr[j];
                        }
                    }
                }
                if needs(*x) {
                    let inv_d = T::of(1.0 / d as f64);
                    let acc = slot(grads, *x, g.len());
                    for (r, ((gr, hr), ar)) in g
                        .chunks(d)
                        .zip(xhat.chunks(d))
                        .zip(acc.chunks_mut(d))
                        .enumerate()
                    {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hr[j];
                        }
                        mean_dh = mean_dh * inv_d;
                        mean_dh_h = mean_dh_h * inv_d;
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            ar[j] = ar[j] + inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let acc = slot(grads, *x, xv.len());
                for ((o, &gp), &v) in acc.iter_mut().zip(g).zip(xv) {
                    *o = *o + gp * kernels::gelu_grad(v);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2().expect("matrix");
                let acc = slot(grads, *x, r * c);
                for i in 0..r {
                    for j in 0..c {
                        acc[i * c + j] = acc[i * c + j] + g[j * r + i];
                    }
                }
            }
            Op::GatherRows(x, rows) => {
                let (r, c) = self.value(*x).dims2().expect("matrix");
                let acc = slot(grads, *x, r * c);
                for (k, &i) in rows.iter().enumerate() {
                    for j in 0..c {
                        acc[i * c + j] = acc[i * c + j] + g[k * c + j];
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims2().expect("matrix");
                let w = node.value.shape()[1];
                let acc = slot(grads, *x, r * c);
                for i in 0..r {
                    for j in 0..w {
                        acc[i * c + start + j] = acc[i * c + start + j] + g[i * w + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let (r, w) = self.value(p).dims2().expect("matrix");
                    if needs(p) {
                        let acc = slot(grads, p, r * w);
                        for i in 0..r {
                            for j in 0..w {
                                acc[i * w + j] = acc[i * w + j] + g[i * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Reshape(x) => {
                let acc = slot(grads, *x, g.len());
                for (o, &gp) in acc.iter_mut().zip(g) {
                    *o = *o + gp;
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                let acc = slot(grads, *x, n);
                for o in acc.iter_mut() {
                    *o = *o + g[0];
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let share = g[0] / T::of(n as f64);
                let acc = slot(grads, *x, n);
                for o in acc.iter_mut() {
                    *o = *o + share;
                }
            }
        }
    }
}

fn slot<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

/// Maps each flat position of `a_shape` to the element of `b_shape` it reads
/// under right-aligned broadcasting where `b` axes may be 1. Returns an empty
/// map for identical shapes and `None` when `b` does not broadcast.
fn broadcast_index(a_shape: &[usize], b_shape: &[usize]) -> Option<Vec<usize>> {
    if a_shape == b_shape {
        return Some(Vec::new());
    }
    if b_shape.len() > a_shape.len() {
        return None;
    }
    let offset = a_shape.len() - b_shape.len();
    let mut padded = vec![1usize; a_shape.len()];
    padded[offset..].copy_from_slice(b_shape);
    if padded
        .iter()
        .zip(a_shape)
        .any(|(&bd, &ad)| bd != ad && bd != 1)
    {
        return None;
    }
    let numel: usize = a_shape.iter().product();
    // Strides of b expressed in a's index space; broadcast axes get 0.
    let mut strides = vec![0usize; a_shape.len()];
    let mut acc = 1;
    for ax in (0..a_shape.len()).rev() {
        if padded[ax] != 1 {
            strides[ax] = acc;
        }
        acc *= padded[ax];
    }
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; a_shape.len()];
    for _ in 0..numel {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for ax in (0..a_shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < a_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Some(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_bias_over_rows() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = g.param(t(&[3], &[10., 20., 30.]));
        let y = g.add(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[11., 22., 33., 14., 25., 36.]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[2., 2., 2.]);
    }

    #[test]
    fn broadcast_size_one_axis() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 1], &[10., 100.]));
        let y = g.mul(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[10., 20., 300., 400.]);
    }

    #[test]
    fn non_broadcastable_shapes_are_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2]));
        let err = g.add(a, b).unwrap_err();
        assert!(matches!(err, TensorError::Dimension { op: "add", .. }));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[3.0]));
        let y = g.add(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1., 2.]));
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(TensorError::Contract(_))));
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2., 2.]);
        assert!(matches!(g.backward(s), Err(TensorError::State(_))));
        assert!(matches!(g.sum(x), Err(TensorError::State(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero_grad() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1., 2.]));
        let z = g.param(t(&[1], &[5.]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(z).unwrap(), &[0.]);
    }

    #[test]
    fn gather_rows_scatters_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let y = g.gather_rows(x, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(y).data(), &[5., 6., 1., 2., 5., 6.]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn slice_and_concat_are_inverse() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 4], &[1., 2., 3., 4., 5., 6., 7., 8.]));
        let a = g.slice_cols(x, 0, 1).unwrap();
        let b = g.slice_cols(x, 1, 4).unwrap();
        let y = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.; 8]);
    }

    #[test]
    fn matmul_counts_flops() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.constant(Tensor::ones(vec![3, 4]));
        let b = g.constant(Tensor::ones(vec![4, 5]));
        g.matmul(a, b).unwrap();
        assert_eq!(g.matmul_flops(), 2 * 3 * 4 * 5);
    }
}
