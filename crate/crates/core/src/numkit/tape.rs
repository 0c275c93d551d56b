//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`]. Node
//! indices are a topological order by construction, so [`Tape::backward`] is a
//! single reverse sweep. Gradients accumulate (`+=`) into their inputs, which
//! is what lets one parameter feed several consumers.

use crate::error::{Error, Result};

use super::Tensor;

/// Epsilon inside the RMS normalization square root.
pub const RMS_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Bmm { a: Var, b: Var, g: usize, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddSuffix { x: Var, b: Var },
    Scale { x: Var, c: f64 },
    Gelu(Var),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<f64> },
    Softmax(Var),
    MeanAxis { x: Var, outer: usize, len: usize, inner: usize },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Gather { x: Var, src: Vec<usize> },
    Concat { parts: Vec<(Var, usize)> },
    Slice { x: Var, start: usize, width: usize },
    Mse { a: Var, b: Var },
    SoftmaxCe { logits: Var, probs: Vec<f64>, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of the primitive operations of one forward evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` participates in it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
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
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records `t` as an input. Its `requires_grad` flag decides whether
    /// gradients flow to it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        let value = Tensor::from_parts(t.shape().to_vec(), t.into_data());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let value = Tensor::from_parts(t.shape().to_vec(), t.into_data());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input; copies the values of `t`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_kernel(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul { a, b, m, k, n },
            &[a, b],
        ))
    }

    /// Batched product `[g, m, k] x [g, k, n] -> [g, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("bmm", format!("{sa:?} x {sb:?}")));
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; g * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for gi in 0..g {
                matmul_kernel(
                    &ad[gi * m * k..(gi + 1) * m * k],
                    &bd[gi * k * n..(gi + 1) * k * n],
                    &mut out[gi * m * n..(gi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![g, m, n], out),
            Op::Bmm { a, b, g, m, k, n },
            &[a, b],
        ))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(op, self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(self.shape(a).to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// `x + b` where the shape of `b` equals the trailing axes of `x`
    /// (biases, positional tables). This is the only broadcast supported.
    pub fn add_suffix(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return Err(Error::shape("add_suffix", format!("{sx:?} + {sb:?}")));
        }
        let bd = self.value(b).data();
        let blen = bd.len();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % blen])
            .collect();
        let t = Tensor::from_parts(sx.to_vec(), data);
        Ok(self.push(t, Op::AddSuffix { x, b }, &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&e| e * c).collect());
        self.push(t, Op::Scale { x, c }, &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&e| gelu(e)).collect());
        self.push(t, Op::Gelu(x), &[x])
    }

    /// Normalizes each row of the last axis to unit root-mean-square, then
    /// multiplies by `gain`.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] {
            return Err(Error::shape(
                "rms_norm",
                format!("gain {:?} for rows of width {d}", self.shape(gain)),
            ));
        }
        let (xd, gd) = (self.value(x).data(), self.value(gain).data());
        let rows = xd.len() / d;
        let mut out = vec![0.0; xd.len()];
        let mut inv_rms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + RMS_EPS).sqrt();
            for j in 0..d {
                out[r * d + j] = row[j] * inv * gd[j];
            }
            inv_rms.push(inv);
        }
        let t = Tensor::from_parts(self.shape(x).to_vec(), out);
        Ok(self.push(t, Op::RmsNorm { x, gain, inv_rms }, &[x, gain]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let d = v.last_dim();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        self.push(t, Op::Softmax(x), &[x])
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape("mean_axis", format!("axis {axis} of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let xd = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                add_into(&mut out[o * inner..(o + 1) * inner], &xd[base..base + inner]);
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape: Vec<usize> = s[..axis].iter().chain(&s[axis + 1..]).copied().collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let t = Tensor::from_parts(shape, out);
        Ok(self.push(t, Op::MeanAxis { x, outer, len, inner }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let rank = s.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} for {s:?}")));
        }
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * s[i + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = self.value(x).len();
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..n {
            src.push(off);
            // odometer increment over the output index
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                off += strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                off -= strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        let xd = self.value(x).data();
        let data = src.iter().map(|&i| xd[i]).collect();
        let t = Tensor::from_parts(out_shape, data);
        Ok(self.push(t, Op::Gather { x, src }, &[x]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(Error::shape("transpose", format!("rank {rank}")));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    /// Concatenation along the last axis. Leading axes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut parts = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            if s[..s.len() - 1] != *lead {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", self.shape(first), s),
                ));
            }
            parts.push((v, *s.last().unwrap()));
        }
        let rows: usize = lead.iter().product();
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(v, w) in &parts {
                out.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::from_parts(shape, out);
        Ok(self.push(t, Op::Concat { parts }, xs))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let width = *s.last().unwrap();
        if len == 0 || start + len > width {
            return Err(Error::shape("slice_last", format!("{start}..{} of {s:?}", start + len)));
        }
        let xd = self.value(x).data();
        let rows = xd.len() / width;
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xd[r * width + start..r * width + start + len]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let t = Tensor::from_parts(shape, out);
        Ok(self.push(t, Op::Slice { x, start, width }, &[x]))
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.value(a), self.value(b))?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let s = ad.iter().zip(bd).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ad.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mse { a, b }, &[a, b]))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!("label {bad} outside [0, {c})")));
        }
        let ld = self.value(logits).data();
        let mut probs = ld.to_vec();
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &ld[r * c..(r + 1) * c];
            total += row_nll(row, label);
            softmax_in_place(&mut probs[r * c..(r + 1) * c]);
        }
        let loss = total / labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].needs_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(buf);
            }
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (ad, bd) = (val(a), val(b));
                acc(a, &mut |da| matmul_grad_a(g, bd, da, m, k, n));
                acc(b, &mut |db| matmul_grad_b(ad, g, db, m, k, n));
            }
            &Op::Bmm { a, b, g: groups, m, k, n } => {
                let (ad, bd) = (val(a), val(b));
                acc(a, &mut |da| {
                    for gi in 0..groups {
                        matmul_grad_a(
                            &g[gi * m * n..(gi + 1) * m * n],
                            &bd[gi * k * n..(gi + 1) * k * n],
                            &mut da[gi * m * k..(gi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                });
                acc(b, &mut |db| {
                    for gi in 0..groups {
                        matmul_grad_b(
                            &ad[gi * m * k..(gi + 1) * m * k],
                            &g[gi * m * n..(gi + 1) * m * n],
                            &mut db[gi * k * n..(gi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (val(a), val(b));
                acc(a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bd[i];
                    }
                });
                acc(b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * ad[i];
                    }
                });
            }
            &Op::AddSuffix { x, b } => {
                acc(x, &mut |d| add_into(d, g));
                acc(b, &mut |d| {
                    for chunk in g.chunks(d.len()) {
                        add_into(d, chunk);
                    }
                });
            }
            &Op::Scale { x, c } => acc(x, &mut |d| {
                for i in 0..d.len() {
                    d[i] += c * g[i];
                }
            }),
            &Op::Gelu(x) => {
                let xd = val(x);
                acc(x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * gelu_grad(xd[i]);
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (xd, gd) = (val(*x), val(*gain));
                let dim = gd.len();
                acc(*x, &mut |dx| {
                    for (r, &inv) in inv_rms.iter().enumerate() {
                        let row = &xd[r * dim..(r + 1) * dim];
                        let gr = &g[r * dim..(r + 1) * dim];
                        let dot: f64 = (0..dim).map(|j| gr[j] * gd[j] * row[j]).sum();
                        let coef = inv * inv * inv * dot / dim as f64;
                        for j in 0..dim {
                            dx[r * dim + j] += inv * gr[j] * gd[j] - coef * row[j];
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for (r, &inv) in inv_rms.iter().enumerate() {
                        for j in 0..dim {
                            dg[j] += g[r * dim + j] * xd[r * dim + j] * inv;
                        }
                    }
                });
            }
            &Op::Softmax(x) => {
                let y = node.value.data();
                let dim = node.value.last_dim();
                acc(x, &mut |d| {
                    for r in 0..y.len() / dim {
                        let (yr, gr) = (&y[r * dim..(r + 1) * dim], &g[r * dim..(r + 1) * dim]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..dim {
                            d[r * dim + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            &Op::MeanAxis { x, outer, len, inner } => acc(x, &mut |d| {
                let inv = 1.0 / len as f64;
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for j in 0..inner {
                            d[base + j] += g[o * inner + j] * inv;
                        }
                    }
                }
            }),
            &Op::Sum(x) => acc(x, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            &Op::Mean(x) => acc(x, &mut |d| {
                let s = g[0] / d.len() as f64;
                d.iter_mut().for_each(|v| *v += s);
            }),
            &Op::Reshape(x) => acc(x, &mut |d| add_into(d, g)),
            Op::Gather { x, src } => acc(*x, &mut |d| {
                for (o, &i) in src.iter().enumerate() {
                    d[i] += g[o];
                }
            }),
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total;
                let mut col = 0;
                for &(v, w) in parts {
                    acc(v, &mut |d| {
                        for r in 0..rows {
                            add_into(&mut d[r * w..(r + 1) * w], &g[r * total + col..r * total + col + w]);
                        }
                    });
                    col += w;
                }
            }
            &Op::Slice { x, start, width } => {
                let len = node.value.last_dim();
                acc(x, &mut |d| {
                    for r in 0..g.len() / len {
                        add_into(&mut d[r * width + start..r * width + start + len], &g[r * len..(r + 1) * len]);
                    }
                });
            }
            &Op::Mse { a, b } => {
                let (ad, bd) = (val(a), val(b));
                let s = 2.0 * g[0] / ad.len() as f64;
                acc(a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += s * (ad[i] - bd[i]);
                    }
                });
                acc(b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] -= s * (ad[i] - bd[i]);
                    }
                });
            }
            Op::SoftmaxCe { logits, probs, labels } => {
                let c = probs.len() / labels.len();
                let s = g[0] / labels.len() as f64;
                acc(*logits, &mut |d| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            d[r * c + j] += s * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

// da += g * b^T
fn matmul_grad_a(g: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

// db += a^T * g
fn matmul_grad_b(a: &[f64], g: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *d += av * gv;
            }
        }
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

// -log softmax(row)[label], accurate when the label dominates
fn row_nll(row: &[f64], label: usize) -> f64 {
    let (arg, m) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    (m - row[label]) + rest.ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[11.0]);
        assert_eq!(tape.shape(p), &[1, 1]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn rms_norm_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4], &[1.0; 4]));
        let g = tape.constant(Tensor::ones(&[4]));
        let y = tape.rms_norm(x, g).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0).abs() < 1e-6);
        }
        let x = tape.constant(t(&[2], &[2.0, 2.0]));
        let g = tape.constant(Tensor::ones(&[2]));
        let y = tape.rms_norm(x, g).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros(&[1, 4]));
        let loss = tape.softmax_cross_entropy(l, &[2]).unwrap();
        assert!((tape.value(loss).item() - 4f64.ln()).abs() < 1e-12);

        let l = tape.constant(t(&[1, 2], &[10.0, -10.0]));
        let loss = tape.softmax_cross_entropy(l, &[0]).unwrap();
        // ln(1 + e^-20)
        let expected = (-20f64).exp().ln_1p();
        assert!((tape.value(loss).item() - expected).abs() < 1e-20);
        assert!((tape.value(loss).item() - 2.061_153_6e-9).abs() < 1e-15);

        let l = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(matches!(tape.softmax_cross_entropy(l, &[3]), Err(Error::Validation(_))));
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[0.0, 0.0]));
        let b = tape.constant(t(&[2], &[1.0, 1.0]));
        let l = tape.mse(a, b).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
        let l = tape.mse(a, a).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let c = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.mse(a, c).is_err());
    }

    #[test]
    fn mse_gradient_closed_form() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]).with_grad());
        let b = tape.constant(t(&[3], &[0.0, 1.0, 0.5]));
        let l = tape.mse(a, b).unwrap();
        let g = tape.backward(l).unwrap();
        let expected = [2.0 / 3.0, -6.0 / 3.0, 0.0];
        for (x, y) in g.get(a).unwrap().iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -50.0, 0.0, 50.0]));
        let y = tape.softmax(x);
        for row in tape.value(y).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.transpose(x).unwrap();
        assert_eq!(tape.shape(y), &[3, 2]);
        assert_eq!(tape.value(y).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(tape.permute(x, &[0, 0]).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        // f = sum(x * x) uses x twice
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0]).with_grad());
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let c = tape.constant(t(&[2], &[1.0, 1.0]));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0]);
    }
}
