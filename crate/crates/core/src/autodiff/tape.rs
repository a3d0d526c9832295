use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// How the right operand of an elementwise op is expanded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    None,
    /// rhs has `cols` entries, repeated down every row of lhs.
    Row,
    /// rhs has one entry per row of a 2-D lhs.
    Col,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Relu,
    Gelu,
    Sigmoid,
    Abs,
    Exp,
    Log,
    Powf(f64),
    Scale(f64),
    AddScalar,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
        bcast: Bcast,
    },
    Unary(Unary, Var),
    RowSoftmax(Var),
    RowNormalize(Var),
    Transpose(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        blocks: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    SquaredError(Var, Var),
    CrossEntropy {
        logits: Var,
        rows: Vec<usize>,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    Conv1d {
        x: Var,
        w: Var,
        dilation: usize,
    },
    NodeMix(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode tape. Nodes are appended in execution order, so the node list
/// is always topologically sorted.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

    /// Records a tensor; it participates in differentiation iff `requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        t.grad = None;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
    }

    fn push(&mut self, mut value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        value.requires_grad = rg;
        value.grad = None;
        let op = if rg { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    // ---------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn bcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            return Ok(Bcast::None);
        }
        let last = *ta.shape().last().unwrap_or(&0);
        let row_like = match tb.shape() {
            [c] => *c == last,
            [1, c] => *c == last,
            _ => false,
        };
        if row_like && last > 0 {
            return Ok(Bcast::Row);
        }
        if let ([r, _], [r2, 1]) = (ta.shape(), tb.shape()) {
            if r == r2 {
                return Ok(Bcast::Col);
            }
        }
        Err(shape_err(op, ta, tb))
    }

    fn binary(&mut self, kind: BinKind, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let bcast = self.bcast_kind(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
        };
        let cols = *ta.shape().last().unwrap_or(&1);
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bcast {
                    Bcast::None => tb.data()[i],
                    Bcast::Row => tb.data()[i % cols],
                    Bcast::Col => tb.data()[i / cols],
                };
                f(x, y)
            })
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Binary { kind, a, b, bcast }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, "div", a, b)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx
            .data()
            .iter()
            .map(|&v| match kind {
                Unary::Relu => v.max(0.0),
                Unary::Gelu => gelu(v),
                Unary::Sigmoid => sigmoid(v),
                Unary::Abs => v.abs(),
                Unary::Exp => v.exp(),
                Unary::Log => v.ln(),
                Unary::Powf(p) => v.powf(p),
                Unary::Scale(c) => c * v,
                Unary::AddScalar => v,
            })
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Unary(kind, x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(Unary::Gelu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Unary::Abs, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(Unary::Log, x)
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(Unary::Powf(p), x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(Unary::Scale(c), x)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.unary(Unary::AddScalar, x);
        for e in self.nodes[v.0].value.data_mut() {
            *e += c;
        }
        v
    }

    /// Softmax along each row of a 2-D tensor. With a mask, entries outside
    /// the mask are excluded from the normalization and come out as zero; a
    /// row with an empty mask is all zeros.
    pub fn row_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2()?;
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::InvalidShape {
                    op: "row_softmax",
                    msg: format!("mask has {} entries for shape {:?}", m.len(), tx.shape()),
                });
            }
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.data()[i * c..(i + 1) * c];
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep(i * c + j) {
                    mx = mx.max(v);
                }
            }
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let mut s = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if keep(i * c + j) {
                    let e = (v - mx).exp();
                    out[i * c + j] = e;
                    s += e;
                }
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= s;
            }
        }
        let t = Tensor::new(vec![r, c], out)?;
        Ok(self.push(t, Op::RowSoftmax(x), &[x]))
    }

    /// Divides each row by its sum; zero-sum rows stay zero.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2()?;
        let mut out = tx.data().to_vec();
        for i in 0..r {
            let s: f64 = out[i * c..(i + 1) * c].iter().sum();
            for o in &mut out[i * c..(i + 1) * c] {
                *o = if s != 0.0 { *o / s } else { 0.0 };
            }
        }
        let t = Tensor::new(vec![r, c], out)?;
        Ok(self.push(t, Op::RowNormalize(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose2()?;
        Ok(self.push(t, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let mut t = self.value(x).clone();
        t.grad = None;
        let t = t.reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::InvalidShape {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let s0 = self.value(*first).shape().to_vec();
        if axis >= s0.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                msg: format!("axis {} out of range for {:?}", axis, s0),
            });
        }
        let outer: usize = s0[..axis].iter().product();
        let mut blocks = Vec::with_capacity(inputs.len());
        let mut total_axis = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            if s.len() != s0.len()
                || s[..axis] != s0[..axis]
                || s[axis + 1..] != s0[axis + 1..]
            {
                return Err(shape_err("concat", self.value(*first), self.value(*v)));
            }
            total_axis += s[axis];
            blocks.push(s[axis..].iter().product::<usize>());
        }
        let width: usize = blocks.iter().sum();
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            for (v, &b) in inputs.iter().zip(&blocks) {
                out.extend_from_slice(&self.value(*v).data()[o * b..(o + 1) * b]);
            }
        }
        let mut shape = s0;
        shape[axis] = total_axis;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                blocks,
            },
            inputs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Sums a 2-D tensor over `axis` (0 → shape [1, c], 1 → shape [r, 1]).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        let out = match axis {
            0 => {
                let mut o = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        o[j] += t.data()[i * c + j];
                    }
                }
                Tensor::new(vec![1, c], o)?
            }
            1 => {
                let o = (0..r)
                    .map(|i| t.data()[i * c..(i + 1) * c].iter().sum())
                    .collect();
                Tensor::new(vec![r, 1], o)?
            }
            _ => {
                return Err(Error::InvalidShape {
                    op: "sum_axis",
                    msg: format!("axis {} invalid for 2-D tensor", axis),
                })
            }
        };
        Ok(self.push(out, Op::SumAxis(x, axis), &[x]))
    }

    /// Elementwise (a - b)².
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("squared_error", ta, tb));
        }
        let d = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), d)?;
        Ok(self.push(t, Op::SquaredError(a, b), &[a, b]))
    }

    /// Mean cross-entropy of `logits` (n × k) over the selected `rows`
    /// against integer `targets`.
    pub fn cross_entropy(&mut self, logits: Var, rows: &[usize], targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (n, k) = t.dims2()?;
        if rows.len() != targets.len() || rows.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: {} rows vs {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let mut probs = Vec::with_capacity(rows.len() * k);
        let mut loss = 0.0;
        for (&r, &y) in rows.iter().zip(targets) {
            if r >= n {
                return Err(Error::IndexOutOfRange {
                    what: "row",
                    index: r,
                    limit: n,
                });
            }
            if y >= k {
                return Err(Error::IndexOutOfRange {
                    what: "class",
                    index: y,
                    limit: k,
                });
            }
            let row = &t.data()[r * k..(r + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        loss /= rows.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                rows: rows.to_vec(),
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Inverted dropout driven by an explicit seed.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {}", rate)));
        }
        let t = self.value(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let d = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), d)?;
        Ok(self.push(out, Op::Dropout(x, mask), &[x]))
    }

    /// Dilated 1-D convolution over time. `x`: [rows, time, c_in],
    /// `w`: [kernel, c_in, c_out] → [rows, time - (kernel-1)·dilation, c_out].
    pub fn conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (&[r, t, ci], &[k, ci2, co]) = (tx.shape(), tw.shape()) else {
            return Err(shape_err("conv1d", tx, tw));
        };
        if ci != ci2 || dilation == 0 {
            return Err(shape_err("conv1d", tx, tw));
        }
        let span = (k - 1) * dilation;
        if t <= span {
            return Err(Error::InvalidShape {
                op: "conv1d",
                msg: format!("time length {} too short for receptive field {}", t, span + 1),
            });
        }
        let to = t - span;
        let mut out = vec![0.0; r * to * co];
        for row in 0..r {
            let o = &mut out[row * to * co..(row + 1) * to * co];
            for kk in 0..k {
                let start = row * t * ci + kk * dilation * ci;
                let xs = &tx.data()[start..start + to * ci];
                let wk = &tw.data()[kk * ci * co..(kk + 1) * ci * co];
                kernels::matmul(xs, wk, o, to, ci, co);
            }
        }
        let out = Tensor::new(vec![r, to, co], out)?;
        Ok(self.push(out, Op::Conv1d { x, w, dilation }, &[x, w]))
    }

    /// Mixes nodes with a shared matrix: `p` [n, n], `h` [batch, n, f] →
    /// `out[b] = p · h[b]`.
    pub fn node_mix(&mut self, p: Var, h: Var) -> Result<Var> {
        let (tp, th) = (self.value(p), self.value(h));
        let (&[n, n2], &[b, n3, f]) = (tp.shape(), th.shape()) else {
            return Err(shape_err("node_mix", tp, th));
        };
        if n != n2 || n != n3 {
            return Err(shape_err("node_mix", tp, th));
        }
        let mut out = vec![0.0; b * n * f];
        for bb in 0..b {
            let hs = &th.data()[bb * n * f..(bb + 1) * n * f];
            kernels::matmul(tp.data(), hs, &mut out[bb * n * f..(bb + 1) * n * f], n, n, f);
        }
        let out = Tensor::new(vec![b, n, f], out)?;
        Ok(self.push(out, Op::NodeMix(p, h), &[p, h]))
    }

    // ----------------------------------------------------------- backward

    /// Backpropagates from a scalar loss, accumulating into `grad` fields.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_seeded(loss, &[1.0])
    }

    /// Backpropagates an arbitrary cotangent `seed` (same length as `out`).
    pub fn backward_seeded(&mut self, out: Var, seed: &[f64]) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("backward on an empty tape".into()));
        }
        if seed.len() != self.value(out).numel() {
            return Err(Error::InvalidArgument(format!(
                "seed has {} entries for output of {}",
                seed.len(),
                self.value(out).numel()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(out.0 + 1, || None);
        grads[out.0] = Some(seed.to_vec());
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i].value;
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let needs = |v: Var| nodes[v.0].value.requires_grad;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if needs(*a) {
                    with(grads, nodes, *a, |ga| kernels::matmul_bt(g, tb.data(), ga, m, n, k));
                }
                if needs(*b) {
                    with(grads, nodes, *b, |gb| kernels::matmul_at(ta.data(), g, gb, m, k, n));
                }
            }
            Op::Binary { kind, a, b, bcast } => {
                let (ta, tb) = (val(*a), val(*b));
                let cols = *ta.shape().last().unwrap_or(&1);
                let bidx = |idx: usize| match bcast {
                    Bcast::None => idx,
                    Bcast::Row => idx % cols,
                    Bcast::Col => idx / cols,
                };
                if needs(*a) {
                    with(grads, nodes, *a, |ga| {
                        for (idx, gi) in g.iter().enumerate() {
                            let y = tb.data()[bidx(idx)];
                            ga[idx] += match kind {
                                BinKind::Add | BinKind::Sub => *gi,
                                BinKind::Mul => gi * y,
                                BinKind::Div => gi / y,
                            };
                        }
                    });
                }
                if needs(*b) {
                    with(grads, nodes, *b, |gb| {
                        for (idx, gi) in g.iter().enumerate() {
                            let x = ta.data()[idx];
                            let y = tb.data()[bidx(idx)];
                            gb[bidx(idx)] += match kind {
                                BinKind::Add => *gi,
                                BinKind::Sub => -gi,
                                BinKind::Mul => gi * x,
                                BinKind::Div => -gi * x / (y * y),
                            };
                        }
                    });
                }
            }
            Op::Unary(kind, x) => {
                let tx = val(*x);
                with(grads, nodes, *x, |gx| {
                    for (idx, gi) in g.iter().enumerate() {
                        let v = tx.data()[idx];
                        let d = match kind {
                            Unary::Relu => {
                                if v > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Gelu => gelu_grad(v),
                            Unary::Sigmoid => {
                                let s = out.data()[idx];
                                s * (1.0 - s)
                            }
                            Unary::Abs => v.signum() * (v != 0.0) as u8 as f64,
                            Unary::Exp => out.data()[idx],
                            Unary::Log => 1.0 / v,
                            Unary::Powf(p) => p * v.powf(p - 1.0),
                            Unary::Scale(c) => *c,
                            Unary::AddScalar => 1.0,
                        };
                        gx[idx] += gi * d;
                    }
                });
            }
            Op::RowSoftmax(x) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                with(grads, nodes, *x, |gx| {
                    for row in 0..r {
                        let y = &out.data()[row * c..(row + 1) * c];
                        let gr = &g[row * c..(row + 1) * c];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[row * c + j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::RowNormalize(x) => {
                let tx = val(*x);
                let (r, c) = (out.shape()[0], out.shape()[1]);
                with(grads, nodes, *x, |gx| {
                    for row in 0..r {
                        let s: f64 = tx.data()[row * c..(row + 1) * c].iter().sum();
                        if s == 0.0 {
                            continue;
                        }
                        let y = &out.data()[row * c..(row + 1) * c];
                        let gr = &g[row * c..(row + 1) * c];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[row * c + j] += (gr[j] - dot) / s;
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                with(grads, nodes, *x, |gx| {
                    // out is r×c, input is c×r
                    for a in 0..r {
                        for b in 0..c {
                            gx[b * r + a] += g[a * c + b];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                with(grads, nodes, *x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                });
            }
            Op::Concat {
                inputs,
                outer,
                blocks,
            } => {
                let width: usize = blocks.iter().sum();
                let mut offset = 0;
                for (v, &b) in inputs.iter().zip(blocks) {
                    if needs(*v) {
                        with(grads, nodes, *v, |gv| {
                            for o in 0..*outer {
                                let src = &g[o * width + offset..o * width + offset + b];
                                gv[o * b..(o + 1) * b]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(a, s)| *a += s);
                            }
                        });
                    }
                    offset += b;
                }
            }
            Op::Sum(x) => {
                with(grads, nodes, *x, |gx| gx.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::Mean(x) => {
                let n = val(*x).numel().max(1) as f64;
                with(grads, nodes, *x, |gx| gx.iter_mut().for_each(|a| *a += g[0] / n));
            }
            Op::SumAxis(x, axis) => {
                let tx = val(*x);
                let (r, c) = (tx.shape()[0], tx.shape()[1]);
                with(grads, nodes, *x, |gx| {
                    for a in 0..r {
                        for b in 0..c {
                            gx[a * c + b] += if *axis == 0 { g[b] } else { g[a] };
                        }
                    }
                });
            }
            Op::SquaredError(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if needs(v) {
                        with(grads, nodes, v, |gv| {
                            for idx in 0..gv.len() {
                                gv[idx] += sign * 2.0 * (ta.data()[idx] - tb.data()[idx]) * g[idx];
                            }
                        });
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                rows,
                targets,
                probs,
            } => {
                let k = val(*logits).shape()[1];
                let m = rows.len() as f64;
                with(grads, nodes, *logits, |gl| {
                    for (ri, (&r, &y)) in rows.iter().zip(targets).enumerate() {
                        for j in 0..k {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[r * k + j] += g[0] * (probs[ri * k + j] - onehot) / m;
                        }
                    }
                });
            }
            Op::Dropout(x, mask) => {
                with(grads, nodes, *x, |gx| {
                    for idx in 0..gx.len() {
                        gx[idx] += g[idx] * mask[idx];
                    }
                });
            }
            Op::Conv1d { x, w, dilation } => {
                let (tx, tw) = (val(*x), val(*w));
                let (r, t, ci) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let (k, co) = (tw.shape()[0], tw.shape()[2]);
                let to = out.shape()[1];
                if needs(*x) {
                    with(grads, nodes, *x, |gx| {
                        for row in 0..r {
                            let go = &g[row * to * co..(row + 1) * to * co];
                            for kk in 0..k {
                                let start = row * t * ci + kk * dilation * ci;
                                let wk = &tw.data()[kk * ci * co..(kk + 1) * ci * co];
                                kernels::matmul_bt(go, wk, &mut gx[start..start + to * ci], to, co, ci);
                            }
                        }
                    });
                }
                if needs(*w) {
                    with(grads, nodes, *w, |gw| {
                        for row in 0..r {
                            let go = &g[row * to * co..(row + 1) * to * co];
                            for kk in 0..k {
                                let start = row * t * ci + kk * dilation * ci;
                                let xs = &tx.data()[start..start + to * ci];
                                kernels::matmul_at(xs, go, &mut gw[kk * ci * co..(kk + 1) * ci * co], to, ci, co);
                            }
                        }
                    });
                }
            }
            Op::NodeMix(p, h) => {
                let (tp, th) = (val(*p), val(*h));
                let (b, n, f) = (th.shape()[0], th.shape()[1], th.shape()[2]);
                if needs(*h) {
                    with(grads, nodes, *h, |gh| {
                        for bb in 0..b {
                            let gs = &g[bb * n * f..(bb + 1) * n * f];
                            kernels::matmul_at(tp.data(), gs, &mut gh[bb * n * f..(bb + 1) * n * f], n, n, f);
                        }
                    });
                }
                if needs(*p) {
                    with(grads, nodes, *p, |gp| {
                        for bb in 0..b {
                            let gs = &g[bb * n * f..(bb + 1) * n * f];
                            let hs = &th.data()[bb * n * f..(bb + 1) * n * f];
                            kernels::matmul_bt(gs, hs, gp, n, f, n);
                        }
                    });
                }
            }
        }
    }
}

fn with<F: FnOnce(&mut [f64])>(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: F) {
    let len = nodes[v.0].value.numel();
    f(grads[v.0].get_or_insert_with(|| vec![0.0; len]));
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
