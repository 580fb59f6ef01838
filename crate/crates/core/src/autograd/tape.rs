//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. Nodes whose
//! inputs are all constants are stored as constants, so `backward` only walks
//! the differentiable part of the graph. Node ids increase in recording order,
//! which is a topological order; `backward` visits them once, in reverse.

use super::tensor::{check_finite, numel_of, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv1d { x: Var, w: Var, stride: usize, groups: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    BiasAdd { x: Var, b: Var },
    Relu(Var),
    Ln(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Reshape(Var),
    GlobalAvgPool(Var),
    Sum(Var),
    Mean(Var),
    SumLastAxis(Var),
    Softmax { x: Var, temperature: f64 },
    LogSoftmax { x: Var, temperature: f64 },
    Gather { x: Var, index: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if `var` requires grad.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient for `var` into `target`'s grad buffer.
    pub fn accumulate_into(&self, var: Var, target: &mut Tensor) -> Result<()> {
        match self.get(var) {
            Some(g) => target.accumulate_grad(g),
            None => Err(Error::Contract(format!("no gradient recorded for node {}", var.0))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    relu_margin: Option<f64>,
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [a, b] => Ok((a, b)),
        ref s => Err(Error::Dimension(format!("{what}: expected rank-2 tensor, got shape {s:?}"))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Places a tensor on the tape. Its `requires_grad` flag decides whether
    /// it is a differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        let value = Tensor::from_parts(t.shape().to_vec(), t.into_data());
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Smallest |input| seen by any differentiable ReLU, i.e. the distance of
    /// the current point from the nearest kink. `None` when no ReLU was used.
    pub fn relu_margin(&self) -> Option<f64> {
        self.relu_margin
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        check_finite(&data, name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: Tensor::from_parts(shape, data), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul lhs")?;
        let (k2, n) = dims2(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!("matmul inner dimensions {k} vs {k2}")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// Valid (unpadded) 1-D cross-correlation.
    ///
    /// `x` is `[batch, in, len]` or `[in, len]`; `w` is `[out, in / groups, k]`.
    /// The output length is `(len - k) / stride + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, groups: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (batch, cin, len, unbatched) = match xs[..] {
            [b, c, l] => (b, c, l, false),
            [c, l] => (1, c, l, true),
            _ => return Err(Error::Dimension(format!("conv1d input must be rank 2 or 3, got {xs:?}"))),
        };
        let [cout, cin_g, k] = ws[..] else {
            return Err(Error::Dimension(format!("conv1d kernel must be rank 3, got {ws:?}")));
        };
        let geom = ConvGeom::new(batch, cin, len, cout, cin_g, k, stride, groups)?;
        let out = geom.forward(self.value(x).data(), self.value(w).data());
        let shape = if unbatched { vec![cout, geom.lout] } else { vec![batch, cout, geom.lout] };
        self.push(shape, out, Op::Conv1d { x, w, stride, groups }, &[x, w], "conv1d")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(shape, out, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(x).data().iter().map(|v| scale * v + shift).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(shape, out, Op::Affine { x, scale }, &[x], "affine")
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    /// Adds a per-feature bias: `[rows, n] + [n]` or `[batch, c, len] + [c]`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        let (outer, ch, inner) = match xs[..] {
            [r, n] => (r, n, 1),
            [bt, c, l] => (bt, c, l),
            _ => return Err(Error::Dimension(format!("bias_add input rank must be 2 or 3, got {xs:?}"))),
        };
        if bs != [ch] {
            return Err(Error::Dimension(format!("bias shape {bs:?} does not match {xs:?}")));
        }
        let mut out = self.value(x).data().to_vec();
        let bias = self.value(b).data();
        for o in 0..outer {
            for (c, &bc) in bias.iter().enumerate() {
                let base = (o * ch + c) * inner;
                for v in &mut out[base..base + inner] {
                    *v += bc;
                }
            }
        }
        self.push(xs, out, Op::BiasAdd { x, b }, &[x, b], "bias_add")
    }

    /// Rectifier. The derivative at exactly zero is taken as 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        if self.nodes[x.0].requires_grad {
            let m = self.value(x).data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            self.relu_margin = Some(self.relu_margin.map_or(m, |r| r.min(m)));
        }
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = xv.shape().to_vec();
        self.push(shape, out, Op::Relu(x), &[x], "relu")
    }

    /// Natural log; every input must be strictly positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if let Some(v) = xv.data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Numeric(format!("ln of non-positive value {v}")));
        }
        let out = xv.data().iter().map(|v| v.ln()).collect();
        let shape = xv.shape().to_vec();
        self.push(shape, out, Op::Ln(x), &[x], "ln")
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only inside the range.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::Parameter(format!("clamp range [{lo}, {hi}] is empty")));
        }
        let xv = self.value(x);
        let out = xv.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let shape = xv.shape().to_vec();
        self.push(shape, out, Op::Clamp { x, lo, hi }, &[x], "clamp")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if numel_of(&shape) != xv.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("cannot reshape {:?} into {shape:?}", xv.shape())));
        }
        let out = xv.data().to_vec();
        self.push(shape, out, Op::Reshape(x), &[x], "reshape")
    }

    /// Flattens all but the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        let rows = *s.first().ok_or_else(|| Error::Dimension("flatten of scalar".into()))?;
        let cols = s[1..].iter().product();
        self.reshape(x, vec![rows, cols])
    }

    /// Mean over the last axis of a `[batch, c, len]` tensor.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [b, c, l] = xv.shape()[..] else {
            return Err(Error::Dimension(format!("global_avg_pool expects rank 3, got {:?}", xv.shape())));
        };
        let out = xv.data().chunks(l).map(|row| row.iter().sum::<f64>() / l as f64).collect();
        self.push(vec![b, c], out, Op::GlobalAvgPool(x), &[x], "global_avg_pool")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Vec::new(), vec![s], Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        self.push(Vec::new(), vec![s], Op::Mean(x), &[x], "mean")
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last_axis(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (&last, lead) = xv
            .shape()
            .split_last()
            .ok_or_else(|| Error::Dimension("sum_last_axis of scalar".into()))?;
        let out = xv.data().chunks(last).map(|r| r.iter().sum()).collect();
        let shape = lead.to_vec();
        self.push(shape, out, Op::SumLastAxis(x), &[x], "sum_last_axis")
    }

    fn check_temperature(temperature: f64) -> Result<()> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
        }
        Ok(())
    }

    /// Row-wise `softmax(x / temperature)` over the last axis.
    pub fn softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        Self::check_temperature(temperature)?;
        let xv = self.value(x);
        let m = *xv.shape().last().ok_or_else(|| Error::Dimension("softmax of scalar".into()))?;
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(m) {
            out.extend(softmax_row(row, temperature));
        }
        let shape = xv.shape().to_vec();
        self.push(shape, out, Op::Softmax { x, temperature }, &[x], "softmax")
    }

    /// Row-wise `log_softmax(x / temperature)` over the last axis.
    pub fn log_softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        Self::check_temperature(temperature)?;
        let xv = self.value(x);
        let m = *xv.shape().last().ok_or_else(|| Error::Dimension("log_softmax of scalar".into()))?;
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(m) {
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = row.iter().map(|v| ((v - mx) / temperature).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| (v - mx) / temperature - lse));
        }
        let shape = xv.shape().to_vec();
        self.push(shape, out, Op::LogSoftmax { x, temperature }, &[x], "log_softmax")
    }

    /// Picks `x[r, index[r]]` from a `[rows, m]` tensor.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (rows, m) = dims2(self.value(x), "gather")?;
        if index.len() != rows {
            return Err(Error::Dimension(format!("gather: {} indices for {rows} rows", index.len())));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::Data(format!("gather: index {bad} out of range for {m} columns")));
        }
        let d = self.value(x).data();
        let out = index.iter().enumerate().map(|(r, &i)| d[r * m + i]).collect();
        self.push(vec![rows], out, Op::Gather { x, index: index.to_vec() }, &[x], "gather")
    }

    /// Reverse-mode sweep from a single-element `loss`.
    ///
    /// Every differentiable node reachable backwards from `loss` receives a
    /// gradient; differentiable leaves that do not influence the loss get
    /// zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
                let n = val(b).shape()[1];
                if rg(a) {
                    let bd = val(b).data();
                    let ga = acc(grads, a, m * k);
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga[i * k + p] += gij * bd[p * n + j];
                            }
                        }
                    }
                }
                if rg(b) {
                    let ad = val(a).data();
                    let gb = acc(grads, b, k * n);
                    for i in 0..m {
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::Conv1d { x, w, stride, groups } => {
                let xs = val(x).shape();
                let (batch, cin, len) = match xs[..] {
                    [b, c, l] => (b, c, l),
                    [c, l] => (1, c, l),
                    _ => unreachable!("validated in forward"),
                };
                let ws = val(w).shape();
                let geom = ConvGeom::new(batch, cin, len, ws[0], ws[1], ws[2], stride, groups)
                    .expect("validated in forward");
                if rg(x) {
                    let gx = acc(grads, x, val(x).numel());
                    geom.backward_input(g, val(w).data(), gx);
                }
                if rg(w) {
                    let gw = acc(grads, w, val(w).numel());
                    geom.backward_kernel(g, val(x).data(), gw);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if rg(v) {
                        add_into(acc(grads, v, g.len()), g.iter().copied());
                    }
                }
            }
            Op::Sub(a, b) => {
                if rg(a) {
                    add_into(acc(grads, a, g.len()), g.iter().copied());
                }
                if rg(b) {
                    add_into(acc(grads, b, g.len()), g.iter().map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if rg(a) {
                    let bd = val(b).data();
                    add_into(acc(grads, a, g.len()), g.iter().zip(bd).map(|(gi, bi)| gi * bi));
                }
                if rg(b) {
                    let ad = val(a).data();
                    add_into(acc(grads, b, g.len()), g.iter().zip(ad).map(|(gi, ai)| gi * ai));
                }
            }
            Op::Affine { x, scale } => {
                if rg(x) {
                    add_into(acc(grads, x, g.len()), g.iter().map(|v| v * scale));
                }
            }
            Op::BiasAdd { x, b } => {
                if rg(x) {
                    add_into(acc(grads, x, g.len()), g.iter().copied());
                }
                if rg(b) {
                    let xs = val(x).shape();
                    let (ch, inner) = if xs.len() == 2 { (xs[1], 1) } else { (xs[1], xs[2]) };
                    let gb = acc(grads, b, ch);
                    for (blk, chunk) in g.chunks(inner).enumerate() {
                        gb[blk % ch] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::Relu(x) => {
                if rg(x) {
                    let xd = val(x).data();
                    add_into(
                        acc(grads, x, g.len()),
                        g.iter().zip(xd).map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 }),
                    );
                }
            }
            Op::Ln(x) => {
                if rg(x) {
                    let xd = val(x).data();
                    add_into(acc(grads, x, g.len()), g.iter().zip(xd).map(|(gi, xi)| gi / xi));
                }
            }
            Op::Clamp { x, lo, hi } => {
                if rg(x) {
                    let xd = val(x).data();
                    add_into(
                        acc(grads, x, g.len()),
                        g.iter().zip(xd).map(|(gi, &xi)| if xi >= lo && xi <= hi { *gi } else { 0.0 }),
                    );
                }
            }
            Op::Reshape(x) => {
                if rg(x) {
                    add_into(acc(grads, x, g.len()), g.iter().copied());
                }
            }
            Op::GlobalAvgPool(x) => {
                if rg(x) {
                    let l = val(x).shape()[2];
                    let gx = acc(grads, x, val(x).numel());
                    for (row, &gi) in gx.chunks_mut(l).zip(g) {
                        let share = gi / l as f64;
                        for v in row {
                            *v += share;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if rg(x) {
                    let n = val(x).numel();
                    add_into(acc(grads, x, n), std::iter::repeat_n(g[0], n));
                }
            }
            Op::Mean(x) => {
                if rg(x) {
                    let n = val(x).numel();
                    add_into(acc(grads, x, n), std::iter::repeat_n(g[0] / n as f64, n));
                }
            }
            Op::SumLastAxis(x) => {
                if rg(x) {
                    let last = *val(x).shape().last().expect("validated in forward");
                    let gx = acc(grads, x, val(x).numel());
                    for (row, &gi) in gx.chunks_mut(last).zip(g) {
                        for v in row {
                            *v += gi;
                        }
                    }
                }
            }
            Op::Softmax { x, temperature } => {
                if rg(x) {
                    let y = node.value.data();
                    let m = *node.value.shape().last().expect("validated in forward");
                    let gx = acc(grads, x, y.len());
                    for ((gxr, yr), gr) in gx.chunks_mut(m).zip(y.chunks(m)).zip(g.chunks(m)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..m {
                            gxr[j] += yr[j] * (gr[j] - dot) / temperature;
                        }
                    }
                }
            }
            Op::LogSoftmax { x, temperature } => {
                if rg(x) {
                    let y = node.value.data();
                    let m = *node.value.shape().last().expect("validated in forward");
                    let gx = acc(grads, x, y.len());
                    for ((gxr, yr), gr) in gx.chunks_mut(m).zip(y.chunks(m)).zip(g.chunks(m)) {
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..m {
                            gxr[j] += (gr[j] - yr[j].exp() * gsum) / temperature;
                        }
                    }
                }
            }
            Op::Gather { x, ref index } => {
                if rg(x) {
                    let m = val(x).shape()[1];
                    let gx = acc(grads, x, val(x).numel());
                    for (r, (&i, &gi)) in index.iter().zip(g).enumerate() {
                        gx[r * m + i] += gi;
                    }
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: impl Iterator<Item = f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Numerically stable `softmax(row / temperature)`.
pub(crate) fn softmax_row(row: &[f64], temperature: f64) -> Vec<f64> {
    let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = row.iter().map(|v| ((v - mx) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

struct ConvGeom {
    batch: usize,
    cin: usize,
    len: usize,
    cout: usize,
    cin_g: usize,
    k: usize,
    stride: usize,
    lout: usize,
    out_per_group: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    fn new(
        batch: usize,
        cin: usize,
        len: usize,
        cout: usize,
        cin_g: usize,
        k: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        if stride == 0 || groups == 0 {
            return Err(Error::Parameter("conv1d stride and groups must be positive".into()));
        }
        if cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(Error::Dimension(format!(
                "conv1d: {cin} input / {cout} output channels incompatible with {groups} groups and kernel depth {cin_g}"
            )));
        }
        if k > len {
            return Err(Error::Dimension(format!("conv1d kernel of length {k} exceeds input length {len}")));
        }
        Ok(ConvGeom {
            batch,
            cin,
            len,
            cout,
            cin_g,
            k,
            stride,
            lout: (len - k) / stride + 1,
            out_per_group: cout / groups,
        })
    }

    fn in_channel(&self, o: usize, ci: usize) -> usize {
        (o / self.out_per_group) * self.cin_g + ci
    }

    fn forward(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.batch * self.cout * self.lout];
        for b in 0..self.batch {
            for o in 0..self.cout {
                let orow = &mut out[(b * self.cout + o) * self.lout..][..self.lout];
                for ci in 0..self.cin_g {
                    let xrow = &x[(b * self.cin + self.in_channel(o, ci)) * self.len..][..self.len];
                    for kk in 0..self.k {
                        let wv = w[(o * self.cin_g + ci) * self.k + kk];
                        for (ov, xv) in orow.iter_mut().zip(xrow[kk..].iter().step_by(self.stride)) {
                            *ov += wv * xv;
                        }
                    }
                }
            }
        }
        out
    }

    fn backward_input(&self, g: &[f64], w: &[f64], gx: &mut [f64]) {
        for b in 0..self.batch {
            for o in 0..self.cout {
                let grow = &g[(b * self.cout + o) * self.lout..][..self.lout];
                for ci in 0..self.cin_g {
                    let xi = (b * self.cin + self.in_channel(o, ci)) * self.len;
                    let gxrow = &mut gx[xi..xi + self.len];
                    for kk in 0..self.k {
                        let wv = w[(o * self.cin_g + ci) * self.k + kk];
                        for (gxv, gv) in gxrow[kk..].iter_mut().step_by(self.stride).zip(grow) {
                            *gxv += wv * gv;
                        }
                    }
                }
            }
        }
    }

    fn backward_kernel(&self, g: &[f64], x: &[f64], gw: &mut [f64]) {
        for b in 0..self.batch {
            for o in 0..self.cout {
                let grow = &g[(b * self.cout + o) * self.lout..][..self.lout];
                for ci in 0..self.cin_g {
                    let xrow = &x[(b * self.cin + self.in_channel(o, ci)) * self.len..][..self.len];
                    for kk in 0..self.k {
                        let s: f64 = grow.iter().zip(xrow[kk..].iter().step_by(self.stride)).map(|(gv, xv)| gv * xv).sum();
                        gw[(o * self.cin_g + ci) * self.k + kk] += s;
                    }
                }
            }
        }
    }
}
