use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    AddRow { m: Var, row: Var },
    CircConv { kernel: Var, signal: Var },
    Softmax { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Concat { parts: Vec<Var> },
    Stack { rows: Vec<Var> },
    Sum { x: Var },
    MeanRows { x: Var },
    Row { m: Var, index: usize },
    Reshape { x: Var },
    Transpose { x: Var },
    Slice { x: Var, start: usize },
    CrossEntropy { p: Var, target: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Clamp applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-forward-pass operation record.
///
/// Every op appends one node holding its output value. [`Tape::backward`]
/// walks the nodes in reverse insertion order, so each op is visited once and
/// a value consumed several times receives the sum of its contributions.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Row-wise affine map: `out[i] = x[i] · w + b`.
    ///
    /// `x` is either a vector `[k]` (treated as one row, output `[n]`) or a
    /// matrix `[m, k]` (output `[m, n]`); `w` is `[k, n]`, `b` is `[n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (rows, k) = match xs.as_slice() {
            [k] => (1, *k),
            [m, k] => (*m, *k),
            _ => return Err(Error::shape("linear", &xs, &ws)),
        };
        let n = match ws.as_slice() {
            [wk, n] if *wk == k => *n,
            _ => return Err(Error::shape("linear", &xs, &ws)),
        };
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [n] {
                return Err(Error::shape("linear bias", bs, &[n]));
            }
        }
        let xd = self.data(x);
        let wd = self.data(w);
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let orow = &mut out[r * n..(r + 1) * n];
            if let Some(b) = b {
                orow.copy_from_slice(self.nodes[b.0].value.data());
            }
            for (kk, &xv) in xd[r * k..(r + 1) * k].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (o, &wv) in orow.iter_mut().zip(&wd[kk * n..(kk + 1) * n]) {
                    *o += xv * wv;
                }
            }
        }
        let shape = if xs.len() == 1 { vec![n] } else { vec![rows, n] };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.needs(&inputs);
        Ok(self.push(Op::Linear { x, w, b }, Tensor { shape, data: out }, rg))
    }

    /// Adds a vector to every row of a matrix (`[k, d] + [d]`).
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let ms = self.shape(m).to_vec();
        let rs = self.shape(row).to_vec();
        let d = match (ms.as_slice(), rs.as_slice()) {
            ([_, d], [rd]) if d == rd => *d,
            _ => return Err(Error::shape("add_row", &ms, &rs)),
        };
        let rd = self.data(row).to_vec();
        let data: Vec<f64> = self.data(m).iter().enumerate().map(|(i, v)| v + rd[i % d]).collect();
        let rg = self.needs(&[m, row]);
        Ok(self.push(Op::AddRow { m, row }, Tensor { shape: ms, data }, rg))
    }

    /// `out[i] = Σ_j kernel[j] · signal[(i − j) mod n]`.
    pub fn circular_conv(&mut self, kernel: Var, signal: Var) -> Result<Var> {
        let ks = self.shape(kernel).to_vec();
        let ss = self.shape(signal).to_vec();
        if ks.len() != 1 || ks != ss {
            return Err(Error::shape("circular_conv", &ks, &ss));
        }
        let n = ks[0];
        let kd = self.data(kernel);
        let sd = self.data(signal);
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, &kv) in kd.iter().enumerate() {
                *o += kv * sd[(i + n - j) % n];
            }
        }
        let rg = self.needs(&[kernel, signal]);
        Ok(self.push(Op::CircConv { kernel, signal }, Tensor::vector(out), rg))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 1 {
            return Err(Error::shape("softmax", xs, &[]));
        }
        let out = softmax_slice(self.data(x));
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Softmax { x }, Tensor::vector(out), rg))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |x| Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |x| Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x| Op::Relu { x })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, |x| Op::Scale { x, factor })
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(Var) -> Op) -> Var {
        let value = &self.nodes[x.0].value;
        let out = Tensor {
            shape: value.shape.clone(),
            data: value.data.iter().map(|&v| f(v)).collect(),
        };
        let rg = self.needs(&[x]);
        self.push(op(x), out, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(Var, Var) -> Op,
    ) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape != bv.shape {
            return Err(Error::shape(name, &av.shape, &bv.shape));
        }
        let out = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
        };
        let rg = self.needs(&[a, b]);
        Ok(self.push(op(a, b), out, rg))
    }

    /// Concatenates vectors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput { op: "concat" });
        }
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 1 {
                return Err(Error::shape("concat", s, &[]));
            }
            data.extend_from_slice(self.data(p));
        }
        let rg = self.needs(parts);
        Ok(self.push(Op::Concat { parts: parts.to_vec() }, Tensor::vector(data), rg))
    }

    /// Stacks equal-length vectors into a `[k, n]` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or(Error::EmptyInput { op: "stack" })?;
        let width = self.shape(first).to_vec();
        if width.len() != 1 {
            return Err(Error::shape("stack", &width, &[]));
        }
        let mut data = Vec::with_capacity(rows.len() * width[0]);
        for &r in rows {
            if self.shape(r) != width.as_slice() {
                return Err(Error::shape("stack", self.shape(r), &width));
            }
            data.extend_from_slice(self.data(r));
        }
        let rg = self.needs(rows);
        Ok(self.push(
            Op::Stack { rows: rows.to_vec() },
            Tensor {
                shape: vec![rows.len(), width[0]],
                data,
            },
            rg,
        ))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.needs(&[x]);
        self.push(Op::Sum { x }, Tensor::scalar(s), rg)
    }

    /// Mean over the rows of a `[m, n]` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (m, n) = match xs.as_slice() {
            [m, n] => (*m, *n),
            _ => return Err(Error::shape("mean_rows", &xs, &[])),
        };
        let xd = self.data(x);
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(&xd[r * n..(r + 1) * n]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.needs(&[x]);
        Ok(self.push(Op::MeanRows { x }, Tensor::vector(out), rg))
    }

    /// Selects one row of a matrix (embedding lookup).
    pub fn row(&mut self, m: Var, index: usize) -> Result<Var> {
        let ms = self.shape(m).to_vec();
        let (rows, cols) = match ms.as_slice() {
            [r, c] => (*r, *c),
            _ => return Err(Error::shape("row", &ms, &[])),
        };
        if index >= rows {
            return Err(Error::IndexOutOfRange {
                op: "row",
                index,
                extent: rows,
            });
        }
        let data = self.data(m)[index * cols..(index + 1) * cols].to_vec();
        let rg = self.needs(&[m]);
        Ok(self.push(Op::Row { m, index }, Tensor::vector(data), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Reshape { x }, value, rg))
    }

    /// Matrix transpose `[r, c] -> [c, r]`.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (r, c) = match xs.as_slice() {
            [r, c] => (*r, *c),
            _ => return Err(Error::shape("transpose", &xs, &[])),
        };
        let xd = self.data(x);
        let data = (0..r * c).map(|i| xd[(i % r) * c + i / r]).collect();
        let rg = self.needs(&[x]);
        Ok(self.push(
            Op::Transpose { x },
            Tensor {
                shape: vec![c, r],
                data,
            },
            rg,
        ))
    }

    /// Contiguous sub-vector `x[start..start + len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 1 || len == 0 || start + len > xs[0] {
            return Err(Error::shape("slice", xs, &[start, len]));
        }
        let data = self.data(x)[start..start + len].to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Slice { x, start }, Tensor::vector(data), rg))
    }

    /// `−ln max(p[target], 1e−12)`.
    pub fn cross_entropy(&mut self, p: Var, target: usize) -> Result<Var> {
        let ps = self.shape(p);
        if ps.len() != 1 {
            return Err(Error::shape("cross_entropy", ps, &[]));
        }
        if target >= ps[0] {
            return Err(Error::IndexOutOfRange {
                op: "cross_entropy",
                index: target,
                extent: ps[0],
            });
        }
        let pt = self.data(p)[target].max(PROB_FLOOR);
        let rg = self.needs(&[p]);
        Ok(self.push(Op::CrossEntropy { p, target }, Tensor::scalar(-pt.ln()), rg))
    }

    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.backward_scaled(output, 1.0)
    }

    /// Backward sweep seeded with `seed` instead of 1.
    pub fn backward_scaled(&self, output: Var, seed: f64) -> Result<Gradients> {
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![seed]);

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match (&node.op, grads[id].as_ref()) {
                (Op::Leaf, _) | (_, None) => continue,
                (_, Some(g)) => g.clone(),
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let ws = self.shape(w);
                let (k, n) = (ws[0], ws[1]);
                let rows = g.len() / n;
                let xd = self.data(x);
                let wd = self.data(w);
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; rows * k];
                    for r in 0..rows {
                        let grow = &g[r * n..(r + 1) * n];
                        for kk in 0..k {
                            dx[r * k + kk] = grow.iter().zip(&wd[kk * n..(kk + 1) * n]).map(|(a, b)| a * b).sum();
                        }
                    }
                    self.accumulate(grads, x, dx);
                }
                if self.nodes[w.0].requires_grad {
                    let mut dw = vec![0.0; k * n];
                    for r in 0..rows {
                        let grow = &g[r * n..(r + 1) * n];
                        for kk in 0..k {
                            let xv = xd[r * k + kk];
                            if xv == 0.0 {
                                continue;
                            }
                            for (d, gv) in dw[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                    self.accumulate(grads, w, dw);
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; n];
                    for r in 0..rows {
                        for (d, gv) in db.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                            *d += gv;
                        }
                    }
                    self.accumulate(grads, b, db);
                }
            }
            Op::AddRow { m, row } => {
                let d = self.shape(row)[0];
                let mut drow = vec![0.0; d];
                for (i, gv) in g.iter().enumerate() {
                    drow[i % d] += gv;
                }
                self.accumulate(grads, m, g.to_vec());
                self.accumulate(grads, row, drow);
            }
            Op::CircConv { kernel, signal } => {
                let kd = self.data(kernel);
                let sd = self.data(signal);
                let n = kd.len();
                let mut dk = vec![0.0; n];
                let mut ds = vec![0.0; n];
                for (i, &gi) in g.iter().enumerate() {
                    for j in 0..n {
                        let l = (i + n - j) % n;
                        dk[j] += gi * sd[l];
                        ds[l] += gi * kd[j];
                    }
                }
                self.accumulate(grads, kernel, dk);
                self.accumulate(grads, signal, ds);
            }
            Op::Softmax { x } => {
                let y = out.data();
                let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                let dx = y.iter().zip(g).map(|(yi, gi)| yi * (gi - dot)).collect();
                self.accumulate(grads, x, dx);
            }
            Op::Tanh { x } => {
                let dx = out.data().iter().zip(g).map(|(y, gi)| gi * (1.0 - y * y)).collect();
                self.accumulate(grads, x, dx);
            }
            Op::Sigmoid { x } => {
                let dx = out.data().iter().zip(g).map(|(y, gi)| gi * y * (1.0 - y)).collect();
                self.accumulate(grads, x, dx);
            }
            Op::Relu { x } => {
                let dx = self
                    .data(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, x, dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.to_vec());
            }
            Op::Mul { a, b } => {
                let da = self.data(b).iter().zip(g).map(|(v, gi)| v * gi).collect();
                let db = self.data(a).iter().zip(g).map(|(v, gi)| v * gi).collect();
                self.accumulate(grads, a, da);
                self.accumulate(grads, b, db);
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, x, g.iter().map(|gi| gi * factor).collect());
            }
            Op::Concat { ref parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.accumulate(grads, p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::Stack { ref rows } => {
                let n = g.len() / rows.len();
                for (i, &r) in rows.iter().enumerate() {
                    self.accumulate(grads, r, g[i * n..(i + 1) * n].to_vec());
                }
            }
            Op::Sum { x } => {
                let numel = self.value(x).numel();
                self.accumulate(grads, x, vec![g[0]; numel]);
            }
            Op::MeanRows { x } => {
                let xs = self.shape(x);
                let (m, n) = (xs[0], xs[1]);
                let scale = 1.0 / m as f64;
                let dx = (0..m * n).map(|i| g[i % n] * scale).collect();
                self.accumulate(grads, x, dx);
            }
            Op::Row { m, index } => {
                let ms = self.shape(m);
                let cols = ms[1];
                let mut dm = vec![0.0; ms[0] * cols];
                dm[index * cols..(index + 1) * cols].copy_from_slice(g);
                self.accumulate(grads, m, dm);
            }
            Op::Reshape { x } => self.accumulate(grads, x, g.to_vec()),
            Op::Slice { x, start } => {
                let mut dx = vec![0.0; self.value(x).numel()];
                dx[start..start + g.len()].copy_from_slice(g);
                self.accumulate(grads, x, dx);
            }
            Op::Transpose { x } => {
                let xs = self.shape(x);
                let (r, c) = (xs[0], xs[1]);
                // g is [c, r]; dx[i][j] = g[j][i]
                let dx = (0..r * c).map(|k| g[(k % c) * r + k / c]).collect();
                self.accumulate(grads, x, dx);
            }
            Op::CrossEntropy { p, target } => {
                let pd = self.data(p);
                let mut dp = vec![0.0; pd.len()];
                if pd[target] > PROB_FLOOR {
                    dp[target] = -g[0] / pd[target];
                }
                self.accumulate(grads, p, dp);
            }
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the output w.r.t. `v`; `None` when `v` did not influence
    /// the output (or does not require gradients).
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like `v`'s value, zero-filled when absent.
    pub fn tensor(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.shape(v).to_vec();
        match self.get(v) {
            Some(g) => Tensor {
                shape,
                data: g.to_vec(),
            },
            None => Tensor::zeros(&shape),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
