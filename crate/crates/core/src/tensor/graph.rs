use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>, Axis),
    Slice {
        x: Var,
        axis: Axis,
        start: usize,
    },
    Transpose(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The tape. Operations are appended in execution order; `backward` walks
/// them in exact reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    dropout_ops: u64,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It takes part in differentiation iff the tensor was
    /// created with `requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(true))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn record(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        let rg = parents.iter().any(|&p| self.rg(p));
        Ok(self.push(value, op, rg))
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(dim_err("matmul", self.value(a), self.value(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.record("matmul", Tensor::matrix(m, n, out), Op::MatMul(a, b), &[a, b])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims2()? != tb.dims2()? {
            return Err(dim_err(name, ta, tb));
        }
        Ok(ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        let (r, c) = self.dims(v).expect("recorded values are rank <= 2");
        Tensor::matrix(r, c, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.zip("add", a, b, |x, y| x + y)?;
        let t = self.like(a, d);
        self.record("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.zip("sub", a, b, |x, y| x - y)?;
        let t = self.like(a, d);
        self.record("sub", t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.zip("mul", a, b, |x, y| x * y)?;
        let t = self.like(a, d);
        self.record("mul", t, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let (r, n2) = self.dims(row)?;
        if r != 1 || n != n2 {
            return Err(dim_err("add_row", self.value(a), self.value(row)));
        }
        let bias = self.value(row).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(&bias) {
                *o += b;
            }
        }
        self.record("add_row", Tensor::matrix(m, n, out), Op::AddRow(a, row), &[a, row])
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let d = self.value(a).data().iter().map(|&x| f(x)).collect();
        let t = self.like(a, d);
        self.record(name, t, op, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", a, Op::AddScalar(a), |x| x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Contract(format!("log of non-positive value {bad}")));
        }
        self.map("log", a, Op::Log(a), f64::ln)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map("clamp", a, Op::Clamp { x: a, lo, hi }, |x| x.clamp(lo, hi))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let t = softmax_tensor(self.value(a), axis, false);
        self.record("softmax", t, Op::Softmax(a, axis), &[a])
    }

    pub fn log_softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let t = softmax_tensor(self.value(a), axis, true);
        self.record("log_softmax", t, Op::LogSoftmax(a, axis), &[a])
    }

    /// Normalizes each row to zero mean / unit variance, then applies the
    /// `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        for p in [gamma, beta] {
            if self.dims(p)? != (1, n) {
                return Err(dim_err("layer_norm", self.value(x), self.value(p)));
            }
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            inv_std[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.record("layer_norm", Tensor::matrix(m, n, out), op, &[x, gamma, beta])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
        let (r0, c0) = self.dims(first)?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let d = self.dims(p)?;
            let ok = match axis {
                Axis::Rows => d.1 == c0,
                Axis::Cols => d.0 == r0,
            };
            if !ok {
                return Err(dim_err("concat", self.value(first), self.value(p)));
            }
            dims.push(d);
        }
        let t = match axis {
            Axis::Rows => {
                let rows: usize = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * c0);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(rows, c0, data)
            }
            Axis::Cols => {
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                Tensor::matrix(r0, cols, data)
            }
        };
        self.record("concat", t, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// Half-open `[start, end)` range along `axis`.
    pub fn slice(&mut self, x: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let len = match axis {
            Axis::Rows => m,
            Axis::Cols => n,
        };
        if start >= end || end > len {
            return Err(Error::Dimension {
                op: "slice",
                lhs: vec![m, n],
                rhs: vec![start, end],
            });
        }
        let src = self.value(x);
        let t = match axis {
            Axis::Rows => Tensor::matrix(end - start, n, src.data()[start * n..end * n].to_vec()),
            Axis::Cols => {
                let w = end - start;
                let mut data = Vec::with_capacity(m * w);
                for i in 0..m {
                    data.extend_from_slice(&src.row_slice(i)[start..end]);
                }
                Tensor::matrix(m, w, data)
            }
        };
        self.record("slice", t, Op::Slice { x, axis, start }, &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose();
        self.record("transpose", t, Op::Transpose(x), &[x])
    }

    /// Embedding lookup: row `i` of the output is row `ids[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(table)?;
        if ids.is_empty() {
            return Err(Error::Input("gather_rows with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= m) {
            return Err(Error::Dimension {
                op: "gather_rows",
                lhs: vec![m, n],
                rhs: vec![bad],
            });
        }
        let src = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            data.extend_from_slice(src.row_slice(i));
        }
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        self.record("gather_rows", Tensor::matrix(ids.len(), n, data), op, &[table])
    }

    /// Inverted dropout. The mask stream is keyed by `(seed, k)` where `k`
    /// counts the dropout ops recorded on this graph so far.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0,1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(self.dropout_ops);
        self.dropout_ops += 1;
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let d = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = self.like(x, d);
        self.record("dropout", t, Op::Dropout { x, mask }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let out = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if !n.requires_grad {
                    return None;
                }
                let (r, c) = n.value.dims2().ok()?;
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; r * c]);
                Some(Tensor::matrix(r, c, data))
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.rg(v) {
                return;
            }
            let n = self.value(v).numel();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a).unwrap();
                let n = self.dims(*b).unwrap().1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |ga| {
                    // dA = G B^T
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let grow = &g[i * n..(i + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    // dB = A^T G
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += a_ip * gv;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddRow(a, row) => {
                let n = self.dims(*row).unwrap().1;
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*row, &mut |gr| {
                    for chunk in g.chunks(n) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += c * v)),
            Op::AddScalar(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }),
            Op::Exp(a) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i];
                }
            }),
            Op::Log(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] / x[i];
                    }
                })
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                })
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                acc(*x, &mut |ga| {
                    for i in 0..g.len() {
                        if xv[i] > *lo && xv[i] < *hi {
                            ga[i] += g[i];
                        }
                    }
                })
            }
            Op::Softmax(a, axis) => {
                let (m, n) = node.value.dims2().unwrap();
                acc(*a, &mut |ga| {
                    for_each_lane(m, n, *axis, |lane| {
                        let dot: f64 = lane.iter().map(|&i| g[i] * y[i]).sum();
                        for &i in lane {
                            ga[i] += y[i] * (g[i] - dot);
                        }
                    })
                })
            }
            Op::LogSoftmax(a, axis) => {
                let (m, n) = node.value.dims2().unwrap();
                acc(*a, &mut |ga| {
                    for_each_lane(m, n, *axis, |lane| {
                        let total: f64 = lane.iter().map(|&i| g[i]).sum();
                        for &i in lane {
                            ga[i] += g[i] - y[i].exp() * total;
                        }
                    })
                })
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = node.value.dims2().unwrap();
                let gv = self.value(*gamma).data();
                acc(*beta, &mut |gb| {
                    for chunk in g.chunks(n) {
                        add_into(gb, chunk);
                    }
                });
                acc(*gamma, &mut |gg| {
                    for i in 0..m * n {
                        gg[i % n] += g[i] * xhat[i];
                    }
                });
                acc(*x, &mut |gx| {
                    let nf = n as f64;
                    for i in 0..m {
                        let row = i * n..(i + 1) * n;
                        let dxhat: Vec<f64> = (0..n).map(|j| g[i * n + j] * gv[j]).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(&xhat[row.clone()]).map(|(d, h)| d * h).sum();
                        for j in 0..n {
                            gx[i * n + j] += inv_std[i] / nf * (nf * dxhat[j] - s1 - xhat[i * n + j] * s2);
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let (_, total_cols) = node.value.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.dims(p).unwrap();
                    match axis {
                        Axis::Rows => {
                            let span = &g[offset * total_cols..(offset + pr) * total_cols];
                            acc(p, &mut |gp| add_into(gp, span));
                            offset += pr;
                        }
                        Axis::Cols => {
                            acc(p, &mut |gp| {
                                for i in 0..pr {
                                    let src = &g[i * total_cols + offset..i * total_cols + offset + pc];
                                    add_into(&mut gp[i * pc..(i + 1) * pc], src);
                                }
                            });
                            offset += pc;
                        }
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let (_, n) = self.dims(*x).unwrap();
                let (sr, sc) = node.value.dims2().unwrap();
                acc(*x, &mut |gx| match axis {
                    Axis::Rows => add_into(&mut gx[start * n..(start + sr) * n], g),
                    Axis::Cols => {
                        for i in 0..sr {
                            add_into(&mut gx[i * n + start..i * n + start + sc], &g[i * sc..(i + 1) * sc]);
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = self.dims(*x).unwrap();
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let n = self.dims(*table).unwrap().1;
                acc(*table, &mut |gt| {
                    for (k, &i) in ids.iter().enumerate() {
                        add_into(&mut gt[i * n..(i + 1) * n], &g[k * n..(k + 1) * n]);
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |gx| {
                for i in 0..g.len() {
                    gx[i] += g[i] * mask[i];
                }
            }),
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Calls `f` with the flat indices of every row (axis = Cols) or every
/// column (axis = Rows) of an `m x n` matrix.
fn for_each_lane(m: usize, n: usize, axis: Axis, mut f: impl FnMut(&[usize])) {
    let mut lane = Vec::with_capacity(m.max(n));
    match axis {
        Axis::Cols => {
            for i in 0..m {
                lane.clear();
                lane.extend(i * n..(i + 1) * n);
                f(&lane);
            }
        }
        Axis::Rows => {
            for j in 0..n {
                lane.clear();
                lane.extend((0..m).map(|i| i * n + j));
                f(&lane);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_tensor(t: &Tensor, axis: Axis, log: bool) -> Tensor {
    let (m, n) = t.dims2().expect("rank <= 2");
    let x = t.data();
    let mut out = vec![0.0; m * n];
    for_each_lane(m, n, axis, |lane| {
        let max = lane.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = lane.iter().map(|&i| (x[i] - max).exp()).sum();
        for &i in lane {
            out[i] = if log {
                x[i] - max - z.ln()
            } else {
                (x[i] - max).exp() / z
            };
        }
    });
    Tensor::matrix(m, n, out)
}
