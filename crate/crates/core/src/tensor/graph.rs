use std::borrow::Cow;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Norm below which a cosine similarity is defined as 0.
const COSINE_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Softmax(Var),
    Nll {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    MeanRows(Var),
    Dot(Var, Var),
    Stack(Vec<Var>),
    Reshape(Var),
    Conv1d {
        seq: Var,
        filters: Var,
        bias: Var,
        act: Activation,
    },
    Cosine {
        a: Var,
        b: Var,
        norms_a: Vec<f64>,
        norms_b: Vec<f64>,
    },
    MaxCols {
        x: Var,
        argmax: Vec<usize>,
    },
    MaxAll {
        x: Var,
        argmax: usize,
    },
}

#[derive(Debug)]
struct Node<'a> {
    shape: Vec<usize>,
    data: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Tape of executed operations. Operands always precede their results, so a
/// reverse sweep over the node list is a valid backward order.
#[derive(Debug)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
    grad_enabled: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph that never records gradients; used for evaluation.
    pub fn inference() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = self.grad_enabled && t.requires_grad();
        let Tensor { shape, data, .. } = t;
        self.push_node(shape, Cow::Owned(data), Op::Leaf, requires_grad)
    }

    pub fn leaf_ref(&mut self, t: &'a Tensor) -> Var {
        let requires_grad = self.grad_enabled && t.requires_grad();
        self.push_node(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, requires_grad)
    }

    /// Binds a named parameter (once per graph) without copying its values.
    pub fn param(&mut self, store: &'a ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.param_index.get(name) {
            return Ok(*v);
        }
        let t = store.get(name)?;
        let v = self.leaf_ref(t);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.to_vec()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_node(&mut self, shape: Vec<usize>, data: Cow<'a, [f64]>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let rg = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(shape, Cow::Owned(data), op, rg)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![0, 0],
            }),
        }
    }

    fn dims1(&self, v: Var, op: &'static str) -> Result<usize> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![0],
            }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a bias vector to every row (last axis) of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.dims1(bias, "add_bias")?;
        let last = self.shape(x).last().copied().unwrap_or(1);
        if last != n {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: vec![n],
            });
        }
        let bv = self.value(bias);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % n])
            .collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), &[a])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().fold(0.0, |acc, x| acc + x);
        self.push(Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    /// Softmax of a vector, computed after subtracting the max entry.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.dims1(x, "softmax")?;
        let p = softmax(self.value(x))?;
        Ok(self.push(self.shape(x).to_vec(), p, Op::Softmax(x), &[x]))
    }

    /// `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = self.dims1(logits, "cross_entropy")?;
        if target >= n {
            return Err(Error::Index {
                index: target,
                size: n,
            });
        }
        let probs = softmax(self.value(logits))?;
        let loss = -log_softmax_at(self.value(logits), target);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::Nll {
                logits,
                target,
                probs,
            },
            &[logits],
        ))
    }

    /// Gathers rows of `table` (|V|×d) by id.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embed")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index { index: bad, size: v });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Mean over rows of an n×d matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "mean_rows")?;
        if n == 0 {
            return Err(Error::Contract("mean of zero rows".into()));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(&xv[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        let inv = n as f64;
        out.iter_mut().for_each(|o| *o /= inv);
        Ok(self.push(vec![d], out, Op::MeanRows(x), &[x]))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.dims1(a, "dot")?;
        self.same_shape(a, b, "dot")?;
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .fold(0.0, |acc, (x, y)| acc + x * y);
        Ok(self.push(Vec::new(), vec![s], Op::Dot(a, b), &[a, b]))
    }

    /// Stacks equally-shaped values along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Contract("stack of zero values".into()))?;
        let inner = self.shape(first).to_vec();
        let mut out = Vec::with_capacity(xs.len() * self.value(first).len());
        for &x in xs {
            self.same_shape(first, x, "stack")?;
            out.extend_from_slice(self.value(x));
        }
        let mut shape = vec![xs.len()];
        shape.extend(inner);
        Ok(self.push(shape, out, Op::Stack(xs.to_vec()), xs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let data = self.value(x).to_vec();
        Ok(self.push(shape, data, Op::Reshape(x), &[x]))
    }

    /// `weights (n) · rows (n×d)`, an attention-weighted sum of rows.
    pub fn weighted_sum(&mut self, weights: Var, rows: Var) -> Result<Var> {
        let n = self.dims1(weights, "weighted_sum")?;
        let (_, d) = self.dims2(rows, "weighted_sum")?;
        let w = self.reshape(weights, vec![1, n])?;
        let out = self.matmul(w, rows)?;
        self.reshape(out, vec![d])
    }

    /// Same-padded 1-D convolution over the rows of `seq` (L×d_in) with
    /// `filters` (w×d_in×d_out) and `bias` (d_out), followed by `act`.
    pub fn conv1d(&mut self, seq: Var, filters: Var, bias: Var, act: Activation) -> Result<Var> {
        let (len, din) = self.dims2(seq, "conv1d")?;
        let (w, fin, dout) = match self.shape(filters) {
            [w, i, o] => (*w, *i, *o),
            s => {
                return Err(Error::Shape {
                    op: "conv1d",
                    lhs: s.to_vec(),
                    rhs: vec![0, din, 0],
                })
            }
        };
        if w % 2 == 0 {
            return Err(Error::Config(format!("conv1d window width must be odd, got {w}")));
        }
        if len == 0 {
            return Err(Error::Contract("conv1d over an empty sequence".into()));
        }
        if fin != din || self.dims1(bias, "conv1d")? != dout {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: vec![len, din],
                rhs: self.shape(filters).to_vec(),
            });
        }
        let (sv, fv, bv) = (self.value(seq), self.value(filters), self.value(bias));
        let half = w / 2;
        let mut out = vec![0.0; len * dout];
        for t in 0..len {
            let orow = &mut out[t * dout..(t + 1) * dout];
            orow.copy_from_slice(bv);
            for k in 0..w {
                let Some(s) = (t + k).checked_sub(half).filter(|s| *s < len) else {
                    continue;
                };
                for i in 0..din {
                    let x = sv[s * din + i];
                    let frow = &fv[(k * din + i) * dout..(k * din + i + 1) * dout];
                    for (o, f) in orow.iter_mut().zip(frow) {
                        *o += x * f;
                    }
                }
            }
            if act == Activation::Relu {
                orow.iter_mut().for_each(|o| *o = o.max(0.0));
            }
        }
        Ok(self.push(
            vec![len, dout],
            out,
            Op::Conv1d {
                seq,
                filters,
                bias,
                act,
            },
            &[seq, filters, bias],
        ))
    }

    /// Pairwise cosine similarity between rows of `a` (m×d) and `b` (n×d).
    /// Rows with zero norm give similarity 0.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, d) = self.dims2(a, "cosine")?;
        let (n, d2) = self.dims2(b, "cosine")?;
        if d != d2 {
            return Err(Error::Shape {
                op: "cosine",
                lhs: vec![m, d],
                rhs: vec![n, d2],
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let norms_a = row_norms(av, m, d);
        let norms_b = row_norms(bv, n, d);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            if norms_a[i] < COSINE_EPS {
                continue;
            }
            let ar = &av[i * d..(i + 1) * d];
            for j in 0..n {
                if norms_b[j] < COSINE_EPS {
                    continue;
                }
                let br = &bv[j * d..(j + 1) * d];
                let dot = ar.iter().zip(br).fold(0.0, |acc, (x, y)| acc + x * y);
                out[i * n + j] = dot / (norms_a[i] * norms_b[j]);
            }
        }
        Ok(self.push(
            vec![m, n],
            out,
            Op::Cosine {
                a,
                b,
                norms_a,
                norms_b,
            },
            &[a, b],
        ))
    }

    /// Row-wise maximum of an m×n matrix (first index wins ties).
    pub fn max_cols(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "max_cols")?;
        if n == 0 {
            return Err(Error::Contract("max over an empty axis".into()));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(m);
        let mut argmax = Vec::with_capacity(m);
        for i in 0..m {
            let (j, v) = argmax_of(&xv[i * n..(i + 1) * n]);
            out.push(v);
            argmax.push(j);
        }
        Ok(self.push(vec![m], out, Op::MaxCols { x, argmax }, &[x]))
    }

    /// Maximum over all entries.
    pub fn max_all(&mut self, x: Var) -> Result<Var> {
        if self.value(x).is_empty() {
            return Err(Error::Contract("max over an empty tensor".into()));
        }
        let (j, v) = argmax_of(self.value(x));
        Ok(self.push(Vec::new(), vec![v], Op::MaxAll { x, argmax: j }, &[x]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n.op {
                Op::Leaf if n.requires_grad => Some(
                    grads
                        .get_mut(i)
                        .and_then(Option::take)
                        .unwrap_or_else(|| vec![0.0; n.data.len()]),
                ),
                _ => None,
            })
            .collect::<Vec<_>>();
        let params = self
            .params
            .iter()
            .filter_map(|(name, v)| leaves[v.0].as_ref().map(|_| (name.clone(), *v)))
            .collect();
        Ok(Gradients { leaves, params })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if n.requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.data.len()]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).fold(0.0, |s, (x, y)| s + x * y);
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            for (o, y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| add_into(gx, g));
                let n = nodes[b.0].data.len();
                acc(*b, &mut |gb| {
                    for (i, v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
                acc(*a, &mut |ga| {
                    for ((o, gv), y) in ga.iter_mut().zip(g).zip(bv.iter()) {
                        *o += gv * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, gv), x) in gb.iter_mut().zip(g).zip(av.iter()) {
                        *o += gv * x;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                for (o, gv) in ga.iter_mut().zip(g) {
                    *o += c * gv;
                }
            }),
            Op::Relu(a) => {
                let xv = &nodes[a.0].data;
                acc(*a, &mut |ga| {
                    for ((o, gv), x) in ga.iter_mut().zip(g).zip(xv.iter()) {
                        if *x > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Softmax(x) => {
                let y = &node.data;
                let inner = y.iter().zip(g).fold(0.0, |s, (a, b)| s + a * b);
                acc(*x, &mut |gx| {
                    for ((o, yv), gv) in gx.iter_mut().zip(y.iter()).zip(g) {
                        *o += yv * (gv - inner);
                    }
                });
            }
            Op::Nll {
                logits,
                target,
                probs,
            } => acc(*logits, &mut |gx| {
                for (j, (o, p)) in gx.iter_mut().zip(probs).enumerate() {
                    let onehot = if j == *target { 1.0 } else { 0.0 };
                    *o += g[0] * (p - onehot);
                }
            }),
            Op::Embed { table, ids } => {
                let d = nodes[table.0].shape[1];
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::MeanRows(x) => {
                let n = nodes[x.0].shape[0];
                let d = g.len();
                let inv = 1.0 / n as f64;
                acc(*x, &mut |gx| {
                    for r in 0..n {
                        for (o, gv) in gx[r * d..(r + 1) * d].iter_mut().zip(g) {
                            *o += gv * inv;
                        }
                    }
                });
            }
            Op::Dot(a, b) => {
                let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
                acc(*a, &mut |ga| {
                    for (o, y) in ga.iter_mut().zip(bv.iter()) {
                        *o += g[0] * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for (o, x) in gb.iter_mut().zip(av.iter()) {
                        *o += g[0] * x;
                    }
                });
            }
            Op::Stack(xs) => {
                let k = nodes[xs[0].0].data.len();
                for (i, x) in xs.iter().enumerate() {
                    acc(*x, &mut |gx| add_into(gx, &g[i * k..(i + 1) * k]));
                }
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Conv1d {
                seq,
                filters,
                bias,
                act,
            } => {
                let (len, din) = (nodes[seq.0].shape[0], nodes[seq.0].shape[1]);
                let (w, dout) = (nodes[filters.0].shape[0], nodes[filters.0].shape[2]);
                let half = w / 2;
                let out = &node.data;
                let gpre: Vec<f64> = match act {
                    Activation::Relu => g
                        .iter()
                        .zip(out.iter())
                        .map(|(gv, o)| if *o > 0.0 { *gv } else { 0.0 })
                        .collect(),
                    Activation::Identity => g.to_vec(),
                };
                let (sv, fv) = (&nodes[seq.0].data, &nodes[filters.0].data);
                acc(*bias, &mut |gb| {
                    for t in 0..len {
                        add_into(gb, &gpre[t * dout..(t + 1) * dout]);
                    }
                });
                acc(*filters, &mut |gf| {
                    for t in 0..len {
                        let grow = &gpre[t * dout..(t + 1) * dout];
                        for k in 0..w {
                            let Some(s) = (t + k).checked_sub(half).filter(|s| *s < len) else {
                                continue;
                            };
                            for i in 0..din {
                                let x = sv[s * din + i];
                                let frow = &mut gf[(k * din + i) * dout..(k * din + i + 1) * dout];
                                for (o, gv) in frow.iter_mut().zip(grow) {
                                    *o += x * gv;
                                }
                            }
                        }
                    }
                });
                acc(*seq, &mut |gs| {
                    for t in 0..len {
                        let grow = &gpre[t * dout..(t + 1) * dout];
                        for k in 0..w {
                            let Some(s) = (t + k).checked_sub(half).filter(|s| *s < len) else {
                                continue;
                            };
                            for i in 0..din {
                                let frow = &fv[(k * din + i) * dout..(k * din + i + 1) * dout];
                                gs[s * din + i] += frow.iter().zip(grow).fold(0.0, |a, (f, gv)| a + f * gv);
                            }
                        }
                    }
                });
            }
            Op::Cosine {
                a,
                b,
                norms_a,
                norms_b,
            } => {
                let (m, d) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[0];
                let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
                let s = &node.data;
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        if norms_a[i] < COSINE_EPS {
                            continue;
                        }
                        for j in 0..n {
                            if norms_b[j] < COSINE_EPS {
                                continue;
                            }
                            let gs = g[i * n + j];
                            let c1 = gs / (norms_a[i] * norms_b[j]);
                            let c2 = gs * s[i * n + j] / (norms_a[i] * norms_a[i]);
                            for t in 0..d {
                                ga[i * d + t] += c1 * bv[j * d + t] - c2 * av[i * d + t];
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for j in 0..n {
                        if norms_b[j] < COSINE_EPS {
                            continue;
                        }
                        for i in 0..m {
                            if norms_a[i] < COSINE_EPS {
                                continue;
                            }
                            let gs = g[i * n + j];
                            let c1 = gs / (norms_a[i] * norms_b[j]);
                            let c2 = gs * s[i * n + j] / (norms_b[j] * norms_b[j]);
                            for t in 0..d {
                                gb[j * d + t] += c1 * av[i * d + t] - c2 * bv[j * d + t];
                            }
                        }
                    }
                });
            }
            Op::MaxCols { x, argmax } => {
                let n = nodes[x.0].shape[1];
                acc(*x, &mut |gx| {
                    for (i, &j) in argmax.iter().enumerate() {
                        gx[i * n + j] += g[i];
                    }
                });
            }
            Op::MaxAll { x, argmax } => acc(*x, &mut |gx| gx[*argmax] += g[0]),
        }
    }
}

/// Gradients produced by [`Graph::backward`], one buffer per grad-enabled leaf.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Vec<f64>>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if the leaf does not require grad.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of the named parameters bound with grad enabled.
    pub fn params(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.params
            .iter()
            .filter_map(|(name, v)| self.get(*v).map(|g| (name.as_str(), g)))
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params().find(|(n, _)| *n == name).map(|(_, g)| g)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn row_norms(v: &[f64], rows: usize, d: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| v[r * d..(r + 1) * d].iter().fold(0.0, |a, x| a + x * x).sqrt())
        .collect()
}

fn argmax_of(xs: &[f64]) -> (usize, f64) {
    let mut best = (0, xs[0]);
    for (j, &v) in xs.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

/// Max-shifted softmax of a slice.
pub fn softmax(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z = e.iter().fold(0.0, |a, x| a + x);
    Ok(e.into_iter().map(|x| x / z).collect())
}

fn log_softmax_at(xs: &[f64], i: usize) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = xs.iter().fold(0.0, |a, x| a + (x - m).exp());
    xs[i] - m - z.ln()
}
