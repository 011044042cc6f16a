//! Reverse-mode differentiation over a small fixed op set.
//!
//! A [`Graph`] is an append-only tape: node ids are assigned in build order,
//! so ids are already a topological order and `backward` is a single reverse
//! walk. Topology (ops, shapes, token ids, input features) is separate from
//! parameter values: `forward(theta)` evaluates the same graph at any point
//! in parameter space, which the path-integral machinery exploits by reusing
//! one graph per sample across every trajectory step and quadrature node.
//!
//! Parameter leaves reference a flat parameter vector by offset.
//! `backward_into` accumulates directly into a caller-provided `D`-length
//! gradient buffer, so a vector–Jacobian product never materializes a
//! vocab-sized embedding adjoint.
//!
//! All evaluation is sequential and allocation-order deterministic: the same
//! graph and the same `theta` produce bitwise-identical outputs and
//! gradients on every run.

use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, matmul_acc_at, matmul_acc_bt, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    /// Slice of the parameter vector starting at `offset`.
    Param { offset: usize },
    /// Constant input features (not differentiated).
    Input { values: Vec<f64> },
    /// Row lookup: `out[i] = table[tokens[i]]`. `table` must be a matrix.
    Embed { table: NodeId, tokens: Vec<usize> },
    /// `a · b` for matrices.
    MatMul { a: NodeId, b: NodeId },
    /// Elementwise `a + b`; `b` may be a vector broadcast over rows of `a`.
    Add { a: NodeId, b: NodeId },
    Relu { a: NodeId },
    /// `softmax(q·kᵀ/√d)·v` with row-wise softmax.
    Attention { q: NodeId, k: NodeId, v: NodeId },
    /// Row-wise `x − logsumexp(x)`.
    LogSoftmax { a: NodeId },
    Reshape { a: NodeId },
    /// Rows `start..end` of a matrix.
    SliceRows { a: NodeId, start: usize },
    Scale { a: NodeId, c: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Differentiable computation tape. See module docs.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Length of the flat parameter vector this graph indexes into.
    d: usize,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// (rows, cols) of a vector-or-matrix shape.
fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        r => panic!("rank-{r} tensor where matrix expected"),
    }
}

impl Graph {
    /// `d` is the total parameter count the graph's `Param` leaves index into.
    pub fn new(d: usize) -> Graph {
        Graph { nodes: Vec::new(), d }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        self.nodes.len() - 1
    }

    fn check_ref(&self, op: &'static str, id: NodeId) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::shape(op, format!("node {id} not yet defined")));
        }
        Ok(())
    }

    pub fn param(&mut self, offset: usize, shape: &[usize]) -> Result<NodeId> {
        let n = numel(shape);
        if offset + n > self.d {
            return Err(Error::shape(
                "param",
                format!("offset {offset} + numel {n} exceeds parameter dim {}", self.d),
            ));
        }
        Ok(self.push(Op::Param { offset }, shape.to_vec()))
    }

    pub fn input(&mut self, shape: &[usize], values: Vec<f64>) -> Result<NodeId> {
        if numel(shape) != values.len() {
            return Err(Error::shape(
                "input",
                format!("shape {shape:?} vs {} values", values.len()),
            ));
        }
        Ok(self.push(Op::Input { values }, shape.to_vec()))
    }

    pub fn embed(&mut self, table: NodeId, tokens: &[usize]) -> Result<NodeId> {
        self.check_ref("embed", table)?;
        let tshape = self.shape(table);
        if tshape.len() != 2 {
            return Err(Error::shape("embed", format!("table shape {tshape:?} not a matrix")));
        }
        let (vocab, dim) = (tshape[0], tshape[1]);
        for &t in tokens {
            if t >= vocab {
                return Err(Error::TokenOutOfVocab { token: t, vocab });
            }
        }
        let shape = vec![tokens.len(), dim];
        Ok(self.push(
            Op::Embed {
                table,
                tokens: tokens.to_vec(),
            },
            shape,
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_ref("matmul", a)?;
        self.check_ref("matmul", b)?;
        let (m, ka) = dims2(self.shape(a));
        let (kb, n) = dims2(self.shape(b));
        if ka != kb {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(self.push(Op::MatMul { a, b }, vec![m, n]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_ref("add", a)?;
        self.check_ref("add", b)?;
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b);
        let broadcast_ok = sb.len() == 1 && sb[0] == dims2(&sa).1;
        if sa != *sb && !broadcast_ok {
            return Err(Error::shape("add", format!("{sa:?} + {sb:?}")));
        }
        Ok(self.push(Op::Add { a, b }, sa))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_ref("relu", a)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Relu { a }, shape))
    }

    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
        for id in [q, k, v] {
            self.check_ref("attention", id)?;
        }
        let (qr, qd) = dims2(self.shape(q));
        let (kr, kd) = dims2(self.shape(k));
        let (vr, vd) = dims2(self.shape(v));
        if qd != kd || kr != vr {
            return Err(Error::shape(
                "attention",
                format!(
                    "q {:?}, k {:?}, v {:?}",
                    self.shape(q),
                    self.shape(k),
                    self.shape(v)
                ),
            ));
        }
        Ok(self.push(Op::Attention { q, k, v }, vec![qr, vd]))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_ref("log_softmax", a)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::LogSoftmax { a }, shape))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check_ref("reshape", a)?;
        if numel(shape) != numel(self.shape(a)) {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(a)),
            ));
        }
        Ok(self.push(Op::Reshape { a }, shape.to_vec()))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.check_ref("slice_rows", a)?;
        let (rows, cols) = dims2(self.shape(a));
        if start >= end || end > rows {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{end} of {:?}", self.shape(a)),
            ));
        }
        Ok(self.push(Op::SliceRows { a, start }, vec![end - start, cols]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check_ref("scale", a)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Scale { a, c }, shape))
    }

    /// Value slice of a node: parameter leaves read from `theta`, inputs from
    /// the op itself, everything else from `vals`.
    pub fn value<'a>(&'a self, vals: &'a [Tensor], theta: &'a [f64], id: NodeId) -> &'a [f64] {
        match &self.nodes[id].op {
            Op::Param { offset } => &theta[*offset..*offset + numel(&self.nodes[id].shape)],
            Op::Input { values } => values,
            _ => &vals[id].data,
        }
    }

    /// Evaluate every node at parameter vector `theta`.
    ///
    /// Returned tensors are indexed by node id; `Param`/`Input` slots hold
    /// empty placeholders (read them through [`Graph::value`]).
    pub fn forward(&self, theta: &[f64]) -> Result<Vec<Tensor>> {
        if theta.len() != self.d {
            return Err(Error::shape(
                "forward",
                format!("theta length {} != {}", theta.len(), self.d),
            ));
        }
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let out = match &node.op {
                Op::Param { .. } | Op::Input { .. } => Tensor::zeros(&[0]),
                Op::Embed { table, tokens } => {
                    let t = self.value(&vals, theta, *table);
                    let dim = self.nodes[*table].shape[1];
                    let mut data = Vec::with_capacity(tokens.len() * dim);
                    for &tok in tokens {
                        data.extend_from_slice(&t[tok * dim..(tok + 1) * dim]);
                    }
                    Tensor::from_vec(&node.shape, data)?
                }
                Op::MatMul { a, b } => {
                    let (m, k) = dims2(&self.nodes[*a].shape);
                    let n = dims2(&self.nodes[*b].shape).1;
                    let mut out = vec![0.0; m * n];
                    matmul_acc(
                        self.value(&vals, theta, *a),
                        self.value(&vals, theta, *b),
                        m,
                        k,
                        n,
                        &mut out,
                    );
                    Tensor::from_vec(&node.shape, out)?
                }
                Op::Add { a, b } => {
                    let av = self.value(&vals, theta, *a);
                    let bv = self.value(&vals, theta, *b);
                    let mut out = av.to_vec();
                    if bv.len() == out.len() {
                        for (o, &x) in out.iter_mut().zip(bv) {
                            *o += x;
                        }
                    } else {
                        // row-broadcast vector
                        let n = bv.len();
                        for row in out.chunks_mut(n) {
                            for (o, &x) in row.iter_mut().zip(bv) {
                                *o += x;
                            }
                        }
                    }
                    Tensor::from_vec(&node.shape, out)?
                }
                Op::Relu { a } => {
                    let out = self
                        .value(&vals, theta, *a)
                        .iter()
                        .map(|&x| if x > 0.0 { x } else { 0.0 })
                        .collect();
                    Tensor::from_vec(&node.shape, out)?
                }
                Op::Attention { q, k, v } => {
                    let qv = self.value(&vals, theta, *q);
                    let kv = self.value(&vals, theta, *k);
                    let vv = self.value(&vals, theta, *v);
                    let (qr, d) = dims2(&self.nodes[*q].shape);
                    let (kr, _) = dims2(&self.nodes[*k].shape);
                    let vd = dims2(&self.nodes[*v].shape).1;
                    let p = attention_probs(qv, kv, qr, kr, d);
                    let mut out = vec![0.0; qr * vd];
                    matmul_acc(&p, vv, qr, kr, vd, &mut out);
                    Tensor::from_vec(&node.shape, out)?
                }
                Op::LogSoftmax { a } => {
                    let av = self.value(&vals, theta, *a);
                    let (_r, c) = dims2(&self.nodes[*a].shape);
                    let mut out = Vec::with_capacity(av.len());
                    for row in av.chunks(c) {
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                        out.extend(row.iter().map(|&x| x - lse));
                    }
                    Tensor::from_vec(&node.shape, out)?
                }
                Op::Reshape { a } => {
                    Tensor::from_vec(&node.shape, self.value(&vals, theta, *a).to_vec())?
                }
                Op::SliceRows { a, start } => {
                    let cols = dims2(&self.nodes[*a].shape).1;
                    let rows = node.shape[0];
                    let av = self.value(&vals, theta, *a);
                    Tensor::from_vec(
                        &node.shape,
                        av[start * cols..(start + rows) * cols].to_vec(),
                    )?
                }
                Op::Scale { a, c } => {
                    let out = self.value(&vals, theta, *a).iter().map(|&x| c * x).collect();
                    Tensor::from_vec(&node.shape, out)?
                }
            };
            debug_assert_eq!(id, vals.len());
            vals.push(out);
        }
        Ok(vals)
    }

    /// Vector–Jacobian product: accumulate `seedᵀ · ∂(output)/∂θ` into
    /// `grad` (length `d`). `grad` is NOT zeroed first, so repeated calls
    /// accumulate — callers that want a fresh gradient pass a zero buffer.
    pub fn backward_into(
        &self,
        vals: &[Tensor],
        theta: &[f64],
        output: NodeId,
        seed: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_ref("backward", output)?;
        let out_numel = numel(&self.nodes[output].shape);
        if seed.len() != out_numel {
            return Err(Error::shape(
                "backward",
                format!("seed length {} != output numel {out_numel}", seed.len()),
            ));
        }
        if grad.len() != self.d {
            return Err(Error::shape(
                "backward",
                format!("grad length {} != {}", grad.len(), self.d),
            ));
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output + 1];
        adj[output] = Some(seed.to_vec());

        for id in (0..=output).rev() {
            let Some(dy) = adj[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Param { offset } => {
                    for (g, &d) in grad[*offset..*offset + dy.len()].iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::Input { .. } => {}
                Op::Embed { table, tokens } => {
                    // Rows of dy scatter-add into the table's parameter rows;
                    // the table is always a Param leaf in our models, but fall
                    // back to a dense adjoint if it is not.
                    let dim = self.nodes[*table].shape[1];
                    match self.nodes[*table].op {
                        Op::Param { offset } => {
                            for (i, &tok) in tokens.iter().enumerate() {
                                let dst = &mut grad[offset + tok * dim..offset + (tok + 1) * dim];
                                for (g, &d) in dst.iter_mut().zip(&dy[i * dim..(i + 1) * dim]) {
                                    *g += d;
                                }
                            }
                        }
                        _ => {
                            let sink = self.adjoint_sink(&mut adj, *table);
                            for (i, &tok) in tokens.iter().enumerate() {
                                for (g, &d) in sink[tok * dim..(tok + 1) * dim]
                                    .iter_mut()
                                    .zip(&dy[i * dim..(i + 1) * dim])
                                {
                                    *g += d;
                                }
                            }
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (m, k) = dims2(&self.nodes[*a].shape);
                    let n = dims2(&self.nodes[*b].shape).1;
                    {
                        let bv = self.value(vals, theta, *b);
                        let sink_a = self.param_or_adjoint(&mut adj, grad, *a);
                        match sink_a {
                            Sink::Grad(g) => matmul_acc_bt(&dy, bv, m, k, n, g),
                            Sink::Adj(s) => matmul_acc_bt(&dy, bv, m, k, n, s),
                            Sink::None => {}
                        }
                    }
                    {
                        let av = self.value(vals, theta, *a);
                        let sink_b = self.param_or_adjoint(&mut adj, grad, *b);
                        match sink_b {
                            Sink::Grad(g) => matmul_acc_at(av, &dy, m, k, n, g),
                            Sink::Adj(s) => matmul_acc_at(av, &dy, m, k, n, s),
                            Sink::None => {}
                        }
                    }
                }
                Op::Add { a, b } => {
                    match self.param_or_adjoint(&mut adj, grad, *a) {
                        Sink::Grad(g) | Sink::Adj(g) => {
                            for (s, &d) in g.iter_mut().zip(&dy) {
                                *s += d;
                            }
                        }
                        Sink::None => {}
                    }
                    let b_numel = numel(&self.nodes[*b].shape);
                    match self.param_or_adjoint(&mut adj, grad, *b) {
                        Sink::Grad(g) | Sink::Adj(g) => {
                            if b_numel == dy.len() {
                                for (s, &d) in g.iter_mut().zip(&dy) {
                                    *s += d;
                                }
                            } else {
                                // broadcast bias: sum over rows
                                for row in dy.chunks(b_numel) {
                                    for (s, &d) in g.iter_mut().zip(row) {
                                        *s += d;
                                    }
                                }
                            }
                        }
                        Sink::None => {}
                    }
                }
                Op::Relu { a } => {
                    let av = self.value(vals, theta, *a).to_vec();
                    match self.param_or_adjoint(&mut adj, grad, *a) {
                        Sink::Grad(g) | Sink::Adj(g) => {
                            for i in 0..dy.len() {
                                if av[i] > 0.0 {
                                    g[i] += dy[i];
                                }
                            }
                        }
                        Sink::None => {}
                    }
                }
                Op::Attention { q, k, v } => {
                    let qv = self.value(vals, theta, *q);
                    let kv = self.value(vals, theta, *k);
                    let vv = self.value(vals, theta, *v);
                    let (qr, d) = dims2(&self.nodes[*q].shape);
                    let (kr, _) = dims2(&self.nodes[*k].shape);
                    let vd = dims2(&self.nodes[*v].shape).1;
                    let p = attention_probs(qv, kv, qr, kr, d);

                    // dV = Pᵀ · dO
                    let mut dv = vec![0.0; kr * vd];
                    matmul_acc_at(&p, &dy, qr, kr, vd, &mut dv);
                    // dP = dO · Vᵀ
                    let mut dp = vec![0.0; qr * kr];
                    matmul_acc_bt(&dy, vv, qr, kr, vd, &mut dp);
                    // softmax backward (row-wise): dS = P ⊙ (dP − rowsum(dP ⊙ P))
                    let mut ds = vec![0.0; qr * kr];
                    for i in 0..qr {
                        let prow = &p[i * kr..(i + 1) * kr];
                        let dprow = &dp[i * kr..(i + 1) * kr];
                        let inner: f64 = prow.iter().zip(dprow).map(|(&pp, &dd)| pp * dd).sum();
                        for j in 0..kr {
                            ds[i * kr + j] = prow[j] * (dprow[j] - inner);
                        }
                    }
                    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
                    for x in ds.iter_mut() {
                        *x *= inv_sqrt_d;
                    }
                    // dQ = dS · K, dK = dSᵀ · Q
                    match self.param_or_adjoint(&mut adj, grad, *q) {
                        Sink::Grad(g) | Sink::Adj(g) => matmul_acc(&ds, kv, qr, kr, d, g),
                        Sink::None => {}
                    }
                    match self.param_or_adjoint(&mut adj, grad, *k) {
                        Sink::Grad(g) | Sink::Adj(g) => matmul_acc_at(&ds, qv, qr, kr, d, g),
                        Sink::None => {}
                    }
                    match self.param_or_adjoint(&mut adj, grad, *v) {
                        Sink::Grad(g) | Sink::Adj(g) => {
                            for (s, &x) in g.iter_mut().zip(&dv) {
                                *s += x;
                            }
                        }
                        Sink::None => {}
                    }
                }
                Op::LogSoftmax { a } => {
                    // y = x − lse(x) ⇒ dx = dy − softmax(x) · rowsum(dy),
                    // with softmax(x) = exp(y) read from the cached output.
                    let y = &vals[id].data;
                    let c = dims2(&self.nodes[*a].shape).1;
                    match self.param_or_adjoint(&mut adj, grad, *a) {
                        Sink::Grad(g) | Sink::Adj(g) => {
                            for (r, (yrow, dyrow)) in y.chunks(c).zip(dy.chunks(c)).enumerate() {
                                let s: f64 = dyrow.iter().sum();
                                let grow = &mut g[r * c..(r + 1) * c];
                                for j in 0..c {
                                    grow[j] += dyrow[j] - yrow[j].exp() * s;
                                }
                            }
                        }
                        Sink::None => {}
                    }
                }
                Op::Reshape { a } => match self.param_or_adjoint(&mut adj, grad, *a) {
                    Sink::Grad(g) | Sink::Adj(g) => {
                        for (s, &d) in g.iter_mut().zip(&dy) {
                            *s += d;
                        }
                    }
                    Sink::None => {}
                },
                Op::SliceRows { a, start } => {
                    let cols = dims2(&self.nodes[*a].shape).1;
                    match self.param_or_adjoint(&mut adj, grad, *a) {
                        Sink::Grad(g) | Sink::Adj(g) => {
                            for (s, &d) in g[start * cols..start * cols + dy.len()]
                                .iter_mut()
                                .zip(&dy)
                            {
                                *s += d;
                            }
                        }
                        Sink::None => {}
                    }
                }
                Op::Scale { a, c } => match self.param_or_adjoint(&mut adj, grad, *a) {
                    Sink::Grad(g) | Sink::Adj(g) => {
                        for (s, &d) in g.iter_mut().zip(&dy) {
                            *s += c * d;
                        }
                    }
                    Sink::None => {}
                },
            }
        }
        Ok(())
    }

    /// Convenience wrapper over [`Graph::backward_into`] returning a fresh
    /// gradient vector.
    pub fn backward(
        &self,
        vals: &[Tensor],
        theta: &[f64],
        output: NodeId,
        seed: &[f64],
    ) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.d];
        self.backward_into(vals, theta, output, seed, &mut grad)?;
        Ok(grad)
    }

    /// Full Jacobian of `output` w.r.t. the parameters: one VJP per output
    /// coordinate, returned as `numel(output)` rows of length `d`.
    pub fn output_jacobian(
        &self,
        vals: &[Tensor],
        theta: &[f64],
        output: NodeId,
    ) -> Result<Vec<Vec<f64>>> {
        let o = numel(&self.nodes[output].shape);
        let mut rows = Vec::with_capacity(o);
        let mut seed = vec![0.0; o];
        for i in 0..o {
            seed[i] = 1.0;
            rows.push(self.backward(vals, theta, output, &seed)?);
            seed[i] = 0.0;
        }
        Ok(rows)
    }

    /// Where a child's adjoint contribution should go: straight into the
    /// flat gradient for `Param` leaves, nowhere for constants, otherwise
    /// into the child's (lazily zero-initialized) adjoint buffer.
    fn param_or_adjoint<'a>(
        &self,
        adj: &'a mut [Option<Vec<f64>>],
        grad: &'a mut [f64],
        child: NodeId,
    ) -> Sink<'a> {
        match &self.nodes[child].op {
            Op::Param { offset } => {
                let n = numel(&self.nodes[child].shape);
                Sink::Grad(&mut grad[*offset..*offset + n])
            }
            Op::Input { .. } => Sink::None,
            _ => {
                let n = numel(&self.nodes[child].shape);
                Sink::Adj(adj[child].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
            }
        }
    }

    fn adjoint_sink<'a>(&self, adj: &'a mut [Option<Vec<f64>>], child: NodeId) -> &'a mut Vec<f64> {
        let n = numel(&self.nodes[child].shape);
        adj[child].get_or_insert_with(|| vec![0.0; n])
    }
}

enum Sink<'a> {
    Grad(&'a mut [f64]),
    Adj(&'a mut [f64]),
    None,
}

/// Row-wise `softmax(q·kᵀ/√d)`, shared by forward and backward.
fn attention_probs(q: &[f64], k: &[f64], qr: usize, kr: usize, d: usize) -> Vec<f64> {
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut scores = vec![0.0; qr * kr];
    matmul_acc_bt(q, k, qr, kr, d, &mut scores);
    for i in 0..qr {
        let row = &mut scores[i * kr..(i + 1) * kr];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x * inv_sqrt_d - max * inv_sqrt_d).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    scores
}
