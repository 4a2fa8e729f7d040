//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Graph`] records every operation applied during a forward pass.
//! [`Graph::backward`] then walks the records in reverse and accumulates
//! gradients into every node that depends on a trainable leaf.

use std::borrow::Cow;

use super::kernels::{self, sigmoid};
use super::params::{ParamId, ParamSet};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Matmul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Max(Var, Var),
    Gather { table: Var, idx: Vec<Option<usize>> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Var, Var),
    WhereRows { mask: Vec<bool>, a: Var, b: Var },
    Softmax(Var),
    CrossEntropy { probs: Var, targets: Vec<Option<usize>> },
    SoftmaxXent { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T> },
    Sum(Var),
    Reshape(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Max(..) => "max",
            Op::Gather { .. } => "gather",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::WhereRows { .. } => "where_rows",
            Op::Softmax(..) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
            Op::Sum(..) => "sum",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node<'p, T: Real> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Operation recorder and gradient accumulator.
pub struct Graph<'p, T: Real> {
    params: Option<&'p ParamSet<T>>,
    bound: Vec<Option<Var>>,
    nodes: Vec<Node<'p, T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<'p, T: Real> Graph<'p, T> {
    /// Graph with no parameter binding; leaves are added explicitly.
    pub fn new() -> Self {
        Graph {
            params: None,
            bound: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    /// Graph whose [`Graph::param`] leaves borrow from `params` without copying.
    pub fn with_params(params: &'p ParamSet<T>) -> Self {
        Graph {
            params: Some(params),
            bound: vec![None; params.len()],
            ..Self::new()
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Free leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            needs_grad: true,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a bound parameter, created once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let params = self.params.expect("graph has no parameter binding");
        self.nodes.push(Node {
            value: Cow::Borrowed(params.get(id)),
            op: Op::Leaf,
            needs_grad: true,
            param: Some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- operations -------------------------------------------------

    /// Matrix product of `[m×k]` and `[k×n]`. A 1-D left operand is one row.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (m, k) = av.dims2()?;
        let (k2, n) = match bv.shape() {
            [r, c] => (*r, *c),
            s => return Err(shape_err("matmul", av.shape(), s)),
        };
        if k != k2 {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let out = kernels::matmul(av.data(), bv.data(), m, k, n);
        let shape = if av.shape().len() == 1 { vec![n] } else { vec![m, n] };
        Ok(self.push(Tensor::new(shape, out)?, Op::Matmul(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of an `[m×n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (_, n) = xv.dims2()?;
        if bv.shape() != [n] {
            return Err(shape_err("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise maximum. On exact ties the gradient goes to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "max", |x, y| if x >= y { x } else { y })?;
        Ok(self.push(t, Op::Max(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::from_f64(s);
        let t = self.value(x).map(|v| v * s);
        self.push(t, Op::Scale(x, s), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(T::tanh);
        self.push(t, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    /// Row lookup: one row of `table` per index; `None` yields a zero row.
    pub fn gather(&mut self, table: Var, idx: &[Option<usize>]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = match tv.shape() {
            [v, d] => (*v, *d),
            s => return Err(Error::Shape(format!("gather: table must be a matrix, got {s:?}"))),
        };
        if idx.is_empty() {
            return Err(Error::Empty("gather"));
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for i in idx {
            match *i {
                Some(i) if i >= v => {
                    return Err(Error::Index(format!("lookup index {i} out of range for {v} rows")))
                }
                Some(i) => data.extend_from_slice(&tv.data()[i * d..(i + 1) * d]),
                None => data.extend(std::iter::repeat_n(T::zero(), d)),
            }
        }
        let out = Tensor::new(vec![idx.len(), d], data)?;
        Ok(self.push(out, Op::Gather { table, idx: idx.to_vec() }, &[table]))
    }

    /// Single row of `table` as a 1-D vector.
    pub fn lookup(&mut self, table: Var, index: usize) -> Result<Var> {
        let rows = self.gather(table, &[Some(index)])?;
        let d = self.shape(rows)[1];
        self.reshape(rows, &[d])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if len == 0 || start + len > c {
            return Err(Error::Shape(format!(
                "slice_cols: columns {start}..{} out of {c}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in xv.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (ra, ca) = av.dims2()?;
        let (rb, cb) = bv.dims2()?;
        if ra != rb {
            return Err(shape_err("concat_cols", av.shape(), bv.shape()));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&av.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&bv.data()[i * cb..(i + 1) * cb]);
        }
        let out = Tensor::new(vec![ra, ca + cb], data)?;
        Ok(self.push(out, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Row `i` comes from `a` where `mask[i]`, otherwise from `b`.
    pub fn where_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(shape_err("where_rows", av.shape(), bv.shape()));
        }
        let (r, c) = av.dims2()?;
        if mask.len() != r {
            return Err(Error::Shape(format!("where_rows: mask of {} for {r} rows", mask.len())));
        }
        let mut data = Vec::with_capacity(r * c);
        for (i, &m) in mask.iter().enumerate() {
            let src = if m { av } else { bv };
            data.extend_from_slice(&src.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::WhereRows { mask: mask.to_vec(), a, b }, &[a, b]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (_, c) = xv.dims2()?;
        let out = Tensor::new(xv.shape().to_vec(), kernels::softmax_rows(xv.data(), c))?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    fn check_targets(&self, x: Var, targets: &[Option<usize>], op: &str) -> Result<(usize, usize)> {
        let (r, c) = self.value(x).dims2()?;
        if targets.len() != r {
            return Err(Error::Shape(format!("{op}: {} targets for {r} rows", targets.len())));
        }
        if let Some(t) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::Index(format!("{op}: target {t} out of range for {c} classes")));
        }
        Ok((r, c))
    }

    /// `-ln p[target]` per row of a probability matrix; `None` rows give 0.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (r, c) = self.check_targets(probs, targets, "cross_entropy")?;
        let pv = self.value(probs).data();
        let out: Vec<T> = targets
            .iter()
            .enumerate()
            .map(|(i, t)| t.map_or(T::zero(), |t| -pv[i * c + t].ln()))
            .collect();
        let out = Tensor::new(vec![r], out)?;
        Ok(self.push(out, Op::CrossEntropy { probs, targets: targets.to_vec() }, &[probs]))
    }

    /// Fused softmax and negative log-likelihood per row; `None` rows give 0.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (r, c) = self.check_targets(logits, targets, "softmax_cross_entropy")?;
        let lv = self.value(logits).data();
        let logp = kernels::log_softmax_rows(lv, c);
        let out: Vec<T> = targets
            .iter()
            .enumerate()
            .map(|(i, t)| t.map_or(T::zero(), |t| -logp[i * c + t]))
            .collect();
        let probs = logp.iter().map(|v| v.exp()).collect();
        let out = Tensor::new(vec![r], out)?;
        Ok(self.push(
            out,
            Op::SoftmaxXent { logits, targets: targets.to_vec(), probs },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    // ---- backward ---------------------------------------------------

    /// Accumulates d`loss`/d(node) for every node that depends on a trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Grad("backward() called twice without reset_grads()".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Grad(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Clears accumulated gradients so [`Graph::backward`] may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn accumulate(&mut self, v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&mut self, i: usize, g: &Tensor<T>) -> Result<()> {
        // Each arm reads what it needs from the node, then accumulates.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.propagate_op(i, &op, g);
        self.nodes[i].op = op;
        result
    }

    fn propagate_op(&mut self, i: usize, op: &Op<T>, g: &Tensor<T>) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.value(a).dims2()?;
                let n = self.value(b).shape()[1];
                if self.needs(a) {
                    let da = kernels::matmul_bt(g.data(), self.value(b).data(), m, k, n);
                    let da = Tensor::new(self.shape(a).to_vec(), da)?;
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    let db = kernels::matmul_at(self.value(a).data(), g.data(), m, k, n);
                    let db = Tensor::new(vec![k, n], db)?;
                    self.accumulate(b, db);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(x, g.clone());
                if self.needs(bias) {
                    let n = self.value(bias).len();
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(bias, Tensor::new(vec![n], db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let d = zip(g, self.value(b), |g, y| g * y);
                    self.accumulate(a, d);
                }
                if self.needs(b) {
                    let d = zip(g, self.value(a), |g, x| g * x);
                    self.accumulate(b, d);
                }
            }
            Op::Scale(x, s) => self.accumulate(x, g.map(|v| v * s)),
            Op::Tanh(x) => {
                let d = zip(g, &self.nodes[i].value, |g, y| g * (T::one() - y * y));
                self.accumulate(x, d);
            }
            Op::Sigmoid(x) => {
                let d = zip(g, &self.nodes[i].value, |g, y| g * y * (T::one() - y));
                self.accumulate(x, d);
            }
            Op::Max(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let mut da = g.clone();
                let mut db = g.clone();
                for ((x, y), (ga, gb)) in av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .zip(da.data_mut().iter_mut().zip(db.data_mut().iter_mut()))
                {
                    if x >= y {
                        *gb = T::zero();
                    } else {
                        *ga = T::zero();
                    }
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Gather { table, ref idx } => {
                if self.needs(table) {
                    let tshape = self.shape(table).to_vec();
                    let d = tshape[1];
                    let mut dt = Tensor::zeros(&tshape);
                    for (r, ix) in idx.iter().enumerate() {
                        if let Some(ix) = *ix {
                            let dst = &mut dt.data_mut()[ix * d..(ix + 1) * d];
                            for (o, &v) in dst.iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                                *o += v;
                            }
                        }
                    }
                    self.accumulate(table, dt);
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(x).dims2()?;
                let len = g.len() / r;
                let mut dx = Tensor::zeros(self.shape(x));
                for row in 0..r {
                    let dst = &mut dx.data_mut()[row * c + start..row * c + start + len];
                    dst.copy_from_slice(&g.data()[row * len..(row + 1) * len]);
                }
                self.accumulate(x, dx);
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = self.value(a).dims2()?;
                let cb = self.value(b).dims2()?.1;
                let mut da = Vec::with_capacity(r * ca);
                let mut db = Vec::with_capacity(r * cb);
                for row in g.data().chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                let da = Tensor::new(self.shape(a).to_vec(), da)?;
                let db = Tensor::new(self.shape(b).to_vec(), db)?;
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::WhereRows { ref mask, a, b } => {
                let c = g.len() / mask.len();
                let mut da = g.clone();
                let mut db = g.clone();
                for (r, &m) in mask.iter().enumerate() {
                    let zero = if m { &mut db } else { &mut da };
                    zero.data_mut()[r * c..(r + 1) * c].fill(T::zero());
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Softmax(x) => {
                let p = &self.nodes[i].value;
                let c = p.dims2()?.1;
                let mut dx = Vec::with_capacity(p.len());
                for (prow, grow) in p.data().chunks(c).zip(g.data().chunks(c)) {
                    let dot: T = prow.iter().zip(grow).map(|(&p, &g)| p * g).sum();
                    dx.extend(prow.iter().zip(grow).map(|(&p, &g)| p * (g - dot)));
                }
                let dx = Tensor::new(p.shape().to_vec(), dx)?;
                self.accumulate(x, dx);
            }
            Op::CrossEntropy { probs, ref targets } => {
                let pv = self.value(probs);
                let c = pv.dims2()?.1;
                let mut dp = Tensor::zeros(pv.shape());
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        dp.data_mut()[r * c + t] = -g.data()[r] / pv.data()[r * c + t];
                    }
                }
                self.accumulate(probs, dp);
            }
            Op::SoftmaxXent { logits, ref targets, ref probs } => {
                let c = self.value(logits).dims2()?.1;
                let mut dl = vec![T::zero(); probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        let gr = g.data()[r];
                        let row = &mut dl[r * c..(r + 1) * c];
                        for (o, &p) in row.iter_mut().zip(&probs[r * c..(r + 1) * c]) {
                            *o = gr * p;
                        }
                        row[t] -= gr;
                    }
                }
                let dl = Tensor::new(self.shape(logits).to_vec(), dl)?;
                self.accumulate(logits, dl);
            }
            Op::Sum(x) => {
                let d = Tensor::full(self.shape(x), g.item());
                self.accumulate(x, d);
            }
            Op::Reshape(x) => {
                let d = g.reshaped(self.shape(x))?;
                self.accumulate(x, d);
            }
        }
        Ok(())
    }

    /// Gradient of a node after [`Graph::backward`]. Trainable leaves that
    /// the loss does not depend on report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        if !self.backward_done || !self.nodes[v.0].needs_grad {
            return None;
        }
        Some(
            self.grads[v.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.shape(v))),
        )
    }

    /// Moves gradients of every bound parameter out of the graph, indexed by
    /// [`ParamId`]. Unbound parameters get zero tensors.
    pub fn take_param_grads(&mut self) -> Result<Vec<Tensor<T>>> {
        let params = self
            .params
            .ok_or_else(|| Error::Grad("graph has no parameter binding".into()))?;
        if !self.backward_done {
            return Err(Error::Grad("take_param_grads() before backward()".into()));
        }
        let mut out = Vec::with_capacity(params.len());
        for id in params.ids() {
            let g = self.bound[id.0]
                .and_then(|v| self.grads[v.0].take())
                .unwrap_or_else(|| Tensor::zeros(params.get(id).shape()));
            out.push(g);
        }
        Ok(out)
    }

    /// Describes the first node holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            if n.value.is_finite() {
                return None;
            }
            let what = match (n.param, self.params) {
                (Some(id), Some(p)) => format!("parameter {}", p.name(id)),
                _ => format!("node {i} ({})", n.op.name()),
            };
            Some(format!("{what} with shape {:?}", n.value.shape()))
        })
    }
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let mut out = a.clone();
    for (o, &y) in out.data_mut().iter_mut().zip(b.data()) {
        *o = f(*o, y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_hand_cases() {
        let mut g = Graph::<f64>::new();
        let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let col = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let out = g.matmul(i2, col).unwrap();
        assert_eq!(g.value(out).data(), &[3.0, 4.0]);

        let row = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let dot = g.matmul(row, col).unwrap();
        assert_eq!(g.value(dot).data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn activations_at_zero() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[1]));
        let th = g.tanh(z);
        let sg = g.sigmoid(z);
        assert_eq!(g.value(th).item(), 0.0);
        assert_eq!(g.value(sg).item(), 0.5);
    }

    #[test]
    fn tanh_derivative() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(0.3));
        let y = g.tanh(x);
        g.backward(y).unwrap();
        let want = 1.0 - 0.3f64.tanh().powi(2);
        assert!(close(g.grad(x).unwrap().item(), want, 1e-15));
        assert!(close(want, 0.91513, 1e-5));
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let pa = g.softmax(a).unwrap();
        for &p in g.value(pa).data() {
            assert!(close(p, 1.0 / 3.0, 1e-15));
        }
        let b = g.constant(t(&[2], &[1000.0, 1000.0]));
        let pb = g.softmax(b).unwrap();
        assert_eq!(g.value(pb).data(), &[0.5, 0.5]);
        let c = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let pc = g.softmax(c).unwrap();
        for (p, want) in g.value(pc).data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!(close(*p, want, 5e-6));
        }
    }

    #[test]
    fn max_hand_case_and_ties() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t(&[2], &[1.0, -2.0]));
        let b = g.leaf(t(&[2], &[0.0, 3.0]));
        let m = g.max(a, b).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 3.0]);

        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[0.5, -1.0]));
        let y = g.leaf(t(&[2], &[0.5, -1.0]));
        let m = g.max(x, y).unwrap();
        let s = g.sum(m);
        g.backward(s).unwrap();
        assert_eq!(g.value(m).data(), &[0.5, -1.0]);
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.grad(y).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn lookup_identity_and_accumulation() {
        let mut g = Graph::<f64>::new();
        let eye = g.leaf(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let r = g.lookup(eye, 1).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 1.0, 0.0]);
        let r2 = g.lookup(eye, 1).unwrap();
        let both = g.add(r, r2).unwrap();
        let s = g.sum(both);
        g.backward(s).unwrap();
        assert_eq!(
            g.grad(eye).unwrap().data(),
            &[0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0]
        );
        assert!(g.lookup(eye, 3).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let mut g = Graph::<f64>::new();
        let onehot = g.constant(t(&[3], &[0.0, 1.0, 0.0]));
        let ce = g.cross_entropy(onehot, &[Some(1)]).unwrap();
        assert_eq!(g.value(ce).item(), 0.0);
        let uniform = g.constant(Tensor::full(&[4], 0.25));
        let ce = g.cross_entropy(uniform, &[Some(3)]).unwrap();
        assert!(close(g.value(ce).item(), 4f64.ln(), 1e-15));
        assert!(g.cross_entropy(uniform, &[Some(4)]).is_err());
    }

    #[test]
    fn fused_softmax_xent_gradient_is_p_minus_onehot() {
        let mut g = Graph::<f64>::new();
        let logits = g.leaf(t(&[1, 4], &[0.2, -1.0, 0.7, 0.1]));
        let ce = g.softmax_cross_entropy(logits, &[Some(2)]).unwrap();
        let s = g.sum(ce);
        g.backward(s).unwrap();
        let p = kernels::softmax_rows(&[0.2, -1.0, 0.7, 0.1], 4);
        let grad = g.grad(logits).unwrap();
        for (j, (&d, &pj)) in grad.data().iter().zip(&p).enumerate() {
            let want = pj - if j == 2 { 1.0 } else { 0.0 };
            assert!(close(d, want, 1e-15));
        }
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(1.0));
        let y = g.tanh(x);
        g.backward(y).unwrap();
        assert!(g.backward(y).is_err());
        g.reset_grads();
        assert!(g.backward(y).is_ok());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }
}
