//! Tape-based reverse-mode differentiation over row-batched matrices.

use std::collections::HashMap;

use super::{Gradients, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    /// `x · wᵀ` with `x: [B×n]`, `w: [m×n]`.
    MatMulT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Gather { table: Var, indices: Vec<usize> },
    SoftmaxCe { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    KlNormal { mu: Var, log_var: Var },
    Sum(Var),
}

struct Node<T> {
    /// `None` for parameters, whose values live in the borrowed set.
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
    track: bool,
    finished: bool,
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph that records gradients for every parameter it touches.
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Graph { params, nodes: Vec::with_capacity(4096), param_nodes: HashMap::new(), track: true, finished: false }
    }

    /// A forward-only graph; `backward` returns all-zero gradients.
    pub fn inference(params: &'p ParamSet<T>) -> Self {
        Graph { track: false, ..Self::new(params) }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = self.track && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Some(value), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Copies `x` into a constant, cutting every gradient path through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.input(value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: self.track });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (b, n, m) = (xv.rows(), xv.cols(), wv.rows());
        if wv.cols() != n {
            return Err(Error::shape("matmul", format!("x {:?} · wᵀ {:?}", xv.shape(), wv.shape())));
        }
        let mut out = Tensor::zeros(&[b, m]);
        T::gemm(b, n, m, T::one(), xv.data(), n as isize, 1, wv.data(), 1, n as isize, T::zero(), out.data_mut(), m as isize, 1);
        Ok(self.push(out, Op::MatMulT(x, w), &[x, w]))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.len() != xv.cols() {
            return Err(Error::shape("add_bias", format!("x {:?} + b {:?}", xv.shape(), bv.shape())));
        }
        let mut out = xv.clone();
        let c = bv.len();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Affine map `x · Wᵀ + b`.
    pub fn linear(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let y = self.matmul_t(x, w)?;
        self.add_bias(y, b)
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(op, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(out, node, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::exp);
        self.push(out, Op::Exp(x), &[x])
    }

    /// Column-wise concatenation of equally-rowed matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::shape("concat", format!("{} rows vs {}", v.rows(), rows)));
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_vec(&[rows, cols], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() || len == 0 {
            return Err(Error::shape("slice", format!("{start}+{len} of {} columns", xv.cols())));
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(&[rows, len], data)?;
        Ok(self.push(out, Op::Slice { x, start }, &[x]))
    }

    /// Row lookup: one output row per index.
    pub fn embed(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = (tv.rows(), tv.cols());
        if indices.is_empty() {
            return Err(Error::shape("embed", "no indices"));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(Error::shape("embed", format!("index {i} out of range for {v} rows")));
            }
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::from_vec(&[indices.len(), d], data)?;
        Ok(self.push(out, Op::Gather { table, indices: indices.to_vec() }, &[table]))
    }

    /// Per-row `−log softmax(logits)[target]`, shape `[B×1]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, v) = (lv.rows(), lv.cols());
        if targets.len() != b {
            return Err(Error::shape("softmax_cross_entropy", format!("{} targets for {b} rows", targets.len())));
        }
        let mut probs = Vec::with_capacity(b * v);
        let mut losses = Vec::with_capacity(b);
        for (r, &target) in targets.iter().enumerate() {
            if target >= v {
                return Err(Error::shape("softmax_cross_entropy", format!("target {target} out of range for {v} classes")));
            }
            let row = lv.row(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let sum = row.iter().fold(T::zero(), |s, &x| s + (x - max).exp());
            let log_sum = sum.ln();
            losses.push(log_sum - (row[target] - max));
            probs.extend(row.iter().map(|&x| (x - max).exp() / sum));
        }
        let out = Tensor::from_vec(&[b, 1], losses)?;
        Ok(self.push(out, Op::SoftmaxCe { logits, targets: targets.to_vec(), probs }, &[logits]))
    }

    /// Per-row `KL(N(μ, diag(exp(log_var))) ‖ N(0, I))`, shape `[B×1]`.
    pub fn kl_standard_normal(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        let (mv, sv) = (self.value(mu), self.value(log_var));
        same_shape("kl_standard_normal", mv, sv)?;
        let half = T::from_f64_lossy(0.5);
        let k = mv.cols();
        let data = (0..mv.rows())
            .map(|r| {
                mv.row(r).iter().zip(sv.row(r)).fold(T::zero(), |acc, (&m, &s)| acc + m * m + s.exp() - T::one() - s) * half
            })
            .collect();
        debug_assert!(k > 0);
        let out = Tensor::from_vec(&[mv.rows(), 1], data)?;
        Ok(self.push(out, Op::KlNormal { mu, log_var }, &[mu, log_var]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Reverse-mode accumulation from a single-element `loss`.
    ///
    /// Every parameter gets a gradient tensor; those unreachable from `loss`
    /// are zero. A graph supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.finished {
            return Err(Error::BackwardTwice);
        }
        self.finished = true;
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss has shape {:?}", self.value(loss).shape())));
        }
        let mut param_grads: Vec<Tensor<T>> =
            self.params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads: param_grads });
        }
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let gy = gy.data();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => param_grads[id.0].add_assign(gy),
                Op::MatMulT(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (b, n, m) = (xv.rows(), xv.cols(), wv.rows());
                    if self.needs(*x) {
                        let gx = slot(&mut grads, *x, xv);
                        T::gemm(b, m, n, T::one(), gy, m as isize, 1, wv.data(), n as isize, 1, T::one(), gx, n as isize, 1);
                    }
                    if self.needs(*w) {
                        let gw = slot(&mut grads, *w, wv);
                        T::gemm(m, b, n, T::one(), gy, 1, m as isize, xv.data(), n as isize, 1, T::one(), gw, n as isize, 1);
                    }
                }
                Op::AddBias(x, bias) => {
                    if self.needs(*x) {
                        add_into(slot(&mut grads, *x, self.value(*x)), gy);
                    }
                    if self.needs(*bias) {
                        let gb = slot(&mut grads, *bias, self.value(*bias));
                        let c = gb.len();
                        for row in gy.chunks(c) {
                            add_into(gb, row);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for p in [*a, *b] {
                        if self.needs(p) {
                            add_into(slot(&mut grads, p, self.value(p)), gy);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        add_into(slot(&mut grads, *a, self.value(*a)), gy);
                    }
                    if self.needs(*b) {
                        for (g, &d) in slot(&mut grads, *b, self.value(*b)).iter_mut().zip(gy) {
                            *g = *g - d;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (p, other) in [(*a, *b), (*b, *a)] {
                        if self.needs(p) {
                            let ov = self.value(other).data();
                            for ((g, &d), &o) in slot(&mut grads, p, self.value(p)).iter_mut().zip(gy).zip(ov) {
                                *g = *g + d * o;
                            }
                        }
                    }
                }
                Op::Scale(x, c) => {
                    for (g, &d) in slot(&mut grads, *x, self.value(*x)).iter_mut().zip(gy) {
                        *g = *g + d * *c;
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().expect("owned").data();
                    for ((g, &d), &y) in slot(&mut grads, *x, self.value(*x)).iter_mut().zip(gy).zip(y) {
                        *g = *g + d * y * (T::one() - y);
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().expect("owned").data();
                    for ((g, &d), &y) in slot(&mut grads, *x, self.value(*x)).iter_mut().zip(gy).zip(y) {
                        *g = *g + d * (T::one() - y * y);
                    }
                }
                Op::Exp(x) => {
                    let y = node.value.as_ref().expect("owned").data();
                    for ((g, &d), &y) in slot(&mut grads, *x, self.value(*x)).iter_mut().zip(gy).zip(y) {
                        *g = *g + d * y;
                    }
                }
                Op::Concat(parts) => {
                    let total = node.value.as_ref().expect("owned").cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let c = pv.cols();
                        if self.needs(p) {
                            let gp = slot(&mut grads, p, pv);
                            for (r, grow) in gp.chunks_mut(c).enumerate() {
                                add_into(grow, &gy[r * total + offset..r * total + offset + c]);
                            }
                        }
                        offset += c;
                    }
                }
                Op::Slice { x, start } => {
                    let xv = self.value(*x);
                    let (c, len) = (xv.cols(), node.value.as_ref().expect("owned").cols());
                    let gx = slot(&mut grads, *x, xv);
                    for (r, grow) in gy.chunks(len).enumerate() {
                        add_into(&mut gx[r * c + start..r * c + start + len], grow);
                    }
                }
                Op::Gather { table, indices } => {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let gt = slot(&mut grads, *table, tv);
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut gt[i * d..(i + 1) * d], &gy[r * d..(r + 1) * d]);
                    }
                }
                Op::SoftmaxCe { logits, targets, probs } => {
                    let lv = self.value(*logits);
                    let v = lv.cols();
                    let gl = slot(&mut grads, *logits, lv);
                    for (r, &target) in targets.iter().enumerate() {
                        let d = gy[r];
                        for j in 0..v {
                            let onehot = if j == target { T::one() } else { T::zero() };
                            gl[r * v + j] = gl[r * v + j] + d * (probs[r * v + j] - onehot);
                        }
                    }
                }
                Op::KlNormal { mu, log_var } => {
                    let half = T::from_f64_lossy(0.5);
                    let k = self.value(*mu).cols();
                    if self.needs(*mu) {
                        let mv = self.value(*mu).data();
                        for (j, g) in slot(&mut grads, *mu, self.value(*mu)).iter_mut().enumerate() {
                            *g = *g + gy[j / k] * mv[j];
                        }
                    }
                    if self.needs(*log_var) {
                        let sv = self.value(*log_var).data();
                        for (j, g) in slot(&mut grads, *log_var, self.value(*log_var)).iter_mut().enumerate() {
                            *g = *g + gy[j / k] * half * (sv[j].exp() - T::one());
                        }
                    }
                }
                Op::Sum(x) => {
                    let d = gy[0];
                    for g in slot(&mut grads, *x, self.value(*x)).iter_mut() {
                        *g = *g + d;
                    }
                }
            }
        }
        Ok(Gradients { grads: param_grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], v: Var, like: &Tensor<T>) -> &'a mut [T] {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape())).data_mut()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
