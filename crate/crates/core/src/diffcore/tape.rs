//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles in
//! execution order, so node ids are already a topological order. Running
//! [`Tape::backward`] from a scalar node walks the record in reverse and
//! accumulates gradients, summing contributions when a node feeds several
//! consumers. A fresh tape is built for every forward pass.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Default negative slope for [`Tape::leaky_relu`].
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Handle to a node recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    idx: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.idx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

impl Broadcast {
    fn of(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Self> {
        let (r, c) = a.shape();
        match b.shape() {
            s if s == (r, c) => Ok(Broadcast::Same),
            (1, bc) if bc == c => Ok(Broadcast::Row),
            (br, 1) if br == r => Ok(Broadcast::Col),
            (1, 1) => Ok(Broadcast::Scalar),
            (br, bc) => Err(Error::shape(
                op,
                format!("cannot broadcast {br}x{bc} onto {r}x{c}"),
            )),
        }
    }

    #[inline]
    fn index(self, cols: usize, i: usize, j: usize) -> usize {
        match self {
            Broadcast::Same => i * cols + j,
            Broadcast::Row => j,
            Broadcast::Col => i,
            Broadcast::Scalar => 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Square(usize),
    Sqrt(usize),
    Transpose(usize),
    Mean(usize),
    RowSum(usize),
    ConcatRows(usize, usize),
    ConcatCols(usize, usize),
    CosineSim(usize, usize),
    SoftmaxXent(usize, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Transpose(_) => "transpose",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::CosineSim(..) => "cosine_sim",
            Op::SoftmaxXent(..) => "softmax_xent",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by one backward run, indexed by node.
pub struct Gradients {
    tape: usize,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the seed w.r.t. `v`, or `None` when `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but returns zeros of `like`'s shape when absent.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Constant, value, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.check(v)?;
        Ok(&self.nodes[v.idx].value)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::UnknownNode(v.idx));
        }
        Ok(())
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var { tape: self.id, idx }
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push_unchecked(op, value, needs_grad))
    }

    fn val(&self, idx: usize) -> &Tensor {
        &self.nodes[idx].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.val(a.idx).matmul(self.val(b.idx))?;
        self.push(Op::MatMul(a.idx, b.idx), out, &[a.idx, b.idx])
    }

    fn broadcast_binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.val(a.idx), self.val(b.idx));
        let bc = Broadcast::of(name, av, bv)?;
        let (r, c) = av.shape();
        let bd = bv.data();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = av.row(i);
            match bc {
                Broadcast::Same => data.extend(row.iter().zip(&bd[i * c..(i + 1) * c]).map(|(&x, &y)| f(x, y))),
                Broadcast::Row => data.extend(row.iter().zip(bd).map(|(&x, &y)| f(x, y))),
                Broadcast::Col => data.extend(row.iter().map(|&x| f(x, bd[i]))),
                Broadcast::Scalar => data.extend(row.iter().map(|&x| f(x, bd[0]))),
            }
        }
        let out = Tensor::new(r, c, data)?;
        self.push(mk(a.idx, b.idx, bc), out, &[a.idx, b.idx])
    }

    /// Elementwise `a + b`; `b` may be a row vector, column vector or scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    /// Elementwise `a - b` with the same broadcasting as [`Tape::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise `a * b` with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.val(a.idx).map(|v| v * factor);
        self.push(Op::Scale(a.idx, factor), out, &[a.idx])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.val(a.idx).map(|v| v.max(0.0));
        self.push(Op::Relu(a.idx), out, &[a.idx])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.check(a)?;
        let out = self
            .val(a.idx)
            .map(|v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu(a.idx, slope), out, &[a.idx])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.val(a.idx).map(sigmoid);
        self.push(Op::Sigmoid(a.idx), out, &[a.idx])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.val(a.idx).map(|v| v * v);
        self.push(Op::Square(a.idx), out, &[a.idx])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let av = self.val(a.idx);
        if av.data().iter().any(|&v| v < 0.0) {
            return Err(Error::NonFinite("sqrt of a negative value".into()));
        }
        let out = av.map(f64::sqrt);
        self.push(Op::Sqrt(a.idx), out, &[a.idx])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.val(a.idx).transpose();
        self.push(Op::Transpose(a.idx), out, &[a.idx])
    }

    /// Mean over all entries, producing a 1x1 tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let av = self.val(a.idx);
        if av.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let m = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push(Op::Mean(a.idx), Tensor::scalar(m), &[a.idx])
    }

    /// Sum across columns, producing one value per row.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let av = self.val(a.idx);
        let out = Tensor::from_fn(av.rows(), 1, |i, _| av.row(i).iter().sum());
        self.push(Op::RowSum(a.idx), out, &[a.idx])
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = Tensor::vstack(&[self.val(a.idx), self.val(b.idx)])?;
        self.push(Op::ConcatRows(a.idx, b.idx), out, &[a.idx, b.idx])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = Tensor::hstack(self.val(a.idx), self.val(b.idx))?;
        self.push(Op::ConcatCols(a.idx, b.idx), out, &[a.idx, b.idx])
    }

    /// Row-wise cosine similarity of two equally shaped batches (`n x d -> n x 1`).
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.val(a.idx), self.val(b.idx));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "cosine_sim",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = Tensor::zeros(av.rows(), 1);
        for i in 0..av.rows() {
            let (ra, rb) = (av.row(i), bv.row(i));
            let (sa, sb) = (dot(ra, ra), dot(rb, rb));
            if sa == 0.0 || sb == 0.0 {
                return Err(Error::ZeroNorm { row: i });
            }
            // sqrt of the product keeps identical rows at exactly 1
            out.set(i, 0, (dot(ra, rb) / (sa * sb).sqrt()).clamp(-1.0, 1.0));
        }
        self.push(Op::CosineSim(a.idx, b.idx), out, &[a.idx, b.idx])
    }

    /// Mean softmax cross-entropy of `logits` (`n x k`) against integer labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let lv = self.val(logits.idx);
        if lv.rows() != labels.len() || lv.rows() == 0 {
            return Err(Error::shape(
                "softmax_xent",
                format!("{} logit rows, {} labels", lv.rows(), labels.len()),
            ));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= lv.cols() {
                return Err(Error::invalid(format!(
                    "label {y} out of range for {} classes",
                    lv.cols()
                )));
            }
            let row = lv.row(i);
            total += log_sum_exp(row) - row[y];
        }
        let out = Tensor::scalar(total / labels.len() as f64);
        self.push(
            Op::SoftmaxXent(logits.idx, labels.to_vec()),
            out,
            &[logits.idx],
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        self.check(seed)?;
        let sv = self.val(seed.idx);
        if sv.shape() != (1, 1) {
            return Err(Error::NonScalarSeed {
                rows: sv.rows(),
                cols: sv.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; seed.idx + 1];
        grads[seed.idx] = Some(Tensor::scalar(1.0));

        for idx in (0..=seed.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            let out = &node.value;
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.nodes[*a].needs_grad {
                        accumulate(&mut grads, *a, Tensor::gemm(&g, false, self.val(*b), true));
                    }
                    if self.nodes[*b].needs_grad {
                        accumulate(&mut grads, *b, Tensor::gemm(self.val(*a), true, &g, false));
                    }
                }
                Op::Add(a, b, bc) => {
                    self.send(&mut grads, *a, || g.clone());
                    self.send(&mut grads, *b, || reduce_broadcast(&g, *bc, 1.0));
                }
                Op::Sub(a, b, bc) => {
                    self.send(&mut grads, *a, || g.clone());
                    self.send(&mut grads, *b, || reduce_broadcast(&g, *bc, -1.0));
                }
                Op::Mul(a, b, bc) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let c = av.cols();
                    self.send(&mut grads, *a, || {
                        Tensor::from_fn(av.rows(), c, |i, j| {
                            g.get(i, j) * bv.data()[bc.index(c, i, j)]
                        })
                    });
                    self.send(&mut grads, *b, || {
                        let prod = Tensor::from_fn(av.rows(), c, |i, j| g.get(i, j) * av.get(i, j));
                        reduce_broadcast(&prod, *bc, 1.0)
                    });
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    self.send(&mut grads, *a, || g.map(|v| v * f));
                }
                Op::Relu(a) => {
                    let av = self.val(*a);
                    self.send(&mut grads, *a, || zip_map(&g, av, |gi, x| if x > 0.0 { gi } else { 0.0 }));
                }
                Op::LeakyRelu(a, slope) => {
                    let (av, s) = (self.val(*a), *slope);
                    self.send(&mut grads, *a, || zip_map(&g, av, |gi, x| if x > 0.0 { gi } else { s * gi }));
                }
                Op::Sigmoid(a) => {
                    self.send(&mut grads, *a, || zip_map(&g, out, |gi, y| gi * y * (1.0 - y)));
                }
                Op::Square(a) => {
                    let av = self.val(*a);
                    self.send(&mut grads, *a, || zip_map(&g, av, |gi, x| 2.0 * x * gi));
                }
                Op::Sqrt(a) => {
                    self.send(&mut grads, *a, || zip_map(&g, out, |gi, y| 0.5 * gi / y));
                }
                Op::Transpose(a) => {
                    self.send(&mut grads, *a, || g.transpose());
                }
                Op::Mean(a) => {
                    let av = self.val(*a);
                    let share = g.data()[0] / av.len() as f64;
                    self.send(&mut grads, *a, || Tensor::full(av.rows(), av.cols(), share));
                }
                Op::RowSum(a) => {
                    let av = self.val(*a);
                    self.send(&mut grads, *a, || Tensor::from_fn(av.rows(), av.cols(), |i, _| g.get(i, 0)));
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.val(*a).rows();
                    let rb = self.val(*b).rows();
                    self.send(&mut grads, *a, || g.select_rows(&(0..ra).collect::<Vec<_>>()));
                    self.send(&mut grads, *b, || g.select_rows(&(ra..ra + rb).collect::<Vec<_>>()));
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.val(*a).cols();
                    let cb = self.val(*b).cols();
                    self.send(&mut grads, *a, || Tensor::from_fn(g.rows(), ca, |i, j| g.get(i, j)));
                    self.send(&mut grads, *b, || Tensor::from_fn(g.rows(), cb, |i, j| g.get(i, ca + j)));
                }
                Op::CosineSim(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let (ga, gb) = cosine_grads(av, bv, &g);
                    self.send(&mut grads, *a, || ga);
                    self.send(&mut grads, *b, || gb);
                }
                Op::SoftmaxXent(l, labels) => {
                    let lv = self.val(*l);
                    let scale = g.data()[0] / labels.len() as f64;
                    self.send(&mut grads, *l, || {
                        let mut d = Tensor::zeros(lv.rows(), lv.cols());
                        for (i, &y) in labels.iter().enumerate() {
                            let row = lv.row(i);
                            let lse = log_sum_exp(row);
                            let drow = d.row_mut(i);
                            for (dj, &x) in drow.iter_mut().zip(row) {
                                *dj = (x - lse).exp() * scale;
                            }
                            drow[y] -= scale;
                        }
                        d
                    });
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn send(&self, grads: &mut [Option<Tensor>], target: usize, make: impl FnOnce() -> Tensor) {
        if self.nodes[target].needs_grad {
            accumulate(grads, target, make());
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], target: usize, g: Tensor) {
    match &mut grads[target] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn reduce_broadcast(g: &Tensor, bc: Broadcast, sign: f64) -> Tensor {
    match bc {
        Broadcast::Same => g.map(|v| sign * v),
        Broadcast::Row => {
            let mut acc = vec![0.0; g.cols()];
            for i in 0..g.rows() {
                for (a, v) in acc.iter_mut().zip(g.row(i)) {
                    *a += v;
                }
            }
            Tensor::new(1, g.cols(), acc.into_iter().map(|v| sign * v).collect()).expect("row shape")
        }
        Broadcast::Col => Tensor::from_fn(g.rows(), 1, |i, _| sign * g.row(i).iter().sum::<f64>()),
        Broadcast::Scalar => Tensor::scalar(sign * g.data().iter().sum::<f64>()),
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.rows(), g.cols(), data).expect("matching shapes")
}

fn cosine_grads(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let mut ga = Tensor::zeros(a.rows(), a.cols());
    let mut gb = Tensor::zeros(b.rows(), b.cols());
    for i in 0..a.rows() {
        let (ra, rb) = (a.row(i), b.row(i));
        let (na, nb) = (norm(ra), norm(rb));
        let c = dot(ra, rb) / (na * nb);
        let gi = g.get(i, 0);
        for j in 0..a.cols() {
            ga.set(i, j, gi * (rb[j] / (na * nb) - c * ra[j] / (na * na)));
            gb.set(i, j, gi * (ra[j] / (na * nb) - c * rb[j] / (nb * nb)));
        }
    }
    (ga, gb)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
