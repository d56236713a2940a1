//! Computation graphs. [`Tape`] records every primitive for reverse-mode
//! differentiation; [`Eval`] runs the same primitives without recording.
//! Model code is written once against the [`Graph`] trait.

use super::kernels::{self, LstmCache};
use super::{NnError, Tensor};

pub type ParamId = usize;

pub trait Graph {
    type V: Clone;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;
    /// Non-differentiable input.
    fn input(&mut self, t: Tensor) -> Self::V;
    /// Model parameter; frozen parameters receive no gradient.
    fn param(&mut self, id: ParamId, t: &Tensor, trainable: bool) -> Self::V;

    fn dense(&mut self, w: &Self::V, x: &Self::V, b: &Self::V) -> Result<Self::V, NnError>;
    fn conv1d(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>, dilation: usize)
        -> Result<Self::V, NnError>;
    fn lstm(&mut self, x: &Self::V, w_ih: &Self::V, w_hh: &Self::V, b: &Self::V) -> Result<Self::V, NnError>;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, NnError>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, NnError>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, NnError>;
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, NnError>;
    /// `seq[c, t] * v[c]`
    fn mul_rows(&mut self, seq: &Self::V, v: &Self::V) -> Result<Self::V, NnError>;
    fn mul_const(&mut self, a: &Self::V, c: &Tensor) -> Result<Self::V, NnError>;
    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V;
    fn add_scalar(&mut self, a: &Self::V, s: f64) -> Self::V;

    fn unary(&mut self, a: &Self::V, f: Unary) -> Self::V;
    fn sum(&mut self, a: &Self::V) -> Self::V;
    fn mean(&mut self, a: &Self::V) -> Self::V;
    /// Mean squared difference to a constant target.
    fn mse(&mut self, pred: &Self::V, target: &Tensor) -> Result<Self::V, NnError>;

    fn tanh(&mut self, a: &Self::V) -> Self::V {
        self.unary(a, Unary::Tanh)
    }
    fn sigmoid(&mut self, a: &Self::V) -> Self::V {
        self.unary(a, Unary::Sigmoid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Ln,
    Sqrt,
    Square,
    Relu,
    /// `max(x^2, floor^2)`
    SquareFloor(f64),
}

impl Unary {
    fn apply(&self, x: f64) -> f64 {
        match *self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => kernels::sigmoid(x),
            Unary::Softplus => kernels::softplus(x),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Relu => x.max(0.0),
            Unary::SquareFloor(fl) => (x * x).max(fl * fl),
        }
    }

    /// Derivative from input `x` and output `y`.
    fn deriv(&self, x: f64, y: f64) -> f64 {
        match *self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => kernels::sigmoid(x),
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::SquareFloor(fl) => {
                if x * x > fl * fl {
                    2.0 * x
                } else {
                    0.0
                }
            }
        }
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_rows(seq: &Tensor, v: &Tensor) -> Result<(), NnError> {
    if seq.shape().len() != 2 || v.shape() != [seq.shape()[0]] {
        return Err(NnError::Shape(format!("row broadcast: {:?} by {:?}", seq.shape(), v.shape())));
    }
    Ok(())
}

fn mul_rows_fwd(seq: &Tensor, v: &Tensor) -> Tensor {
    let t_len = seq.shape()[1];
    let mut out = seq.clone();
    for (c, row) in out.data_mut().chunks_mut(t_len).enumerate() {
        let s = v.data()[c];
        row.iter_mut().for_each(|x| *x *= s);
    }
    out
}

fn mse_fwd(p: &Tensor, t: &Tensor) -> f64 {
    p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
}

// ---------------------------------------------------------------------------

/// Plain forward evaluation.
#[derive(Debug, Default)]
pub struct Eval;

impl Graph for Eval {
    type V = Tensor;

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
    fn input(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn param(&mut self, _id: ParamId, t: &Tensor, _trainable: bool) -> Tensor {
        t.clone()
    }
    fn dense(&mut self, w: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
        kernels::check_dense(w, x, b)?;
        Ok(kernels::dense_forward(w, x, b))
    }
    fn conv1d(&mut self, x: &Tensor, w: &Tensor, b: Option<&Tensor>, d: usize) -> Result<Tensor, NnError> {
        kernels::check_conv(x, w, b, d)?;
        Ok(kernels::conv1d_forward(x, w, b, d))
    }
    fn lstm(&mut self, x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
        kernels::check_lstm(x, w_ih, w_hh, b)?;
        Ok(kernels::lstm_forward(x, w_ih, w_hh, b).0)
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
        same_shape("add", a, b)?;
        Ok(a.zip_map(b, |x, y| x + y))
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
        same_shape("sub", a, b)?;
        Ok(a.zip_map(b, |x, y| x - y))
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
        same_shape("mul", a, b)?;
        Ok(a.zip_map(b, |x, y| x * y))
    }
    fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
        same_shape("div", a, b)?;
        Ok(a.zip_map(b, |x, y| x / y))
    }
    fn mul_rows(&mut self, seq: &Tensor, v: &Tensor) -> Result<Tensor, NnError> {
        check_rows(seq, v)?;
        Ok(mul_rows_fwd(seq, v))
    }
    fn mul_const(&mut self, a: &Tensor, c: &Tensor) -> Result<Tensor, NnError> {
        same_shape("mul_const", a, c)?;
        Ok(a.zip_map(c, |x, y| x * y))
    }
    fn scale(&mut self, a: &Tensor, s: f64) -> Tensor {
        a.map(|x| x * s)
    }
    fn add_scalar(&mut self, a: &Tensor, s: f64) -> Tensor {
        a.map(|x| x + s)
    }
    fn unary(&mut self, a: &Tensor, f: Unary) -> Tensor {
        a.map(|x| f.apply(x))
    }
    fn sum(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.data().iter().sum())
    }
    fn mean(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
    }
    fn mse(&mut self, pred: &Tensor, target: &Tensor) -> Result<Tensor, NnError> {
        same_shape("mse", pred, target)?;
        Ok(Tensor::scalar(mse_fwd(pred, target)))
    }
}

// ---------------------------------------------------------------------------

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Dense { w: Var, x: Var, b: Var },
    Conv { x: Var, w: Var, b: Option<Var>, dilation: usize },
    Lstm { x: Var, w_ih: Var, w_hh: Var, b: Var, cache: Box<LstmCache> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulRows(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Sum(Var),
    Mean(Var),
    Mse(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of primitive operations in evaluation order, which is
/// a topological order of the graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient per parameter id; shared ids are summed.
    pub fn params(&self, n_params: usize) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = vec![None; n_params];
        for &(id, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                match &mut out[id] {
                    Some(acc) => acc.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        out
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: &Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: &Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Differentiable input that is not a model parameter (used to take
    /// gradients with respect to data).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Reverse accumulation from a scalar node. Each node is visited once,
    /// in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(a) => a.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Dense { w, x, b } => {
                    let (dw, dx, db) = kernels::dense_backward(self.val(w), self.val(x), &dy);
                    if self.ng(w) {
                        acc(&mut grads, *w, dw);
                    }
                    if self.ng(x) {
                        acc(&mut grads, *x, dx);
                    }
                    if self.ng(b) {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Conv { x, w, b, dilation } => {
                    let (dx, dw, db) = kernels::conv1d_backward(self.val(x), self.val(w), *dilation, &dy);
                    if self.ng(x) {
                        acc(&mut grads, *x, dx);
                    }
                    if self.ng(w) {
                        acc(&mut grads, *w, dw);
                    }
                    if let Some(b) = b {
                        if self.ng(b) {
                            acc(&mut grads, *b, db);
                        }
                    }
                }
                Op::Lstm { x, w_ih, w_hh, b, cache } => {
                    let (dx, dwi, dwh, db) =
                        kernels::lstm_backward(self.val(x), self.val(w_ih), self.val(w_hh), cache, &dy);
                    for (v, g) in [(x, dx), (w_ih, dwi), (w_hh, dwh), (b, db)] {
                        if self.ng(v) {
                            acc(&mut grads, *v, g);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(a) {
                        acc(&mut grads, *a, dy.clone());
                    }
                    if self.ng(b) {
                        acc(&mut grads, *b, dy);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(a) {
                        acc(&mut grads, *a, dy.clone());
                    }
                    if self.ng(b) {
                        acc(&mut grads, *b, dy.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(a) {
                        acc(&mut grads, *a, dy.zip_map(self.val(b), |g, y| g * y));
                    }
                    if self.ng(b) {
                        acc(&mut grads, *b, dy.zip_map(self.val(a), |g, x| g * x));
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.val(b);
                    if self.ng(a) {
                        acc(&mut grads, *a, dy.zip_map(bv, |g, y| g / y));
                    }
                    if self.ng(b) {
                        let q = node.value.zip_map(bv, |out, y| out / y);
                        acc(&mut grads, *b, dy.zip_map(&q, |g, q| -g * q));
                    }
                }
                Op::MulRows(s, v) => {
                    let (sv, vv) = (self.val(s), self.val(v));
                    if self.ng(s) {
                        acc(&mut grads, *s, mul_rows_fwd(&dy, vv));
                    }
                    if self.ng(v) {
                        let t_len = sv.shape()[1];
                        let dv: Vec<f64> = (0..vv.len())
                            .map(|c| {
                                dy.data()[c * t_len..(c + 1) * t_len]
                                    .iter()
                                    .zip(sv.row(c))
                                    .map(|(g, x)| g * x)
                                    .sum()
                            })
                            .collect();
                        acc(&mut grads, *v, Tensor::vector(dv));
                    }
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, dy.zip_map(c, |g, c| g * c)),
                Op::Scale(a, s) => acc(&mut grads, *a, dy.map(|g| g * s)),
                Op::AddScalar(a) => acc(&mut grads, *a, dy),
                Op::Unary(a, f) => {
                    let x = self.val(a);
                    let mut g = dy;
                    for ((gi, xi), yi) in g.data_mut().iter_mut().zip(x.data()).zip(node.value.data()) {
                        *gi *= f.deriv(*xi, *yi);
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Sum(a) => {
                    let s = dy.item();
                    acc(&mut grads, *a, Tensor::full(self.val(a).shape(), s));
                }
                Op::Mean(a) => {
                    let av = self.val(a);
                    let s = dy.item() / av.len() as f64;
                    acc(&mut grads, *a, Tensor::full(av.shape(), s));
                }
                Op::Mse(p, t) => {
                    let pv = self.val(p);
                    let s = 2.0 * dy.item() / pv.len() as f64;
                    acc(&mut grads, *p, pv.zip_map(t, |a, b| s * (a - b)));
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) if n.needs_grad => Some((id, Var(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

impl Graph for Tape {
    type V = Var;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }
    fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }
    fn param(&mut self, id: ParamId, t: &Tensor, trainable: bool) -> Var {
        self.push(t.clone(), Op::Param(id), trainable)
    }
    fn dense(&mut self, w: &Var, x: &Var, b: &Var) -> Result<Var, NnError> {
        let (wv, xv, bv) = (self.val(w), self.val(x), self.val(b));
        kernels::check_dense(wv, xv, bv)?;
        let y = kernels::dense_forward(wv, xv, bv);
        let ng = self.ng(w) || self.ng(x) || self.ng(b);
        Ok(self.push(y, Op::Dense { w: *w, x: *x, b: *b }, ng))
    }
    fn conv1d(&mut self, x: &Var, w: &Var, b: Option<&Var>, dilation: usize) -> Result<Var, NnError> {
        let bv = b.map(|b| self.val(b));
        kernels::check_conv(self.val(x), self.val(w), bv, dilation)?;
        let y = kernels::conv1d_forward(self.val(x), self.val(w), bv, dilation);
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(y, Op::Conv { x: *x, w: *w, b: b.copied(), dilation }, ng))
    }
    fn lstm(&mut self, x: &Var, w_ih: &Var, w_hh: &Var, b: &Var) -> Result<Var, NnError> {
        kernels::check_lstm(self.val(x), self.val(w_ih), self.val(w_hh), self.val(b))?;
        let (y, cache) = kernels::lstm_forward(self.val(x), self.val(w_ih), self.val(w_hh), self.val(b));
        let ng = self.ng(x) || self.ng(w_ih) || self.ng(w_hh) || self.ng(b);
        Ok(self.push(y, Op::Lstm { x: *x, w_ih: *w_ih, w_hh: *w_hh, b: *b, cache: Box::new(cache) }, ng))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var, NnError> {
        same_shape("add", self.val(a), self.val(b))?;
        let y = self.val(a).zip_map(self.val(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Add(*a, *b), ng))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var, NnError> {
        same_shape("sub", self.val(a), self.val(b))?;
        let y = self.val(a).zip_map(self.val(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Sub(*a, *b), ng))
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var, NnError> {
        same_shape("mul", self.val(a), self.val(b))?;
        let y = self.val(a).zip_map(self.val(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Mul(*a, *b), ng))
    }
    fn div(&mut self, a: &Var, b: &Var) -> Result<Var, NnError> {
        same_shape("div", self.val(a), self.val(b))?;
        let y = self.val(a).zip_map(self.val(b), |x, y| x / y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Div(*a, *b), ng))
    }
    fn mul_rows(&mut self, seq: &Var, v: &Var) -> Result<Var, NnError> {
        check_rows(self.val(seq), self.val(v))?;
        let y = mul_rows_fwd(self.val(seq), self.val(v));
        let ng = self.ng(seq) || self.ng(v);
        Ok(self.push(y, Op::MulRows(*seq, *v), ng))
    }
    fn mul_const(&mut self, a: &Var, c: &Tensor) -> Result<Var, NnError> {
        same_shape("mul_const", self.val(a), c)?;
        let y = self.val(a).zip_map(c, |x, y| x * y);
        let ng = self.ng(a);
        Ok(self.push(y, Op::MulConst(*a, c.clone()), ng))
    }
    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let y = self.val(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(y, Op::Scale(*a, s), ng)
    }
    fn add_scalar(&mut self, a: &Var, s: f64) -> Var {
        let y = self.val(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(y, Op::AddScalar(*a), ng)
    }
    fn unary(&mut self, a: &Var, f: Unary) -> Var {
        let y = self.val(a).map(|x| f.apply(x));
        let ng = self.ng(a);
        self.push(y, Op::Unary(*a, f), ng)
    }
    fn sum(&mut self, a: &Var) -> Var {
        let y = Tensor::scalar(self.val(a).data().iter().sum());
        let ng = self.ng(a);
        self.push(y, Op::Sum(*a), ng)
    }
    fn mean(&mut self, a: &Var) -> Var {
        let av = self.val(a);
        let y = Tensor::scalar(av.data().iter().sum::<f64>() / av.len() as f64);
        let ng = self.ng(a);
        self.push(y, Op::Mean(*a), ng)
    }
    fn mse(&mut self, pred: &Var, target: &Tensor) -> Result<Var, NnError> {
        same_shape("mse", self.val(pred), target)?;
        let y = Tensor::scalar(mse_fwd(self.val(pred), target));
        let ng = self.ng(pred);
        Ok(self.push(y, Op::Mse(*pred, target.clone()), ng))
    }
}
