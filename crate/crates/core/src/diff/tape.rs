//! Reverse-mode tape. Nodes are appended in evaluation order, so every node's
//! inputs precede it and a reverse sweep is a valid topological order.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::{DiffError, Gradients, ParamId, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(F::zero()),
            Activation::Sigmoid => kernels::sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output<F: Real>(self, y: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Tanh => F::one() - y * y,
            Activation::Relu => {
                if y > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => y * (F::one() - y),
        }
    }
}

enum Op<F> {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Unary(Var, Activation),
    Exp(Var),
    Square(Var),
    Clamp(Var, F, F),
    Sum(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    StackRows(Vec<Var>),
    Reshape(Var),
    ConcatRowBroadcast(Var, Var),
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
        act: Activation,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        act: Activation,
    },
    LstmStep {
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        /// i, f, g, o activations followed by tanh(c').
        cache: Vec<F>,
    },
    MatVec(Var, Var),
    WeightedRows(Var, Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<F>,
    },
    SigmoidBce {
        logits: Var,
        targets: Vec<F>,
    },
}

impl<F> Op<F> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Min(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Unary(a, _)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::Slice(a, _)
            | Op::Reshape(a)
            | Op::Softmax(a) => vec![*a],
            Op::Concat(v) | Op::StackRows(v) => v.clone(),
            Op::ConcatRowBroadcast(a, b) | Op::MatVec(a, b) | Op::WeightedRows(a, b) => {
                vec![*a, *b]
            }
            Op::Dense { x, w, b, .. } | Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::LstmStep {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                ..
            } => vec![*x, *h, *c, *w_ih, *w_hh, *b],
            Op::CrossEntropy { logits, .. } | Op::SigmoidBce { logits, .. } => vec![*logits],
        }
    }
}

struct Node<F> {
    /// Empty for parameter nodes; their value lives in the store.
    value: Tensor<F>,
    op: Op<F>,
}

/// One recorded computation over a read-only parameter snapshot.
pub struct Tape<'p, F: Real> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    param_vars: HashMap<ParamId, Var>,
}

fn shape_err(msg: impl Into<String>) -> DiffError {
    DiffError::Shape(msg.into())
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.value(id),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn constant_vec(&mut self, data: Vec<F>) -> Var {
        self.input(Tensor::vector(data))
    }

    /// The tape node bound to a parameter; created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(Tensor::zeros(&[0]), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var, DiffError> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))?;
        Ok(self.param(id))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(F) -> F) -> Tensor<F> {
        let ta = self.value(a);
        Tensor::new(ta.shape(), ta.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "min")?;
        let v = self.zip_map(a, b, |x, y| if x <= y { x } else { y });
        Ok(self.push(v, Op::Min(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let v = self.map(a, |x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: F) -> Var {
        let v = self.map(a, |x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let v = self.map(a, |x| act.apply(x));
        self.push(v, Op::Unary(a, act))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.exp());
        self.push(v, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: F, hi: F) -> Var {
        let v = self.map(a, |x| x.max(lo).min(hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<F>();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, F::one() / F::lit(n as f64))
    }

    /// Sum of several scalars (or equal-length tensors, flattened and summed).
    pub fn sum_all(&mut self, vars: &[Var]) -> Result<Var, DiffError> {
        let cat = self.concat(vars)?;
        Ok(self.sum(cat))
    }

    /// Flattened concatenation into a vector.
    pub fn concat(&mut self, vars: &[Var]) -> Result<Var, DiffError> {
        if vars.is_empty() {
            return Err(shape_err("concat of nothing"));
        }
        let mut data = Vec::with_capacity(vars.iter().map(|&v| self.value(v).len()).sum());
        for &v in vars {
            data.extend_from_slice(self.value(v).data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(vars.to_vec())))
    }

    /// `len` consecutive flattened elements starting at `start`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        if start + len > t.len() {
            return Err(shape_err(format!(
                "slice {start}..{} of {} elements",
                start + len,
                t.len()
            )));
        }
        let data = t.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice(a, start)))
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, DiffError> {
        let Some(&first) = rows.first() else {
            return Err(shape_err("stack of nothing"));
        };
        let d = self.value(first).len();
        let mut data = Vec::with_capacity(d * rows.len());
        for &r in rows {
            if self.value(r).len() != d {
                return Err(shape_err("stack_rows: ragged rows"));
            }
            data.extend_from_slice(self.value(r).data());
        }
        let t = Tensor::new(&[rows.len(), d], data)?;
        Ok(self.push(t, Op::StackRows(rows.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let t = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// `[n, d1]` and `[d2]` to `[n, d1 + d2]`, repeating the vector on every row.
    pub fn concat_row_broadcast(&mut self, m: Var, r: Var) -> Result<Var, DiffError> {
        let (tm, tr) = (self.value(m), self.value(r));
        if tm.shape().len() != 2 {
            return Err(shape_err("concat_row_broadcast expects a matrix"));
        }
        let (n, d1) = (tm.shape()[0], tm.shape()[1]);
        let d2 = tr.len();
        let mut data = Vec::with_capacity(n * (d1 + d2));
        for i in 0..n {
            data.extend_from_slice(tm.row(i));
            data.extend_from_slice(tr.data());
        }
        let t = Tensor::new(&[n, d1 + d2], data)?;
        Ok(self.push(t, Op::ConcatRowBroadcast(m, r)))
    }

    /// `act(W x + b)` applied to a vector `[in]` or to every row of `[n, in]`.
    pub fn dense(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        act: Activation,
    ) -> Result<Var, DiffError> {
        let tw = self.value(w);
        if tw.shape().len() != 2 {
            return Err(shape_err("dense weight must be [out, in]"));
        }
        let (out, inp) = (tw.shape()[0], tw.shape()[1]);
        let tx = self.value(x);
        let last = *tx.shape().last().unwrap_or(&0);
        if last != inp || tx.len() % inp.max(1) != 0 {
            return Err(shape_err(format!(
                "dense: input {:?} against weight {:?}",
                tx.shape(),
                tw.shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != out {
                return Err(shape_err("dense: bias length"));
            }
        }
        let rows = tx.len() / inp;
        let mut data = vec![F::zero(); rows * out];
        for r in 0..rows {
            let xr = &tx.data()[r * inp..(r + 1) * inp];
            let yr = &mut data[r * out..(r + 1) * out];
            kernels::matvec(tw.data(), xr, yr);
            if let Some(b) = b {
                for (y, &bv) in yr.iter_mut().zip(self.value(b).data()) {
                    *y += bv;
                }
            }
            for y in yr.iter_mut() {
                *y = act.apply(*y);
            }
        }
        let shape: Vec<usize> = if tx.shape().len() == 1 {
            vec![out]
        } else {
            vec![rows, out]
        };
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::Dense { x, w, b, act }))
    }

    /// Cross-correlation of `[c_in, h, w]` with `[c_out, c_in, k, k]` kernels.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        act: Activation,
    ) -> Result<Var, DiffError> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.shape().len() != 3 || tw.shape().len() != 4 {
            return Err(shape_err("conv2d expects [C,H,W] input and [O,C,k,k] kernels"));
        }
        let (c_in, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (c_out, kc, k, k2) = (tw.shape()[0], tw.shape()[1], tw.shape()[2], tw.shape()[3]);
        if kc != c_in || k != k2 {
            return Err(shape_err(format!(
                "conv2d: input {:?} against kernels {:?}",
                tx.shape(),
                tw.shape()
            )));
        }
        let geom = ConvGeom::new(c_in, h, wd, k, stride, pad)
            .ok_or_else(|| shape_err("conv2d: kernel larger than padded input"))?;
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return Err(shape_err("conv2d: bias length"));
            }
        }
        let mut out = vec![F::zero(); c_out * geom.out_positions()];
        kernels::conv2d_forward(
            tx.data(),
            tw.data(),
            b.map(|b| self.value(b).data()),
            c_out,
            &geom,
            &mut out,
        );
        if act != Activation::Identity {
            out.iter_mut().for_each(|y| *y = act.apply(*y));
        }
        let t = Tensor::new(&[c_out, geom.h_out, geom.w_out], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                act,
            },
        ))
    }

    /// One LSTM cell update. Gate rows of `w_ih`, `w_hh` and `b` are ordered
    /// input, forget, candidate, output. Returns `[h'; c']` as a single vector.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_step(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<Var, DiffError> {
        let hid = self.value(h).len();
        let inp = self.value(x).len();
        if self.value(c).len() != hid
            || self.shape(w_ih) != [4 * hid, inp]
            || self.shape(w_hh) != [4 * hid, hid]
            || self.value(b).len() != 4 * hid
        {
            return Err(shape_err(format!(
                "lstm_step: x {:?}, h {:?}, c {:?}, w_ih {:?}, w_hh {:?}, b {:?}",
                self.shape(x),
                self.shape(h),
                self.shape(c),
                self.shape(w_ih),
                self.shape(w_hh),
                self.shape(b)
            )));
        }
        let mut gates = vec![F::zero(); 4 * hid];
        kernels::matvec(self.value(w_ih).data(), self.value(x).data(), &mut gates);
        let mut rec = vec![F::zero(); 4 * hid];
        kernels::matvec(self.value(w_hh).data(), self.value(h).data(), &mut rec);
        let bias = self.value(b).data();
        let cprev = self.value(c).data();
        let mut cache = vec![F::zero(); 5 * hid];
        let mut out = vec![F::zero(); 2 * hid];
        for j in 0..hid {
            let pre = |k: usize| gates[k * hid + j] + rec[k * hid + j] + bias[k * hid + j];
            let i = kernels::sigmoid(pre(0));
            let f = kernels::sigmoid(pre(1));
            let g = pre(2).tanh();
            let o = kernels::sigmoid(pre(3));
            let cn = f * cprev[j] + i * g;
            let tc = cn.tanh();
            cache[j] = i;
            cache[hid + j] = f;
            cache[2 * hid + j] = g;
            cache[3 * hid + j] = o;
            cache[4 * hid + j] = tc;
            out[j] = o * tc;
            out[hid + j] = cn;
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::LstmStep {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                cache,
            },
        ))
    }

    /// `[n, k] x [k] -> [n]`
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var, DiffError> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.shape().len() != 2 || tm.shape()[1] != tv.len() {
            return Err(shape_err(format!(
                "matvec: {:?} x {:?}",
                tm.shape(),
                tv.shape()
            )));
        }
        let mut out = vec![F::zero(); tm.shape()[0]];
        kernels::matvec(tm.data(), tv.data(), &mut out);
        Ok(self.push(Tensor::vector(out), Op::MatVec(m, v)))
    }

    /// `h^T alpha` for `h: [n, d]`, `alpha: [n]`.
    pub fn weighted_rows(&mut self, h: Var, alpha: Var) -> Result<Var, DiffError> {
        let (th, ta) = (self.value(h), self.value(alpha));
        if th.shape().len() != 2 || th.shape()[0] != ta.len() {
            return Err(shape_err(format!(
                "weighted_rows: {:?} with weights {:?}",
                th.shape(),
                ta.shape()
            )));
        }
        let mut out = vec![F::zero(); th.shape()[1]];
        for (j, &a) in ta.data().iter().enumerate() {
            kernels::axpy(a, th.row(j), &mut out);
        }
        Ok(self.push(Tensor::vector(out), Op::WeightedRows(h, alpha)))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let p = softmax(self.value(a).data())?;
        Ok(self.push(Tensor::vector(p), Op::Softmax(a)))
    }

    /// Negative log-softmax at `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, DiffError> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(DiffError::Label(label, z.len()));
        }
        let probs = softmax(z)?;
        let m = z.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
        let loss = lse - z[label];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }

    /// Mean sigmoid cross-entropy against 0/1 targets.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &[bool]) -> Result<Var, DiffError> {
        let z = self.value(logits).data();
        if z.len() != targets.len() {
            return Err(shape_err(format!(
                "sigmoid_bce: {} logits, {} targets",
                z.len(),
                targets.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite("logits"));
        }
        let n = F::lit(z.len() as f64);
        let loss = z
            .iter()
            .zip(targets)
            .map(|(&zi, &t)| if t { kernels::softplus(-zi) } else { kernels::softplus(zi) })
            .sum::<F>()
            / n;
        let targets = targets
            .iter()
            .map(|&t| if t { F::one() } else { F::zero() })
            .collect();
        Ok(self.push(Tensor::scalar(loss), Op::SigmoidBce { logits, targets }))
    }

    /// Reverse sweep from a scalar output. Parameters not on a path from the
    /// output get zero gradient.
    pub fn backward(&self, output: Var) -> Result<Gradients<F>, DiffError> {
        let mut grads = Gradients::zeros_like(self.params);
        self.backward_into(output, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but adds into an existing gradient table.
    pub fn backward_into(&self, output: Var, out: &mut Gradients<F>) -> Result<(), DiffError> {
        if output.0 >= self.nodes.len() {
            return Err(DiffError::Shape("output var not on this tape".into()));
        }
        if !self.value(output).is_scalar() {
            return Err(DiffError::NonScalarOutput(self.shape(output).to_vec()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.op.inputs().iter().any(|v| v.0 >= i) {
                return Err(DiffError::CyclicTape(i));
            }
        }
        let mut g: Vec<Option<Tensor<F>>> = (0..=output.0).map(|_| None).collect();
        g[output.0] = Some(Tensor::new(self.shape(output), vec![F::one()])?);
        for i in (0..=output.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            self.backprop_node(i, &gi, &mut g, out);
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        i: usize,
        gout: &Tensor<F>,
        g: &mut [Option<Tensor<F>>],
        params_out: &mut Gradients<F>,
    ) {
        let node = &self.nodes[i];
        let go = gout.data();
        let y = node.value.data();
        macro_rules! grad {
            ($v:expr) => {
                slot(g, $v, self.shape($v))
            };
        }
        match &node.op {
            Op::Input => {}
            Op::Param(id) => params_out.get_mut(*id).add_assign(gout),
            Op::Add(a, b) => {
                kernels::axpy(F::one(), go, grad!(*a));
                kernels::axpy(F::one(), go, grad!(*b));
            }
            Op::Sub(a, b) => {
                kernels::axpy(F::one(), go, grad!(*a));
                kernels::axpy(-F::one(), go, grad!(*b));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let da: Vec<F> = go.iter().zip(tb).map(|(&g, &y)| g * y).collect();
                let db: Vec<F> = go.iter().zip(ta).map(|(&g, &x)| g * x).collect();
                kernels::axpy(F::one(), &da, grad!(*a));
                kernels::axpy(F::one(), &db, grad!(*b));
            }
            Op::Min(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let mut da = vec![F::zero(); go.len()];
                let mut db = vec![F::zero(); go.len()];
                for k in 0..go.len() {
                    if ta[k] <= tb[k] {
                        da[k] = go[k];
                    } else {
                        db[k] = go[k];
                    }
                }
                kernels::axpy(F::one(), &da, grad!(*a));
                kernels::axpy(F::one(), &db, grad!(*b));
            }
            Op::Scale(a, k) => kernels::axpy(*k, go, grad!(*a)),
            Op::AddScalar(a) | Op::Reshape(a) => kernels::axpy(F::one(), go, grad!(*a)),
            Op::Unary(a, act) => {
                let d: Vec<F> = go
                    .iter()
                    .zip(y)
                    .map(|(&g, &yv)| g * act.grad_from_output(yv))
                    .collect();
                kernels::axpy(F::one(), &d, grad!(*a));
            }
            Op::Exp(a) => {
                let d: Vec<F> = go.iter().zip(y).map(|(&g, &yv)| g * yv).collect();
                kernels::axpy(F::one(), &d, grad!(*a));
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let two = F::lit(2.0);
                let d: Vec<F> = go.iter().zip(x).map(|(&g, &xv)| two * g * xv).collect();
                kernels::axpy(F::one(), &d, grad!(*a));
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                let d: Vec<F> = go
                    .iter()
                    .zip(x)
                    .map(|(&g, &xv)| if xv < *lo || xv > *hi { F::zero() } else { g })
                    .collect();
                kernels::axpy(F::one(), &d, grad!(*a));
            }
            Op::Sum(a) => {
                let s = go[0];
                grad!(*a).iter_mut().for_each(|v| *v += s);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    kernels::axpy(F::one(), &go[off..off + n], grad!(p));
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let n = go.len();
                kernels::axpy(F::one(), go, &mut grad!(*a)[*start..*start + n]);
            }
            Op::StackRows(rows) => {
                let d = go.len() / rows.len();
                for (r, &v) in rows.iter().enumerate() {
                    kernels::axpy(F::one(), &go[r * d..(r + 1) * d], grad!(v));
                }
            }
            Op::ConcatRowBroadcast(m, r) => {
                let d1 = self.shape(*m)[1];
                let d2 = self.value(*r).len();
                let n = self.shape(*m)[0];
                for row in 0..n {
                    let src = &go[row * (d1 + d2)..(row + 1) * (d1 + d2)];
                    kernels::axpy(F::one(), &src[..d1], &mut grad!(*m)[row * d1..(row + 1) * d1]);
                    kernels::axpy(F::one(), &src[d1..], grad!(*r));
                }
            }
            Op::Dense { x, w, b, act } => {
                let tw = self.value(*w);
                let (out, inp) = (tw.shape()[0], tw.shape()[1]);
                let xd = self.value(*x).data();
                let rows = xd.len() / inp;
                let mut dpre = vec![F::zero(); go.len()];
                for k in 0..go.len() {
                    dpre[k] = go[k] * act.grad_from_output(y[k]);
                }
                if let Some(b) = b {
                    let db = grad!(*b);
                    for r in 0..rows {
                        kernels::axpy(F::one(), &dpre[r * out..(r + 1) * out], db);
                    }
                }
                {
                    let dw = grad!(*w);
                    for r in 0..rows {
                        kernels::outer_acc(
                            &dpre[r * out..(r + 1) * out],
                            &xd[r * inp..(r + 1) * inp],
                            dw,
                        );
                    }
                }
                if !matches!(self.nodes[x.0].op, Op::Input) {
                    let dx = grad!(*x);
                    for r in 0..rows {
                        kernels::matvec_t_acc(
                            tw.data(),
                            &dpre[r * out..(r + 1) * out],
                            &mut dx[r * inp..(r + 1) * inp],
                        );
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                act,
            } => {
                let c_out = self.shape(*w)[0];
                let dpre: Vec<F> = go
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * act.grad_from_output(yv))
                    .collect();
                let need_dx = !matches!(self.nodes[x.0].op, Op::Input);
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let mut dw = vec![F::zero(); wd.len()];
                let mut db = vec![F::zero(); c_out];
                let mut dx = vec![F::zero(); if need_dx { xd.len() } else { 0 }];
                kernels::conv2d_backward(
                    xd,
                    wd,
                    &dpre,
                    c_out,
                    geom,
                    need_dx.then_some(dx.as_mut_slice()),
                    Some(&mut dw),
                    b.is_some().then_some(db.as_mut_slice()),
                );
                kernels::axpy(F::one(), &dw, grad!(*w));
                if let Some(b) = b {
                    kernels::axpy(F::one(), &db, grad!(*b));
                }
                if need_dx {
                    kernels::axpy(F::one(), &dx, grad!(*x));
                }
            }
            Op::LstmStep {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                cache,
            } => {
                let hid = self.value(*h).len();
                let cprev = self.value(*c).data();
                let (dh_out, dc_out) = go.split_at(hid);
                let mut dgates = vec![F::zero(); 4 * hid];
                let mut dcprev = vec![F::zero(); hid];
                for j in 0..hid {
                    let i = cache[j];
                    let f = cache[hid + j];
                    let gg = cache[2 * hid + j];
                    let o = cache[3 * hid + j];
                    let tc = cache[4 * hid + j];
                    let d_o = dh_out[j] * tc;
                    let dc = dc_out[j] + dh_out[j] * o * (F::one() - tc * tc);
                    let di = dc * gg;
                    let dg = dc * i;
                    let df = dc * cprev[j];
                    dcprev[j] = dc * f;
                    dgates[j] = di * i * (F::one() - i);
                    dgates[hid + j] = df * f * (F::one() - f);
                    dgates[2 * hid + j] = dg * (F::one() - gg * gg);
                    dgates[3 * hid + j] = d_o * o * (F::one() - o);
                }
                kernels::axpy(F::one(), &dgates, grad!(*b));
                kernels::outer_acc(&dgates, self.value(*x).data(), grad!(*w_ih));
                kernels::outer_acc(&dgates, self.value(*h).data(), grad!(*w_hh));
                if !matches!(self.nodes[x.0].op, Op::Input) {
                    kernels::matvec_t_acc(self.value(*w_ih).data(), &dgates, grad!(*x));
                }
                kernels::matvec_t_acc(self.value(*w_hh).data(), &dgates, grad!(*h));
                kernels::axpy(F::one(), &dcprev, grad!(*c));
            }
            Op::MatVec(m, v) => {
                let tm = self.value(*m);
                let k = tm.shape()[1];
                kernels::outer_acc(go, self.value(*v).data(), grad!(*m));
                let mut dv = vec![F::zero(); k];
                kernels::matvec_t_acc(tm.data(), go, &mut dv);
                kernels::axpy(F::one(), &dv, grad!(*v));
            }
            Op::WeightedRows(hm, alpha) => {
                let th = self.value(*hm);
                let n = th.shape()[0];
                let mut dalpha = vec![F::zero(); n];
                for (j, da) in dalpha.iter_mut().enumerate() {
                    *da = kernels::dot(th.row(j), go);
                }
                kernels::axpy(F::one(), &dalpha, grad!(*alpha));
                let a = self.value(*alpha).data();
                kernels::outer_acc(a, go, grad!(*hm));
            }
            Op::Softmax(a) => {
                let s = kernels::dot(go, y);
                let d: Vec<F> = go.iter().zip(y).map(|(&gv, &p)| p * (gv - s)).collect();
                kernels::axpy(F::one(), &d, grad!(*a));
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let s = go[0];
                let mut d: Vec<F> = probs.iter().map(|&p| p * s).collect();
                d[*label] -= s;
                kernels::axpy(F::one(), &d, grad!(*logits));
            }
            Op::SigmoidBce { logits, targets } => {
                let z = self.value(*logits).data();
                let n = F::lit(z.len() as f64);
                let s = go[0] / n;
                let d: Vec<F> = z
                    .iter()
                    .zip(targets)
                    .map(|(&zi, &t)| (kernels::sigmoid(zi) - t) * s)
                    .collect();
                kernels::axpy(F::one(), &d, grad!(*logits));
            }
        }
    }
}

fn slot<'g, F: Real>(g: &'g mut [Option<Tensor<F>>], v: Var, shape: &[usize]) -> &'g mut [F] {
    g[v.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut()
}

/// Max-subtracted softmax of a finite vector.
pub fn softmax<F: Real>(v: &[F]) -> Result<Vec<F>, DiffError> {
    if v.is_empty() {
        return Err(DiffError::Shape("softmax of empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DiffError::NonFinite("softmax input"));
    }
    let m = v.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = v.iter().map(|&x| (x - m).exp()).collect();
    let s: F = e.iter().copied().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}
