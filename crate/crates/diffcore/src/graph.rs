//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so reverse insertion order is a
//! valid topological order for [`Graph::backward`]. Graphs are cheap to build
//! and are meant to be discarded after each optimisation step.

use crate::error::{DiffError, Result};
use crate::kernels::{col2im, gemm, im2col, sigmoid, softplus, Window};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        win: Window,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        win: Window,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    Scale(Var, f64),
    Shift(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumAxis {
        input: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient, kept only for user leaves that require it.
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `rhs` broadcasts against `lhs` when it is a scalar or a trailing suffix.
fn broadcastable(lhs: &[usize], rhs: &[usize]) -> bool {
    let numel: usize = rhs.iter().product();
    if numel == 1 {
        return true;
    }
    rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free input whose gradient is accumulated in the graph.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Snapshot of a stored parameter; backward accumulates into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Copies `v`'s value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated on a leaf created with [`Graph::leaf`].
    /// Smallest distance, over every recorded op, between an input and the
    /// nearest point where that op is not differentiable (ReLU at zero,
    /// ties in `minimum`, clamp bounds). `INFINITY` for a smooth graph.
    pub fn kink_margin(&self) -> f64 {
        let val = |v: &Var| self.nodes[v.0].value.data();
        let mut m = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    m = val(a).iter().fold(m, |m, x| m.min(x.abs()));
                }
                Op::Minimum(a, b) => {
                    m = val(a).iter().zip(val(b)).fold(m, |m, (x, y)| m.min((x - y).abs()));
                }
                Op::Clamp(a, lo, hi) => {
                    m = val(a).iter().fold(m, |m, x| m.min((x - lo).abs()).min((x - hi).abs()));
                }
                _ => {}
            }
        }
        m
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !broadcastable(&sa, &sb) {
            return Err(DiffError::shape(name, &sa, &sb));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let nb = bv.len();
        let data = av
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[i % nb]))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(sa, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum of two same-shaped tensors.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::shape("minimum", self.shape(a), self.shape(b)));
        }
        self.binary("minimum", a, b, |x, y| if x.is_nan() || y.is_nan() { f64::NAN } else { x.min(y) }, Op::Minimum(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            n,
            1,
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// 2-D convolution over NHWC input `[n, h, w, c_in]` with kernel
    /// `[kh, kw, c_in, c_out]`, symmetric zero padding and no dilation.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[3] != sk[2] || stride == 0 {
            return Err(DiffError::shape("conv2d", &sx, &sk));
        }
        if sx[1] + 2 * pad < sk[0] || sx[2] + 2 * pad < sk[1] {
            return Err(DiffError::shape("conv2d", &sx, &sk));
        }
        let win = Window {
            batch: sx[0],
            in_h: sx[1],
            in_w: sx[2],
            channels: sx[3],
            kernel_h: sk[0],
            kernel_w: sk[1],
            stride,
            pad,
            out_h: (sx[1] + 2 * pad - sk[0]) / stride + 1,
            out_w: (sx[2] + 2 * pad - sk[1]) / stride + 1,
        };
        let c_out = sk[3];
        let cols = im2col(self.value(input).data(), &win);
        let mut out = vec![0.0; win.rows() * c_out];
        gemm(
            win.rows(),
            win.col_width(),
            c_out,
            &cols,
            win.col_width(),
            1,
            self.value(kernel).data(),
            c_out,
            1,
            &mut out,
            0.0,
        );
        let shape = vec![win.batch, win.out_h, win.out_w, c_out];
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv2d { input, kernel, win },
            rg,
        ))
    }

    /// Transposed convolution (the adjoint of [`Graph::conv2d`]) over NHWC
    /// input `[n, h, w, c_in]` with kernel `[kh, kw, c_out, c_in]`. Output
    /// spatial size is `(h - 1) * stride - 2 * pad + kh`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[3] != sk[3] || stride == 0 {
            return Err(DiffError::shape("conv_transpose2d", &sx, &sk));
        }
        let out_h = ((sx[1] - 1) * stride + sk[0]).checked_sub(2 * pad);
        let out_w = ((sx[2] - 1) * stride + sk[1]).checked_sub(2 * pad);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(DiffError::shape("conv_transpose2d", &sx, &sk));
        };
        let c_in = sx[3];
        let win = Window {
            batch: sx[0],
            in_h: out_h,
            in_w: out_w,
            channels: sk[2],
            kernel_h: sk[0],
            kernel_w: sk[1],
            stride,
            pad,
            out_h: sx[1],
            out_w: sx[2],
        };
        let mut cols = vec![0.0; win.rows() * win.col_width()];
        gemm(
            win.rows(),
            c_in,
            win.col_width(),
            self.value(input).data(),
            c_in,
            1,
            self.value(kernel).data(),
            1,
            c_in,
            &mut cols,
            0.0,
        );
        let out = col2im(&cols, &win);
        let shape = vec![win.batch, out_h, out_w, win.channels];
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::ConvTranspose2d { input, kernel, win },
            rg,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = &self.nodes[a.0].value;
        let data = value.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(value.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x < 0.0 { 0.0 } else { x }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Shift(a))
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).data();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Sums out one axis, removing it from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(DiffError::contract(
                "sum_axis",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::SumAxis { input: a, axis },
            rg,
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| DiffError::contract("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(DiffError::contract(
                "concat",
                format!("axis {axis} out of range for shape {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(DiffError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let src = self.value(v).data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Takes `len` consecutive entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(DiffError::contract(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = axis_extents(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Propagates d(loss)/d(node) to every reachable node that requires it.
    ///
    /// Parameter gradients are added into `store`, leaf gradients into the
    /// graph; neither is zeroed, so repeated calls accumulate.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let loss_shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(DiffError::contract(
                "backward",
                format!("loss must be scalar, got shape {loss_shape:?}"),
            ));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            match self.nodes[idx].op {
                Op::Param(id) => store.accumulate(id, &g),
                Op::Leaf => {
                    let node = &mut self.nodes[idx];
                    match node.grad.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => node.grad = Some(g),
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut send = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                send(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                send(*b, &|s| {
                    let n = s.len();
                    for (i, gi) in g.iter().enumerate() {
                        s[i % n] += sign * gi;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let nb = bv.len();
                send(*a, &|s| {
                    for (i, gi) in g.iter().enumerate() {
                        s[i] += gi * bv[i % nb];
                    }
                });
                send(*b, &|s| {
                    for (i, gi) in g.iter().enumerate() {
                        s[i % nb] += gi * av[i];
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                send(*a, &|s| {
                    for i in 0..g.len() {
                        if av[i] <= bv[i] {
                            s[i] += g[i];
                        }
                    }
                });
                send(*b, &|s| {
                    for i in 0..g.len() {
                        if av[i] > bv[i] {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (val(*a), val(*b));
                send(*a, &|s| gemm(m, n, k, g, n, 1, bv, 1, n, s, 1.0));
                send(*b, &|s| gemm(k, m, n, av, 1, k, g, n, 1, s, 1.0));
            }
            Op::Conv2d { input, kernel, win } => {
                let c_out = self.nodes[kernel.0].value.shape()[3];
                let cw = win.col_width();
                let rows = win.rows();
                let kv = val(*kernel);
                send(*kernel, &|s| {
                    let cols = im2col(val(*input), win);
                    gemm(cw, rows, c_out, &cols, 1, cw, g, c_out, 1, s, 1.0);
                });
                send(*input, &|s| {
                    let mut dcols = vec![0.0; rows * cw];
                    gemm(rows, c_out, cw, g, c_out, 1, kv, 1, c_out, &mut dcols, 0.0);
                    let dx = col2im(&dcols, win);
                    s.iter_mut().zip(dx).for_each(|(s, d)| *s += d);
                });
            }
            Op::ConvTranspose2d { input, kernel, win } => {
                let c_in = self.nodes[input.0].value.shape()[3];
                let cw = win.col_width();
                let rows = win.rows();
                let dcols = im2col(g, win);
                let (xv, kv) = (val(*input), val(*kernel));
                send(*input, &|s| gemm(rows, cw, c_in, &dcols, cw, 1, kv, c_in, 1, s, 1.0));
                send(*kernel, &|s| gemm(cw, rows, c_in, &dcols, 1, cw, xv, c_in, 1, s, 1.0));
            }
            Op::Relu(a) => {
                let av = val(*a);
                send(*a, &|s| {
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => send(*a, &|s| {
                for i in 0..g.len() {
                    s[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Sigmoid(a) => send(*a, &|s| {
                for i in 0..g.len() {
                    s[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Exp(a) => send(*a, &|s| {
                for i in 0..g.len() {
                    s[i] += g[i] * out[i];
                }
            }),
            Op::Log(a) => {
                let av = val(*a);
                send(*a, &|s| {
                    for i in 0..g.len() {
                        s[i] += g[i] / av[i];
                    }
                });
            }
            Op::Softplus(a) => {
                let av = val(*a);
                send(*a, &|s| {
                    for i in 0..g.len() {
                        s[i] += g[i] * sigmoid(av[i]);
                    }
                });
            }
            Op::Square(a) => {
                let av = val(*a);
                send(*a, &|s| {
                    for i in 0..g.len() {
                        s[i] += 2.0 * g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => send(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)),
            Op::Shift(a) | Op::Reshape(a) => {
                send(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g))
            }
            Op::Clamp(a, lo, hi) => {
                let av = val(*a);
                send(*a, &|s| {
                    for i in 0..g.len() {
                        if av[i] >= *lo && av[i] <= *hi {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => send(*a, &|s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Mean(a) => send(*a, &|s| {
                let d = g[0] / s.len() as f64;
                s.iter_mut().for_each(|s| *s += d);
            }),
            Op::SumAxis { input, axis } => {
                let (outer, len, inner) = axis_extents(self.nodes[input.0].value.shape(), *axis);
                send(*input, &|s| {
                    for o in 0..outer {
                        for l in 0..len {
                            let row = &mut s[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (r, gv) in row.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *r += gv;
                            }
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = axis_extents(shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.nodes[v.0].value.shape()[*axis];
                    send(v, &|s| {
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            let dst = &mut s[o * len * inner..(o + 1) * len * inner];
                            for (d, gv) in dst.iter_mut().zip(&g[from..from + len * inner]) {
                                *d += gv;
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, full, inner) = axis_extents(self.nodes[input.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                send(*input, &|s| {
                    for o in 0..outer {
                        let to = (o * full + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, gv) in s[to..to + len * inner].iter_mut().zip(src) {
                            *d += gv;
                        }
                    }
                });
            }
        }
    }
}
