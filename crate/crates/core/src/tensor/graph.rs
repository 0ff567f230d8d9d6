//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each recorded op knows how
//! to express its vector-Jacobian product with other graph ops, so the
//! backward pass can itself be recorded (`create_graph`) and differentiated
//! again; the critic's gradient penalty relies on this.

use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::params::{Bound, ParamStore};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine { x: Var, scale: f64 },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sqrt(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    BroadcastTo(Var),
    SumTo(Var),
    Concat { xs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Embed { x: Var, axis: usize, start: usize },
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, stride: usize, pad: usize },
    ConvKernelGrad { x: Var, dy: Var, stride: usize, pad: usize },
    AvgPool { x: Var, k: usize, stride: usize },
    AvgPoolAdjoint { x: Var, k: usize, stride: usize },
    Gather { x: Var, routes: Rc<[usize]> },
    Scatter { x: Var, routes: Rc<[usize]> },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of tensor ops. Backward visits records in exact reverse
/// creation order.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    recording: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// First-order gradients of a scalar, keyed by leaf.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: HashMap<Var, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(&v)
    }

    /// Gradients of every parameter in `bound`, in store order.
    pub fn for_params(&self, bound: &Bound) -> Result<Vec<Tensor<S>>> {
        bound
            .vars()
            .iter()
            .map(|v| {
                self.grads
                    .get(v)
                    .cloned()
                    .ok_or_else(|| Error::Graph(format!("no gradient recorded for node {}", v.0)))
            })
            .collect()
    }
}

fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), recording: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Places every tensor of `store` on the graph, trainable or frozen.
    pub fn bind(&mut self, store: &ParamStore<S>, trainable: bool) -> Bound {
        let vars = store
            .tensors()
            .map(|t| if trainable { self.leaf(t.clone()) } else { self.constant(t.clone()) })
            .collect();
        Bound::new(vars)
    }

    fn push(&mut self, value: Tensor<S>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S, rec: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, rec, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, |p, q| p / q, Op::Div(a, b))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("shapes agree")
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (a, c) = (S::of(scale), S::of(shift));
        let value = self.value(x).map(|v| a * v + c);
        self.push(value, Op::Affine { x, scale }, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    pub fn activate(&mut self, x: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Tanh => self.tanh(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.sqrt());
        self.push(value, Op::Sqrt(x), &[x])
    }

    /// `a: [M, K]` times `b: [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![S::zero(); m * n];
        S::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            S::zero(),
            &mut out,
            (n as isize, 1),
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = match self.shape(x) {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("transpose", format!("expected 2-D, got {s:?}"))),
        };
        let value = Tensor::new(vec![c, r], kernels::transpose2(self.value(x).data(), r, c))?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Right-aligned broadcast (size-1 or missing leading axes expand).
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if !kernels::broadcast_compatible(&src, shape) {
            return Err(Error::shape("broadcast_to", format!("{src:?} -> {shape:?}")));
        }
        let value = Tensor::new(shape.to_vec(), kernels::broadcast_to(self.value(x).data(), &src, shape))?;
        Ok(self.push(value, Op::BroadcastTo(x), &[x]))
    }

    /// Sums `x` down to a shape it broadcasts from.
    pub fn sum_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if !kernels::broadcast_compatible(shape, &src) {
            return Err(Error::shape("sum_to", format!("{src:?} -> {shape:?}")));
        }
        let value = Tensor::new(shape.to_vec(), kernels::sum_to(self.value(x).data(), &src, shape))?;
        Ok(self.push(value, Op::SumTo(x), &[x]))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        self.sum_to(x, &[1]).expect("any shape reduces to [1]")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = kernels::split_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("narrow", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let data = kernels::narrow(self.value(x).data(), &shape, axis, start, len);
        let mut out = shape;
        out[axis] = len;
        let value = Tensor::new(out, data)?;
        Ok(self.push(value, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Places `x` at `start` along `axis` inside a zero tensor of length `full`.
    pub fn embed(&mut self, x: Var, axis: usize, start: usize, full: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + shape[axis] > full {
            return Err(Error::shape("embed", format!("{shape:?} at {start} on axis {axis} into {full}")));
        }
        let data = kernels::embed(self.value(x).data(), &shape, axis, start, full);
        let mut out = shape;
        out[axis] = full;
        let value = Tensor::new(out, data)?;
        Ok(self.push(value, Op::Embed { x, axis, start }, &[x]))
    }

    /// Adds a per-channel bias `b: [C]` along axis 1.
    pub fn add_channel_bias(&mut self, y: Var, b: Var) -> Result<Var> {
        let ys = self.shape(y).to_vec();
        if ys.len() < 2 || self.shape(b) != [ys[1]] {
            return Err(Error::shape("bias", format!("bias {:?} for output {ys:?}", self.shape(b))));
        }
        let mut bs = vec![1; ys.len()];
        bs[1] = ys[1];
        let br = self.reshape(b, &bs)?;
        let bb = self.broadcast_to(br, &ys)?;
        self.add(y, bb)
    }

    /// `x: [N, D]`, `w: [D, M]`, `b: [M]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_channel_bias(y, b)
    }

    fn conv_geom(&self, op: &'static str, x: Var, w: Var, stride: usize, pad: usize) -> Result<(ConvGeom, usize, usize)> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let ([n, ci, h, wd], [co, wci, kh, kw]) = (xs, ws) else {
            return Err(Error::shape(op, format!("expected 4-D input and kernel, got {xs:?} and {ws:?}")));
        };
        if ci != wci {
            return Err(Error::shape(op, format!("input has {ci} channels, kernel expects {wci}")));
        }
        if stride == 0 || h + 2 * pad < *kh || wd + 2 * pad < *kw {
            return Err(Error::shape(op, format!("kernel {kh}x{kw} stride {stride} pad {pad} on {h}x{wd}")));
        }
        let geom = ConvGeom {
            channels: *ci,
            height: *h,
            width: *wd,
            kh: *kh,
            kw: *kw,
            stride,
            pad,
            out_h: kernels::conv_out(*h, *kh, stride, pad),
            out_w: kernels::conv_out(*wd, *kw, stride, pad),
        };
        Ok((geom, *n, *co))
    }

    fn conv2d_raw(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (g, n, co) = self.conv_geom("conv2d", x, w, stride, pad)?;
        let data = kernels::conv2d(self.value(x).data(), n, &g, self.value(w).data(), co);
        let value = Tensor::new(vec![n, co, g.out_h, g.out_w], data)?;
        Ok(self.push(value, Op::Conv2d { x, w, stride, pad }, &[x, w]))
    }

    /// 2-D cross-correlation. `x: [N, Cin, H, W]`, `w: [Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        if let [_, _, kh, kw] = self.shape(w) {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} must be odd")));
            }
        }
        let y = self.conv2d_raw(x, w, stride, pad)?;
        match b {
            Some(b) => self.add_channel_bias(y, b),
            None => Ok(y),
        }
    }

    /// Adjoint of `conv2d`. `x: [N, Cin, H, W]`, `w: [Cin, Cout, kh, kw]`,
    /// output `[N, Cout, (H-1)*stride - 2*pad + kh, ...]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let ([_, _, h, wd], [_, _, kh, kw]) = (xs, ws) else {
            return Err(Error::shape("conv_transpose2d", format!("expected 4-D, got {xs:?} and {ws:?}")));
        };
        let out_h = ((h - 1) * stride + kh).checked_sub(2 * pad);
        let out_w = ((wd - 1) * stride + kw).checked_sub(2 * pad);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::shape("conv_transpose2d", "padding exceeds output extent"));
        };
        self.conv_transpose2d_sized(x, w, b, stride, pad, (out_h, out_w))
    }

    /// `conv_transpose2d` with an explicit output size (resolves the
    /// ambiguity of strided inverses).
    pub fn conv_transpose2d_sized(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out: (usize, usize),
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (&[n, ci, h, wd], &[wci, co, kh, kw]) = (&xs[..], &ws[..]) else {
            return Err(Error::shape("conv_transpose2d", format!("expected 4-D, got {xs:?} and {ws:?}")));
        };
        if ci != wci {
            return Err(Error::shape("conv_transpose2d", format!("input has {ci} channels, kernel expects {wci}")));
        }
        if stride == 0
            || out.0 + 2 * pad < kh
            || out.1 + 2 * pad < kw
            || kernels::conv_out(out.0, kh, stride, pad) != h
            || kernels::conv_out(out.1, kw, stride, pad) != wd
        {
            return Err(Error::shape("conv_transpose2d", format!("output {out:?} inconsistent with input {h}x{wd}")));
        }
        let g = ConvGeom { channels: co, height: out.0, width: out.1, kh, kw, stride, pad, out_h: h, out_w: wd };
        let data = kernels::conv2d_adjoint(self.value(x).data(), n, &g, self.value(w).data(), ci);
        let value = Tensor::new(vec![n, co, out.0, out.1], data)?;
        let y = self.push(value, Op::ConvTranspose2d { x, w, stride, pad }, &[x, w]);
        match b {
            Some(b) => self.add_channel_bias(y, b),
            None => Ok(y),
        }
    }

    /// Kernel gradient of a convolution of `x` whose output gradient is `dy`.
    pub fn conv2d_kernel_grad(&mut self, x: Var, dy: Var, k: (usize, usize), stride: usize, pad: usize) -> Result<Var> {
        let (xs, ds) = (self.shape(x).to_vec(), self.shape(dy).to_vec());
        let (&[n, ci, h, wd], &[dn, co, oh, ow]) = (&xs[..], &ds[..]) else {
            return Err(Error::shape("conv_kernel_grad", format!("expected 4-D, got {xs:?} and {ds:?}")));
        };
        let g = ConvGeom { channels: ci, height: h, width: wd, kh: k.0, kw: k.1, stride, pad, out_h: oh, out_w: ow };
        if n != dn
            || stride == 0
            || h + 2 * pad < k.0
            || wd + 2 * pad < k.1
            || kernels::conv_out(h, k.0, stride, pad) != oh
            || kernels::conv_out(wd, k.1, stride, pad) != ow
        {
            return Err(Error::shape("conv_kernel_grad", format!("{xs:?} vs {ds:?} for kernel {k:?}")));
        }
        let data = kernels::conv2d_kernel_grad(self.value(x).data(), n, &g, self.value(dy).data(), co);
        let value = Tensor::new(vec![co, ci, k.0, k.1], data)?;
        Ok(self.push(value, Op::ConvKernelGrad { x, dy, stride, pad }, &[x, dy]))
    }

    pub fn pool2d(&mut self, x: Var, mode: PoolMode, k: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = match self.shape(x) {
            [n, c, h, w] => [*n, *c, *h, *w],
            s => return Err(Error::shape("pool2d", format!("expected 4-D, got {s:?}"))),
        };
        if k == 0 || stride == 0 || k > h || k > w {
            return Err(Error::shape("pool2d", format!("window {k} stride {stride} on {h}x{w}")));
        }
        let out_shape = vec![n, c, (h - k) / stride + 1, (w - k) / stride + 1];
        match mode {
            PoolMode::Avg => {
                let data = kernels::avg_pool(self.value(x).data(), n * c, h, w, k, stride);
                let value = Tensor::new(out_shape, data)?;
                Ok(self.push(value, Op::AvgPool { x, k, stride }, &[x]))
            }
            PoolMode::Max => {
                let routes: Rc<[usize]> = kernels::max_pool_routes(self.value(x).data(), n * c, h, w, k, stride).into();
                self.gather(x, routes, &out_shape)
            }
        }
    }

    fn avg_pool_adjoint(&mut self, x: Var, k: usize, stride: usize, in_hw: (usize, usize)) -> Result<Var> {
        let [n, c, _, _] = self.value(x).dims4();
        let data = kernels::avg_pool_adjoint(self.value(x).data(), n * c, in_hw.0, in_hw.1, k, stride);
        let value = Tensor::new(vec![n, c, in_hw.0, in_hw.1], data)?;
        Ok(self.push(value, Op::AvgPoolAdjoint { x, k, stride }, &[x]))
    }

    fn gather(&mut self, x: Var, routes: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        let data = routes.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(value, Op::Gather { x, routes }, &[x]))
    }

    fn scatter(&mut self, x: Var, routes: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let mut data = vec![S::zero(); numel(shape)];
        for (&dst, &v) in routes.iter().zip(self.value(x).data()) {
            data[dst] = data[dst] + v;
        }
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(value, Op::Scatter { x, routes }, &[x]))
    }

    /// Vector-Jacobian products of node `out` for upstream gradient `g`,
    /// restricted to inputs that require a gradient.
    fn vjp(&mut self, out: Var, g: Var) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[out.0].op.clone();
        let need = |graph: &Self, v: Var| graph.nodes[v.0].requires_grad;
        let mut res = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if need(self, a) {
                    res.push((a, g));
                }
                if need(self, b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(self, a) {
                    res.push((a, g));
                }
                if need(self, b) {
                    res.push((b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if need(self, a) {
                    res.push((a, self.mul(g, b)?));
                }
                if need(self, b) {
                    res.push((b, self.mul(g, a)?));
                }
            }
            Op::Div(a, b) => {
                if need(self, a) {
                    res.push((a, self.div(g, b)?));
                }
                if need(self, b) {
                    let t = self.mul(g, out)?;
                    let t = self.div(t, b)?;
                    res.push((b, self.scale(t, -1.0)));
                }
            }
            Op::Affine { x, scale } => res.push((x, self.scale(g, scale))),
            Op::Relu(x) => {
                let mask = self.value(x).map(|v| if v > S::zero() { S::one() } else { S::zero() });
                let mask = self.constant(mask);
                res.push((x, self.mul(g, mask)?));
            }
            Op::Sigmoid(x) => {
                let yy = self.square(out);
                let d = self.sub(out, yy)?;
                res.push((x, self.mul(g, d)?));
            }
            Op::Tanh(x) => {
                let yy = self.square(out);
                let d = self.affine(yy, -1.0, 1.0);
                res.push((x, self.mul(g, d)?));
            }
            Op::Sqrt(x) => {
                let d = self.scale(out, 2.0);
                res.push((x, self.div(g, d)?));
            }
            Op::MatMul(a, b) => {
                if need(self, a) {
                    let bt = self.transpose(b)?;
                    res.push((a, self.matmul(g, bt)?));
                }
                if need(self, b) {
                    let at = self.transpose(a)?;
                    res.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(x) => res.push((x, self.transpose(g)?)),
            Op::Reshape(x) => {
                let s = self.shape(x).to_vec();
                res.push((x, self.reshape(g, &s)?));
            }
            Op::BroadcastTo(x) => {
                let s = self.shape(x).to_vec();
                res.push((x, self.sum_to(g, &s)?));
            }
            Op::SumTo(x) => {
                let s = self.shape(x).to_vec();
                res.push((x, self.broadcast_to(g, &s)?));
            }
            Op::Concat { xs, axis } => {
                let mut offset = 0;
                for x in xs {
                    let len = self.shape(x)[axis];
                    if need(self, x) {
                        res.push((x, self.narrow(g, axis, offset, len)?));
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let full = self.shape(x)[axis];
                res.push((x, self.embed(g, axis, start, full)?));
            }
            Op::Embed { x, axis, start } => {
                let len = self.shape(x)[axis];
                res.push((x, self.narrow(g, axis, start, len)?));
            }
            Op::Conv2d { x, w, stride, pad } => {
                if need(self, x) {
                    let [_, _, h, wd] = self.value(x).dims4();
                    res.push((x, self.conv_transpose2d_sized(g, w, None, stride, pad, (h, wd))?));
                }
                if need(self, w) {
                    let [_, _, kh, kw] = self.value(w).dims4();
                    res.push((w, self.conv2d_kernel_grad(x, g, (kh, kw), stride, pad)?));
                }
            }
            Op::ConvTranspose2d { x, w, stride, pad } => {
                if need(self, x) {
                    res.push((x, self.conv2d_raw(g, w, stride, pad)?));
                }
                if need(self, w) {
                    let [_, _, kh, kw] = self.value(w).dims4();
                    res.push((w, self.conv2d_kernel_grad(g, x, (kh, kw), stride, pad)?));
                }
            }
            Op::ConvKernelGrad { x, dy, stride, pad } => {
                if need(self, x) {
                    let [_, _, h, wd] = self.value(x).dims4();
                    res.push((x, self.conv_transpose2d_sized(dy, g, None, stride, pad, (h, wd))?));
                }
                if need(self, dy) {
                    res.push((dy, self.conv2d_raw(x, g, stride, pad)?));
                }
            }
            Op::AvgPool { x, k, stride } => {
                let [_, _, h, w] = self.value(x).dims4();
                res.push((x, self.avg_pool_adjoint(g, k, stride, (h, w))?));
            }
            Op::AvgPoolAdjoint { x, k, stride } => {
                let pooled = self.pool2d(g, PoolMode::Avg, k, stride)?;
                debug_assert_eq!(self.shape(pooled), self.shape(x));
                res.push((x, pooled));
            }
            Op::Gather { x, routes } => {
                let s = self.shape(x).to_vec();
                res.push((x, self.scatter(g, routes, &s)?));
            }
            Op::Scatter { x, routes } => {
                let s = self.shape(x).to_vec();
                res.push((x, self.gather(g, routes, &s)?));
            }
        }
        Ok(res)
    }

    fn run_backward(&mut self, loss: Var, create_graph: bool) -> Result<Vec<Option<Var>>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("loss node {} is not part of this graph", loss.0)));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Graph(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Var>> = vec![None; n];
        let seed_shape = self.shape(loss).to_vec();
        grads[loss.0] = Some(self.constant(Tensor::ones(&seed_shape)));
        let saved = self.recording;
        self.recording = create_graph;
        let result = (|| {
            for id in (0..n).rev() {
                let Some(g) = grads[id] else { continue };
                if !self.nodes[id].requires_grad {
                    continue;
                }
                for (input, contribution) in self.vjp(Var(id), g)? {
                    grads[input.0] = Some(match grads[input.0] {
                        None => contribution,
                        Some(prev) => self.add(prev, contribution)?,
                    });
                }
            }
            Ok(())
        })();
        self.recording = saved;
        result.map(|_| grads)
    }

    /// Gradients of scalar `loss` with respect to `wrt`, as graph nodes.
    /// With `create_graph` the backward pass is recorded and the returned
    /// nodes are differentiable; unreachable inputs get zero gradients.
    pub fn grad(&mut self, loss: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let grads = self.run_backward(loss, create_graph)?;
        Ok(wrt
            .iter()
            .map(|&v| match grads.get(v.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let z = Tensor::zeros(self.shape(v));
                    self.constant(z)
                }
            })
            .collect())
    }

    /// First-order gradients of `loss` for every trainable leaf in the graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<S>> {
        let grads = self.run_backward(loss, false)?;
        let mut out = HashMap::new();
        for id in 0..self.nodes.len() {
            let node = &self.nodes[id];
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let g = match grads.get(id).copied().flatten() {
                Some(g) => self.value(g).clone(),
                None => Tensor::zeros(node.value.shape()),
            };
            out.insert(Var(id), g);
        }
        Ok(Gradients { grads: out })
    }
}
