//! Tape of recorded operations and their reverse-mode rules.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep.

use crate::error::{FpmError, Result};
use crate::field::{window_origin, FftCache};
use crate::geometry::PixelShift;
use crate::scalar::Real;

use super::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    },
    PixelShuffle(Var, usize),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    SqrtEps(Var, T),
    Concat(Vec<Var>, usize),
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    L1(Var, Var),
    ComplexFromParts(Var, Var),
    ComplexMul(Var, Var),
    Fft(Var),
    Ifft(Var),
    ModSq(Var),
    Crop {
        input: Var,
        shift: PixelShift,
    },
    Embed {
        input: Var,
        shift: PixelShift,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-task computation tape.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    fft: FftCache<T>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph {
            nodes: Vec::new(),
            fft: FftCache::new(),
        }
    }
}

/// Gradients of a scalar with respect to every trainable leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` when `v` is not a trainable leaf or the loss
    /// does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient of `v`, zeros when it does not reach `v`.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<T> {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> FpmError {
    FpmError::shape(format!("{op}: {a:?} vs {b:?}"))
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(name, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(t, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|v| v * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a).map(f);
        self.push(t, op, &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, |v| if v > T::zero() { v } else { v * slope }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.tanh(), Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// `sqrt(x + eps)`.
    pub fn sqrt_eps(&mut self, a: Var, eps: T) -> Var {
        self.unary(a, |v| (v + eps).sqrt(), Op::SqrtEps(a, eps))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[C, H, W]` input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.value(x).shape(), self.value(bias).shape());
        if xs.len() != 3 || bs != [xs[0]] {
            return Err(mismatch("add_bias", xs, bs));
        }
        let plane = xs[1] * xs[2];
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(x).clone();
        for (c, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
            for v in chunk {
                *v += b[c];
            }
        }
        Ok(self.push(t, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Cross-correlation of a `[Ci, H, W]` input with a `[Co, Ci, kh, kw]`
    /// kernel; output side `(H + 2p - kh) / stride + 1`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (is, ks) = (self.value(input).shape(), self.value(kernel).shape());
        let geom = ConvGeom::new(is, ks, stride, padding)?;
        let mut out = vec![T::zero(); geom.co * geom.ho * geom.wo];
        geom.forward(self.value(input).data(), self.value(kernel).data(), &mut out);
        let t = Tensor::new(vec![geom.co, geom.ho, geom.wo], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
            &[input, kernel],
        ))
    }

    /// Depth-to-space: `[C·r², H, W] → [C, rH, rW]` with
    /// `out[c, y·r + i, x·r + j] = in[c·r² + i·r + j, y, x]`.
    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let s = self.value(a).shape().to_vec();
        if s.len() != 3 || r == 0 || s[0] % (r * r) != 0 {
            return Err(FpmError::shape(format!("pixel_shuffle by {r} of {s:?}")));
        }
        let (c, h, w) = (s[0] / (r * r), s[1], s[2]);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for_each_shuffle(c, h, w, r, |dst, from| out[dst] = src[from]);
        let t = Tensor::new(vec![c, h * r, w * r], out)?;
        Ok(self.push(t, Op::PixelShuffle(a, r), &[a]))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| FpmError::shape("concat of nothing"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(FpmError::shape(format!("concat axis {axis} of rank {}", base.len())));
        }
        let mut total = 0;
        for v in xs {
            let s = self.value(*v).shape();
            if s.len() != base.len() || s.iter().enumerate().any(|(d, &e)| d != axis && e != base[d]) {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let t = self.value(*v);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Concat(xs.to_vec(), axis), xs))
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.value(a).shape().to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(FpmError::shape(format!("narrow {start}+{len} on axis {axis} of {s:?}")));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Narrow { input: a, axis, start }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    /// Mean absolute error; the subgradient at a tie is zero.
    pub fn l1_loss(&mut self, x: Var, y: Var) -> Result<Var> {
        let (a, b) = (self.value(x), self.value(y));
        if a.shape() != b.shape() {
            return Err(mismatch("l1_loss", a.shape(), b.shape()));
        }
        let n = T::lit(a.numel() as f64);
        let total: T = a.data().iter().zip(b.data()).map(|(&p, &q)| (p - q).abs()).sum();
        Ok(self.push(Tensor::scalar(total / n), Op::L1(x, y), &[x, y]))
    }

    /// Stacks equally shaped real and imaginary parts into `[2, ...]`.
    pub fn complex_from_parts(&mut self, re: Var, im: Var) -> Result<Var> {
        let (a, b) = (self.value(re), self.value(im));
        if a.shape() != b.shape() {
            return Err(mismatch("complex_from_parts", a.shape(), b.shape()));
        }
        let mut shape = vec![2];
        shape.extend_from_slice(a.shape());
        let mut data = a.data().to_vec();
        data.extend_from_slice(b.data());
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::ComplexFromParts(re, im), &[re, im]))
    }

    fn complex_half(&self, v: Var, name: &str) -> Result<usize> {
        let s = self.value(v).shape();
        if s.first() != Some(&2) {
            return Err(FpmError::shape(format!("{name} expects a leading complex axis, got {s:?}")));
        }
        Ok(self.value(v).numel() / 2)
    }

    pub fn complex_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.complex_half(a, "complex_mul")?;
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch("complex_mul", self.value(a).shape(), self.value(b).shape()));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); 2 * n];
        for k in 0..n {
            let (ar, ai, br, bi) = (x[k], x[n + k], y[k], y[n + k]);
            out[k] = ar * br - ai * bi;
            out[n + k] = ar * bi + ai * br;
        }
        let t = Tensor::new(self.value(a).shape().to_vec(), out)?;
        Ok(self.push(t, Op::ComplexMul(a, b), &[a, b]))
    }

    fn spectral(&mut self, a: Var, inverse: bool) -> Result<Var> {
        let (h, w) = match self.value(a).shape() {
            [2, h, w] => (*h, *w),
            s => return Err(FpmError::shape(format!("fft expects [2, H, W], got {s:?}"))),
        };
        let z = self.value(a).to_complex()?;
        let mut data = z.into_data();
        let plan = self.fft.plan(h, w);
        if inverse {
            plan.inverse_centered(&mut data);
        } else {
            plan.forward_centered(&mut data);
        }
        let t = Tensor::from_complex(&crate::field::ComplexGrid::from_vec(h, w, data)?);
        let op = if inverse { Op::Ifft(a) } else { Op::Fft(a) };
        Ok(self.push(t, op, &[a]))
    }

    /// Centred forward transform of a `[2, H, W]` complex tensor.
    pub fn fft(&mut self, a: Var) -> Result<Var> {
        self.spectral(a, false)
    }

    /// Centred inverse transform of a `[2, H, W]` complex tensor.
    pub fn ifft(&mut self, a: Var) -> Result<Var> {
        self.spectral(a, true)
    }

    /// `|z|²` of a `[2, ...]` complex tensor.
    pub fn modsq(&mut self, a: Var) -> Result<Var> {
        let n = self.complex_half(a, "modsq")?;
        let x = self.value(a).data();
        let data = (0..n).map(|k| x[k] * x[k] + x[n + k] * x[n + k]).collect();
        let t = Tensor::new(self.value(a).shape()[1..].to_vec(), data)?;
        Ok(self.push(t, Op::ModSq(a), &[a]))
    }

    /// `m × m` window of every plane of a `[C, N, N]` tensor, placed as in
    /// [`crate::field::crop_centered`].
    pub fn crop(&mut self, a: Var, m: usize, shift: PixelShift) -> Result<Var> {
        let (c, h, w) = match self.value(a).shape() {
            [c, h, w] => (*c, *h, *w),
            s => return Err(FpmError::shape(format!("crop expects [C, H, W], got {s:?}"))),
        };
        let (top, left) = window_origin(h, w, m, shift)
            .ok_or_else(|| FpmError::domain(format!("crop window {m} at {shift:?} leaves {h}x{w}")))?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(c * m * m);
        for ch in 0..c {
            for i in 0..m {
                let base = (ch * h + top + i) * w + left;
                data.extend_from_slice(&src[base..base + m]);
            }
        }
        let t = Tensor::new(vec![c, m, m], data)?;
        Ok(self.push(t, Op::Crop { input: a, shift }, &[a]))
    }

    /// Zero-padded placement of every `m × m` plane into `n × n`.
    pub fn embed(&mut self, a: Var, n: usize, shift: PixelShift) -> Result<Var> {
        let (c, m) = match self.value(a).shape() {
            [c, h, w] if h == w => (*c, *h),
            s => return Err(FpmError::shape(format!("embed expects [C, M, M], got {s:?}"))),
        };
        let (top, left) = window_origin(n, n, m, shift)
            .ok_or_else(|| FpmError::domain(format!("embed block {m} at {shift:?} exceeds {n}x{n}")))?;
        let src = self.value(a).data();
        let mut data = vec![T::zero(); c * n * n];
        for ch in 0..c {
            for i in 0..m {
                let dst = (ch * n + top + i) * n + left;
                data[dst..dst + m].copy_from_slice(&src[(ch * m + i) * m..(ch * m + i + 1) * m]);
            }
        }
        let t = Tensor::new(vec![c, n, n], data)?;
        Ok(self.push(t, Op::Embed { input: a, shift }, &[a]))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(FpmError::shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let len = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..len).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&mut self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| nodes[v.0].value.data();
        // Zero-initialized accumulator of a parent.
        fn slot<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'a mut Vec<T> {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()])
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, sign) in [(*a, T::one()), (*b, T::one())] {
                    if needs(v) {
                        let s = slot(grads, nodes, v);
                        s.iter_mut().zip(g).for_each(|(p, &q)| *p += sign * q);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, T::one()), (*b, -T::one())] {
                    if needs(v) {
                        let s = slot(grads, nodes, v);
                        s.iter_mut().zip(g).for_each(|(p, &q)| *p += sign * q);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if needs(v) {
                        let o = val(other);
                        let s = slot(grads, nodes, v);
                        for k in 0..g.len() {
                            s[k] += g[k] * o[k];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    let s = slot(grads, nodes, *a);
                    s.iter_mut().zip(g).for_each(|(p, &q)| *p += *c * q);
                }
            }
            Op::AddBias(x, b) => {
                if needs(*x) {
                    let s = slot(grads, nodes, *x);
                    s.iter_mut().zip(g).for_each(|(p, &q)| *p += q);
                }
                if needs(*b) {
                    let c = nodes[b.0].value.numel();
                    let plane = g.len() / c;
                    let s = slot(grads, nodes, *b);
                    for (ch, chunk) in g.chunks(plane).enumerate() {
                        s[ch] += chunk.iter().copied().sum::<T>();
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let geom = ConvGeom::new(
                    nodes[input.0].value.shape(),
                    nodes[kernel.0].value.shape(),
                    *stride,
                    *padding,
                )?;
                if needs(*input) {
                    let k = val(*kernel);
                    let s = slot(grads, nodes, *input);
                    geom.backward_input(g, k, s);
                }
                if needs(*kernel) {
                    let x = val(*input);
                    let s = slot(grads, nodes, *kernel);
                    geom.backward_kernel(g, x, s);
                }
            }
            Op::PixelShuffle(a, r) => {
                if needs(*a) {
                    let sh = nodes[a.0].value.shape();
                    let (c, h, w) = (sh[0] / (r * r), sh[1], sh[2]);
                    let s = slot(grads, nodes, *a);
                    for_each_shuffle(c, h, w, *r, |dst, from| s[from] += g[dst]);
                }
            }
            Op::LeakyRelu(a, slope) => {
                if needs(*a) {
                    let x = val(*a);
                    let s = slot(grads, nodes, *a);
                    for k in 0..g.len() {
                        s[k] += if x[k] > T::zero() { g[k] } else { g[k] * *slope };
                    }
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    let y = nodes[i].value.data();
                    let s = slot(grads, nodes, *a);
                    for k in 0..g.len() {
                        s[k] += g[k] * y[k] * (T::one() - y[k]);
                    }
                }
            }
            Op::Tanh(a) => {
                if needs(*a) {
                    let y = nodes[i].value.data();
                    let s = slot(grads, nodes, *a);
                    for k in 0..g.len() {
                        s[k] += g[k] * (T::one() - y[k] * y[k]);
                    }
                }
            }
            Op::Softplus(a) => {
                if needs(*a) {
                    let x = val(*a);
                    let s = slot(grads, nodes, *a);
                    for k in 0..g.len() {
                        s[k] += g[k] * sigmoid(x[k]);
                    }
                }
            }
            Op::SqrtEps(a, _) => {
                if needs(*a) {
                    let y = nodes[i].value.data();
                    let half = T::lit(0.5);
                    let s = slot(grads, nodes, *a);
                    for k in 0..g.len() {
                        s[k] += g[k] * half / y[k];
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let shape = nodes[i].value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for v in xs {
                    let len = nodes[v.0].value.shape()[*axis];
                    if needs(*v) {
                        let s = slot(grads, nodes, *v);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for k in 0..len * inner {
                                s[dst + k] += g[src + k];
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                if needs(*input) {
                    let (outer, n, inner) = split_axis(nodes[input.0].value.shape(), *axis);
                    let len = nodes[i].value.shape()[*axis];
                    let s = slot(grads, nodes, *input);
                    for o in 0..outer {
                        let dst = (o * n + start) * inner;
                        let src = o * len * inner;
                        for k in 0..len * inner {
                            s[dst + k] += g[src + k];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let s = slot(grads, nodes, *a);
                    s.iter_mut().for_each(|p| *p += g[0]);
                }
            }
            Op::L1(x, y) => {
                let (a, b) = (val(*x), val(*y));
                let n = T::lit(a.len() as f64);
                let unit = g[0] / n;
                let sign = |p: T, q: T| {
                    if p > q {
                        unit
                    } else if p < q {
                        -unit
                    } else {
                        T::zero()
                    }
                };
                let d: Vec<T> = a.iter().zip(b).map(|(&p, &q)| sign(p, q)).collect();
                if needs(*x) {
                    let s = slot(grads, nodes, *x);
                    s.iter_mut().zip(&d).for_each(|(p, &q)| *p += q);
                }
                if needs(*y) {
                    let s = slot(grads, nodes, *y);
                    s.iter_mut().zip(&d).for_each(|(p, &q)| *p -= q);
                }
            }
            Op::ComplexFromParts(re, im) => {
                let n = g.len() / 2;
                if needs(*re) {
                    let s = slot(grads, nodes, *re);
                    s.iter_mut().zip(&g[..n]).for_each(|(p, &q)| *p += q);
                }
                if needs(*im) {
                    let s = slot(grads, nodes, *im);
                    s.iter_mut().zip(&g[n..]).for_each(|(p, &q)| *p += q);
                }
            }
            Op::ComplexMul(a, b) => {
                // d/da of Re⟨g, a·b⟩ is g·conj(b), and symmetrically for b.
                let n = g.len() / 2;
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if needs(v) {
                        let o = val(other);
                        let s = slot(grads, nodes, v);
                        for k in 0..n {
                            let (gr, gi, or, oi) = (g[k], g[n + k], o[k], o[n + k]);
                            s[k] += gr * or + gi * oi;
                            s[n + k] += gi * or - gr * oi;
                        }
                    }
                }
            }
            Op::Fft(a) | Op::Ifft(a) => {
                if needs(*a) {
                    let inverse_op = matches!(nodes[i].op, Op::Ifft(_));
                    let sh = nodes[i].value.shape();
                    let (h, w) = (sh[1], sh[2]);
                    let n = h * w;
                    let mut z: Vec<_> = (0..n).map(|k| num_complex::Complex::new(g[k], g[n + k])).collect();
                    // The adjoint of the centred DFT is H·W times its inverse,
                    // and the adjoint of the inverse is the forward over H·W.
                    let plan = self.fft.plan(h, w);
                    let factor = if inverse_op {
                        plan.forward_centered(&mut z);
                        T::one() / T::lit(n as f64)
                    } else {
                        plan.inverse_centered(&mut z);
                        T::lit(n as f64)
                    };
                    let nodes = &self.nodes;
                    let s = slot(grads, nodes, *a);
                    for k in 0..n {
                        s[k] += z[k].re * factor;
                        s[n + k] += z[k].im * factor;
                    }
                }
            }
            Op::ModSq(a) => {
                if needs(*a) {
                    let x = val(*a);
                    let n = g.len();
                    let two = T::lit(2.0);
                    let s = slot(grads, nodes, *a);
                    for k in 0..n {
                        s[k] += two * x[k] * g[k];
                        s[n + k] += two * x[n + k] * g[k];
                    }
                }
            }
            Op::Crop { input, shift } => {
                if needs(*input) {
                    let sh = nodes[input.0].value.shape();
                    let (c, h, w) = (sh[0], sh[1], sh[2]);
                    let m = nodes[i].value.shape()[1];
                    let (top, left) = window_origin(h, w, m, *shift).expect("validated in forward");
                    let s = slot(grads, nodes, *input);
                    for ch in 0..c {
                        for r in 0..m {
                            let dst = (ch * h + top + r) * w + left;
                            let src = (ch * m + r) * m;
                            for k in 0..m {
                                s[dst + k] += g[src + k];
                            }
                        }
                    }
                }
            }
            Op::Embed { input, shift } => {
                if needs(*input) {
                    let sh = nodes[input.0].value.shape();
                    let (c, m) = (sh[0], sh[1]);
                    let n = nodes[i].value.shape()[1];
                    let (top, left) = window_origin(n, n, m, *shift).expect("validated in forward");
                    let s = slot(grads, nodes, *input);
                    for ch in 0..c {
                        for r in 0..m {
                            let src = (ch * n + top + r) * n + left;
                            let dst = (ch * m + r) * m;
                            for k in 0..m {
                                s[dst + k] += g[src + k];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Calls `f(out_index, in_index)` for every element of a pixel shuffle.
fn for_each_shuffle(c: usize, h: usize, w: usize, r: usize, mut f: impl FnMut(usize, usize)) {
    let (oh, ow) = (h * r, w * r);
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let ic = ch * r * r + i * r + j;
                for y in 0..h {
                    for x in 0..w {
                        f((ch * oh + y * r + i) * ow + x * r + j, (ic * h + y) * w + x);
                    }
                }
            }
        }
    }
}

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new(is: &[usize], ks: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (ci, h, w) = match is {
            [c, h, w] => (*c, *h, *w),
            _ => return Err(FpmError::shape(format!("conv2d input must be [C, H, W], got {is:?}"))),
        };
        let (co, kci, kh, kw) = match ks {
            [a, b, c, d] => (*a, *b, *c, *d),
            _ => return Err(FpmError::shape(format!("conv2d kernel must be 4-D, got {ks:?}"))),
        };
        if kci != ci {
            return Err(mismatch("conv2d channels", is, ks));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(FpmError::shape(format!("conv2d kernel extents must be odd, got {kh}x{kw}")));
        }
        if stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(FpmError::shape(format!(
                "conv2d kernel {kh}x{kw} does not fit {h}x{w} with padding {padding}"
            )));
        }
        Ok(ConvGeom {
            ci,
            h,
            w,
            co,
            kh,
            kw,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
            stride,
            padding,
        })
    }

    /// Output index range along one axis for which `o·s + k - p` is in `0..len`.
    fn valid(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let k = k as isize;
        let lo = (p - k).max(0);
        let lo = (lo + s - 1) / s;
        let hi = (len as isize - 1 + p - k).div_euclid(s) + 1;
        (lo.max(0) as usize, hi.clamp(0, out_len as isize) as usize)
    }

    fn forward<T: Real>(&self, x: &[T], k: &[T], out: &mut [T]) {
        let (s, p) = (self.stride, self.padding);
        for co in 0..self.co {
            for ci in 0..self.ci {
                for ky in 0..self.kh {
                    let (oy0, oy1) = self.valid(ky, self.h, self.ho);
                    for kx in 0..self.kw {
                        let (ox0, ox1) = self.valid(kx, self.w, self.wo);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let wgt = k[((co * self.ci + ci) * self.kh + ky) * self.kw + kx];
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let orow = &mut out[(co * self.ho + oy) * self.wo..][..self.wo];
                            let irow = &x[(ci * self.h + iy) * self.w..][..self.w];
                            if s == 1 {
                                let ix0 = ox0 + kx - p;
                                for (o, &v) in orow[ox0..ox1].iter_mut().zip(&irow[ix0..]) {
                                    *o += wgt * v;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    orow[ox] += wgt * irow[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_input<T: Real>(&self, g: &[T], k: &[T], gx: &mut [T]) {
        let (s, p) = (self.stride, self.padding);
        for co in 0..self.co {
            for ci in 0..self.ci {
                for ky in 0..self.kh {
                    let (oy0, oy1) = self.valid(ky, self.h, self.ho);
                    for kx in 0..self.kw {
                        let (ox0, ox1) = self.valid(kx, self.w, self.wo);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let wgt = k[((co * self.ci + ci) * self.kh + ky) * self.kw + kx];
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let grow = &g[(co * self.ho + oy) * self.wo..][..self.wo];
                            let xrow = &mut gx[(ci * self.h + iy) * self.w..][..self.w];
                            if s == 1 {
                                let ix0 = ox0 + kx - p;
                                for (xv, &gv) in xrow[ix0..].iter_mut().zip(&grow[ox0..ox1]) {
                                    *xv += wgt * gv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    xrow[ox * s + kx - p] += wgt * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_kernel<T: Real>(&self, g: &[T], x: &[T], gk: &mut [T]) {
        let (s, p) = (self.stride, self.padding);
        for co in 0..self.co {
            for ci in 0..self.ci {
                for ky in 0..self.kh {
                    let (oy0, oy1) = self.valid(ky, self.h, self.ho);
                    for kx in 0..self.kw {
                        let (ox0, ox1) = self.valid(kx, self.w, self.wo);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let grow = &g[(co * self.ho + oy) * self.wo..][..self.wo];
                            let xrow = &x[(ci * self.h + iy) * self.w..][..self.w];
                            if s == 1 {
                                let ix0 = ox0 + kx - p;
                                for (&gv, &xv) in grow[ox0..ox1].iter().zip(&xrow[ix0..]) {
                                    acc += gv * xv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    acc += grow[ox] * xrow[ox * s + kx - p];
                                }
                            }
                        }
                        gk[((co * self.ci + ci) * self.kh + ky) * self.kw + kx] += acc;
                    }
                }
            }
        }
    }
}
