use super::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, gemm_tn_set, im2col, ConvGeom};
use super::tensor::{axis_split, broadcast_map, broadcast_shape, numel, Tensor};
use super::AutodiffError;
use crate::scalar::Scalar;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stride and zero-padding of a 2-D (transposed) convolution, `(rows, cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvSpec {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride: (stride, stride), pad: (pad, pad) }
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Input,
    Add(Var, Var, Option<Vec<usize>>, Option<Vec<usize>>),
    Sub(Var, Var, Option<Vec<usize>>, Option<Vec<usize>>),
    Mul(Var, Var, Option<Vec<usize>>, Option<Vec<usize>>),
    Div(Var, Var, Option<Vec<usize>>, Option<Vec<usize>>),
    Scale(Var, S),
    Offset(Var),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<S> },
    ConvT2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sin(Var),
    Cos(Var),
    Softmax(Var, usize),
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Broadcast(Var, Vec<usize>),
    InstanceNorm { x: Var, xhat: Vec<S>, inv_std: Vec<S> },
    L1(Var, Var),
    L2(Var, Var),
    SoftArgmax { x: Var, grid: Vec<S>, temperature: S, probs: Vec<S> },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Input => "input",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvT2d { .. } => "conv2d_transpose",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Softmax(..) => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAll(_) => "sum_all",
            Op::Concat(..) => "concat",
            Op::Reshape(_) => "reshape",
            Op::Broadcast(..) => "broadcast_to",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::L1(..) => "l1_loss",
            Op::L2(..) => "l2_loss",
            Op::SoftArgmax { .. } => "soft_argmax_1d",
        }
    }
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Append-only computation record. Nodes are stored in creation order, which
/// is a topological order, so backward is a single reverse sweep.
///
/// Leaves created with [`Graph::leaf`] keep their gradients across
/// [`Graph::backward`] calls (accumulating) until [`Graph::zero_grad`].
#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

fn unary_map<S: Scalar>(t: &Tensor<S>, f: impl Fn(S) -> S) -> Tensor<S> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect()).expect("same shape")
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf; gradients are tracked.
    pub fn leaf(&mut self, t: Tensor<S>) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor<S>) -> Result<Var> {
        self.push(t, Op::Input, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> S {
        self.nodes[v.0].value.item()
    }

    /// Accumulated gradient of `v`, if any has been propagated to it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Which side of its kink every non-smooth element sits on (relu inputs,
    /// L1 differences). Two evaluations with equal patterns lie in the same
    /// smooth piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => bits.extend(self.value(*a).data().iter().map(|v| *v > S::zero())),
                Op::L1(a, b) => {
                    bits.extend(self.value(*a).data().iter().zip(self.value(*b).data()).map(|(x, y)| *x > *y))
                }
                _ => {}
            }
        }
        bits
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        make: impl FnOnce(Var, Var, Option<Vec<usize>>, Option<Vec<usize>>) -> Op<S>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or(AutodiffError::ShapeMismatch { op: name, lhs: sa.clone(), rhs: sb.clone() })?;
        let ma = broadcast_map(&out_shape, &sa);
        let mb = broadcast_map(&out_shape, &sb);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = (0..numel(&out_shape))
            .map(|i| {
                let x = da[ma.as_ref().map_or(i, |m| m[i])];
                let y = db[mb.as_ref().map_or(i, |m| m[i])];
                f(x, y)
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(out_shape, data)?, make(a, b, ma, mb), rg)
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, k: S) -> Result<Var> {
        let v = unary_map(self.value(a), |x| x * k);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, k), rg)
    }

    /// Adds a constant.
    pub fn offset(&mut self, a: Var, c: S) -> Result<Var> {
        let v = unary_map(self.value(a), |x| x + c);
        let rg = self.rg(a);
        self.push(v, Op::Offset(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var> {
        let v = unary_map(self.value(a), f);
        let rg = self.rg(a);
        self.push(v, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > S::zero() { x } else { S::zero() }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.sin(), Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.cos(), Op::Cos(a))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    fn check_bias(&self, b: Option<Var>, channels: usize, op: &'static str) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(AutodiffError::ShapeMismatch { op, lhs: self.shape(b).to_vec(), rhs: vec![channels] });
            }
        }
        Ok(())
    }

    /// Cross-correlation. `x: [N, C, H, W]`, `w: [Co, C, kh, kw]`, `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(AutodiffError::ShapeMismatch { op: "conv2d", lhs: sx, rhs: sw });
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, kh, kw) = (sw[0], sw[2], sw[3]);
        self.check_bias(b, co, "conv2d")?;
        let geom = ConvGeom::new(c, h, wd, kh, kw, spec.stride, spec.pad)
            .ok_or(AutodiffError::ShapeMismatch { op: "conv2d", lhs: sx.clone(), rhs: sw.clone() })?;
        let (k, p) = (geom.col_rows(), geom.col_cols());
        let mut cols = Vec::with_capacity(n * k * p);
        let mut out = vec![S::zero(); n * co * p];
        {
            let xd = self.value(x).data();
            let wd_ = self.value(w).data();
            let bias = b.map(|b| self.value(b).data());
            for i in 0..n {
                im2col(&geom, &xd[i * c * h * wd..(i + 1) * c * h * wd], &mut cols);
                let col = &cols[i * k * p..(i + 1) * k * p];
                let o = &mut out[i * co * p..(i + 1) * co * p];
                if let Some(bias) = bias {
                    for (ch, row) in o.chunks_mut(p).enumerate() {
                        row.iter_mut().for_each(|v| *v = bias[ch]);
                    }
                }
                gemm_nn(co, k, p, wd_, col, o);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let t = Tensor::new(vec![n, co, geom.ho, geom.wo], out)?;
        self.push(t, Op::Conv2d { x, w, b, geom, cols }, rg)
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`] in `x`).
    /// `x: [N, Ci, H, W]`, `w: [Ci, Co, kh, kw]`, `b: [Co]`; output spatial size
    /// `(H - 1) * stride - 2 * pad + k`.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let mismatch = AutodiffError::ShapeMismatch { op: "conv2d_transpose", lhs: sx.clone(), rhs: sw.clone() };
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[0] || spec.stride.0 == 0 || spec.stride.1 == 0 {
            return Err(mismatch);
        }
        let (n, ci, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, kh, kw) = (sw[1], sw[2], sw[3]);
        self.check_bias(b, co, "conv2d_transpose")?;
        let ho = ((h - 1) * spec.stride.0 + kh).checked_sub(2 * spec.pad.0).ok_or(mismatch.clone())?;
        let wo = ((wd - 1) * spec.stride.1 + kw).checked_sub(2 * spec.pad.1).ok_or(mismatch.clone())?;
        let geom = ConvGeom::new(co, ho, wo, kh, kw, spec.stride, spec.pad).ok_or(mismatch.clone())?;
        if geom.ho != h || geom.wo != wd {
            return Err(mismatch);
        }
        let (k, p) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![S::zero(); n * co * ho * wo];
        {
            let xd = self.value(x).data();
            let wv = self.value(w).data();
            let bias = b.map(|b| self.value(b).data());
            let mut cols = vec![S::zero(); k * p];
            for i in 0..n {
                gemm_tn_set(k, ci, p, wv, &xd[i * ci * p..(i + 1) * ci * p], &mut cols);
                let o = &mut out[i * co * ho * wo..(i + 1) * co * ho * wo];
                col2im(&geom, &cols, o);
                if let Some(bias) = bias {
                    for (ch, plane) in o.chunks_mut(ho * wo).enumerate() {
                        plane.iter_mut().for_each(|v| *v = *v + bias[ch]);
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::new(vec![n, co, ho, wo], out)?, Op::ConvT2d { x, w, b, geom }, rg)
    }

    fn check_axis(&self, a: Var, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(AutodiffError::Invalid { op, msg: format!("axis {axis} out of range for {:?}", self.shape(a)) });
        }
        Ok(())
    }

    /// Numerically stable softmax along `axis` (max-subtracted). The
    /// normalizer is summed in value order, so permuting the axis permutes the
    /// output exactly.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis, "softmax")?;
        let shape = self.shape(a).to_vec();
        let (outer, dim, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![S::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * dim * inner + j * inner + i;
                let max = (0..dim).map(|j| x[at(j)]).fold(S::neg_infinity(), S::max);
                for j in 0..dim {
                    out[at(j)] = (x[at(j)] - max).exp();
                }
                let total = ordered_sum((0..dim).map(|j| out[at(j)]));
                for j in 0..dim {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::new(shape, out)?, Op::Softmax(a, axis), rg)
    }

    fn reduce(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        self.check_axis(a, axis, if mean { "mean" } else { "sum" })?;
        let shape = self.shape(a).to_vec();
        let (outer, dim, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                out[o * inner + i] = ordered_sum((0..dim).map(|j| x[(o * dim + j) * inner + i]));
            }
        }
        if mean {
            let d = S::count(dim);
            out.iter_mut().for_each(|v| *v = *v / d);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.rg(a);
        let op = if mean { Op::Mean(a, axis) } else { Op::Sum(a, axis) };
        self.push(Tensor::new(out_shape, out)?, op, rg)
    }

    /// Sum over `axis`, removing it. Like [`Graph::softmax`], the reduction
    /// is independent of element order along the axis.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    /// Mean of all elements as a scalar.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = S::count(self.value(a).numel());
        let s = self.sum_all(a)?;
        self.scale(s, S::one() / n)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(AutodiffError::Invalid { op: "concat", msg: "no inputs".into() })?;
        self.check_axis(*first, axis, "concat")?;
        let base = self.shape(*first).to_vec();
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch { op: "concat", lhs: base, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for p in parts {
                let d = self.shape(*p)[axis];
                out.extend_from_slice(&self.value(*p).data()[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(Tensor::new(out_shape, out)?, Op::Concat(parts.to_vec(), axis), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg)
    }

    /// Expands size-1 (or missing leading) axes to `shape`.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if broadcast_shape(&sa, shape).as_deref() != Some(shape) {
            return Err(AutodiffError::ShapeMismatch { op: "broadcast_to", lhs: sa, rhs: shape.to_vec() });
        }
        let map = broadcast_map(shape, &sa);
        let x = self.value(a).data();
        let data = match &map {
            Some(m) => m.iter().map(|i| x[*i]).collect(),
            None => x.to_vec(),
        };
        let rg = self.rg(a);
        self.push(Tensor::new(shape.to_vec(), data)?, Op::Broadcast(a, map.unwrap_or_default()), rg)
    }

    /// Normalizes each `(sample, channel)` group over all trailing axes:
    /// `(x - mean) / sqrt(var + eps)`. Input must have at least 3 axes.
    pub fn instance_norm(&mut self, a: Var, eps: S) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 3 {
            return Err(AutodiffError::Invalid { op: "instance_norm", msg: format!("need [N, C, ...], got {shape:?}") });
        }
        let groups = shape[0] * shape[1];
        let size = numel(&shape[2..]);
        let x = self.value(a).data();
        let mut xhat = vec![S::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(groups);
        let n = S::count(size);
        for g in 0..groups {
            let seg = &x[g * size..(g + 1) * size];
            let mu = seg.iter().copied().sum::<S>() / n;
            let var = seg.iter().map(|v| (*v - mu) * (*v - mu)).sum::<S>() / n;
            let is = S::one() / (var + eps).sqrt();
            for (o, v) in xhat[g * size..(g + 1) * size].iter_mut().zip(seg) {
                *o = (*v - mu) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(a);
        let t = Tensor::new(shape, xhat.clone())?;
        self.push(t, Op::InstanceNorm { x: a, xhat, inv_std }, rg)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() });
        }
        Ok(())
    }

    /// Mean absolute difference, scalar.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1_loss")?;
        let n = S::count(self.value(a).numel());
        let s: S = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (*x - *y).abs()).sum();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(s / n), Op::L1(a, b), rg)
    }

    /// Mean squared difference, scalar.
    pub fn l2_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l2_loss")?;
        let n = S::count(self.value(a).numel());
        let s: S = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(s / n), Op::L2(a, b), rg)
    }

    /// Differentiable peak location along the last axis:
    /// `sum_b grid[b] * softmax(x / temperature)_b`.
    pub fn soft_argmax_1d(&mut self, a: Var, grid: &[S], temperature: S) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().ok_or(AutodiffError::Invalid { op: "soft_argmax_1d", msg: "scalar input".into() })?;
        if n != grid.len() {
            return Err(AutodiffError::ShapeMismatch { op: "soft_argmax_1d", lhs: shape, rhs: vec![grid.len()] });
        }
        if !(temperature > S::zero()) {
            return Err(AutodiffError::Invalid { op: "soft_argmax_1d", msg: "temperature must be positive".into() });
        }
        let x = self.value(a).data();
        let rows = x.len() / n;
        let mut probs = vec![S::zero(); x.len()];
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let p = &mut probs[r * n..(r + 1) * n];
            let mut total = S::zero();
            for (pv, xv) in p.iter_mut().zip(row) {
                *pv = ((*xv - max) / temperature).exp();
                total = total + *pv;
            }
            let mut e = S::zero();
            for (pv, g) in p.iter_mut().zip(grid) {
                *pv = *pv / total;
                e = e + *pv * *g;
            }
            out.push(e);
        }
        let rg = self.rg(a);
        let op = Op::SoftArgmax { x: a, grid: grid.to_vec(), temperature, probs };
        self.push(Tensor::new(shape[..shape.len() - 1].to_vec(), out)?, op, rg)
    }

    /// Propagates `d loss / d v` to every node that requires a gradient.
    ///
    /// Intermediate gradients are recomputed on every call; leaf gradients
    /// accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NotScalar(self.shape(loss).to_vec()));
        }
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            let g = if is_leaf { continue } else { self.grads[i].take() };
            if let Some(g) = g {
                self.backprop(i, &g);
            }
        }
        Ok(())
    }

    fn backprop(&mut self, i: usize, g: &[S]) {
        let Self { nodes, grads } = self;
        let node = &nodes[i];
        // gradient buffer of an input, allocated on first use; None if untracked
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); nodes[v.0].value.numel()]))
                } else {
                    None
                }
            }};
        }
        let val = |v: Var| nodes[v.0].value.data();
        let idx = |m: &Option<Vec<usize>>, k: usize| m.as_ref().map_or(k, |m| m[k]);
        match &node.op {
            Op::Leaf | Op::Input => {}
            Op::Add(a, b, ma, mb) | Op::Sub(a, b, ma, mb) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -S::one() } else { S::one() };
                if let Some(ga) = buf!(*a) {
                    for (k, gv) in g.iter().enumerate() {
                        let j = idx(ma, k);
                        ga[j] = ga[j] + *gv;
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for (k, gv) in g.iter().enumerate() {
                        let j = idx(mb, k);
                        gb[j] = gb[j] + sign * *gv;
                    }
                }
            }
            Op::Mul(a, b, ma, mb) => {
                let (xa, xb) = (val(*a), val(*b));
                if let Some(ga) = buf!(*a) {
                    for (k, gv) in g.iter().enumerate() {
                        let j = idx(ma, k);
                        ga[j] = ga[j] + *gv * xb[idx(mb, k)];
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for (k, gv) in g.iter().enumerate() {
                        let j = idx(mb, k);
                        gb[j] = gb[j] + *gv * xa[idx(ma, k)];
                    }
                }
            }
            Op::Div(a, b, ma, mb) => {
                let (xa, xb) = (val(*a), val(*b));
                if let Some(ga) = buf!(*a) {
                    for (k, gv) in g.iter().enumerate() {
                        let j = idx(ma, k);
                        ga[j] = ga[j] + *gv / xb[idx(mb, k)];
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for (k, gv) in g.iter().enumerate() {
                        let j = idx(mb, k);
                        let d = xb[j];
                        gb[j] = gb[j] - *gv * xa[idx(ma, k)] / (d * d);
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, gv)| *o = *o + *gv * *s);
                }
            }
            Op::Offset(a) | Op::Reshape(a) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, gv)| *o = *o + *gv);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape().to_vec(), nodes[b.0].value.shape().to_vec());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (xa, xb) = (val(*a), val(*b));
                if let Some(ga) = buf!(*a) {
                    gemm_nt(m, n, k, g, xb, ga);
                }
                if let Some(gb) = buf!(*b) {
                    gemm_tn(k, m, n, xa, g, gb);
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let n = nodes[x.0].value.shape()[0];
                let co = nodes[w.0].value.shape()[0];
                let (k, p) = (geom.col_rows(), geom.col_cols());
                let img = geom.channels * geom.h * geom.w;
                if let Some(gw) = buf!(*w) {
                    for s in 0..n {
                        gemm_nt(co, p, k, &g[s * co * p..(s + 1) * co * p], &cols[s * k * p..(s + 1) * k * p], gw);
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = buf!(*b) {
                        for s in 0..n {
                            for (c, row) in g[s * co * p..(s + 1) * co * p].chunks(p).enumerate() {
                                gb[c] = gb[c] + row.iter().copied().sum();
                            }
                        }
                    }
                }
                let wv = val(*w);
                if let Some(gx) = buf!(*x) {
                    let mut dcols = vec![S::zero(); k * p];
                    for s in 0..n {
                        gemm_tn_set(k, co, p, wv, &g[s * co * p..(s + 1) * co * p], &mut dcols);
                        col2im(geom, &dcols, &mut gx[s * img..(s + 1) * img]);
                    }
                }
            }
            Op::ConvT2d { x, w, b, geom } => {
                let sx = nodes[x.0].value.shape().to_vec();
                let (n, ci) = (sx[0], sx[1]);
                let co = geom.channels;
                let (k, p) = (geom.col_rows(), geom.col_cols());
                let out_img = co * geom.h * geom.w;
                let mut gcols = Vec::with_capacity(n * k * p);
                for s in 0..n {
                    im2col(geom, &g[s * out_img..(s + 1) * out_img], &mut gcols);
                }
                let (xv, wv) = (val(*x), val(*w));
                if let Some(gw) = buf!(*w) {
                    for s in 0..n {
                        gemm_nt(ci, p, k, &xv[s * ci * p..(s + 1) * ci * p], &gcols[s * k * p..(s + 1) * k * p], gw);
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = buf!(*b) {
                        let plane = geom.h * geom.w;
                        for s in 0..n {
                            for (c, pl) in g[s * out_img..(s + 1) * out_img].chunks(plane).enumerate() {
                                gb[c] = gb[c] + pl.iter().copied().sum();
                            }
                        }
                    }
                }
                if let Some(gx) = buf!(*x) {
                    for s in 0..n {
                        gemm_nn(ci, k, p, wv, &gcols[s * k * p..(s + 1) * k * p], &mut gx[s * ci * p..(s + 1) * ci * p]);
                    }
                }
            }
            Op::Relu(a) => {
                let xa = val(*a);
                if let Some(ga) = buf!(*a) {
                    for ((o, gv), xv) in ga.iter_mut().zip(g).zip(xa) {
                        if *xv > S::zero() {
                            *o = *o + *gv;
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                if let Some(ga) = buf!(*a) {
                    for ((o, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        *o = *o + *gv * (S::one() - *yv * *yv);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(ga) = buf!(*a) {
                    for ((o, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        *o = *o + *gv * *yv * (S::one() - *yv);
                    }
                }
            }
            Op::Exp(a) => {
                let y = node.value.data();
                if let Some(ga) = buf!(*a) {
                    for ((o, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        *o = *o + *gv * *yv;
                    }
                }
            }
            Op::Log(a) => {
                let xa = val(*a);
                if let Some(ga) = buf!(*a) {
                    for ((o, gv), xv) in ga.iter_mut().zip(g).zip(xa) {
                        *o = *o + *gv / *xv;
                    }
                }
            }
            Op::Sin(a) => {
                let xa = val(*a);
                if let Some(ga) = buf!(*a) {
                    for ((o, gv), xv) in ga.iter_mut().zip(g).zip(xa) {
                        *o = *o + *gv * xv.cos();
                    }
                }
            }
            Op::Cos(a) => {
                let xa = val(*a);
                if let Some(ga) = buf!(*a) {
                    for ((o, gv), xv) in ga.iter_mut().zip(g).zip(xa) {
                        *o = *o - *gv * xv.sin();
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let y = node.value.data();
                let (outer, dim, inner) = axis_split(node.value.shape(), *axis);
                if let Some(ga) = buf!(*a) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * dim * inner + j * inner + i;
                            let dot: S = (0..dim).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..dim {
                                ga[at(j)] = ga[at(j)] + y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let (outer, dim, inner) = axis_split(nodes[a.0].value.shape(), *axis);
                let f = if matches!(node.op, Op::Mean(..)) { S::one() / S::count(dim) } else { S::one() };
                if let Some(ga) = buf!(*a) {
                    for o in 0..outer {
                        for j in 0..dim {
                            for i in 0..inner {
                                let t = (o * dim + j) * inner + i;
                                ga[t] = ga[t] + g[o * inner + i] * f;
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().for_each(|o| *o = *o + g[0]);
                }
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut start = 0;
                for p in parts {
                    let d = nodes[p.0].value.shape()[*axis];
                    if let Some(gp) = buf!(*p) {
                        for o in 0..outer {
                            let src = &g[(o * total + start) * inner..(o * total + start + d) * inner];
                            for (dst, sv) in gp[o * d * inner..(o + 1) * d * inner].iter_mut().zip(src) {
                                *dst = *dst + *sv;
                            }
                        }
                    }
                    start += d;
                }
            }
            Op::Broadcast(a, map) => {
                if let Some(ga) = buf!(*a) {
                    if map.is_empty() {
                        ga.iter_mut().zip(g).for_each(|(o, gv)| *o = *o + *gv);
                    } else {
                        for (k, gv) in g.iter().enumerate() {
                            ga[map[k]] = ga[map[k]] + *gv;
                        }
                    }
                }
            }
            Op::InstanceNorm { x, xhat, inv_std } => {
                let size = xhat.len() / inv_std.len();
                let n = S::count(size);
                if let Some(gx) = buf!(*x) {
                    for (grp, is) in inv_std.iter().enumerate() {
                        let r = grp * size..(grp + 1) * size;
                        let (gs, hs) = (&g[r.clone()], &xhat[r.clone()]);
                        let mg = gs.iter().copied().sum::<S>() / n;
                        let mgh = gs.iter().zip(hs).map(|(a, b)| *a * *b).sum::<S>() / n;
                        for ((o, gv), hv) in gx[r].iter_mut().zip(gs).zip(hs) {
                            *o = *o + *is * (*gv - mg - *hv * mgh);
                        }
                    }
                }
            }
            Op::L1(a, b) | Op::L2(a, b) => {
                let l2 = matches!(node.op, Op::L2(..));
                let (xa, xb) = (val(*a), val(*b));
                let scale = g[0] / S::count(xa.len());
                let d: Vec<S> = xa
                    .iter()
                    .zip(xb)
                    .map(|(x, y)| {
                        let diff = *x - *y;
                        if l2 {
                            S::lit(2.0) * diff * scale
                        } else if diff > S::zero() {
                            scale
                        } else if diff < S::zero() {
                            -scale
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(&d).for_each(|(o, dv)| *o = *o + *dv);
                }
                if let Some(gb) = buf!(*b) {
                    gb.iter_mut().zip(&d).for_each(|(o, dv)| *o = *o - *dv);
                }
            }
            Op::SoftArgmax { x, grid, temperature, probs } => {
                let n = grid.len();
                let out = node.value.data();
                if let Some(gx) = buf!(*x) {
                    for (r, (gv, e)) in g.iter().zip(out).enumerate() {
                        for b in 0..n {
                            let t = r * n + b;
                            gx[t] = gx[t] + *gv * probs[t] * (grid[b] - *e) / *temperature;
                        }
                    }
                }
            }
        }
    }
}

/// Sum in ascending value order, so the result does not depend on the order
/// of the inputs.
fn ordered_sum<S: Scalar>(values: impl Iterator<Item = S>) -> S {
    let mut v: Vec<S> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v.into_iter().fold(S::zero(), |acc, x| acc + x)
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
